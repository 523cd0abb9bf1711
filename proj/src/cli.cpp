#include "gaze/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <thread>

#include "gaze/errors.hpp"
#include "gaze/gradcheck.hpp"
#include "gaze/parallel.hpp"
#include "gaze/train.hpp"

namespace gaze {
namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::optional<std::uint64_t> seed;
  bool unfreeze = false;
};

// Every config key becomes --key=value on the subcommand.
void add_config_options(CLI::App* sub, Context& ctx) {
  sub->add_option("--config", ctx.config_path, "Config file (key = value lines)");
  for (const auto& key : RunConfig::keys()) {
    sub->add_option_function<std::string>(
        "--" + key, [&ctx, key](const std::string& v) { ctx.overrides.emplace_back(key, v); },
        "Override config key " + key);
  }
}

RunConfig resolve_config(const Context& ctx) {
  RunConfig cfg = ctx.config_path.empty() ? RunConfig{} : RunConfig::load(ctx.config_path);
  for (const auto& [k, v] : ctx.overrides) cfg.set(k, v);
  if (ctx.seed) {
    cfg.train.model_seed = *ctx.seed;
    cfg.train.train_seed = *ctx.seed;
  }
  if (ctx.unfreeze) cfg.train.freeze_encoder = false;
  cfg.validate();
  set_worker_count(cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency()));
  return cfg;
}

ProgressFn logger(std::ostream& err) {
  return [&err](const std::string& msg) { err << msg << '\n' << std::flush; };
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int cmd_gen_data(Context& ctx, std::size_t count, std::uint64_t seed, std::string out_path) {
  const RunConfig cfg = resolve_config(ctx);
  if (count == 0) throw ValidationError("--count must be positive");
  GeneratorOptions opt;
  opt.height = cfg.model.height;
  opt.width = cfg.model.width;
  if (cfg.model.channels != 3) throw ValidationError("the generator renders 3-channel images; set channels = 3");
  const std::filesystem::path path = out_path.empty() ? cfg.data_path : std::filesystem::path(out_path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_dataset(path, generate_dataset(count, seed, opt));
  ctx.err << "wrote " << count << " samples to " << path.string() << '\n';
  return 0;
}

int cmd_pretrain(Context& ctx, const std::string& resume_path) {
  const RunConfig cfg = resolve_config(ctx);
  const auto train = read_dataset(cfg.data_path);
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume.emplace(load_checkpoint(resume_path));
  const auto ckpt = pretrain(unlabeled_subset(cfg, train), cfg, resume ? &*resume : nullptr, logger(ctx.err));
  save_checkpoint(cfg.pretrained_path, ckpt);
  ctx.err << "saved " << cfg.pretrained_path.string() << '\n';
  return 0;
}

int cmd_finetune(Context& ctx) {
  const RunConfig cfg = resolve_config(ctx);
  const auto train = read_dataset(cfg.data_path);
  const Checkpoint init =
      cfg.train.init == InitMode::scratch ? fresh_checkpoint(cfg) : load_checkpoint(cfg.pretrained_path);
  const auto ckpt = finetune(labeled_subset(cfg, train), init, cfg, logger(ctx.err));
  save_checkpoint(cfg.finetuned_path, ckpt);
  ctx.err << "saved " << cfg.finetuned_path.string() << '\n';
  return 0;
}

int cmd_eval(Context& ctx) {
  const RunConfig cfg = resolve_config(ctx);
  const auto ckpt = load_checkpoint(cfg.finetuned_path);
  const auto test = read_dataset(cfg.test_path);
  const double mae = evaluate(ckpt, test);
  char line[64];
  std::snprintf(line, sizeof line, "MAE: %.6f deg", mae);
  ctx.out << line << '\n';
  return 0;
}

int cmd_gradcheck(Context& ctx, std::uint64_t seed, std::size_t instances) {
  const auto results = run_gradcheck_suite(seed, instances);
  std::size_t failed = 0;
  double worst = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.report.max_rel_error);
    if (!r.report.passed) ++failed;
    ctx.out << std::left << std::setw(34) << r.name << ' ' << r.report.summary() << '\n';
  }
  ctx.out << (failed ? "FAIL" : "PASS") << ": " << results.size() - failed << "/" << results.size()
          << " checks, max_rel_error=" << worst << '\n';
  return failed ? 3 : 0;
}

int cmd_ablate(Context& ctx, const std::string& axis) {
  const RunConfig base = resolve_config(ctx);
  const auto train = read_dataset(base.data_path);
  const auto test = read_dataset(base.test_path);

  struct Arm {
    std::string label;
    RunConfig cfg;
  };
  std::vector<Arm> arms;
  if (axis == "loss_variant") {
    for (auto v : {LossVariant::ntxent_only, LossVariant::redundancy_only, LossVariant::combined}) {
      RunConfig c = base;
      c.loss.loss_variant = v;
      arms.push_back({std::string(to_string(v)), c});
    }
  } else if (axis == "gamma") {
    for (double g : base.ablate_gammas) {
      RunConfig c = base;
      c.loss.loss_variant = LossVariant::combined;
      c.loss.gamma = g;
      arms.push_back({"gamma=" + shortest(g), c});
    }
  } else {
    throw ValidationError("--axis must be loss_variant or gamma");
  }

  struct Row {
    std::string label;
    std::uint64_t seed;
    double mae;
  };
  std::vector<Row> rows;
  for (std::uint64_t seed : base.ablate_seeds) {
    for (auto& arm : arms) {
      RunConfig c = arm.cfg;
      c.train.model_seed = seed;
      c.train.train_seed = seed;
      ctx.err << "ablate " << arm.label << " seed " << seed << '\n';
      const auto result = run_pipeline(c, train, test, logger(ctx.err));
      rows.push_back({arm.label, seed, result.mae_deg});
    }
  }

  const auto& path = base.results_path;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream csv(path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + path.string());
    csv << "variant,seed,mae_deg\n";
    for (const auto& r : rows) {
      char mae[32];
      std::snprintf(mae, sizeof mae, "%.6f", r.mae);
      csv << r.label << ',' << r.seed << ',' << mae << '\n';
    }
    if (!csv) throw IoError("failed writing " + path.string());
  }

  std::size_t width = 7;
  for (const auto& a : arms) width = std::max(width, a.label.size());
  ctx.out << std::left << std::setw(static_cast<int>(width)) << "variant" << "  seed  mae_deg\n";
  for (const auto& r : rows) {
    char mae[32];
    std::snprintf(mae, sizeof mae, "%8.3f", r.mae);
    ctx.out << std::left << std::setw(static_cast<int>(width)) << r.label << "  " << std::right << std::setw(4)
            << r.seed << "  " << mae << '\n';
  }
  std::vector<double> medians;
  for (const auto& arm : arms) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.label == arm.label) v.push_back(r.mae);
    medians.push_back(median(v));
    char mae[32];
    std::snprintf(mae, sizeof mae, "%8.3f", medians.back());
    ctx.out << "median " << std::left << std::setw(static_cast<int>(width)) << arm.label << "  " << mae << '\n';
  }
  if (axis == "gamma" && medians.size() > 1) {
    const bool up = std::is_sorted(medians.begin(), medians.end());
    const bool down = std::is_sorted(medians.rbegin(), medians.rend());
    ctx.out << "gamma trend (median MAE as gamma grows): "
            << (up && !down ? "increasing" : down && !up ? "decreasing" : up ? "flat" : "non-monotonic") << '\n';
  }
  ctx.err << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_export_previews(Context& ctx, const std::string& in_path, const std::string& dir, std::size_t limit) {
  const RunConfig cfg = resolve_config(ctx);
  const auto samples = read_dataset(in_path.empty() ? cfg.data_path : std::filesystem::path(in_path));
  export_previews(samples, dir, limit);
  ctx.err << "wrote " << std::min(limit, samples.size()) << " previews to " << dir << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, {}, {}, {}, false};
  CLI::App app{"Contrastive pretraining and fine-tuning for gaze estimation on synthetic eyes"};
  app.require_subcommand(1);

  std::size_t count = 0;
  std::uint64_t gen_seed = 0;
  std::string out_path;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic labeled dataset");
  gen->add_option("--count", count, "Number of samples")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--out", out_path, "Output file (default: data_path)");
  add_config_options(gen, ctx);

  std::string resume_path;
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining on the unlabeled split");
  pre->add_option("--seed", ctx.seed, "Sets model_seed and train_seed");
  pre->add_option("--resume", resume_path, "Continue from a pretrained checkpoint");
  add_config_options(pre, ctx);

  auto* fine = app.add_subcommand("finetune", "Fit the regression head on the labeled split");
  fine->add_option("--seed", ctx.seed, "Sets model_seed and train_seed");
  fine->add_flag("--unfreeze", ctx.unfreeze, "Train the encoder too");
  add_config_options(fine, ctx);

  auto* eval = app.add_subcommand("eval", "Mean angular error of the fine-tuned model on test_path");
  add_config_options(eval, ctx);

  std::uint64_t gc_seed = 0;
  std::size_t instances = 3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--seed", gc_seed, "Seed for the random instances");
  gc->add_option("--instances", instances, "Instances per op")->check(CLI::PositiveNumber);

  std::string axis;
  auto* abl = app.add_subcommand("ablate", "Run the pipeline per loss variant or gamma and seed");
  abl->add_option("--axis", axis, "loss_variant or gamma")->required()->check(CLI::IsMember({"loss_variant", "gamma"}));
  abl->add_flag("--unfreeze", ctx.unfreeze, "Train the encoder during fine-tuning");
  add_config_options(abl, ctx);

  std::string in_path, dir = "previews";
  std::size_t limit = 16;
  auto* prev = app.add_subcommand("export-previews", "Write PNG previews and labels.csv");
  prev->add_option("--in", in_path, "Dataset file (default: data_path)");
  prev->add_option("--dir", dir, "Output directory");
  prev->add_option("--limit", limit, "Number of samples");
  add_config_options(prev, ctx);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ctx, count, gen_seed, out_path);
    if (pre->parsed()) return cmd_pretrain(ctx, resume_path);
    if (fine->parsed()) return cmd_finetune(ctx);
    if (eval->parsed()) return cmd_eval(ctx);
    if (gc->parsed()) return cmd_gradcheck(ctx, gc_seed, instances);
    if (abl->parsed()) return cmd_ablate(ctx, axis);
    if (prev->parsed()) return cmd_export_previews(ctx, in_path, dir, limit);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

}  // namespace gaze
