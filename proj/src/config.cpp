#include "gaze/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "gaze/errors.hpp"

namespace gaze {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view what) {
  throw ValidationError("config key '" + std::string(key) + "': cannot parse '" +
                        std::string(value) + "' as " + std::string(what));
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_f64(std::string_view key, std::string_view v) {
  v = trim(v);
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
    bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::string format_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& items, Fmt&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += fmt(items[i]);
  }
  return out;
}

struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Member>
Field size_field(std::string name, Member member) {
  return {name, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, name](RunConfig& c, std::string_view v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_u64(name, v));
          }};
}

template <typename Member>
Field f64_field(std::string name, Member member) {
  return {name, [member](const RunConfig& c) { return format_f64(member(c)); },
          [member, name](RunConfig& c, std::string_view v) { member(c) = parse_f64(name, v); }};
}

template <typename Member>
Field bool_field(std::string name, Member member) {
  return {name, [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); },
          [member, name](RunConfig& c, std::string_view v) { member(c) = parse_bool(name, v); }};
}

template <typename Member>
Field path_field(std::string name, Member member) {
  return {name, [member](const RunConfig& c) { return member(c).string(); },
          [member](RunConfig& c, std::string_view v) { member(c) = std::string(trim(v)); }};
}

template <typename Member>
Field size_list_field(std::string name, Member member) {
  return {name,
          [member](const RunConfig& c) {
            return join(member(c), [](auto x) { return std::to_string(x); });
          },
          [member, name](RunConfig& c, std::string_view v) {
            auto& dst = member(c);
            dst.clear();
            for (const auto& item : split_list(v))
              dst.push_back(static_cast<std::remove_reference_t<decltype(dst[0])>>(parse_u64(name, item)));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // Paths and seeds
    f.push_back(path_field("data_path", [](auto& c) -> auto& { return c.data_path; }));
    f.push_back(path_field("test_path", [](auto& c) -> auto& { return c.test_path; }));
    f.push_back(path_field("pretrained_path", [](auto& c) -> auto& { return c.pretrained_path; }));
    f.push_back(path_field("finetuned_path", [](auto& c) -> auto& { return c.finetuned_path; }));
    f.push_back(path_field("results_path", [](auto& c) -> auto& { return c.results_path; }));
    f.push_back(size_field("split_seed", [](auto& c) -> auto& { return c.split_seed; }));
    f.push_back(size_field("model_seed", [](auto& c) -> auto& { return c.train.model_seed; }));
    f.push_back(size_field("train_seed", [](auto& c) -> auto& { return c.train.train_seed; }));
    f.push_back(size_field("workers", [](auto& c) -> auto& { return c.workers; }));
    // Encoder and heads
    f.push_back(size_field("channels", [](auto& c) -> auto& { return c.model.channels; }));
    f.push_back(size_field("height", [](auto& c) -> auto& { return c.model.height; }));
    f.push_back(size_field("width", [](auto& c) -> auto& { return c.model.width; }));
    f.push_back(size_field("stages", [](auto& c) -> auto& { return c.model.stages; }));
    f.push_back(size_list_field("dilation_rates", [](auto& c) -> auto& { return c.model.dilation_rates; }));
    f.push_back(size_field("kernel", [](auto& c) -> auto& { return c.model.kernel; }));
    f.push_back(size_list_field("stage_channels", [](auto& c) -> auto& { return c.model.stage_channels; }));
    f.push_back({"pooling", [](const RunConfig& c) { return std::string(to_string(c.model.pooling)); },
                 [](RunConfig& c, std::string_view v) { c.model.pooling = parse_pooling(trim(v)); }});
    f.push_back(size_field("latent_dim", [](auto& c) -> auto& { return c.model.latent_dim; }));
    f.push_back(size_field("projection_hidden", [](auto& c) -> auto& { return c.model.projection_hidden; }));
    f.push_back(size_field("projection_dim", [](auto& c) -> auto& { return c.model.projection_dim; }));
    f.push_back(size_field("regressor_hidden", [](auto& c) -> auto& { return c.model.regressor_hidden; }));
    // Losses
    f.push_back(f64_field("tau", [](auto& c) -> auto& { return c.loss.tau; }));
    f.push_back(f64_field("gamma", [](auto& c) -> auto& { return c.loss.gamma; }));
    f.push_back(f64_field("delta", [](auto& c) -> auto& { return c.loss.delta; }));
    f.push_back(size_field("batch_size", [](auto& c) -> auto& { return c.loss.batch_size; }));
    f.push_back({"loss_variant", [](const RunConfig& c) { return std::string(to_string(c.loss.loss_variant)); },
                 [](RunConfig& c, std::string_view v) { c.loss.loss_variant = parse_loss_variant(trim(v)); }});
    // Training
    f.push_back(size_field("pretrain_epochs", [](auto& c) -> auto& { return c.train.pretrain_epochs; }));
    f.push_back(size_field("finetune_epochs", [](auto& c) -> auto& { return c.train.finetune_epochs; }));
    f.push_back(f64_field("lr_pretrain", [](auto& c) -> auto& { return c.train.lr_pretrain; }));
    f.push_back(f64_field("lr_finetune", [](auto& c) -> auto& { return c.train.lr_finetune; }));
    f.push_back(f64_field("adam_beta1", [](auto& c) -> auto& { return c.train.adam_beta1; }));
    f.push_back(f64_field("adam_beta2", [](auto& c) -> auto& { return c.train.adam_beta2; }));
    f.push_back(f64_field("adam_eps", [](auto& c) -> auto& { return c.train.adam_eps; }));
    f.push_back(bool_field("freeze_encoder", [](auto& c) -> auto& { return c.train.freeze_encoder; }));
    f.push_back(size_field("finetune_limit", [](auto& c) -> auto& { return c.train.finetune_limit; }));
    f.push_back({"init", [](const RunConfig& c) { return std::string(to_string(c.train.init)); },
                 [](RunConfig& c, std::string_view v) { c.train.init = parse_init_mode(trim(v)); }});
    f.push_back({"augment_strength",
                 [](const RunConfig& c) { return std::string(to_string(c.train.augment_strength)); },
                 [](RunConfig& c, std::string_view v) {
                   c.train.augment_strength = parse_augment_strength(trim(v));
                 }});
    f.push_back(size_field("picks_per_view", [](auto& c) -> auto& { return c.train.picks_per_view; }));
    // Ablation grid
    f.push_back(size_list_field("ablate_seeds", [](auto& c) -> auto& { return c.ablate_seeds; }));
    f.push_back({"ablate_gammas",
                 [](const RunConfig& c) { return join(c.ablate_gammas, format_f64); },
                 [](RunConfig& c, std::string_view v) {
                   c.ablate_gammas.clear();
                   for (const auto& item : split_list(v)) c.ablate_gammas.push_back(parse_f64("ablate_gammas", item));
                 }});
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::string_view to_string(InitMode m) { return m == InitMode::pretrained ? "pretrained" : "scratch"; }

InitMode parse_init_mode(std::string_view name) {
  if (name == "pretrained") return InitMode::pretrained;
  if (name == "scratch") return InitMode::scratch;
  throw ValidationError("unknown init mode '" + std::string(name) + "' (expected pretrained or scratch)");
}

void TrainConfig::validate() const {
  if (pretrain_epochs == 0 && finetune_epochs == 0) throw ValidationError("no training epochs configured");
  if (!(lr_pretrain > 0) || !(lr_finetune > 0)) throw ValidationError("learning rates must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ValidationError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ValidationError("adam_eps must be > 0");
  AugmentSpec{augment_strength, picks_per_view, 0}.validate();
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  if (ablate_seeds.empty()) throw ValidationError("ablate_seeds must not be empty");
  if (ablate_gammas.empty()) throw ValidationError("ablate_gammas must not be empty");
  for (double g : ablate_gammas)
    if (!(g >= 0)) throw ValidationError("ablate_gammas must be >= 0");
}

void RunConfig::set(std::string_view key, std::string_view value) { find_field(key).set(*this, value); }

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return names;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig cfg;
  cfg.apply_text(text);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  text = trim(text);
  if (text.empty()) return out;
  while (true) {
    const auto comma = text.find(',');
    out.emplace_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

}  // namespace gaze
