#include <doctest.h>

#include <cmath>

#include "gaze/errors.hpp"
#include "gaze/losses.hpp"
#include "gaze/ops.hpp"
#include "gaze/train.hpp"
#include "support.hpp"

using namespace gaze;
using test::values;

namespace {

// One scalar regressor parameter, enough to hand-step the optimizer.
ModelParams<float> scalar_params(float x) {
  ModelParams<float> p(EncoderConfig{});
  p.add("regressor.w", Tensor::from_data({1}, {x}, true));
  return p;
}

void set_unit_grad(ModelParams<float>& p) {
  auto w = p.at("regressor.w");
  w.zero_grad();
  ops::sum(w).backward();
}

std::vector<float> group_values(const ModelParams<float>& p, std::string_view group) {
  std::vector<float> out;
  for (const auto& t : p.group(group)) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<Image> images_of(const std::vector<GazeSample>& samples) {
  std::vector<Image> out;
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("adam leaves parameters alone under zero gradients") {
    auto p = build_model<float>(test::small_run_config().model, 1);
    const std::array<std::string_view, 3> all{kEncoderGroup, kProjectionGroup, kRegressorGroup};
    auto state = AdamState::fresh(p, all, 1e-3, 0.9, 0.999, 1e-8);
    std::vector<std::vector<float>> before;
    for (const auto& [n, t] : p.entries()) before.push_back(values(t));
    for (int i = 0; i < 3; ++i) adam_step(p, state);
    std::size_t i = 0;
    for (const auto& [n, t] : p.entries()) CHECK(values(t) == before[i++]);
    CHECK(state.step == 3);
  }

  TEST_CASE("adam matches a hand-stepped scalar") {
    // g = 1 on a fresh state: m_hat = v_hat = 1, so each step moves by
    // lr / (1 + eps). The second step has the same corrected moments.
    auto p = scalar_params(0.5f);
    const std::array<std::string_view, 1> head{kRegressorGroup};
    auto state = AdamState::fresh(p, head, 0.1, 0.9, 0.999, 1e-8);
    set_unit_grad(p);
    adam_step(p, state);
    const double step = 0.1 / (1.0 + 1e-8);
    CHECK(p.at("regressor.w")[0] == doctest::Approx(0.5 - step).epsilon(1e-7));
    CHECK(state.m[0][0] == doctest::Approx(0.1));
    CHECK(state.v[0][0] == doctest::Approx(0.001));
    set_unit_grad(p);
    adam_step(p, state);
    CHECK(p.at("regressor.w")[0] == doctest::Approx(0.5 - 2 * step).epsilon(1e-6));
  }

  TEST_CASE("adam trajectories are deterministic") {
    auto run = [] {
      auto p = scalar_params(2.0f);
      const std::array<std::string_view, 1> head{kRegressorGroup};
      auto state = AdamState::fresh(p, head, 0.05, 0.9, 0.999, 1e-8);
      std::vector<float> path;
      for (int i = 0; i < 20; ++i) {
        auto w = p.at("regressor.w");
        w.zero_grad();
        ops::sum(ops::mul(w, w)).backward();
        adam_step(p, state);
        path.push_back(w[0]);
      }
      return std::pair{path, state};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(std::abs(a.first.back()) < 2.0f);
  }

  TEST_CASE("adam rejects state that does not match the parameters") {
    auto p = scalar_params(1.0f);
    const std::array<std::string_view, 1> head{kRegressorGroup};
    auto state = AdamState::fresh(p, head, 0.1, 0.9, 0.999, 1e-8);
    state.m[0].push_back(0);
    CHECK_THROWS_AS(adam_step(p, state), ValidationError);
    state = AdamState::fresh(p, head, 0.1, 0.9, 0.999, 1e-8);
    state.v.clear();
    CHECK_THROWS_AS(adam_step(p, state), ValidationError);
  }

  TEST_CASE("pretraining records one loss per epoch and is reproducible") {
    const auto cfg = test::small_run_config();
    const auto images = images_of(test::small_dataset(24, 3));
    test::TempDir dir("pretrain");
    std::vector<std::string> log;
    const auto a = pretrain(images, cfg, nullptr, [&](const std::string& m) { log.push_back(m); });
    const auto b = pretrain(images, cfg);
    CHECK(a.loss_history.size() == cfg.train.pretrain_epochs);
    CHECK(log.size() == cfg.train.pretrain_epochs);
    CHECK(a.epoch == cfg.train.pretrain_epochs);
    CHECK(a.stage == CheckpointStage::pretrained);
    save_checkpoint(dir / "a.cgzk", a);
    save_checkpoint(dir / "b.cgzk", b);
    CHECK(test::read_bytes(dir / "a.cgzk") == test::read_bytes(dir / "b.cgzk"));
  }

  TEST_CASE("pretraining needs a full batch") {
    const auto cfg = test::small_run_config();
    CHECK_THROWS_AS(pretrain(images_of(test::small_dataset(7, 3)), cfg), ValidationError);
  }

  TEST_CASE("resuming from a saved checkpoint equals an uninterrupted run") {
    auto cfg = test::small_run_config();
    cfg.train.pretrain_epochs = 3;
    const auto images = images_of(test::small_dataset(24, 4));
    test::TempDir dir("resume");
    const auto full = pretrain(images, cfg);

    auto first = cfg;
    first.train.pretrain_epochs = 1;
    save_checkpoint(dir / "part.cgzk", pretrain(images, first));
    const auto part = load_checkpoint(dir / "part.cgzk");
    const auto resumed = pretrain(images, cfg, &part);

    save_checkpoint(dir / "full.cgzk", full);
    save_checkpoint(dir / "resumed.cgzk", resumed);
    CHECK(test::read_bytes(dir / "full.cgzk") == test::read_bytes(dir / "resumed.cgzk"));
    CHECK(resumed.loss_history == full.loss_history);
  }

  TEST_CASE("one pretraining step reaches every encoder stage") {
    const auto cfg = test::small_run_config();
    auto p = build_model<float>(cfg.model, 5);
    const auto samples = test::small_dataset(8, 5);
    const auto spec = AugmentSpec{AugmentStrength::strong, 3, 11};
    std::vector<Image> v1, v2;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto [a, b] = augment_pair(samples[i].image, spec, 0, i);
      v1.push_back(a);
      v2.push_back(b);
    }
    contrastive_batch_loss(p, to_batch(v1), to_batch(v2), cfg.loss).backward();
    for (std::size_t s = 0; s < cfg.model.stages; ++s) {
      const std::string prefix = "encoder.stage" + std::to_string(s);
      bool any = false;
      for (const auto& t : p.group(prefix))
        for (float g : t.grad()) any = any || g != 0.0f;
      CHECK_MESSAGE(any, prefix);
    }
  }

  TEST_CASE("frozen fine-tuning touches only the regressor") {
    const auto cfg = test::small_run_config();
    const auto init = fresh_checkpoint(cfg);
    const auto labeled = test::small_dataset(16, 6);
    const auto out = finetune(labeled, init, cfg);
    CHECK(out.stage == CheckpointStage::finetuned);
    CHECK(out.loss_history.size() == cfg.train.finetune_epochs);
    CHECK(group_values(out.params, kEncoderGroup) == group_values(init.params, kEncoderGroup));
    CHECK(group_values(out.params, kProjectionGroup) == group_values(init.params, kProjectionGroup));
    CHECK(group_values(out.params, kRegressorGroup) != group_values(init.params, kRegressorGroup));
  }

  TEST_CASE("unfrozen fine-tuning also moves the encoder but not the projection") {
    auto cfg = test::small_run_config();
    cfg.train.freeze_encoder = false;
    const auto init = fresh_checkpoint(cfg);
    const auto out = finetune(test::small_dataset(16, 6), init, cfg);
    CHECK(group_values(out.params, kEncoderGroup) != group_values(init.params, kEncoderGroup));
    CHECK(group_values(out.params, kProjectionGroup) == group_values(init.params, kProjectionGroup));
  }

  TEST_CASE("fine-tuning loss goes down") {
    auto cfg = test::small_run_config();
    cfg.train.finetune_epochs = 25;
    cfg.train.lr_finetune = 1e-2;
    const auto out = finetune(test::small_dataset(64, 7), fresh_checkpoint(cfg), cfg);
    const auto& h = out.loss_history;
    auto window = [&](std::size_t from) { return (h[from] + h[from + 1] + h[from + 2] + h[from + 3] + h[from + 4]) / 5; };
    CHECK(window(h.size() - 5) < window(0));
  }

  TEST_CASE("stage tags are enforced") {
    const auto cfg = test::small_run_config();
    const auto labeled = test::small_dataset(8, 8);
    const auto init = fresh_checkpoint(cfg);
    CHECK_THROWS_AS(evaluate(init, labeled), ValidationError);
    const auto tuned = finetune(labeled, init, cfg);
    CHECK_THROWS_AS(finetune(labeled, tuned, cfg), ValidationError);
    CHECK_THROWS_AS(pretrain(images_of(test::small_dataset(8, 8)), cfg, &tuned), ValidationError);
    CHECK_THROWS_AS(finetune({}, init, cfg), ValidationError);
    CHECK_THROWS_AS(evaluate(tuned, {}), ValidationError);
  }

  TEST_CASE("a model evaluated against its own predictions scores zero") {
    const auto cfg = test::small_run_config();
    auto samples = test::small_dataset(20, 9);
    const auto tuned = finetune(samples, fresh_checkpoint(cfg), cfg);
    const auto pred = predict(tuned, samples);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].label = pred[i];
    CHECK(evaluate(tuned, samples) == 0.0);
  }

  TEST_CASE("a constant-output model matches the metric oracle") {
    const auto oracle = test::load_oracle("metric_cases.json");
    const auto cfg = test::small_run_config();
    Checkpoint ckpt = fresh_checkpoint(cfg);
    ckpt.stage = CheckpointStage::finetuned;
    auto w = ckpt.params.at("regressor.fc2.weight");
    for (auto& x : w.mutable_data()) x = 0;
    auto b = ckpt.params.at("regressor.fc2.bias");
    b.mutable_data()[0] = oracle["prediction"][0].get<float>();
    b.mutable_data()[1] = oracle["prediction"][1].get<float>();
    std::vector<GazeSample> samples;
    for (const auto& l : oracle["labels"]) {
      GazeSample s;
      s.image = Image::zeros(3, 16, 16);
      s.label = {l[0].get<double>(), l[1].get<double>()};
      samples.push_back(std::move(s));
    }
    CHECK(evaluate(ckpt, samples) == doctest::Approx(oracle["mae_deg"].get<double>()).epsilon(1e-6));
  }

  TEST_CASE("the pipeline is deterministic and the scratch path skips pretraining") {
    auto cfg = test::small_run_config();
    cfg.train.finetune_limit = 8;
    const auto train = test::small_dataset(40, 10);
    const auto test_set = test::small_dataset(10, 11);
    const auto a = run_pipeline(cfg, train, test_set);
    const auto b = run_pipeline(cfg, train, test_set);
    CHECK(a.mae_deg == b.mae_deg);
    CHECK(std::isfinite(a.mae_deg));
    CHECK(labeled_subset(cfg, train).size() == 8);
    CHECK(unlabeled_subset(cfg, train).size() == 32);

    cfg.train.init = InitMode::scratch;
    const auto s = run_pipeline(cfg, train, test_set);
    CHECK(s.pretrained.epoch == 0);
    CHECK(s.pretrained.loss_history.empty());
    CHECK(s.finetuned.epoch == cfg.train.finetune_epochs);
  }
}

TEST_SUITE("checkpoint") {
  Checkpoint trained() {
    const auto cfg = test::small_run_config();
    auto pre = pretrain(images_of(test::small_dataset(16, 12)), cfg);
    return finetune(test::small_dataset(16, 13), pre, cfg);
  }

  TEST_CASE("save then load is bit-exact") {
    test::TempDir dir("ckpt");
    const auto ckpt = trained();
    save_checkpoint(dir / "a.cgzk", ckpt);
    const auto back = load_checkpoint(dir / "a.cgzk");
    save_checkpoint(dir / "b.cgzk", back);
    CHECK(test::read_bytes(dir / "a.cgzk") == test::read_bytes(dir / "b.cgzk"));
    CHECK(back.stage == ckpt.stage);
    CHECK(back.epoch == ckpt.epoch);
    CHECK(back.loss_history == ckpt.loss_history);
    CHECK(back.optimizer == ckpt.optimizer);
    CHECK(back.rng_seed == ckpt.rng_seed);
    CHECK(back.rng_epoch == ckpt.rng_epoch);
    CHECK(back.config.to_text() == ckpt.config.to_text());
    REQUIRE(back.params.entries().size() == ckpt.params.entries().size());
    for (std::size_t i = 0; i < back.params.entries().size(); ++i) {
      CHECK(back.params.entries()[i].first == ckpt.params.entries()[i].first);
      CHECK(values(back.params.entries()[i].second) == values(ckpt.params.entries()[i].second));
    }
    const auto samples = test::small_dataset(12, 14);
    CHECK(evaluate(back, samples) == evaluate(ckpt, samples));
  }

  TEST_CASE("file header follows the documented layout") {
    test::TempDir dir("ckpt");
    save_checkpoint(dir / "a.cgzk", fresh_checkpoint(test::small_run_config()));
    const auto bytes = test::read_bytes(dir / "a.cgzk");
    CHECK(bytes.substr(0, 4) == "CGZK");
    CHECK(bytes.substr(4, 4) == std::string("\x01\x00\x00\x00", 4));
  }

  TEST_CASE("corrupt files are I/O errors") {
    test::TempDir dir("ckpt");
    save_checkpoint(dir / "a.cgzk", fresh_checkpoint(test::small_run_config()));
    const auto good = test::read_bytes(dir / "a.cgzk");
    auto write = [&](const std::string& bytes) {
      std::ofstream(dir / "bad.cgzk", std::ios::binary) << bytes;
      return dir / "bad.cgzk";
    };
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.cgzk"), IoError);
    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(load_checkpoint(write(bad_magic)), IoError);
    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(load_checkpoint(write(bad_version)), IoError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1})
      CHECK_THROWS_AS(load_checkpoint(write(good.substr(0, cut))), IoError);
    CHECK_THROWS_AS(load_checkpoint(write(good + "x")), IoError);
    auto bad_stage = good;
    const auto at = bad_stage.find("stage = pretrained");
    REQUIRE(at != std::string::npos);
    bad_stage.replace(at + 8, 10, "prefrained");
    CHECK_THROWS_AS(load_checkpoint(write(bad_stage)), IoError);
  }
}
