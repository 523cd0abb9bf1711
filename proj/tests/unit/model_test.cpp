#include <doctest.h>

#include <cmath>

#include "gaze/errors.hpp"
#include "gaze/gradcheck.hpp"
#include "gaze/losses.hpp"
#include "gaze/model.hpp"
#include "gaze/ops.hpp"
#include "support.hpp"

using namespace gaze;
using test::values;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.channels = 2;
  cfg.height = 8;
  cfg.width = 8;
  cfg.stages = 2;
  cfg.dilation_rates = {1, 2};
  cfg.stage_channels = {3, 4};
  cfg.latent_dim = 5;
  cfg.projection_hidden = 4;
  cfg.projection_dim = 3;
  cfg.regressor_hidden = 4;
  return cfg;
}

template <typename T>
BasicTensor<T> uniform_images(std::mt19937_64& rng, const EncoderConfig& cfg, std::size_t batch) {
  std::vector<T> v(batch * cfg.channels * cfg.height * cfg.width);
  for (auto& x : v) x = static_cast<T>(uniform(rng, 0, 1));
  return BasicTensor<T>::from_data({batch, cfg.channels, cfg.height, cfg.width}, v);
}

// The parameters of `p` rebuilt as fresh leaves taken from `inputs`.
ModelParams<double> rebind(const ModelParams<double>& p, const std::vector<Tensor64>& inputs) {
  ModelParams<double> out(p.config());
  for (std::size_t i = 0; i < p.entries().size(); ++i) out.add(p.entries()[i].first, inputs[i]);
  return out;
}

// Zero-initialised biases put relu inputs exactly on the kink wherever every
// upstream unit is dead; central differences then see half the slope.
ModelParams<double> jitter_biases(const ModelParams<double>& p, std::mt19937_64& rng) {
  ModelParams<double> out(p.config());
  for (const auto& [name, t] : p.entries()) {
    std::vector<double> v(t.data().begin(), t.data().end());
    if (name.ends_with(".bias"))
      for (auto& e : v) e = uniform(rng, -0.1, 0.1);
    out.add(name, Tensor64::from_data(t.shape(), v, true));
  }
  return out;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("initialization is deterministic per seed") {
    const EncoderConfig cfg;
    auto a = build_model<float>(cfg, 3), b = build_model<float>(cfg, 3), c = build_model<float>(cfg, 4);
    bool any_differs = false;
    for (std::size_t i = 0; i < a.entries().size(); ++i) {
      CHECK(a.entries()[i].first == b.entries()[i].first);
      CHECK(values(a.entries()[i].second) == values(b.entries()[i].second));
      any_differs |= values(a.entries()[i].second) != values(c.entries()[i].second);
    }
    CHECK(any_differs);
  }

  TEST_CASE("parameter counts match the shape walker") {
    const auto oracle = test::load_oracle("param_count.json");
    for (auto pooling : {Pooling::gap, Pooling::flatten}) {
      EncoderConfig cfg;
      cfg.pooling = pooling;
      const auto& want = oracle[std::string(to_string(pooling))];
      auto p = build_model<float>(cfg, 0);
      CHECK(p.parameter_count() == want["total"].get<std::size_t>());
      CHECK(p.parameter_count(kEncoderGroup) == want["encoder"].get<std::size_t>());
      CHECK(p.parameter_count(kProjectionGroup) == want["projection"].get<std::size_t>());
      CHECK(p.parameter_count(kRegressorGroup) == want["regressor"].get<std::size_t>());
      CHECK(cfg.pooled_features() == want["pooled_features"].get<std::size_t>());
    }
  }

  TEST_CASE("flatten is wider and larger than GAP") {
    EncoderConfig gap, flat;
    flat.pooling = Pooling::flatten;
    CHECK(flat.pooled_features() == 64 * 8 * 8);
    CHECK(build_model<float>(flat, 0).parameter_count() > build_model<float>(gap, 0).parameter_count());
  }

  TEST_CASE("weights are fan-in bounded and biases start at zero") {
    auto p = build_model<float>(EncoderConfig{}, 1);
    for (const auto& [name, t] : p.entries()) {
      CAPTURE(name);
      if (name.ends_with(".bias")) {
        for (float v : t.data()) CHECK(v == 0.0f);
        continue;
      }
      const std::size_t fan_in = t.shape().rank() == 4 ? t.dim(1) * t.dim(2) * t.dim(3) : t.dim(0);
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (float v : t.data()) CHECK(std::abs(v) <= bound);
    }
  }

  TEST_CASE("default encoder, projection and regressor shapes") {
    const EncoderConfig cfg;
    auto p = build_model<float>(cfg, 0);
    std::mt19937_64 rng(1);
    auto x = uniform_images<float>(rng, cfg, 2);
    auto f = encoder_forward(p, x);
    CHECK(f.shape() == Shape{2, 128});
    for (float v : f.data()) CHECK(std::isfinite(v));
    CHECK(values(encoder_forward(p, x)) == values(f));
    CHECK(projection_forward(p, test::randn(rng, {4, 128})).shape() == Shape{4, 64});
    auto r = test::randn(rng, {4, 128});
    CHECK(regressor_forward(p, r).shape() == Shape{4, 2});
    CHECK(values(regressor_forward(p, r)) == values(regressor_forward(p, r)));
    CHECK_THROWS_AS(encoder_forward(p, Tensor::zeros({1, 3, 32, 32})), ValidationError);
    CHECK_THROWS_AS(projection_forward(p, Tensor::zeros({1, 64})), ValidationError);
  }

  TEST_CASE("every dilation rate keeps the spatial size so branches concatenate") {
    auto cfg = tiny_config();
    cfg.height = cfg.width = 16;
    cfg.dilation_rates = {1, 2, 3, 4, 8};
    auto p = build_model<float>(cfg, 2);
    std::mt19937_64 rng(2);
    CHECK(encoder_forward(p, uniform_images<float>(rng, cfg, 3)).shape() == Shape{3, 5});
  }

  TEST_CASE("zero projection input with zero biases gives zero output") {
    auto p = build_model<float>(EncoderConfig{}, 0);
    CHECK(values(projection_forward(p, Tensor::zeros({3, 128}))) == std::vector<float>(3 * 64, 0.0f));
  }

  TEST_CASE("with all weights zero the encoder output ignores the input") {
    const auto cfg = tiny_config();
    auto p = build_model<float>(cfg, 0);
    std::mt19937_64 rng(3);
    for (const auto& [name, t] : p.entries()) {
      auto data = const_cast<Tensor&>(t).mutable_data();
      for (auto& v : data) v = name.ends_with(".bias") ? float(uniform(rng, -1, 1)) : 0.0f;
    }
    auto a = encoder_forward(p, uniform_images<float>(rng, cfg, 2));
    auto b = encoder_forward(p, uniform_images<float>(rng, cfg, 2));
    CHECK(values(a) == values(b));
    // The constant is the latent bias alone.
    CHECK(std::vector<float>(a.data().begin(), a.data().begin() + 5) == values(p.at("encoder.head.bias")));
  }

  TEST_CASE("projection of the encoder passes gradcheck") {
    const auto cfg = tiny_config();
    std::mt19937_64 rng(4);
    auto p = jitter_biases(build_model<double>(cfg, 7), rng);
    auto x = uniform_images<double>(rng, cfg, 2);
    std::vector<Tensor64> inputs{x};
    for (const auto& [name, t] : p.entries())
      if (!name.starts_with(kRegressorGroup)) inputs.push_back(t);
    auto report = gradcheck(
        [&](const std::vector<Tensor64>& in) {
          ModelParams<double> q(cfg);
          std::size_t i = 1;
          for (const auto& [name, t] : p.entries()) q.add(name, name.starts_with(kRegressorGroup) ? t : in[i++]);
          return ops::sum(ops::mul(projection_forward(q, encoder_forward(q, in[0])),
                                   projection_forward(q, encoder_forward(q, in[0]))));
        },
        inputs);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-5);
  }

  TEST_CASE("Huber loss through the regressor passes gradcheck") {
    const auto cfg = tiny_config();
    std::mt19937_64 rng(5);
    auto p = jitter_biases(build_model<double>(cfg, 6), rng);
    auto f = test::randn<double>(rng, {4, cfg.latent_dim});
    auto target = test::randn<double>(rng, {4, 2});
    std::vector<Tensor64> inputs;
    for (const auto& [name, t] : p.entries()) inputs.push_back(t);
    auto report = gradcheck(
        [&](const std::vector<Tensor64>& in) { return huber_loss(regressor_forward(rebind(p, in), f), target, 0.5); },
        inputs);
    CHECK(report.passed);
  }

  TEST_CASE("configuration validation") {
    auto bad = [](auto mutate) {
      EncoderConfig c;
      mutate(c);
      CHECK_THROWS_AS(c.validate(), ValidationError);
      CHECK_THROWS_AS(build_model<float>(c, 0), ValidationError);
    };
    bad([](EncoderConfig& c) { c.dilation_rates = {}; });
    bad([](EncoderConfig& c) { c.dilation_rates = {1, 0}; });
    bad([](EncoderConfig& c) { c.stages = 0; });
    bad([](EncoderConfig& c) { c.stage_channels = {16, 32}; });
    bad([](EncoderConfig& c) { c.kernel = 2; });
    bad([](EncoderConfig& c) { c.latent_dim = 0; });
    bad([](EncoderConfig& c) { c.height = 60; });
  }

  TEST_CASE("parameter names are unique and grouped") {
    auto p = build_model<float>(EncoderConfig{}, 0);
    CHECK_THROWS_AS(p.add("encoder.head.weight", Tensor::zeros({1})), ValidationError);
    CHECK_THROWS_AS(p.at("encoder.nope"), ValidationError);
    std::size_t n = 0;
    for (auto g : {kEncoderGroup, kProjectionGroup, kRegressorGroup}) n += p.group(g).size();
    CHECK(n == p.entries().size());
  }
}
