#include <cmath>
#include <random>

#include "gaze/gradcheck.hpp"
#include "gaze/losses.hpp"
#include "gaze/model.hpp"
#include "gaze/ops.hpp"
#include "gaze/rng.hpp"

namespace gaze {
namespace {

using Fn = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct Problem {
  Fn fn;  // may return a non-scalar; reduced against random weights below
  std::vector<Tensor64> inputs;
};

Tensor64 randn(std::mt19937_64& rng, const Shape& shape, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = d(rng);
  return Tensor64::from_data(shape, std::move(v));
}

// Values bounded away from zero so relu kinks stay outside the stencil.
Tensor64 away_from_zero(std::mt19937_64& rng, const Shape& shape) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = (rng() & 1 ? 1.0 : -1.0) * uniform(rng, 0.05, 1.0);
  return Tensor64::from_data(shape, std::move(v));
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Turns any op into a scalar with a non-uniform upstream gradient.
Fn weighted(const Problem& p, std::mt19937_64& rng) {
  Tensor64 probe;
  {
    NoGradGuard no_grad;
    probe = p.fn(p.inputs);
  }
  if (probe.numel() == 1 && probe.shape().rank() == 0) return p.fn;
  auto w = randn(rng, probe.shape());
  return [fn = p.fn, w](const std::vector<Tensor64>& in) { return ops::sum(ops::mul(fn(in), w)); };
}

using Builder = std::function<Problem(std::mt19937_64&)>;

std::vector<std::pair<std::string, Builder>> cases() {
  std::vector<std::pair<std::string, Builder>> c;
  c.emplace_back("matmul", [](auto& r) {
    auto m = pick(r, 1, 4), k = pick(r, 1, 5), n = pick(r, 1, 4);
    return Problem{[](const auto& in) { return ops::matmul(in[0], in[1]); },
                   {randn(r, {m, k}), randn(r, {k, n})}};
  });
  c.emplace_back("transpose", [](auto& r) {
    return Problem{[](const auto& in) { return ops::transpose(in[0]); }, {randn(r, {pick(r, 1, 4), pick(r, 1, 4)})}};
  });
  c.emplace_back("add", [](auto& r) {
    Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return Problem{[](const auto& in) { return ops::add(in[0], in[1]); }, {randn(r, s), randn(r, s)}};
  });
  c.emplace_back("sub", [](auto& r) {
    Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return Problem{[](const auto& in) { return ops::sub(in[0], in[1]); }, {randn(r, s), randn(r, s)}};
  });
  c.emplace_back("mul", [](auto& r) {
    Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return Problem{[](const auto& in) { return ops::mul(in[0], in[1]); }, {randn(r, s), randn(r, s)}};
  });
  c.emplace_back("scale", [](auto& r) {
    const double f = uniform(r, -2, 2);
    return Problem{[f](const auto& in) { return ops::scale(in[0], f); }, {randn(r, {pick(r, 1, 5)})}};
  });
  c.emplace_back("sum", [](auto& r) {
    return Problem{[](const auto& in) { return ops::sum(in[0]); }, {randn(r, {pick(r, 1, 3), pick(r, 1, 4)})}};
  });
  c.emplace_back("mean", [](auto& r) {
    return Problem{[](const auto& in) { return ops::mean(in[0]); }, {randn(r, {pick(r, 1, 3), pick(r, 1, 4)})}};
  });
  c.emplace_back("relu", [](auto& r) {
    return Problem{[](const auto& in) { return ops::relu(in[0]); },
                   {away_from_zero(r, {pick(r, 1, 3), pick(r, 2, 6)})}};
  });
  c.emplace_back("add_bias", [](auto& r) {
    auto b = pick(r, 1, 4), n = pick(r, 1, 5);
    return Problem{[](const auto& in) { return ops::add_bias(in[0], in[1]); }, {randn(r, {b, n}), randn(r, {n})}};
  });
  c.emplace_back("linear", [](auto& r) {
    auto b = pick(r, 1, 4), i = pick(r, 1, 5), o = pick(r, 1, 4);
    return Problem{[](const auto& in) { return ops::linear(in[0], in[1], in[2]); },
                   {randn(r, {b, i}), randn(r, {i, o}), randn(r, {o})}};
  });
  auto conv_case = [](std::size_t dilation, std::size_t stride, bool same) {
    return [=](std::mt19937_64& r) {
      const std::size_t k = pick(r, 0, 1) ? 3 : 1;
      const std::size_t b = pick(r, 1, 2), ci = pick(r, 1, 2), co = pick(r, 1, 3);
      const std::size_t keff = ops::effective_kernel_extent(k, dilation);
      const std::size_t h = keff + pick(r, 0, 3), w = keff + pick(r, 0, 3);
      ops::Conv2dOptions opt;
      opt.dilation = dilation;
      opt.stride = stride;
      if (!same) opt.padding = pick(r, 0, 2);
      return Problem{[opt](const auto& in) { return ops::conv2d(in[0], in[1], in[2], opt); },
                     {randn(r, {b, ci, h, w}), randn(r, {co, ci, k, k}), randn(r, {co})}};
    };
  };
  c.emplace_back("conv2d", conv_case(1, 1, true));
  c.emplace_back("conv2d_dilated", conv_case(2, 1, true));
  c.emplace_back("conv2d_strided_padded", conv_case(2, 2, false));
  c.emplace_back("avg_pool2d", [](auto& r) {
    const std::size_t win = pick(r, 1, 2);
    return Problem{[win](const auto& in) { return ops::avg_pool2d(in[0], win); },
                   {randn(r, {pick(r, 1, 2), pick(r, 1, 2), pick(r, 2, 5), pick(r, 2, 5)})}};
  });
  c.emplace_back("global_avg_pool", [](auto& r) {
    return Problem{[](const auto& in) { return ops::global_avg_pool(in[0]); },
                   {randn(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)})}};
  });
  c.emplace_back("flatten", [](auto& r) {
    return Problem{[](const auto& in) { return ops::flatten(in[0]); },
                   {randn(r, {pick(r, 1, 2), pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 3)})}};
  });
  c.emplace_back("concat_channels", [](auto& r) {
    auto b = pick(r, 1, 2), h = pick(r, 1, 3), w = pick(r, 1, 3);
    return Problem{[](const auto& in) { return ops::concat_channels(in); },
                   {randn(r, {b, pick(r, 1, 2), h, w}), randn(r, {b, pick(r, 1, 3), h, w})}};
  });
  c.emplace_back("slice_channels", [](auto& r) {
    const std::size_t ch = pick(r, 2, 4), begin = pick(r, 0, ch - 1), count = pick(r, 1, ch - begin);
    return Problem{[=](const auto& in) { return ops::slice_channels(in[0], begin, count); },
                   {randn(r, {pick(r, 1, 2), ch, pick(r, 1, 3), pick(r, 1, 3)})}};
  });
  c.emplace_back("concat_rows", [](auto& r) {
    auto d = pick(r, 1, 4);
    return Problem{[](const auto& in) { return ops::concat_rows(in); },
                   {randn(r, {pick(r, 1, 3), d}), randn(r, {pick(r, 1, 3), d})}};
  });
  c.emplace_back("l2_normalize", [](auto& r) {
    return Problem{[](const auto& in) { return ops::l2_normalize(in[0]); }, {randn(r, {pick(r, 1, 4), pick(r, 2, 5)})}};
  });
  c.emplace_back("batch_standardize", [](auto& r) {
    return Problem{[](const auto& in) { return ops::batch_standardize(in[0]); },
                   {randn(r, {pick(r, 2, 5), pick(r, 1, 4)})}};
  });
  c.emplace_back("cross_entropy_excluding_self", [](auto& r) {
    const std::size_t n = pick(r, 2, 6);
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = (i + pick(r, 1, n - 1)) % n;
    return Problem{[pos](const auto& in) { return ops::cross_entropy_excluding_self(in[0], pos); },
                   {randn(r, {n, n}, 2.0)}};
  });
  c.emplace_back("off_diagonal_square_sum", [](auto& r) {
    const std::size_t n = pick(r, 1, 5);
    return Problem{[](const auto& in) { return ops::off_diagonal_square_sum(in[0]); }, {randn(r, {n, n})}};
  });
  c.emplace_back("huber", [](auto& r) {
    // Differences drawn from both branches, never within 0.05 of the threshold.
    const double delta = uniform(r, 0.5, 1.5);
    const std::size_t n = pick(r, 2, 6);
    auto target = randn(r, {n, 2});
    std::vector<double> pred(target.data().begin(), target.data().end());
    for (auto& p : pred) {
      const double mag = pick(r, 0, 1) ? uniform(r, 0, delta - 0.05) : uniform(r, delta + 0.05, 3 * delta);
      p += (r() & 1 ? mag : -mag);
    }
    return Problem{[delta](const auto& in) { return ops::huber(in[0], in[1], delta); },
                   {Tensor64::from_data({n, 2}, pred), target}};
  });
  c.emplace_back("ntxent_loss", [](auto& r) {
    const std::size_t b = pick(r, 1, 4), d = pick(r, 2, 6);
    const double tau = uniform(r, 0.2, 1.0);
    return Problem{[tau](const auto& in) { return ntxent_loss(in[0], in[1], tau); },
                   {randn(r, {b, d}), randn(r, {b, d})}};
  });
  c.emplace_back("redundancy_term", [](auto& r) {
    const std::size_t b = pick(r, 2, 5), d = pick(r, 2, 4);
    return Problem{[](const auto& in) { return redundancy_term(cross_correlation(in[0], in[1])); },
                   {randn(r, {b, d}), randn(r, {b, d})}};
  });
  c.emplace_back("contrastive_loss", [](auto& r) {
    const std::size_t b = pick(r, 2, 4), d = pick(r, 2, 5);
    HyperParams hp;
    hp.tau = uniform(r, 0.2, 1.0);
    hp.gamma = uniform(r, 0.005, 0.5);
    hp.batch_size = b;
    return Problem{[hp](const auto& in) { return contrastive_loss(in[0], in[1], hp); },
                   {randn(r, {b, d}), randn(r, {b, d})}};
  });
  c.emplace_back("huber_loss", [](auto& r) {
    const std::size_t n = pick(r, 1, 5);
    auto target = randn(r, {n, 2}, 0.3);
    std::vector<double> pred(target.data().begin(), target.data().end());
    for (auto& p : pred) p += (r() & 1 ? 1 : -1) * (pick(r, 0, 1) ? uniform(r, 0, 0.9) : uniform(r, 1.1, 2.5));
    return Problem{[](const auto& in) { return huber_loss(in[0], in[1], 1.0); },
                   {Tensor64::from_data({n, 2}, pred), target}};
  });
  c.emplace_back("encoder_projection_graph", [](auto& r) {
    EncoderConfig cfg;
    cfg.channels = 1;
    cfg.height = cfg.width = 8;
    cfg.stages = 2;
    cfg.dilation_rates = {1, 2};
    cfg.stage_channels = {2, 2};
    cfg.latent_dim = 3;
    cfg.projection_hidden = 3;
    cfg.projection_dim = 2;
    cfg.regressor_hidden = 2;
    auto params = build_model<double>(cfg, r());
    const std::size_t b = 2;
    auto x1 = randn(r, {b, 1, 8, 8}), x2 = randn(r, {b, 1, 8, 8});
    // Differentiate with respect to the first branch kernel and the images.
    std::vector<Tensor64> inputs{x1, x2, params.at("encoder.stage0.branch0.weight")};
    Fn fn = [cfg, params, b](const std::vector<Tensor64>& in) {
      ModelParams<double> p(cfg);
      for (const auto& [name, t] : params.entries())
        p.add(name, name == "encoder.stage0.branch0.weight" ? in[2] : t);
      HyperParams hp;
      hp.batch_size = b;
      return contrastive_loss(projection_forward(p, encoder_forward(p, in[0])),
                              projection_forward(p, encoder_forward(p, in[1])), hp);
    };
    return Problem{fn, inputs};
  });
  return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t instances) {
  std::vector<GradcheckCase> out;
  std::uint64_t case_index = 0;
  for (const auto& [name, build] : cases()) {
    for (std::size_t i = 0; i < instances; ++i) {
      auto rng = make_stream(seed, {case_index, i});
      auto problem = build(rng);
      auto fn = weighted(problem, rng);
      out.push_back({name + "#" + std::to_string(i), gradcheck(fn, problem.inputs)});
    }
    ++case_index;
  }
  return out;
}

}  // namespace gaze
