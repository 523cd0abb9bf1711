#include "gaze/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gaze/errors.hpp"
#include "gaze/ops.hpp"

namespace gaze {
namespace {

std::string stage_name(std::size_t s) { return "encoder.stage" + std::to_string(s); }

template <typename T>
BasicTensor<T> uniform_tensor(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape.numel());
  for (T& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::from_data(shape, std::move(values), true);
}

template <typename T>
void add_linear(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng) {
  p.add(name + ".weight", uniform_tensor<T>(Shape{in, out}, in, rng));
  p.add(name + ".bias", BasicTensor<T>::zeros(Shape{out}, true));
}

template <typename T>
void add_conv(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k, std::mt19937_64& rng) {
  p.add(name + ".weight", uniform_tensor<T>(Shape{out, in, k, k}, in * k * k, rng));
  p.add(name + ".bias", BasicTensor<T>::zeros(Shape{out}, true));
}

template <typename T>
BasicTensor<T> dense(const ModelParams<T>& p, const std::string& name, const BasicTensor<T>& x) {
  return ops::linear(x, p.at(name + ".weight"), p.at(name + ".bias"));
}

template <typename T>
void require_features(const BasicTensor<T>& f, std::size_t width, const char* what) {
  if (f.shape().rank() != 2 || f.dim(1) != width) {
    throw ValidationError(std::string(what) + ": expected [B x " + std::to_string(width) +
                          "], got " + f.shape().str());
  }
}

}  // namespace

std::string_view to_string(Pooling p) { return p == Pooling::gap ? "gap" : "flatten"; }

Pooling parse_pooling(std::string_view name) {
  if (name == "gap") return Pooling::gap;
  if (name == "flatten") return Pooling::flatten;
  throw ValidationError("unknown pooling '" + std::string(name) + "' (expected gap or flatten)");
}

void EncoderConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("input extents must be positive");
  if (stages == 0) throw ValidationError("stages must be >= 1");
  if (stage_channels.size() != stages)
    throw ValidationError("stage_channels needs one entry per stage");
  if (std::any_of(stage_channels.begin(), stage_channels.end(), [](auto c) { return c == 0; }))
    throw ValidationError("stage_channels must be positive");
  if (dilation_rates.empty()) throw ValidationError("dilation_rates must not be empty");
  if (std::any_of(dilation_rates.begin(), dilation_rates.end(), [](auto r) { return r == 0; }))
    throw ValidationError("dilation rates must be >= 1");
  if (kernel == 0 || kernel % 2 == 0) throw ValidationError("kernel must be odd");
  if (stages >= 16 || (height >> stages) == 0 || (width >> stages) == 0 ||
      height % (std::size_t{1} << stages) != 0 || width % (std::size_t{1} << stages) != 0)
    throw ValidationError("input extents must be divisible by 2^stages");
  if (latent_dim == 0 || projection_hidden == 0 || projection_dim == 0 || regressor_hidden == 0)
    throw ValidationError("head widths must be positive");
}

std::size_t EncoderConfig::pooled_features() const {
  const std::size_t c = stage_channels.back();
  return pooling == Pooling::gap ? c : c * final_height() * final_width();
}

template <typename T>
void ModelParams<T>::add(std::string name, BasicTensor<T> tensor) {
  if (contains(name)) throw ValidationError("duplicate parameter name " + name);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
bool ModelParams<T>::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

template <typename T>
const BasicTensor<T>& ModelParams<T>::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw ValidationError("unknown parameter " + std::string(name));
}

template <typename T>
std::vector<BasicTensor<T>> ModelParams<T>::group(std::string_view prefix) const {
  std::vector<BasicTensor<T>> out;
  for (const auto& e : entries_)
    if (e.first.size() > prefix.size() && e.first.starts_with(prefix) && e.first[prefix.size()] == '.')
      out.push_back(e.second);
  return out;
}

template <typename T>
void ModelParams<T>::set_requires_grad(std::string_view prefix, bool on) {
  for (auto t : group(prefix)) t.set_requires_grad(on);
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& t : group(prefix)) n += t.numel();
  return n;
}

template <typename T>
ModelParams<T> build_model(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> p(cfg);
  std::size_t in = cfg.channels;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const std::size_t out = cfg.stage_channels[s];
    for (std::size_t b = 0; b < cfg.dilation_rates.size(); ++b)
      add_conv(p, stage_name(s) + ".branch" + std::to_string(b), in, out, cfg.kernel, rng);
    add_conv(p, stage_name(s) + ".fuse", out * cfg.dilation_rates.size(), out, 1, rng);
    in = out;
  }
  add_linear(p, "encoder.head", cfg.pooled_features(), cfg.latent_dim, rng);
  add_linear(p, "projection.fc1", cfg.latent_dim, cfg.projection_hidden, rng);
  add_linear(p, "projection.fc2", cfg.projection_hidden, cfg.projection_dim, rng);
  add_linear(p, "regressor.fc1", cfg.latent_dim, cfg.regressor_hidden, rng);
  add_linear(p, "regressor.fc2", cfg.regressor_hidden, 2, rng);
  return p;
}

template <typename T>
BasicTensor<T> encoder_forward(const ModelParams<T>& params, const BasicTensor<T>& x) {
  const EncoderConfig& cfg = params.config();
  if (x.shape().rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.height ||
      x.dim(3) != cfg.width) {
    throw ValidationError("encoder_forward: expected [B x " + std::to_string(cfg.channels) + " x " +
                          std::to_string(cfg.height) + " x " + std::to_string(cfg.width) +
                          "], got " + x.shape().str());
  }
  BasicTensor<T> h = x;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const std::string stage = stage_name(s);
    std::vector<BasicTensor<T>> branches;
    branches.reserve(cfg.dilation_rates.size());
    for (std::size_t b = 0; b < cfg.dilation_rates.size(); ++b) {
      const std::string name = stage + ".branch" + std::to_string(b);
      ops::Conv2dOptions opt;
      opt.dilation = cfg.dilation_rates[b];
      branches.push_back(
          ops::relu(ops::conv2d(h, params.at(name + ".weight"), params.at(name + ".bias"), opt)));
    }
    auto fused = ops::conv2d(ops::concat_channels(branches), params.at(stage + ".fuse.weight"),
                             params.at(stage + ".fuse.bias"));
    h = ops::avg_pool2d(ops::relu(fused), 2);
  }
  auto pooled = cfg.pooling == Pooling::gap ? ops::global_avg_pool(h) : ops::flatten(h);
  return dense(params, "encoder.head", pooled);
}

template <typename T>
BasicTensor<T> projection_forward(const ModelParams<T>& params, const BasicTensor<T>& f) {
  require_features(f, params.config().latent_dim, "projection_forward");
  return dense(params, "projection.fc2", ops::relu(dense(params, "projection.fc1", f)));
}

template <typename T>
BasicTensor<T> regressor_forward(const ModelParams<T>& params, const BasicTensor<T>& f) {
  require_features(f, params.config().latent_dim, "regressor_forward");
  return dense(params, "regressor.fc2", ops::relu(dense(params, "regressor.fc1", f)));
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<float> build_model(const EncoderConfig&, std::uint64_t);
template ModelParams<double> build_model(const EncoderConfig&, std::uint64_t);
template Tensor encoder_forward(const ModelParams<float>&, const Tensor&);
template Tensor64 encoder_forward(const ModelParams<double>&, const Tensor64&);
template Tensor projection_forward(const ModelParams<float>&, const Tensor&);
template Tensor64 projection_forward(const ModelParams<double>&, const Tensor64&);
template Tensor regressor_forward(const ModelParams<float>&, const Tensor&);
template Tensor64 regressor_forward(const ModelParams<double>&, const Tensor64&);

}  // namespace gaze
