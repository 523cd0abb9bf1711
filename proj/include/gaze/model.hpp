#pragma once

// Dilated-convolution encoder, projection head and gaze regressor.
//
// Each encoder stage runs one 3x3 convolution per dilation rate on the same
// input ("same" padding, so every branch keeps the spatial size), applies
// relu, concatenates the branches along channels, fuses them with a 1x1
// convolution + relu and halves the resolution with 2x2 average pooling.
// After the last stage the map is reduced by global average pooling (or
// flattened) and mapped linearly to the latent vector.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gaze/tensor.hpp"

namespace gaze {

enum class Pooling { gap, flatten };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view name);

struct EncoderConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t stages = 3;
  std::vector<std::size_t> dilation_rates{1, 2, 4};  // applied in every stage
  std::size_t kernel = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  Pooling pooling = Pooling::gap;
  std::size_t latent_dim = 128;
  std::size_t projection_hidden = 128;
  std::size_t projection_dim = 64;
  std::size_t regressor_hidden = 64;

  void validate() const;
  std::size_t final_height() const { return height >> stages; }
  std::size_t final_width() const { return width >> stages; }
  /// Width of the vector entering the latent linear map.
  std::size_t pooled_features() const;
};

/// Named parameter tensors in creation order.
template <typename T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  explicit ModelParams(EncoderConfig config) : config_(std::move(config)) {}

  const EncoderConfig& config() const { return config_; }
  /// Throws ValidationError on a duplicate name.
  void add(std::string name, BasicTensor<T> tensor);
  bool contains(std::string_view name) const;
  /// Throws ValidationError for unknown names.
  const BasicTensor<T>& at(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  /// Tensors whose name starts with "<prefix>.".
  std::vector<BasicTensor<T>> group(std::string_view prefix) const;
  void set_requires_grad(std::string_view prefix, bool on);
  std::size_t parameter_count() const;
  std::size_t parameter_count(std::string_view prefix) const;

 private:
  EncoderConfig config_;
  std::vector<Entry> entries_;
};

/// Fan-in uniform initialization: weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)),
/// biases zero. Identical (config, seed) give bit-identical parameters.
template <typename T>
ModelParams<T> build_model(const EncoderConfig& cfg, std::uint64_t seed);

/// [B x C x H x W] -> [B x latent_dim]
template <typename T>
BasicTensor<T> encoder_forward(const ModelParams<T>& params, const BasicTensor<T>& x);
/// [B x latent_dim] -> [B x projection_dim]
template <typename T>
BasicTensor<T> projection_forward(const ModelParams<T>& params, const BasicTensor<T>& f);
/// [B x latent_dim] -> [B x 2] (pitch, yaw) in radians.
template <typename T>
BasicTensor<T> regressor_forward(const ModelParams<T>& params, const BasicTensor<T>& f);

/// Parameter names under each head.
inline constexpr std::string_view kEncoderGroup = "encoder";
inline constexpr std::string_view kProjectionGroup = "projection";
inline constexpr std::string_view kRegressorGroup = "regressor";

}  // namespace gaze
