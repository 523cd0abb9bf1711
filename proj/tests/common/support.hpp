#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaze/config.hpp"
#include "gaze/data.hpp"
#include "gaze/rng.hpp"
#include "gaze/tensor.hpp"

namespace gaze::test {

template <typename T = float>
BasicTensor<T> randn(std::mt19937_64& rng, const Shape& shape, bool requires_grad = false) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(d(rng));
  return BasicTensor<T>::from_data(shape, std::move(v), requires_grad);
}

template <typename T>
std::vector<T> values(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gaze_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json load_oracle(const std::string& name) {
  std::ifstream in(std::filesystem::path(GAZE_ORACLE_DIR) / name);
  return nlohmann::json::parse(in);
}

/// Inverse of the renderer's iris placement: the darkness-weighted centroid
/// of the pupil and iris, mapped back through arcsin of the offset over the
/// iris gain. Valid for jitter-free samples only.
inline GazeAngles centroid_label(const Image& img) {
  constexpr double kDark = 0.12;
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double lum = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
      const double w = std::max(0.0, kDark - lum);
      sw += w;
      sx += w * (x + 0.5);
      sy += w * (y + 0.5);
    }
  const double unit = std::min(img.height, img.width) / 64.0;
  const double dx = (sx / sw - img.width / 2.0) / (kIrisGain * unit);
  const double dy = (sy / sw - img.height / 2.0) / (kIrisGain * unit);
  return {std::asin(std::clamp(dy, -1.0, 1.0)), std::asin(std::clamp(dx, -1.0, 1.0))};
}

/// A 16x16 two-stage model with tiny heads and batches of 8: enough to run
/// every training path in well under a second.
inline RunConfig small_run_config() {
  RunConfig c;
  c.model.height = 16;
  c.model.width = 16;
  c.model.stages = 2;
  c.model.dilation_rates = {1, 2};
  c.model.stage_channels = {4, 6};
  c.model.latent_dim = 8;
  c.model.projection_hidden = 8;
  c.model.projection_dim = 4;
  c.model.regressor_hidden = 8;
  c.loss.batch_size = 8;
  c.train.pretrain_epochs = 2;
  c.train.finetune_epochs = 2;
  c.ablate_seeds = {0, 1};
  c.workers = 1;
  return c;
}

inline std::vector<GazeSample> small_dataset(std::size_t count, std::uint64_t seed) {
  GeneratorOptions opt;
  opt.height = 16;
  opt.width = 16;
  return generate_dataset(count, seed, opt);
}

}  // namespace gaze::test
