#pragma once

// Synthetic gaze samples, the 80:20 unlabeled/labeled split, mini-batch
// iteration and the packed dataset file.
//
// Dataset file layout (little-endian):
//   "CGZD" | u32 version=1 | u32 count | u16 H | u16 W | u16 C |
//   count x ( C*H*W f32 pixels (planar) | f32 pitch | f32 yaw )

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gaze/image.hpp"
#include "gaze/losses.hpp"

namespace gaze {

struct GazeSample {
  Image image;
  GazeAngles label;
};

/// Labels are drawn uniformly from [-kLabelBound, kLabelBound] radians.
inline constexpr double kLabelBound = 0.7;
/// Iris displacement in pixels is kIrisGain * (sin(yaw), sin(pitch)).
inline constexpr double kIrisGain = 12.0;

struct GeneratorOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  /// Random translation/rotation/scale of the eye. Disable for oracle tests.
  bool jitter = true;
  /// Renders this label instead of the drawn one (the draw still happens, so
  /// the rest of the stream is unchanged).
  std::optional<GazeAngles> label;
};

/// Renders one stylized eye: noisy skin background, elliptical sclera, dark
/// iris and pupil displaced from the eye center along the gaze, optional
/// affine jitter, and a random illumination scale in [0.7, 1.3].
GazeSample generate_sample(std::mt19937_64& rng, const GeneratorOptions& options = {});

/// Sample i is drawn from the stream (seed, i), so generation is parallel
/// and independent of the worker count.
std::vector<GazeSample> generate_dataset(std::size_t count, std::uint64_t seed,
                                         const GeneratorOptions& options = {});

struct DatasetSplit {
  std::vector<std::size_t> pretrain_unlabeled;  // floor(0.8 n)
  std::vector<std::size_t> finetune_labeled;    // the rest
};

/// Seeded shuffle of [0, n) then an 80:20 partition. Throws for n < 5.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

enum class BatchMode {
  contrastive,  // drops the final partial batch
  finetune,     // keeps it
};

/// Per-epoch seeded shuffle of indices cut into batches.
std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch, BatchMode mode);

inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::filesystem::path& path, std::span<const GazeSample> samples);
/// Throws IoError on bad magic, unsupported version or truncation.
std::vector<GazeSample> read_dataset(const std::filesystem::path& path);

/// Writes sample_00000.png ... (8-bit RGB) and labels.csv (filename,pitch,yaw)
/// for the first `limit` samples.
void export_previews(std::span<const GazeSample> samples, const std::filesystem::path& dir,
                     std::size_t limit);

}  // namespace gaze
