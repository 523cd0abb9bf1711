#pragma once

// Two-stage pipeline: contrastive pretraining of encoder + projection head on
// unlabeled images, then Huber-loss fine-tuning of the regression head on a
// small labeled set, and evaluation by mean angular error.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gaze/config.hpp"
#include "gaze/data.hpp"
#include "gaze/model.hpp"

namespace gaze {

/// Per-parameter first/second moments plus the shared step counter.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::string> names;  // parameters the moments belong to
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  static AdamState fresh(const ModelParams<float>& params, std::span<const std::string_view> groups,
                         double lr, double beta1, double beta2, double eps);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected adaptive-moment update of every parameter named in
/// state, using the gradients currently stored on the tensors (a parameter
/// with no gradient buffer gets g = 0). Throws NumericalError on non-finite
/// gradients and ValidationError when shapes disagree with the state.
void adam_step(ModelParams<float>& params, AdamState& state);

enum class CheckpointStage { pretrained, finetuned };

std::string_view to_string(CheckpointStage s);
CheckpointStage parse_checkpoint_stage(std::string_view name);

struct Checkpoint {
  RunConfig config;
  CheckpointStage stage = CheckpointStage::pretrained;
  std::uint64_t epoch = 0;  // epochs completed in this stage
  std::vector<double> loss_history;
  ModelParams<float> params;
  AdamState optimizer;
  /// Training streams are keyed by (seed, epoch); this pair is the full
  /// random state needed to resume.
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_epoch = 0;

  explicit Checkpoint(ModelParams<float> p) : params(std::move(p)) {}
};

/// Deep copy of parameter values into fresh leaves.
ModelParams<float> clone_params(const ModelParams<float>& params);

/// Untrained model (encoder, projection and regressor from model_seed),
/// tagged as pretrained with zero epochs. Used as the scratch baseline.
Checkpoint fresh_checkpoint(const RunConfig& cfg);

using ProgressFn = std::function<void(const std::string&)>;

/// Contrastive loss of one augmented batch pair through encoder + projection.
Tensor contrastive_batch_loss(const ModelParams<float>& params, const Tensor& view1, const Tensor& view2,
                              const HyperParams& hp);

/// Runs pretraining up to cfg.train.pretrain_epochs. With `resume`, starts
/// from its parameters, optimizer and epoch counter; the result is
/// bit-identical to an uninterrupted run. Throws NumericalError when the
/// loss becomes non-finite.
Checkpoint pretrain(std::span<const Image> unlabeled, const RunConfig& cfg,
                    const Checkpoint* resume = nullptr, const ProgressFn& progress = {});

/// Trains the regression head (and the encoder when freeze_encoder is off)
/// with the Huber loss. `init` must be a pretrained-stage checkpoint; it is
/// not modified.
Checkpoint finetune(std::span<const GazeSample> labeled, const Checkpoint& init, const RunConfig& cfg,
                    const ProgressFn& progress = {});

/// Encoder latents, computed without recording a graph, in chunks.
Tensor encode(const ModelParams<float>& params, std::span<const Image* const> images);

std::vector<GazeAngles> predict(const Checkpoint& ckpt, std::span<const GazeSample> samples);

/// Mean angular error in degrees over the samples. Requires a finetuned
/// checkpoint.
double evaluate(const Checkpoint& ckpt, std::span<const GazeSample> samples);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint file layout (little-endian):
///   "CGZK" | u32 version=1 | u64 n | n bytes UTF-8 config snapshot |
///   parameter block | optimizer block | rng block
/// where each block is  u32 count | count x tensor  and a tensor is
///   u16 name length | name | u8 dtype (0 f32, 1 f64, 2 u64) | u8 rank |
///   rank x u32 dims | payload.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError on bad magic, version mismatch or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gaze

namespace gaze {

struct PipelineResult {
  Checkpoint pretrained;
  Checkpoint finetuned;
  double mae_deg = 0;
};

/// Split `train` 80:20 with cfg.split_seed, pretrain on the unlabeled part
/// (or start from a fresh model when cfg.train.init is scratch), fine-tune on
/// the labeled part capped at finetune_limit, and evaluate on `test`.
PipelineResult run_pipeline(const RunConfig& cfg, std::span<const GazeSample> train,
                            std::span<const GazeSample> test, const ProgressFn& progress = {});

/// Labeled fine-tuning subset of `train` for cfg (split plus limit).
std::vector<GazeSample> labeled_subset(const RunConfig& cfg, std::span<const GazeSample> train);
/// Unlabeled pretraining images of `train` for cfg.
std::vector<Image> unlabeled_subset(const RunConfig& cfg, std::span<const GazeSample> train);

}  // namespace gaze
