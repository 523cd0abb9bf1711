#include "gaze/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "gaze/errors.hpp"
#include "gaze/losses.hpp"
#include "gaze/ops.hpp"
#include "gaze/parallel.hpp"

namespace gaze {
namespace {

constexpr std::size_t kInferenceChunk = 64;
constexpr std::uint64_t kAugmentStreamKey = 0xa11a5eedULL;

bool in_groups(const std::string& name, std::span<const std::string_view> groups) {
  return std::any_of(groups.begin(), groups.end(), [&](std::string_view g) {
    return name.size() > g.size() && name.starts_with(g) && name[g.size()] == '.';
  });
}

void zero_grads(const ModelParams<float>& params) {
  for (const auto& [name, t] : params.entries()) {
    auto copy = t;
    copy.zero_grad();
  }
}

void set_trainable(ModelParams<float>& params, std::span<const std::string_view> groups) {
  for (const auto& [name, t] : params.entries()) {
    auto copy = t;
    copy.set_requires_grad(in_groups(name, groups));
  }
}

Tensor labels_tensor(std::span<const GazeSample* const> samples) {
  std::vector<float> values;
  values.reserve(samples.size() * 2);
  for (const GazeSample* s : samples) {
    values.push_back(static_cast<float>(s->label.pitch));
    values.push_back(static_cast<float>(s->label.yaw));
  }
  return Tensor::from_data(Shape{samples.size(), 2}, std::move(values));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  std::vector<float> out;
  out.reserve(rows.size() * d);
  for (std::size_t r : rows) out.insert(out.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
  return Tensor::from_data(Shape{rows.size(), d}, std::move(out));
}

void report(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

}  // namespace

AdamState AdamState::fresh(const ModelParams<float>& params, std::span<const std::string_view> groups,
                           double lr, double beta1, double beta2, double eps) {
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  for (const auto& [name, t] : params.entries()) {
    if (!in_groups(name, groups)) continue;
    s.names.push_back(name);
    s.m.emplace_back(t.numel(), 0.0f);
    s.v.emplace_back(t.numel(), 0.0f);
  }
  return s;
}

void adam_step(ModelParams<float>& params, AdamState& state) {
  if (state.m.size() != state.names.size() || state.v.size() != state.names.size())
    throw ValidationError("adam_step: inconsistent optimizer state");
  for (std::size_t i = 0; i < state.names.size(); ++i) {
    const auto& t = params.at(state.names[i]);
    if (state.m[i].size() != t.numel() || state.v[i].size() != t.numel())
      throw ValidationError("adam_step: moment shape mismatch for " + state.names[i]);
    for (float g : t.grad())
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient in " + state.names[i]);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < state.names.size(); ++i) {
    auto param = params.at(state.names[i]);
    auto values = param.mutable_data();
    const auto grad = param.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = state.lr * (mj / bc1) / (std::sqrt(vj / bc2) + state.eps);
      values[j] = static_cast<float>(values[j] - update);
    }
  }
}

std::string_view to_string(CheckpointStage s) {
  return s == CheckpointStage::pretrained ? "pretrained" : "finetuned";
}

CheckpointStage parse_checkpoint_stage(std::string_view name) {
  if (name == "pretrained") return CheckpointStage::pretrained;
  if (name == "finetuned") return CheckpointStage::finetuned;
  throw IoError("unknown checkpoint stage '" + std::string(name) + "'");
}

ModelParams<float> clone_params(const ModelParams<float>& params) {
  ModelParams<float> out(params.config());
  for (const auto& [name, t] : params.entries()) {
    std::vector<float> values(t.data().begin(), t.data().end());
    out.add(name, Tensor::from_data(t.shape(), std::move(values), t.requires_grad()));
  }
  return out;
}

Checkpoint fresh_checkpoint(const RunConfig& cfg) {
  cfg.validate();
  Checkpoint ckpt(build_model<float>(cfg.model, cfg.train.model_seed));
  ckpt.config = cfg;
  ckpt.stage = CheckpointStage::pretrained;
  ckpt.rng_seed = cfg.train.train_seed;
  return ckpt;
}

Tensor contrastive_batch_loss(const ModelParams<float>& params, const Tensor& view1, const Tensor& view2,
                              const HyperParams& hp) {
  auto p1 = projection_forward(params, encoder_forward(params, view1));
  auto p2 = projection_forward(params, encoder_forward(params, view2));
  return contrastive_loss(p1, p2, hp);
}

Checkpoint pretrain(std::span<const Image> unlabeled, const RunConfig& cfg, const Checkpoint* resume,
                    const ProgressFn& progress) {
  cfg.validate();
  retain_freed_memory();
  const std::size_t B = cfg.loss.batch_size;
  if (unlabeled.size() < B)
    throw ValidationError("pretrain: need at least one full batch (" + std::to_string(B) + ") of images, got " +
                          std::to_string(unlabeled.size()));

  static constexpr std::array<std::string_view, 2> kTrainable{kEncoderGroup, kProjectionGroup};
  Checkpoint ckpt = resume ? Checkpoint(clone_params(resume->params)) : fresh_checkpoint(cfg);
  if (resume) {
    if (resume->stage != CheckpointStage::pretrained)
      throw ValidationError("pretrain: can only resume a pretrained-stage checkpoint");
    ckpt.optimizer = resume->optimizer;
    ckpt.loss_history = resume->loss_history;
    ckpt.epoch = resume->epoch;
    ckpt.rng_seed = resume->rng_seed;
    if (ckpt.optimizer.names.empty()) {
      ckpt.optimizer = AdamState::fresh(ckpt.params, kTrainable, cfg.train.lr_pretrain, cfg.train.adam_beta1,
                                        cfg.train.adam_beta2, cfg.train.adam_eps);
    }
  } else {
    ckpt.optimizer = AdamState::fresh(ckpt.params, kTrainable, cfg.train.lr_pretrain, cfg.train.adam_beta1,
                                      cfg.train.adam_beta2, cfg.train.adam_eps);
  }
  ckpt.config = cfg;
  ckpt.stage = CheckpointStage::pretrained;
  set_trainable(ckpt.params, kTrainable);

  const AugmentSpec spec{cfg.train.augment_strength, cfg.train.picks_per_view,
                         ckpt.rng_seed ^ kAugmentStreamKey};
  std::vector<std::size_t> indices(unlabeled.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

  for (std::uint64_t epoch = ckpt.epoch; epoch < cfg.train.pretrain_epochs; ++epoch) {
    const auto plan = batches(indices, B, ckpt.rng_seed, epoch, BatchMode::contrastive);
    double total = 0;
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      const auto& batch = plan[bi];
      std::vector<Image> view1(batch.size()), view2(batch.size());
      parallel_for(batch.size(), [&](std::size_t i) {
        auto [a, b] = augment_pair(unlabeled[batch[i]], spec, epoch, batch[i]);
        view1[i] = std::move(a);
        view2[i] = std::move(b);
      });
      Tensor loss;
      try {
        loss = contrastive_batch_loss(ckpt.params, to_batch(view1), to_batch(view2), cfg.loss);
      } catch (const NumericalError& e) {
        throw NumericalError("pretrain: epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) +
                             ": " + e.what());
      }
      zero_grads(ckpt.params);
      loss.backward();
      adam_step(ckpt.params, ckpt.optimizer);
      total += loss.item();
    }
    const double mean_loss = total / static_cast<double>(plan.size());
    ckpt.loss_history.push_back(mean_loss);
    ckpt.epoch = epoch + 1;
    std::ostringstream msg;
    msg << "pretrain epoch " << ckpt.epoch << "/" << cfg.train.pretrain_epochs << " loss " << mean_loss;
    report(progress, msg.str());
  }
  ckpt.rng_epoch = ckpt.epoch;
  set_trainable(ckpt.params, {});
  return ckpt;
}

Tensor encode(const ModelParams<float>& params, std::span<const Image* const> images) {
  NoGradGuard no_grad;
  std::vector<float> latents;
  for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
    const std::size_t end = std::min(images.size(), start + kInferenceChunk);
    auto f = encoder_forward(params, to_batch(images.subspan(start, end - start)));
    latents.insert(latents.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from_data(Shape{images.size(), params.config().latent_dim}, std::move(latents));
}

Checkpoint finetune(std::span<const GazeSample> labeled, const Checkpoint& init, const RunConfig& cfg,
                    const ProgressFn& progress) {
  cfg.validate();
  if (labeled.empty()) throw ValidationError("finetune: no labeled samples");
  if (init.stage != CheckpointStage::pretrained)
    throw ValidationError("finetune: init checkpoint must be at the pretrained stage");

  retain_freed_memory();
  const bool frozen = cfg.train.freeze_encoder;
  static constexpr std::array<std::string_view, 1> kHeadOnly{kRegressorGroup};
  static constexpr std::array<std::string_view, 2> kEncoderAndHead{kEncoderGroup, kRegressorGroup};
  const std::span<const std::string_view> trainable =
      frozen ? std::span<const std::string_view>(kHeadOnly) : std::span<const std::string_view>(kEncoderAndHead);

  Checkpoint ckpt(clone_params(init.params));
  ckpt.config = cfg;
  ckpt.stage = CheckpointStage::finetuned;
  ckpt.rng_seed = cfg.train.train_seed;
  ckpt.optimizer = AdamState::fresh(ckpt.params, trainable, cfg.train.lr_finetune, cfg.train.adam_beta1,
                                    cfg.train.adam_beta2, cfg.train.adam_eps);
  set_trainable(ckpt.params, trainable);

  std::vector<const GazeSample*> samples;
  std::vector<const Image*> images;
  for (const auto& s : labeled) {
    samples.push_back(&s);
    images.push_back(&s.image);
  }
  // The frozen encoder is a fixed feature map: compute latents once.
  Tensor latents;
  if (frozen) latents = encode(ckpt.params, images);

  std::vector<std::size_t> indices(labeled.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const std::size_t B = cfg.loss.batch_size;

  for (std::uint64_t epoch = 0; epoch < cfg.train.finetune_epochs; ++epoch) {
    const auto plan = batches(indices, B, ckpt.rng_seed, epoch, BatchMode::finetune);
    double total = 0;
    for (const auto& batch : plan) {
      std::vector<const GazeSample*> batch_samples;
      std::vector<const Image*> batch_images;
      for (std::size_t i : batch) {
        batch_samples.push_back(samples[i]);
        batch_images.push_back(images[i]);
      }
      Tensor features = frozen ? gather_rows(latents, batch) : encoder_forward(ckpt.params, to_batch(batch_images));
      auto loss = huber_loss(regressor_forward(ckpt.params, features), labels_tensor(batch_samples), cfg.loss.delta);
      zero_grads(ckpt.params);
      loss.backward();
      adam_step(ckpt.params, ckpt.optimizer);
      total += loss.item() * static_cast<double>(batch.size());
    }
    const double mean_loss = total / static_cast<double>(labeled.size());
    ckpt.loss_history.push_back(mean_loss);
    ckpt.epoch = epoch + 1;
    std::ostringstream msg;
    msg << "finetune epoch " << ckpt.epoch << "/" << cfg.train.finetune_epochs << " loss " << mean_loss;
    report(progress, msg.str());
  }
  ckpt.rng_epoch = ckpt.epoch;
  set_trainable(ckpt.params, {});
  return ckpt;
}

std::vector<GazeAngles> predict(const Checkpoint& ckpt, std::span<const GazeSample> samples) {
  std::vector<const Image*> images;
  for (const auto& s : samples) images.push_back(&s.image);
  const Tensor latents = encode(ckpt.params, images);
  NoGradGuard no_grad;
  const Tensor pred = regressor_forward(ckpt.params, latents);
  std::vector<GazeAngles> out(samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {pred[2 * i], pred[2 * i + 1]};
  return out;
}

double evaluate(const Checkpoint& ckpt, std::span<const GazeSample> samples) {
  if (ckpt.stage != CheckpointStage::finetuned)
    throw ValidationError("evaluate: checkpoint is not fine-tuned");
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  const auto pred = predict(ckpt, samples);
  std::vector<GazeAngles> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.label);
  return mean_angular_error(std::span<const GazeAngles>(pred), std::span<const GazeAngles>(truth));
}

}  // namespace gaze

namespace gaze {

std::vector<GazeSample> labeled_subset(const RunConfig& cfg, std::span<const GazeSample> train) {
  const auto split = split_dataset(train.size(), cfg.split_seed);
  std::size_t n = split.finetune_labeled.size();
  if (cfg.train.finetune_limit > 0) n = std::min(n, cfg.train.finetune_limit);
  std::vector<GazeSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(train[split.finetune_labeled[i]]);
  return out;
}

std::vector<Image> unlabeled_subset(const RunConfig& cfg, std::span<const GazeSample> train) {
  const auto split = split_dataset(train.size(), cfg.split_seed);
  std::vector<Image> out;
  out.reserve(split.pretrain_unlabeled.size());
  for (std::size_t i : split.pretrain_unlabeled) out.push_back(train[i].image);
  return out;
}

PipelineResult run_pipeline(const RunConfig& cfg, std::span<const GazeSample> train,
                            std::span<const GazeSample> test, const ProgressFn& progress) {
  cfg.validate();
  Checkpoint pretrained = cfg.train.init == InitMode::scratch
                              ? fresh_checkpoint(cfg)
                              : pretrain(unlabeled_subset(cfg, train), cfg, nullptr, progress);
  const auto labeled = labeled_subset(cfg, train);
  Checkpoint finetuned = finetune(labeled, pretrained, cfg, progress);
  const double mae = evaluate(finetuned, test);
  return {std::move(pretrained), std::move(finetuned), mae};
}

}  // namespace gaze
