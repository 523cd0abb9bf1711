#pragma once

// Run configuration shared by every command. The text form is one
// "key = value" per line; '#' starts a comment; lists are comma separated.
// Unknown keys and malformed values are errors, and every field is
// validated before any compute starts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gaze/augment.hpp"
#include "gaze/losses.hpp"
#include "gaze/model.hpp"

namespace gaze {

enum class InitMode { pretrained, scratch };

std::string_view to_string(InitMode m);
InitMode parse_init_mode(std::string_view name);

struct TrainConfig {
  std::size_t pretrain_epochs = 30;
  std::size_t finetune_epochs = 30;
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool freeze_encoder = true;
  /// Number of labeled samples used for fine-tuning; 0 uses the whole split.
  std::size_t finetune_limit = 0;
  InitMode init = InitMode::pretrained;
  AugmentStrength augment_strength = AugmentStrength::strong;
  std::size_t picks_per_view = 3;
  std::uint64_t model_seed = 0;
  std::uint64_t train_seed = 0;

  void validate() const;
};

struct RunConfig {
  EncoderConfig model;
  HyperParams loss;
  TrainConfig train;

  std::uint64_t split_seed = 0;
  std::filesystem::path data_path = "data/train.cgzd";
  std::filesystem::path test_path = "data/test.cgzd";
  std::filesystem::path pretrained_path = "runs/pretrained.cgzk";
  std::filesystem::path finetuned_path = "runs/finetuned.cgzk";
  std::filesystem::path results_path = "runs/ablation.csv";
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2};
  std::vector<double> ablate_gammas{0.005, 0.01, 0.1};
  /// Worker threads; 0 picks the hardware concurrency.
  std::size_t workers = 0;

  void validate() const;

  /// Applies one key. Throws ValidationError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Canonical text form with every key, in keys() order. Doubles are
  /// printed with enough digits to round-trip exactly.
  std::string to_text() const;
  /// Applies every line of text on top of the current values.
  void apply_text(std::string_view text);

  static RunConfig from_text(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Splits "a, b,c" into trimmed items.
std::vector<std::string> split_list(std::string_view text);

}  // namespace gaze
