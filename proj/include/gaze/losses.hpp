#pragma once

// Contrastive pretraining objective, regression loss and the gaze metric.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "gaze/tensor.hpp"

namespace gaze {

enum class LossVariant { combined, ntxent_only, redundancy_only };

std::string_view to_string(LossVariant v);
/// Throws ValidationError for unknown names.
LossVariant parse_loss_variant(std::string_view name);

struct HyperParams {
  double tau = 0.5;      // NT-Xent temperature
  double gamma = 0.1;    // weight of the redundancy term
  double delta = 1.0;    // Huber threshold, radians
  std::size_t batch_size = 64;
  LossVariant loss_variant = LossVariant::combined;

  /// Throws ValidationError when an invariant is violated.
  void validate() const;
};

/// D x D cross-correlation between two batches of projections.
template <typename T>
class CrossCorrMatrix {
 public:
  explicit CrossCorrMatrix(BasicTensor<T> values) : values_(std::move(values)) {}
  const BasicTensor<T>& tensor() const { return values_; }
  std::size_t dim() const { return values_.dim(0); }
  T at(std::size_t i, std::size_t j) const { return values_[i * dim() + j]; }

 private:
  BasicTensor<T> values_;
};

/// a.b / (max(|a|, eps) * max(|b|, eps)).
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// NT-Xent over the 2B stacked projections, averaged over all 2B anchors.
/// The positive of row i of p1 is row i of p2 and vice versa.
template <typename T>
BasicTensor<T> ntxent_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, double tau);

/// C_ij = sum_b z1[b,i] z2[b,j] / B over batch-standardized views.
template <typename T>
CrossCorrMatrix<T> cross_correlation(const BasicTensor<T>& p1, const BasicTensor<T>& p2);

/// Sum of squared off-diagonal entries.
template <typename T>
BasicTensor<T> redundancy_term(const CrossCorrMatrix<T>& c);

/// NT-Xent + gamma * redundancy, or one of the two terms alone.
template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2,
                                const HyperParams& hp);

/// Mean Huber penalty of pred - target. Shapes must match.
template <typename T>
BasicTensor<T> huber_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double delta);

struct GazeAngles {
  double pitch = 0;  // radians
  double yaw = 0;    // radians
};

/// (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw)).
std::array<double, 3> pitchyaw_to_vector(GazeAngles g);

/// Mean angle in degrees between the gaze vectors of paired rows.
/// Throws ValidationError on empty or mismatched inputs.
double mean_angular_error(std::span<const GazeAngles> pred, std::span<const GazeAngles> truth);
/// Same metric over [N x 2] tensors of (pitch, yaw).
template <typename T>
double mean_angular_error(const BasicTensor<T>& pred, const BasicTensor<T>& truth);

}  // namespace gaze
