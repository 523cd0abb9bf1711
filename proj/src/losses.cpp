#include "gaze/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "gaze/errors.hpp"
#include "gaze/ops.hpp"

namespace gaze {

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::combined: return "combined";
    case LossVariant::ntxent_only: return "ntxent_only";
    case LossVariant::redundancy_only: return "redundancy_only";
  }
  return "combined";
}

LossVariant parse_loss_variant(std::string_view name) {
  if (name == "combined") return LossVariant::combined;
  if (name == "ntxent_only") return LossVariant::ntxent_only;
  if (name == "redundancy_only") return LossVariant::redundancy_only;
  throw ValidationError("unknown loss variant '" + std::string(name) +
                        "' (expected combined, ntxent_only or redundancy_only)");
}

void HyperParams::validate() const {
  if (!(tau > 0) || !std::isfinite(tau)) throw ValidationError("tau must be > 0");
  if (!(delta > 0) || !std::isfinite(delta)) throw ValidationError("delta must be > 0");
  if (!(gamma >= 0) || !std::isfinite(gamma)) throw ValidationError("gamma must be >= 0");
  // Both loss terms need at least two samples per batch: NT-Xent for
  // negatives, the redundancy term for batch statistics.
  if (batch_size < 2) throw ValidationError("contrastive training needs batch_size >= 2");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double eps = ops::kNormEps;
  return ab / (std::max(std::sqrt(aa), eps) * std::max(std::sqrt(bb), eps));
}

template <typename T>
BasicTensor<T> ntxent_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, double tau) {
  if (p1.shape() != p2.shape() || p1.shape().rank() != 2) {
    throw ValidationError("ntxent_loss: views must share a [B x D] shape, got " +
                          p1.shape().str() + " and " + p2.shape().str());
  }
  if (!(tau > 0)) throw ValidationError("ntxent_loss: tau must be > 0");
  const std::size_t B = p1.dim(0);
  auto z = ops::l2_normalize(ops::concat_rows<T>({p1, p2}));
  auto logits = ops::scale(ops::matmul(z, ops::transpose(z)), static_cast<T>(1.0 / tau));
  std::vector<std::size_t> positives(2 * B);
  for (std::size_t i = 0; i < 2 * B; ++i) positives[i] = (i + B) % (2 * B);
  return ops::cross_entropy_excluding_self(logits, positives);
}

template <typename T>
CrossCorrMatrix<T> cross_correlation(const BasicTensor<T>& p1, const BasicTensor<T>& p2) {
  if (p1.shape() != p2.shape() || p1.shape().rank() != 2) {
    throw ValidationError("cross_correlation: views must share a [B x D] shape");
  }
  const std::size_t B = p1.dim(0);
  if (B < 2) throw ValidationError("cross_correlation: needs a batch of at least 2");
  auto z1 = ops::batch_standardize(p1);
  auto z2 = ops::batch_standardize(p2);
  return CrossCorrMatrix<T>(
      ops::scale(ops::matmul(ops::transpose(z1), z2), static_cast<T>(1.0 / static_cast<double>(B))));
}

template <typename T>
BasicTensor<T> redundancy_term(const CrossCorrMatrix<T>& c) {
  return ops::off_diagonal_square_sum(c.tensor());
}

template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2,
                                const HyperParams& hp) {
  switch (hp.loss_variant) {
    case LossVariant::ntxent_only:
      return ntxent_loss(p1, p2, hp.tau);
    case LossVariant::redundancy_only:
      return redundancy_term(cross_correlation(p1, p2));
    case LossVariant::combined:
      break;
  }
  auto invariance = ntxent_loss(p1, p2, hp.tau);
  if (hp.gamma == 0.0) return invariance;
  auto redundancy = redundancy_term(cross_correlation(p1, p2));
  return ops::add(invariance, ops::scale(redundancy, static_cast<T>(hp.gamma)));
}

template <typename T>
BasicTensor<T> huber_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double delta) {
  return ops::huber(pred, target, delta);
}

std::array<double, 3> pitchyaw_to_vector(GazeAngles g) {
  const double cp = std::cos(g.pitch);
  return {-cp * std::sin(g.yaw), -std::sin(g.pitch), -cp * std::cos(g.yaw)};
}

double mean_angular_error(std::span<const GazeAngles> pred, std::span<const GazeAngles> truth) {
  if (pred.empty()) throw ValidationError("mean_angular_error: no samples");
  if (pred.size() != truth.size()) throw ValidationError("mean_angular_error: size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto a = pitchyaw_to_vector(pred[i]);
    const auto b = pitchyaw_to_vector(truth[i]);
    // atan2 stays accurate near 0 and pi where acos loses half the digits.
    const double cx = a[1] * b[2] - a[2] * b[1], cy = a[2] * b[0] - a[0] * b[2],
                 cz = a[0] * b[1] - a[1] * b[0];
    total += std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
  }
  return total / static_cast<double>(pred.size()) * 180.0 / std::numbers::pi;
}

template <typename T>
double mean_angular_error(const BasicTensor<T>& pred, const BasicTensor<T>& truth) {
  if (pred.shape() != truth.shape() || pred.shape().rank() != 2 || pred.dim(1) != 2) {
    throw ValidationError("mean_angular_error: expected matching [N x 2] tensors");
  }
  std::vector<GazeAngles> p(pred.dim(0)), t(truth.dim(0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = {static_cast<double>(pred[2 * i]), static_cast<double>(pred[2 * i + 1])};
    t[i] = {static_cast<double>(truth[2 * i]), static_cast<double>(truth[2 * i + 1])};
  }
  return mean_angular_error(std::span<const GazeAngles>(p), std::span<const GazeAngles>(t));
}

#define GAZE_INSTANTIATE_LOSSES(T)                                                             \
  template BasicTensor<T> ntxent_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);  \
  template CrossCorrMatrix<T> cross_correlation(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> redundancy_term(const CrossCorrMatrix<T>&);                         \
  template BasicTensor<T> contrastive_loss(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                           const HyperParams&);                               \
  template BasicTensor<T> huber_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);   \
  template double mean_angular_error(const BasicTensor<T>&, const BasicTensor<T>&);

GAZE_INSTANTIATE_LOSSES(float)
GAZE_INSTANTIATE_LOSSES(double)

#undef GAZE_INSTANTIATE_LOSSES

}  // namespace gaze
