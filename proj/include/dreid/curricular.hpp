#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dreid::curricular {

struct LossParams {
  double margin = 0.5;
  double scale = 64.0;

  void validate() const;
};

/// Difficulty parameter t, an EMA of the positive cosines.
struct CurricularState {
  double t = 0.0;
  double ema_momentum = 0.99;

  void validate() const;
};

/// B x n cosines, row-major, plus one label per row.
struct CosineBatch {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<double> cosines;
  std::vector<std::size_t> labels;

  double at(std::size_t i, std::size_t j) const { return cosines[i * classes + j]; }
  void validate() const;
};

/// Cosines are clamped to this before taking the sine of the angle.
inline constexpr double kCosineClamp = 1.0 - 1e-7;

/// cos(theta + m) for cos(theta) = c.
double target_cosine(double c, double margin);

/// Negative-class modulation N(t, c_j): easy when target >= c_j.
inline double modulate_negative(double cj, double target, double t) {
  return target >= cj ? cj : cj * (t + cj);
}

/// Mean over rows of -log softmax at the positive logit. Pure.
double curricular_loss(const CosineBatch& batch, const LossParams& params,
                       const CurricularState& state);

/// d(loss)/d(cosine) for every entry, t held fixed.
std::vector<double> curricular_grad(const CosineBatch& batch, const LossParams& params,
                                    const CurricularState& state);

struct ForwardResult {
  double loss = 0.0;
  CurricularState state;
};

/// Loss, then one EMA step on the batch's positive cosines.
ForwardResult curricular_forward(const CosineBatch& batch, const LossParams& params,
                                 const CurricularState& state);

/// t <- momentum t + (1 - momentum) mean(c), clamped to [0, 1]. An empty
/// batch leaves the state unchanged.
CurricularState update_t(const CurricularState& state,
                         std::span<const double> positive_cosines);

}  // namespace dreid::curricular
