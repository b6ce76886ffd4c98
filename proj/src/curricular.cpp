#include "dreid/curricular.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dreid/errors.hpp"

namespace dreid::curricular {

void LossParams::validate() const {
  if (!(margin >= 0.0 && margin < std::numbers::pi / 2)) {
    throw ParameterError("margin must lie in [0, pi/2)");
  }
  if (!(scale > 0.0)) throw ParameterError("scale must be positive");
}

void CurricularState::validate() const {
  if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("t must lie in [0, 1]");
  if (!(ema_momentum > 0.0 && ema_momentum <= 1.0)) {
    throw ParameterError("ema_momentum must lie in (0, 1]");
  }
}

void CosineBatch::validate() const {
  if (rows == 0 || classes == 0) throw ParameterError("empty cosine batch");
  if (cosines.size() != rows * classes || labels.size() != rows) {
    throw ParameterError("cosine batch shape mismatch");
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ParameterError("label " + std::to_string(y) + " out of range [0, " +
                           std::to_string(classes) + ")");
    }
  }
  for (double c : cosines) {
    if (!(std::abs(c) <= 1.0 + 1e-6)) throw ParameterError("cosine outside [-1, 1]");
  }
}

namespace {

double clamp_cosine(double c) { return std::clamp(c, -kCosineClamp, kCosineClamp); }

void check(const CosineBatch& batch, const LossParams& params,
           const CurricularState& state) {
  batch.validate();
  params.validate();
  state.validate();
}

/// Logits of row i into `z`; returns the clamped positive cosine.
double row_logits(const CosineBatch& batch, std::size_t i, const LossParams& params,
                  double t, std::vector<double>& z) {
  const std::size_t y = batch.labels[i];
  const double cy = clamp_cosine(batch.at(i, y));
  const double target = target_cosine(cy, params.margin);
  z.resize(batch.classes);
  for (std::size_t j = 0; j < batch.classes; ++j) {
    z[j] = j == y ? params.scale * target
                  : params.scale * modulate_negative(batch.at(i, j), target, t);
  }
  return cy;
}

double log_sum_exp(const std::vector<double>& z) {
  const double hi = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

}  // namespace

double target_cosine(double c, double margin) {
  const double cc = clamp_cosine(c);
  const double sine = std::sqrt(1.0 - cc * cc);
  return cc * std::cos(margin) - sine * std::sin(margin);
}

double curricular_loss(const CosineBatch& batch, const LossParams& params,
                       const CurricularState& state) {
  check(batch, params, state);
  std::vector<double> z;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows; ++i) {
    row_logits(batch, i, params, state.t, z);
    total += log_sum_exp(z) - z[batch.labels[i]];
  }
  return total / static_cast<double>(batch.rows);
}

std::vector<double> curricular_grad(const CosineBatch& batch, const LossParams& params,
                                    const CurricularState& state) {
  check(batch, params, state);
  std::vector<double> grad(batch.cosines.size(), 0.0);
  if (batch.classes == 1) return grad;
  const double inv_b = 1.0 / static_cast<double>(batch.rows);
  const double cos_m = std::cos(params.margin);
  const double sin_m = std::sin(params.margin);
  std::vector<double> z;
  for (std::size_t i = 0; i < batch.rows; ++i) {
    const std::size_t y = batch.labels[i];
    const double cy = row_logits(batch, i, params, state.t, z);
    const double target = z[y] / params.scale;
    const double lse = log_sum_exp(z);
    double* g = grad.data() + i * batch.classes;
    for (std::size_t j = 0; j < batch.classes; ++j) {
      const double p = std::exp(z[j] - lse);
      if (j == y) {
        // d cos(theta + m) / d cos(theta)
        const double dtarget = cos_m + cy * sin_m / std::sqrt(1.0 - cy * cy);
        g[j] = (p - 1.0) * params.scale * dtarget * inv_b;
      } else {
        const double cj = batch.at(i, j);
        const double dn = target >= cj ? 1.0 : state.t + 2.0 * cj;
        g[j] = p * params.scale * dn * inv_b;
      }
    }
  }
  return grad;
}

CurricularState update_t(const CurricularState& state,
                         std::span<const double> positive_cosines) {
  if (positive_cosines.empty()) return state;
  double mean = 0.0;
  for (double c : positive_cosines) mean += c;
  mean /= static_cast<double>(positive_cosines.size());
  CurricularState next = state;
  next.t = std::clamp(state.ema_momentum * state.t + (1.0 - state.ema_momentum) * mean,
                      0.0, 1.0);
  return next;
}

ForwardResult curricular_forward(const CosineBatch& batch, const LossParams& params,
                                 const CurricularState& state) {
  ForwardResult out;
  out.loss = curricular_loss(batch, params, state);
  std::vector<double> positives(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) positives[i] = batch.at(i, batch.labels[i]);
  out.state = update_t(state, positives);
  return out;
}

}  // namespace dreid::curricular
