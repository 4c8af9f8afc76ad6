// SPDX-License-Identifier: Apache-2.0
//
// Forward-diffusion variance schedules and their respaced sampling views.
// Arrays are 1-indexed over steps 1..M with alpha_bar[0] = 1; everything is
// computed and stored in double precision and immutable after construction.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gendd/common.hpp"

namespace gendd {

enum class ScheduleKind { linear, cosine };

inline std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unsupported schedule kind: " + s);
}

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int max_step = 0;                // M
  std::vector<double> beta;        // beta[m], m in 1..M; beta[0] = 0
  std::vector<double> alpha;       // 1 - beta[m]; alpha[0] = 1
  std::vector<double> alpha_bar;   // prod_{i<=m} alpha[i]; alpha_bar[0] = 1

  double beta_at(int m) const {
    require(m >= 1 && m <= max_step, "step index out of range");
    return beta[static_cast<size_t>(m)];
  }
  double alpha_at(int m) const {
    require(m >= 1 && m <= max_step, "step index out of range");
    return alpha[static_cast<size_t>(m)];
  }
  double alpha_bar_at(int m) const {
    require(m >= 0 && m <= max_step, "step index out of range");
    return alpha_bar[static_cast<size_t>(m)];
  }
};

/// Builds a variance schedule over M steps.
///
/// linear: Ho et al. range scaled by 1000/M so any M covers the same
/// cumulative noise span. cosine: squared-cosine alpha_bar with betas
/// clipped at 0.999.
inline NoiseSchedule build_schedule(ScheduleKind kind, int max_step) {
  if (max_step < 1) throw ValidationError("max diffusion step M must be >= 1");
  NoiseSchedule s;
  s.kind = kind;
  s.max_step = max_step;
  const size_t n = static_cast<size_t>(max_step) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);

  if (kind == ScheduleKind::linear) {
    const double scale = 1000.0 / max_step;
    const double beta_start = scale * 1e-4;
    const double beta_end = scale * 0.02;
    for (int m = 1; m <= max_step; ++m) {
      const double t = max_step == 1 ? 0.0 : double(m - 1) / double(max_step - 1);
      s.beta[m] = beta_start + t * (beta_end - beta_start);
    }
  } else {
    auto f = [](double t) {
      const double v = std::cos((t + 0.008) / 1.008 * std::numbers::pi / 2.0);
      return v * v;
    };
    for (int m = 1; m <= max_step; ++m) {
      const double t0 = double(m - 1) / max_step;
      const double t1 = double(m) / max_step;
      s.beta[m] = std::min(1.0 - f(t1) / f(t0), 0.999);
    }
  }

  for (int m = 1; m <= max_step; ++m) {
    require(s.beta[m] > 0.0 && s.beta[m] < 1.0, "beta out of (0,1)");
    s.alpha[m] = 1.0 - s.beta[m];
    s.alpha_bar[m] = s.alpha_bar[m - 1] * s.alpha[m];
  }
  return s;
}

/// q(x_m | x_0): sqrt(alpha_bar_m) x0 + sqrt(1 - alpha_bar_m) eps.
inline Vector forward_noise(const NoiseSchedule& s, const Vector& x0, int m, const Vector& eps) {
  require(m >= 1 && m <= s.max_step, "forward_noise: step out of range");
  require(eps.size() == x0.size(), "forward_noise: eps/x0 shape mismatch");
  const double ab = s.alpha_bar_at(m);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Row-wise batched form with a per-row step index.
inline Matrix forward_noise(const NoiseSchedule& s, const Matrix& x0, const IntVector& m,
                            const Matrix& eps) {
  require(eps.rows() == x0.rows() && eps.cols() == x0.cols(),
          "forward_noise: eps/x0 shape mismatch");
  require(m.size() == x0.rows(), "forward_noise: one step index per row required");
  Matrix out(x0.rows(), x0.cols());
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    const double ab = s.alpha_bar_at(m[r]);
    out.row(r) = std::sqrt(ab) * x0.row(r) + std::sqrt(1.0 - ab) * eps.row(r);
  }
  return out;
}

/// A strictly increasing subsequence of base steps with recomputed effective
/// alphas. View positions are 1..S; position 0 is the clean state.
struct RespacedSchedule {
  const NoiseSchedule* base = nullptr;
  std::vector<int> steps;               // kept base steps, steps.back() == M
  std::vector<double> alpha_eff;        // alpha_eff[j], j in 1..S; [0] = 1
  std::vector<double> beta_eff;         // 1 - alpha_eff
  std::vector<double> alpha_bar_eff;    // alpha_bar at kept steps; [0] = 1

  int num_steps() const { return static_cast<int>(steps.size()); }

  /// Base step at view position j in 1..S (position 0 maps to step 0).
  int step_at(int j) const {
    require(j >= 0 && j <= num_steps(), "view position out of range");
    return j == 0 ? 0 : steps[static_cast<size_t>(j) - 1];
  }

  /// View position of a kept base step.
  int position_of(int base_step) const {
    auto it = std::lower_bound(steps.begin(), steps.end(), base_step);
    require(it != steps.end() && *it == base_step, "step is not kept by this respacing");
    return static_cast<int>(it - steps.begin()) + 1;
  }

  double alpha_bar_at(int j) const { return alpha_bar_eff[static_cast<size_t>(j)]; }
  double alpha_at(int j) const { return alpha_eff[static_cast<size_t>(j)]; }
  double beta_at(int j) const { return beta_eff[static_cast<size_t>(j)]; }

  /// Posterior variance beta_tilde at view position j.
  double posterior_variance(int j) const {
    require(j >= 1 && j <= num_steps(), "view position out of range");
    const double ab_prev = alpha_bar_eff[static_cast<size_t>(j) - 1];
    const double ab = alpha_bar_eff[static_cast<size_t>(j)];
    return (1.0 - ab_prev) / (1.0 - ab) * beta_eff[static_cast<size_t>(j)];
  }
};

/// Uniform-stride respacing over [1, M], always retaining M.
inline RespacedSchedule respace(const NoiseSchedule& s, int num_steps) {
  if (num_steps < 1 || num_steps > s.max_step)
    throw ValidationError("respace: need 1 <= S <= M");
  RespacedSchedule r;
  r.base = &s;
  r.steps.resize(static_cast<size_t>(num_steps));
  for (int k = 0; k < num_steps; ++k) {
    r.steps[static_cast<size_t>(k)] =
        static_cast<int>((static_cast<long long>(k) + 1) * s.max_step / num_steps);
  }
  r.alpha_eff.assign(static_cast<size_t>(num_steps) + 1, 1.0);
  r.beta_eff.assign(static_cast<size_t>(num_steps) + 1, 0.0);
  r.alpha_bar_eff.assign(static_cast<size_t>(num_steps) + 1, 1.0);
  int prev = 0;
  for (int j = 1; j <= num_steps; ++j) {
    const int cur = r.steps[static_cast<size_t>(j) - 1];
    require(cur > prev, "respace: steps must be strictly increasing");
    r.alpha_bar_eff[static_cast<size_t>(j)] = s.alpha_bar_at(cur);
    r.alpha_eff[static_cast<size_t>(j)] = s.alpha_bar_at(cur) / s.alpha_bar_at(prev);
    r.beta_eff[static_cast<size_t>(j)] = 1.0 - r.alpha_eff[static_cast<size_t>(j)];
    prev = cur;
  }
  return r;
}

}  // namespace gendd
