// SPDX-License-Identifier: Apache-2.0
//
// Reverse-process generation of teacher-like features from student
// conditions. Token chains are sampled independently given (position id,
// condition); every noise draw comes from a per-(sample, token, step)
// substream so batched and per-token sequential sampling agree bit-exactly.
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "gendd/head.hpp"
#include "gendd/schedule.hpp"
#include "gendd/tokenizer.hpp"

namespace gendd {

enum class VarianceMode { posterior, zero };

inline std::string to_string(VarianceMode v) {
  return v == VarianceMode::posterior ? "posterior" : "zero";
}

inline VarianceMode variance_mode_from_string(const std::string& s) {
  if (s == "posterior") return VarianceMode::posterior;
  if (s == "zero") return VarianceMode::zero;
  throw ConfigError("unsupported variance mode: " + s);
}

struct SamplerConfig {
  int steps = 64;                 // S
  double guidance_scale = 2.0;    // s; eps = uncond + s * (cond - uncond)
  VarianceMode variance = VarianceMode::posterior;
  std::uint64_t seed = 0;

  void validate() const {
    require(steps >= 1, "sampler: steps must be >= 1");
    require(guidance_scale >= 0.0, "sampler: guidance scale must be >= 0");
  }
};

/// Counts of head evaluations, split by guidance branch.
struct SampleStats {
  long cond_evals = 0;
  long uncond_evals = 0;
};

/// Guided prediction: uncond + scale * (cond - uncond). Affine in the scale;
/// scale 0 returns the unconditional branch, scale 1 the conditional one.
inline Matrix guided_eps(const Matrix& eps_cond, const Matrix& eps_uncond, double scale) {
  return eps_uncond + scale * (eps_cond - eps_uncond);
}

namespace detail {

/// One reverse update on a row batch at view position j (base step m).
/// Noise must be pre-drawn by the caller (empty for the final/deterministic
/// case); handles only the mean + sigma * z arithmetic.
inline Matrix reverse_update(const RespacedSchedule& view, int position, const Matrix& x_m,
                             const Matrix& eps_hat, const Matrix* noise) {
  const double a = view.alpha_at(position);
  const double ab = view.alpha_bar_at(position);
  Matrix mean = (x_m - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
  if (noise != nullptr) {
    const double sigma = std::sqrt(view.posterior_variance(position));
    mean += sigma * (*noise);
  }
  return mean;
}

}  // namespace detail

/// Single-token reverse step at kept base step m. Applies classifier-free
/// guidance, then the reverse mean with the view's effective alphas, adding
/// posterior noise except on the final step (or in deterministic mode).
inline Vector reverse_step(const DiffusionHead& head, const RespacedSchedule& view,
                           const Vector& x_m, int base_step, int id, const Vector& cond,
                           const SamplerConfig& config, Rng* noise_rng = nullptr,
                           SampleStats* stats = nullptr) {
  config.validate();
  const int j = view.position_of(base_step);
  Matrix x(1, x_m.size());
  x.row(0) = x_m.transpose();
  IntVector steps(1), ids(1);
  steps[0] = base_step;
  ids[0] = id;
  Matrix c(1, cond.size());
  c.row(0) = cond.transpose();

  Matrix eps_cond = head.forward(x, steps, ids, c, {0}, nullptr);
  Matrix eps_uncond = head.forward(x, steps, ids, Matrix(), {1}, nullptr);
  if (stats) {
    ++stats->cond_evals;
    ++stats->uncond_evals;
  }
  Matrix eps_hat = guided_eps(eps_cond, eps_uncond, config.guidance_scale);

  const bool add_noise = (j > 1) && config.variance == VarianceMode::posterior;
  Matrix z;
  if (add_noise) {
    require(noise_rng != nullptr, "reverse_step: rng required for stochastic variance");
    z.resize(1, x_m.size());
    for (Eigen::Index k = 0; k < x_m.size(); ++k) z(0, k) = noise_rng->gaussian();
  }
  Matrix next = detail::reverse_update(view, j, x, eps_hat, add_noise ? &z : nullptr);
  if (!next.allFinite()) {
    std::ostringstream oss;
    oss << "reverse_step: non-finite state at step " << base_step << " (position " << j << ")";
    throw NumericsError(oss.str());
  }
  return next.row(0).transpose();
}

/// Generates features for a batch of conditions: all B*n token chains run in
/// parallel from Gaussian noise down to step 0, then tokens are assembled
/// and de-standardized. Deterministic given config.seed and variance mode.
inline Matrix generate_feature(const DiffusionHead& head, const NoiseSchedule& schedule,
                               const FeatureStats& stats, const Matrix& condition,
                               const SamplerConfig& config, SampleStats* eval_stats = nullptr) {
  config.validate();
  require(!stats.empty(), "generate_feature: feature stats required");
  const int B = static_cast<int>(condition.rows());
  const int n = head.config().num_positions;
  const int d_tok = head.config().token_dim;
  const int d_t = static_cast<int>(stats.mean.size());
  require(num_tokens_for(d_t, d_tok) == n, "generate_feature: head/stats token layout mismatch");

  const RespacedSchedule view = respace(schedule, config.steps);
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * n;

  IntVector ids(rows);
  Matrix cond_rows(rows, condition.cols());
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * n + i;
      ids[r] = i;
      cond_rows.row(r) = condition.row(b);
    }
  }
  const std::vector<unsigned char> all_cond(static_cast<size_t>(rows), 0);
  const std::vector<unsigned char> all_null(static_cast<size_t>(rows), 1);

  // x_S ~ N(0, I), one substream per (sample, token).
  Matrix x(rows, d_tok);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      Rng r = Rng::substream(config.seed, {std::uint64_t(b), std::uint64_t(i), 0});
      for (int k = 0; k < d_tok; ++k) x(static_cast<Eigen::Index>(b) * n + i, k) = r.gaussian();
    }
  }

  IntVector steps_col(rows);
  for (int j = view.num_steps(); j >= 1; --j) {
    const int m = view.step_at(j);
    steps_col.setConstant(m);
    Matrix eps_cond = head.forward(x, steps_col, ids, cond_rows, all_cond, nullptr);
    Matrix eps_uncond = head.forward(x, steps_col, ids, Matrix(), all_null, nullptr);
    if (eval_stats) {
      eval_stats->cond_evals += rows;
      eval_stats->uncond_evals += rows;
    }
    Matrix eps_hat = guided_eps(eps_cond, eps_uncond, config.guidance_scale);

    const bool add_noise = (j > 1) && config.variance == VarianceMode::posterior;
    Matrix z;
    if (add_noise) {
      z.resize(rows, d_tok);
      for (int b = 0; b < B; ++b) {
        for (int i = 0; i < n; ++i) {
          Rng r = Rng::substream(config.seed,
                                 {std::uint64_t(b), std::uint64_t(i), std::uint64_t(j)});
          for (int k = 0; k < d_tok; ++k)
            z(static_cast<Eigen::Index>(b) * n + i, k) = r.gaussian();
        }
      }
    }
    x = detail::reverse_update(view, j, x, eps_hat, add_noise ? &z : nullptr);
    if (!x.allFinite()) {
      std::ostringstream oss;
      oss << "generate_feature: non-finite state at step " << m << " (position " << j << ")";
      throw NumericsError(oss.str());
    }
  }

  Matrix features(B, d_t);
  for (int b = 0; b < B; ++b) {
    features.row(b) =
        assemble_feature(x.middleRows(static_cast<Eigen::Index>(b) * n, n), d_t).transpose();
  }
  return invert_stats(features, stats);
}

/// Frozen linear classifier (the teacher's) used on generated features.
struct LinearClassifier {
  Matrix weight;  // C x d_t
  Vector bias;    // C (zero when the teacher has none)

  int num_classes() const { return static_cast<int>(weight.rows()); }
  int feature_dim() const { return static_cast<int>(weight.cols()); }

  Matrix logits(const Matrix& features) const {
    require(features.cols() == weight.cols(), "classify: feature dimension mismatch");
    Matrix out = features * weight.transpose();
    if (bias.size() > 0) out.rowwise() += bias.transpose();
    return out;
  }
};

struct Classification {
  IntVector labels;
  Matrix probabilities;  // B x C softmax
};

inline Classification classify(const LinearClassifier& clf, const Matrix& features) {
  Classification out;
  const Matrix logits = clf.logits(features);
  out.probabilities = nn::softmax_rows(logits);
  out.labels.resize(features.rows());
  for (Eigen::Index b = 0; b < features.rows(); ++b) {
    Eigen::Index best;
    logits.row(b).maxCoeff(&best);
    out.labels[b] = static_cast<int>(best);
  }
  return out;
}

/// Fraction of rows whose true label is within the top-k logits.
inline double topk_accuracy(const Matrix& logits, const IntVector& labels, int k) {
  require(logits.rows() == labels.size(), "topk: batch mismatch");
  long hits = 0;
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double target = logits(b, labels[b]);
    int above = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      if (logits(b, c) > target) ++above;
    if (above < k) ++hits;
  }
  return double(hits) / double(logits.rows());
}

}  // namespace gendd
