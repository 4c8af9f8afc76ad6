// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: the token-wise noise-prediction loss on contracted
// targets, and the CE+KL logit-distillation baseline.
#pragma once

#include <optional>
#include <sstream>
#include <vector>

#include "gendd/contraction.hpp"
#include "gendd/head.hpp"
#include "gendd/schedule.hpp"
#include "gendd/tokenizer.hpp"

namespace gendd {

/// Pre-drawn randomness for one loss evaluation: per-token steps and noise,
/// per-sample classifier-free-guidance drop decisions.
struct LossBatchPlan {
  IntVector steps;                       // B*n, uniform in 1..M
  Matrix eps;                            // B*n x d_tok, standard normal
  std::vector<unsigned char> drop_mask;  // B, Bernoulli(drop_rate)
};

inline LossBatchPlan make_loss_plan(Rng& rng, int batch, int n_tokens, int token_dim,
                                    int max_step, double drop_rate) {
  require(batch >= 1 && n_tokens >= 1 && token_dim >= 1, "loss plan: bad shape");
  require(max_step >= 1, "loss plan: bad max step");
  LossBatchPlan plan;
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * n_tokens;
  plan.steps.resize(rows);
  plan.eps.resize(rows, token_dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    plan.steps[r] = static_cast<int>(rng.uniform_int(1, max_step));
    for (int j = 0; j < token_dim; ++j) plan.eps(r, j) = rng.gaussian();
  }
  plan.drop_mask.resize(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) plan.drop_mask[static_cast<size_t>(b)] = rng.bernoulli(drop_rate);
  return plan;
}

/// Contracted diffusion targets, one row per (sample, token):
/// lambda * token + (1 - lambda) * token-slice of the class center.
inline Matrix contracted_target_rows(const TokenBatch& batch, const ContractionSpec& spec) {
  spec.validate();
  const int B = batch.batch_size();
  const int n = batch.num_tokens();
  const int d_tok = batch.token_dim();
  Matrix targets(static_cast<Eigen::Index>(B) * n, d_tok);
  if (spec.lambda == 1.0) {
    for (int b = 0; b < B; ++b) targets.middleRows(static_cast<Eigen::Index>(b) * n, n) = batch.tokens[static_cast<size_t>(b)];
    return targets;
  }
  require(batch.labels.has_value(), "training loss: labels required when lambda < 1");
  require(spec.centers.cols() == batch.feature_dim,
          "training loss: centers dimension mismatch");
  // Split each class center once with the same padding as the tokens.
  std::vector<Matrix> center_tokens(static_cast<size_t>(spec.num_classes()));
  std::vector<bool> built(static_cast<size_t>(spec.num_classes()), false);
  for (int b = 0; b < B; ++b) {
    const int y = (*batch.labels)[b];
    require(y >= 0 && y < spec.num_classes(), "training loss: label out of range");
    if (!built[static_cast<size_t>(y)]) {
      center_tokens[static_cast<size_t>(y)] =
          split_feature(spec.centers.row(y).transpose(), d_tok);
      built[static_cast<size_t>(y)] = true;
    }
    targets.middleRows(static_cast<Eigen::Index>(b) * n, n) =
        spec.lambda * batch.tokens[static_cast<size_t>(b)] +
        (1.0 - spec.lambda) * center_tokens[static_cast<size_t>(y)];
  }
  return targets;
}

struct TrainingLossResult {
  double loss = 0.0;
  Matrix grad_condition;  // B x d_s, gradient into the student backbone
};

/// Mean over samples and tokens of |eps - eps_theta(x_m, m, id, c)|^2 with
/// x_m the noised contracted target. Accumulates head parameter gradients
/// and returns the gradient with respect to the per-sample condition.
///
/// target_rows_override replaces the contracted targets (used by the
/// optional mixup path); shape (B*n) x d_tok.
inline TrainingLossResult training_loss(DiffusionHead& head, const NoiseSchedule& schedule,
                                        const TokenBatch& batch, const ContractionSpec& spec,
                                        const LossBatchPlan& plan,
                                        const Matrix* target_rows_override = nullptr) {
  const int B = batch.batch_size();
  const int n = batch.num_tokens();
  const int d_tok = batch.token_dim();
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * n;
  require(plan.steps.size() == rows && plan.eps.rows() == rows && plan.eps.cols() == d_tok,
          "training loss: plan shape mismatch");
  require(static_cast<int>(plan.drop_mask.size()) == B, "training loss: drop mask mismatch");

  Matrix targets = target_rows_override ? *target_rows_override
                                        : contracted_target_rows(batch, spec);
  Matrix noisy = forward_noise(schedule, targets, plan.steps, plan.eps);

  IntVector ids(rows);
  Matrix cond_rows(rows, batch.condition.cols());
  std::vector<unsigned char> use_null(static_cast<size_t>(rows), 0);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * n + i;
      ids[r] = i;
      cond_rows.row(r) = batch.condition.row(b);
      use_null[static_cast<size_t>(r)] = plan.drop_mask[static_cast<size_t>(b)];
    }
  }

  HeadCache cache;
  Matrix eps_pred = head.forward(noisy, plan.steps, ids, cond_rows, use_null, &cache);
  Matrix residual = plan.eps - eps_pred;
  const double loss = residual.squaredNorm() / double(rows);
  if (!std::isfinite(loss)) {
    std::ostringstream oss;
    oss << "training loss is not finite (batch " << B << ", tokens " << n << ")";
    throw NumericsError(oss.str());
  }

  Matrix grad_eps = (-2.0 / double(rows)) * residual;
  Matrix grad_cond_rows = head.backward(cache, grad_eps);

  TrainingLossResult result;
  result.loss = loss;
  result.grad_condition = Matrix::Zero(B, batch.condition.cols());
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i)
      result.grad_condition.row(b) += grad_cond_rows.row(static_cast<Eigen::Index>(b) * n + i);
  return result;
}

struct KlLossResult {
  double loss = 0.0;
  double ce_term = 0.0;
  double kl_term = 0.0;
  Matrix grad_student_logits;  // B x C
};

/// w_ce * CE(student, labels) + w_kl * T^2 * KL(softmax(t/T) || softmax(s/T)),
/// both terms averaged over the batch. Unsupervised mode: w_ce = 0.
inline KlLossResult kl_baseline_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                                     const std::optional<IntVector>& labels, double temperature,
                                     double w_kl, double w_ce) {
  require(teacher_logits.rows() == student_logits.rows() &&
              teacher_logits.cols() == student_logits.cols(),
          "kl loss: logit shape mismatch");
  require(temperature > 0.0, "kl loss: temperature must be positive");
  if (w_ce > 0.0)
    require(labels.has_value() && labels->size() == student_logits.rows(),
            "kl loss: labels required when w_ce > 0");

  const Eigen::Index B = student_logits.rows();
  const double T = temperature;
  KlLossResult out;
  out.grad_student_logits = Matrix::Zero(B, student_logits.cols());

  const Matrix pt = nn::softmax_rows(teacher_logits / T);
  const Matrix ps = nn::softmax_rows(student_logits / T);
  for (Eigen::Index b = 0; b < B; ++b) {
    double kl = 0.0;
    for (Eigen::Index c = 0; c < pt.cols(); ++c) {
      if (pt(b, c) > 0.0) kl += pt(b, c) * (std::log(pt(b, c)) - std::log(ps(b, c)));
    }
    out.kl_term += kl;
  }
  out.kl_term = T * T * out.kl_term / double(B);
  out.grad_student_logits += (w_kl * T / double(B)) * (ps - pt);

  if (w_ce > 0.0) {
    const Matrix p1 = nn::softmax_rows(student_logits);
    for (Eigen::Index b = 0; b < B; ++b) {
      const int y = (*labels)[b];
      require(y >= 0 && y < p1.cols(), "kl loss: label out of range");
      out.ce_term += -std::log(std::max(p1(b, y), 1e-300));
      out.grad_student_logits.row(b) += (w_ce / double(B)) * p1.row(b);
      out.grad_student_logits(b, y) -= w_ce / double(B);
    }
    out.ce_term /= double(B);
  }

  out.loss = w_ce * out.ce_term + w_kl * out.kl_term;
  return out;
}

}  // namespace gendd
