// SPDX-License-Identifier: Apache-2.0
//
// AdamW and SGD-with-momentum over Param lists, plus warmup + cosine / step
// learning-rate schedules.
#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "gendd/nn/param.hpp"

namespace gendd::nn {

enum class OptimizerKind { adamw, sgd };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adamw ? "adamw" : "sgd";
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unsupported optimizer: " + s);
}

enum class LrScheduleKind { cosine, step };

inline std::string to_string(LrScheduleKind k) {
  return k == LrScheduleKind::cosine ? "cosine" : "step";
}

inline LrScheduleKind lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrScheduleKind::cosine;
  if (s == "step") return LrScheduleKind::step;
  throw ConfigError("unsupported lr schedule: " + s);
}

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::cosine;
  double base_lr = 1e-3;
  long total_steps = 1;
  long warmup_steps = 0;
  std::vector<double> milestones;  // fractions of total_steps for step decay
  double step_gamma = 0.1;

  double at(long step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
      return base_lr * double(step + 1) / double(warmup_steps);
    }
    const double progress =
        total_steps > warmup_steps
            ? double(step - warmup_steps) / double(total_steps - warmup_steps)
            : 1.0;
    if (kind == LrScheduleKind::cosine) {
      return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
    }
    double lr = base_lr;
    for (double ms : milestones)
      if (progress >= ms) lr *= step_gamma;
    return lr;
  }
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const ParamRefs& params, double lr) = 0;
  virtual void serialize_state(std::vector<Matrix>& out) const = 0;
  virtual void restore_state(const std::vector<Matrix>& in) = 0;
  virtual long step_count() const = 0;
};

class AdamW final : public Optimizer {
 public:
  explicit AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamRefs& params, double lr) override {
    ensure_state(params);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      m = beta1_ * m + (1.0 - beta1_) * p.grad;
      v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      const Matrix m_hat = m / bc1;
      const Matrix v_hat = v / bc2;
      p.value -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
      if (weight_decay_ > 0.0) p.value -= lr * weight_decay_ * p.value;
    }
  }

  void serialize_state(std::vector<Matrix>& out) const override {
    out.clear();
    Matrix t(1, 1);
    t(0, 0) = double(t_);
    out.push_back(t);
    for (const auto& m : m_) out.push_back(m);
    for (const auto& v : v_) out.push_back(v);
  }

  void restore_state(const std::vector<Matrix>& in) override {
    require(!in.empty() && in.size() % 2 == 1, "adamw: bad optimizer state");
    t_ = long(in[0](0, 0));
    const size_t n = (in.size() - 1) / 2;
    m_.assign(in.begin() + 1, in.begin() + 1 + n);
    v_.assign(in.begin() + 1 + n, in.end());
  }

  long step_count() const override { return t_; }

 private:
  void ensure_state(const ParamRefs& params) {
    if (m_.size() == params.size()) return;
    m_.clear();
    v_.clear();
    for (const Param* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParamRefs& params, double lr) override {
    if (buf_.size() != params.size()) {
      buf_.clear();
      for (const Param* p : params)
        buf_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
    ++t_;
    for (size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      Matrix g = p.grad;
      if (weight_decay_ > 0.0) g += weight_decay_ * p.value;
      buf_[i] = momentum_ * buf_[i] + g;
      p.value -= lr * buf_[i];
    }
  }

  void serialize_state(std::vector<Matrix>& out) const override {
    out.clear();
    Matrix t(1, 1);
    t(0, 0) = double(t_);
    out.push_back(t);
    for (const auto& b : buf_) out.push_back(b);
  }

  void restore_state(const std::vector<Matrix>& in) override {
    require(!in.empty(), "sgd: bad optimizer state");
    t_ = long(in[0](0, 0));
    buf_.assign(in.begin() + 1, in.end());
  }

  long step_count() const override { return t_; }

 private:
  double momentum_, weight_decay_;
  long t_ = 0;
  std::vector<Matrix> buf_;
};

inline std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double weight_decay,
                                                 double momentum = 0.9) {
  if (kind == OptimizerKind::adamw) return std::make_unique<AdamW>(weight_decay);
  return std::make_unique<Sgd>(momentum, weight_decay);
}

}  // namespace gendd::nn
