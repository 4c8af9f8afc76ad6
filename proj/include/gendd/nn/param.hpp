// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gendd/common.hpp"
#include "gendd/rng.hpp"

namespace gendd::nn {

/// A trainable array with its gradient accumulator.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

using ParamRefs = std::vector<Param*>;

inline void zero_grads(const ParamRefs& params) {
  for (Param* p : params) p->zero_grad();
}

inline Eigen::Index total_size(const ParamRefs& params) {
  Eigen::Index n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

inline Vector pack_values(const ParamRefs& params) {
  Vector out(total_size(params));
  Eigen::Index at = 0;
  for (const Param* p : params) {
    out.segment(at, p->size()) = Eigen::Map<const Vector>(p->value.data(), p->size());
    at += p->size();
  }
  return out;
}

inline void unpack_values(const ParamRefs& params, const Vector& flat) {
  require(flat.size() == total_size(params), "unpack_values: size mismatch");
  Eigen::Index at = 0;
  for (Param* p : params) {
    Eigen::Map<Vector>(p->value.data(), p->size()) = flat.segment(at, p->size());
    at += p->size();
  }
}

inline Vector pack_grads(const ParamRefs& params) {
  Vector out(total_size(params));
  Eigen::Index at = 0;
  for (const Param* p : params) {
    out.segment(at, p->size()) = Eigen::Map<const Vector>(p->grad.data(), p->size());
    at += p->size();
  }
  return out;
}

inline double grad_norm(const ParamRefs& params) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

inline bool params_finite(const ParamRefs& params) {
  for (const Param* p : params)
    if (!p->value.allFinite()) return false;
  return true;
}

/// Order- and layout-stable checksum of parameter values, used to verify
/// teacher immutability across a training run.
inline std::uint64_t value_checksum(const ParamRefs& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param* p : params) {
    const double* data = p->value.data();
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(double));
      std::memcpy(&bits, &data[i], sizeof(bits));
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline void init_normal(Param& p, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = stddev * rng.gaussian();
}

/// Fan-in scaled init for dense weights stored as (in x out).
inline void init_dense_weight(Param& p, Rng& rng) {
  init_normal(p, rng, 1.0 / std::sqrt(double(p.value.rows())));
}

}  // namespace gendd::nn
