// SPDX-License-Identifier: Apache-2.0
//
// Split tokenization: partition a feature vector into position-indexed
// low-dimensional tokens (zero-padded on the tail when indivisible), plus
// per-dimension standardization statistics for the token targets.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "gendd/common.hpp"

namespace gendd {

/// A batch of tokenized teacher features together with the per-sample
/// student-feature condition. tokens[b] is n x d_tok.
struct TokenBatch {
  std::vector<Matrix> tokens;      // B entries, each n x d_tok
  IntVector position_ids;          // identity permutation 0..n-1
  Matrix condition;                // B x d_s
  std::optional<IntVector> labels; // B class indices
  int feature_dim = 0;             // d_t before splitting

  int batch_size() const { return static_cast<int>(tokens.size()); }
  int num_tokens() const { return static_cast<int>(position_ids.size()); }
  int token_dim() const { return tokens.empty() ? 0 : static_cast<int>(tokens[0].cols()); }
};

inline int num_tokens_for(int feature_dim, int token_dim) {
  return (feature_dim + token_dim - 1) / token_dim;
}

/// Splits one feature vector into ceil(d_t/d_tok) tokens, zero-padding the
/// last one when d_t is not divisible by d_tok.
inline Matrix split_feature(const Vector& feature, int token_dim) {
  require(token_dim >= 1, "split: token dimension must be positive");
  require(feature.allFinite(), "split: non-finite feature");
  const int d_t = static_cast<int>(feature.size());
  const int n = num_tokens_for(d_t, token_dim);
  Matrix tokens = Matrix::Zero(n, token_dim);
  for (int i = 0; i < n; ++i) {
    const int lo = i * token_dim;
    const int len = std::min(token_dim, d_t - lo);
    tokens.row(i).head(len) = feature.segment(lo, len);
  }
  return tokens;
}

/// Inverse of split_feature: concatenate tokens in position order and
/// truncate to d_t. split/assemble round-trips bit-exactly.
inline Vector assemble_feature(const Matrix& tokens, int feature_dim) {
  const int n = static_cast<int>(tokens.rows());
  const int token_dim = static_cast<int>(tokens.cols());
  require(feature_dim >= 1, "assemble: feature dimension must be positive");
  require(static_cast<long long>(n) * token_dim >= feature_dim,
          "assemble: insufficient token payload");
  Vector feature(feature_dim);
  for (int i = 0; i < n; ++i) {
    const int lo = i * token_dim;
    if (lo >= feature_dim) break;
    const int len = std::min(token_dim, feature_dim - lo);
    feature.segment(lo, len) = tokens.row(i).head(len);
  }
  return feature;
}

/// Batched split with condition and optional labels attached.
inline TokenBatch split(const Matrix& features, int token_dim, const Matrix& condition,
                        std::optional<IntVector> labels = std::nullopt) {
  require(token_dim >= 1, "split: token dimension must be positive");
  require(features.allFinite(), "split: non-finite features");
  require(condition.rows() == features.rows(), "split: condition batch mismatch");
  if (labels) require(labels->size() == features.rows(), "split: label batch mismatch");

  TokenBatch batch;
  batch.feature_dim = static_cast<int>(features.cols());
  const int n = num_tokens_for(batch.feature_dim, token_dim);
  batch.position_ids = IntVector::LinSpaced(n, 0, n - 1);
  batch.tokens.reserve(static_cast<size_t>(features.rows()));
  for (Eigen::Index b = 0; b < features.rows(); ++b) {
    batch.tokens.push_back(split_feature(features.row(b).transpose(), token_dim));
  }
  batch.condition = condition;
  batch.labels = std::move(labels);
  return batch;
}

inline Matrix assemble(const std::vector<Matrix>& tokens, int feature_dim) {
  require(!tokens.empty(), "assemble: empty batch");
  Matrix features(static_cast<Eigen::Index>(tokens.size()), feature_dim);
  for (size_t b = 0; b < tokens.size(); ++b) {
    features.row(static_cast<Eigen::Index>(b)) =
        assemble_feature(tokens[b], feature_dim).transpose();
  }
  return features;
}

/// Per-dimension mean/std over the teacher's training features.
/// std uses the unbiased estimator and is floored at 1e-6.
struct FeatureStats {
  Vector mean;
  Vector std;
  long sample_count = 0;

  static constexpr double kStdFloor = 1e-6;

  bool empty() const { return mean.size() == 0; }
};

class StatsAccumulator {
 public:
  void add(const Vector& feature) {
    if (count_ == 0) {
      sum_ = Vector::Zero(feature.size());
      sum_sq_ = Vector::Zero(feature.size());
    }
    require(feature.size() == sum_.size(), "fit_stats: dimension mismatch");
    sum_ += feature;
    sum_sq_ += feature.cwiseProduct(feature);
    ++count_;
  }

  void add_rows(const Matrix& features) {
    for (Eigen::Index b = 0; b < features.rows(); ++b) add(features.row(b).transpose());
  }

  FeatureStats finish() const {
    require(count_ >= 2, "fit_stats: need at least 2 samples");
    FeatureStats stats;
    stats.sample_count = count_;
    stats.mean = sum_ / double(count_);
    Vector var =
        (sum_sq_ - double(count_) * stats.mean.cwiseProduct(stats.mean)) / double(count_ - 1);
    stats.std = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(FeatureStats::kStdFloor);
    return stats;
  }

 private:
  Vector sum_;
  Vector sum_sq_;
  long count_ = 0;
};

inline FeatureStats fit_stats(const Matrix& features) {
  StatsAccumulator acc;
  acc.add_rows(features);
  return acc.finish();
}

inline Vector apply_stats(const Vector& f, const FeatureStats& s) {
  require(f.size() == s.mean.size(), "apply_stats: dimension mismatch");
  return (f - s.mean).cwiseQuotient(s.std);
}

inline Vector invert_stats(const Vector& f, const FeatureStats& s) {
  require(f.size() == s.mean.size(), "invert_stats: dimension mismatch");
  return f.cwiseProduct(s.std) + s.mean;
}

inline Matrix apply_stats(const Matrix& f, const FeatureStats& s) {
  require(f.cols() == s.mean.size(), "apply_stats: dimension mismatch");
  return (f.rowwise() - s.mean.transpose()).array().rowwise() /
         s.std.transpose().array();
}

inline Matrix invert_stats(const Matrix& f, const FeatureStats& s) {
  require(f.cols() == s.mean.size(), "invert_stats: dimension mismatch");
  return (f.array().rowwise() * s.std.transpose().array()).matrix().rowwise() +
         s.mean.transpose();
}

/// Identity stats (mean 0, std 1) used when standardization is disabled.
inline FeatureStats identity_stats(int dim) {
  FeatureStats s;
  s.mean = Vector::Zero(dim);
  s.std = Vector::Ones(dim);
  s.sample_count = 0;
  return s;
}

}  // namespace gendd
