// SPDX-License-Identifier: Apache-2.0
//
// Distribution contraction: pull a teacher feature toward its class center,
// x_tilde = lambda * x0 + (1 - lambda) * c_y. Centers default to the rows of
// the frozen teacher classifier weight matrix.
#pragma once

#include <string>

#include "gendd/common.hpp"
#include "gendd/tokenizer.hpp"

namespace gendd {

enum class CenterSource { classifier_weights, empirical_means };

inline std::string to_string(CenterSource s) {
  return s == CenterSource::classifier_weights ? "classifier_weights" : "empirical_means";
}

inline CenterSource center_source_from_string(const std::string& s) {
  if (s == "classifier_weights") return CenterSource::classifier_weights;
  if (s == "empirical_means") return CenterSource::empirical_means;
  throw ConfigError("unsupported center source: " + s);
}

struct ContractionSpec {
  double lambda = 0.9;
  Matrix centers;  // C x d_t, row y = center of class y
  CenterSource center_source = CenterSource::classifier_weights;

  int num_classes() const { return static_cast<int>(centers.rows()); }

  void validate() const {
    require(lambda >= 0.0 && lambda <= 1.0, "contraction: lambda must lie in [0,1]");
  }
};

/// Extracts class centers from the teacher's linear classifier weights
/// (bias ignored). When feature standardization is active, the same stats
/// must be applied so centers live in the standardized space.
inline Matrix centers_from_classifier(const Matrix& classifier_weights) {
  return classifier_weights;
}

inline Matrix centers_from_classifier(const Matrix& classifier_weights,
                                      const FeatureStats& stats) {
  if (stats.empty()) return classifier_weights;
  return apply_stats(classifier_weights, stats);
}

/// x_tilde = lambda * x0 + (1 - lambda) * centers[y].
inline Vector contract(const Vector& x0, int label, const ContractionSpec& spec) {
  spec.validate();
  if (spec.lambda == 1.0) return x0;  // unsupervised path, label unused
  require(label >= 0 && label < spec.num_classes(),
          "contract: label required and in range when lambda < 1");
  require(x0.size() == spec.centers.cols(), "contract: dimension mismatch with centers");
  return spec.lambda * x0 + (1.0 - spec.lambda) * spec.centers.row(label).transpose();
}

}  // namespace gendd
