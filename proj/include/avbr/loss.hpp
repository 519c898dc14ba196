#pragma once

#include <Eigen/Core>
#include <vector>

#include "avbr/manifest.hpp"

namespace avbr {

// Per-class positive-term weights for the multi-label BCE loss.
struct LossConfig {
    Eigen::VectorXd weights;  // size 10, all positive

    static LossConfig uniform(int classes = kNumCategories);
};

// w_c = N / (C * n_c) over the given split, with w_c = 1 for absent classes.
LossConfig class_weights(const DatasetManifest& manifest, Split split);
std::vector<double> weights_from_counts(const std::vector<int>& counts, int total);

// Mean over classes of  w_c * [-y_c ln p_c] - (1-y_c) ln(1-p_c), with p
// clamped to [1e-7, 1-1e-7]. One sample.
double weighted_bce(const Eigen::VectorXd& p, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& w);

// Batch loss from logits plus its gradient. Rows are samples. The gradient
// is with respect to the logits and includes the mean normalization.
double bce_with_logits(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                       const Eigen::VectorXd& weights, Eigen::MatrixXd* dlogits = nullptr);

}  // namespace avbr
