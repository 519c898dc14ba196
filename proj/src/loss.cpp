#include "avbr/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace avbr {

namespace {
constexpr double kProbEps = 1e-7;
}

LossConfig LossConfig::uniform(int classes) {
    return {Eigen::VectorXd::Ones(classes)};
}

std::vector<double> weights_from_counts(const std::vector<int>& counts, int total) {
    const auto c = static_cast<double>(counts.size());
    std::vector<double> out(counts.size(), 1.0);
    for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) out[i] = total / (c * counts[i]);
    }
    return out;
}

LossConfig class_weights(const DatasetManifest& manifest, Split split) {
    std::vector<int> counts(kNumCategories, 0);
    int total = 0;
    for (const auto& clip : manifest.clips) {
        if (clip.split != split) continue;
        ++total;
        for (int id : clip.labels.ids()) ++counts[static_cast<size_t>(id)];
    }
    const auto w = weights_from_counts(counts, total);
    LossConfig cfg;
    cfg.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    return cfg;
}

double weighted_bce(const Eigen::VectorXd& p, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& w) {
    if (p.size() != y.size() || p.size() != w.size()) {
        throw std::invalid_argument("weighted_bce: shape mismatch");
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
        const double pc = std::min(1.0 - kProbEps, std::max(kProbEps, p(c)));
        sum += -w(c) * y(c) * std::log(pc) - (1.0 - y(c)) * std::log(1.0 - pc);
    }
    return sum / static_cast<double>(p.size());
}

double bce_with_logits(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                       const Eigen::VectorXd& weights, Eigen::MatrixXd* dlogits) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols() ||
        logits.cols() != weights.size()) {
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    }
    const double denom = static_cast<double>(logits.rows()) * logits.cols();
    double loss = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const double p = 1.0 / (1.0 + std::exp(-logits(i, c)));
            const double pc = std::min(1.0 - kProbEps, std::max(kProbEps, p));
            const double y = targets(i, c);
            const double w = weights(c);
            loss += -w * y * std::log(pc) - (1.0 - y) * std::log(1.0 - pc);
            if (dlogits) {
                (*dlogits)(i, c) = (p * (1.0 - y) - w * y * (1.0 - p)) / denom;
            }
        }
    }
    return loss / denom;
}

}  // namespace avbr
