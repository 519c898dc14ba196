#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "avbr/rng.hpp"

namespace avbr {

// One learnable tensor with its gradient and Adam state.
struct Param {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Eigen::MatrixXd adam_m;
    Eigen::MatrixXd adam_v;

    void init(const std::string& n, Eigen::Index rows, Eigen::Index cols);
    void zero_grad() { grad.setZero(); }
};

// Adam over a flat parameter list; deterministic given update order.
class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Param*>& params);

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct EncoderLayerConfig {
    int dim = 0;
    int heads = 8;
    int ff_dim = 2048;
    double dropout = 0.1;
};

// Forward activations kept for the backward pass of one minibatch.
struct EncoderLayerCache {
    Eigen::MatrixXd x;            // (B*L) x d input
    Eigen::MatrixXd q, k, v;      // projections
    std::vector<Eigen::MatrixXd> attn;  // per window*head L x L softmax probs
    Eigen::MatrixXd context;      // concatenated head outputs
    Eigen::MatrixXd attn_out_dropmask;
    Eigen::MatrixXd r1;           // residual input to LN1
    Eigen::MatrixXd n1_hat;       // normalized pre-scale
    Eigen::VectorXd ln1_inv_std;
    Eigen::MatrixXd n1;           // LN1 output
    Eigen::MatrixXd ffn_pre;      // N1*W1 + b1 (pre-activation)
    Eigen::MatrixXd ffn_mid;      // relu + dropout applied
    Eigen::MatrixXd ffn_middropmask;
    Eigen::MatrixXd ffn_out_dropmask;
    Eigen::MatrixXd r2;
    Eigen::MatrixXd n2_hat;
    Eigen::VectorXd ln2_inv_std;
    std::vector<char> key_valid;  // (B*L) flags, false = padded position
    int window_len = 0;
};

// Single pre-built transformer encoder layer (post-norm, ReLU feed-forward)
// with explicit backward. Rows are time steps of stacked fixed-length windows.
class EncoderLayer {
public:
    void init(const EncoderLayerConfig& config, const std::string& prefix, Rng& rng);

    // x: (B*L) x d, key_valid: per-row validity, train enables dropout.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const std::vector<char>& key_valid,
                            int window_len, bool train, Rng& rng,
                            EncoderLayerCache* cache) const;

    // Accumulates parameter gradients; returns gradient w.r.t. the input.
    Eigen::MatrixXd backward(const EncoderLayerCache& cache, const Eigen::MatrixXd& dy);

    std::vector<Param*> params();
    void export_tensors(std::map<std::string, Eigen::MatrixXd>& out) const;
    void import_tensors(const std::map<std::string, Eigen::MatrixXd>& in,
                        const std::string& prefix, const EncoderLayerConfig& config);

    const EncoderLayerConfig& config() const { return config_; }

private:
    EncoderLayerConfig config_;
    Param wq_, wk_, wv_, wo_;  // d x d
    Param bq_, bk_, bv_, bo_;  // 1 x d
    Param ln1_g_, ln1_b_, ln2_g_, ln2_b_;  // 1 x d
    Param w1_, b1_;  // d x ff, 1 x ff
    Param w2_, b2_;  // ff x d, 1 x d
};

// Xavier-uniform init, deterministic from the rng stream.
Eigen::MatrixXd xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Mean over valid rows per window: (B*L) x d -> B x d.
Eigen::MatrixXd masked_mean_pool(const Eigen::MatrixXd& x, const std::vector<char>& valid,
                                 int window_len);
// Scatter of the pooling gradient back to rows.
Eigen::MatrixXd masked_mean_pool_backward(const Eigen::MatrixXd& dpooled,
                                          const std::vector<char>& valid, int window_len,
                                          Eigen::Index rows);

}  // namespace avbr
