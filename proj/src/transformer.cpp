#include "avbr/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "avbr/errors.hpp"

namespace avbr {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kMaskedScore = -1e30;
}  // namespace

void Param::init(const std::string& n, Eigen::Index rows, Eigen::Index cols) {
    name = n;
    value = Eigen::MatrixXd::Zero(rows, cols);
    grad = Eigen::MatrixXd::Zero(rows, cols);
    adam_m = Eigen::MatrixXd::Zero(rows, cols);
    adam_v = Eigen::MatrixXd::Zero(rows, cols);
}

void AdamOptimizer::step(const std::vector<Param*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param* p : params) {
        p->adam_m = beta1_ * p->adam_m + (1.0 - beta1_) * p->grad;
        p->adam_v = beta2_ * p->adam_v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
        const Eigen::MatrixXd m_hat = p->adam_m / bc1;
        const Eigen::MatrixXd v_hat = p->adam_v / bc2;
        p->value -=
            lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
    }
}

Eigen::MatrixXd xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    }
    return m;
}

void EncoderLayer::init(const EncoderLayerConfig& config, const std::string& prefix,
                        Rng& rng) {
    if (config.dim <= 0 || config.heads <= 0 || config.ff_dim <= 0) {
        throw ConfigError("encoder layer: dims and heads must be positive");
    }
    if (config.dim % config.heads != 0) {
        throw ConfigError("encoder layer: dim must be divisible by heads");
    }
    config_ = config;
    const auto d = static_cast<Eigen::Index>(config.dim);
    const auto ff = static_cast<Eigen::Index>(config.ff_dim);
    auto mat = [&](Param& p, const char* n, Eigen::Index r, Eigen::Index c) {
        p.init(prefix + n, r, c);
        p.value = xavier_init(r, c, rng);
    };
    auto bias = [&](Param& p, const char* n, Eigen::Index c, double fill = 0.0) {
        p.init(prefix + n, 1, c);
        p.value.setConstant(fill);
    };
    mat(wq_, "wq", d, d);
    bias(bq_, "bq", d);
    mat(wk_, "wk", d, d);
    bias(bk_, "bk", d);
    mat(wv_, "wv", d, d);
    bias(bv_, "bv", d);
    mat(wo_, "wo", d, d);
    bias(bo_, "bo", d);
    bias(ln1_g_, "ln1_g", d, 1.0);
    bias(ln1_b_, "ln1_b", d);
    mat(w1_, "w1", d, ff);
    bias(b1_, "b1", ff);
    mat(w2_, "w2", ff, d);
    bias(b2_, "b2", d);
    bias(ln2_g_, "ln2_g", d, 1.0);
    bias(ln2_b_, "ln2_b", d);
}

namespace {

// Row-wise layer norm; writes x_hat and inv_std for the backward pass.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma,
                           const Eigen::RowVectorXd& beta, Eigen::MatrixXd* x_hat,
                           Eigen::VectorXd* inv_std) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    x_hat->resize(rows, cols);
    inv_std->resize(rows);
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kLnEps);
        (*inv_std)(i) = is;
        x_hat->row(i) = (x.row(i).array() - mu) * is;
        out.row(i) = x_hat->row(i).cwiseProduct(gamma) + beta;
    }
    return out;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& x_hat,
                                    const Eigen::VectorXd& inv_std,
                                    const Eigen::RowVectorXd& gamma, Eigen::MatrixXd* dgamma,
                                    Eigen::MatrixXd* dbeta) {
    const Eigen::Index rows = dy.rows();
    Eigen::MatrixXd dx(rows, dy.cols());
    dgamma->noalias() += (dy.cwiseProduct(x_hat)).colwise().sum();
    dbeta->noalias() += dy.colwise().sum();
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gamma);
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = dxhat.cwiseProduct(x_hat.row(i)).mean();
        dx.row(i) = inv_std(i) * (dxhat.array() - mean_dxhat -
                                  x_hat.row(i).array() * mean_dxhat_xhat);
    }
    return dx;
}

// Inverted dropout mask: entries are 0 or 1/(1-p).
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Eigen::MatrixXd mask(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            mask(i, j) = rng.unif01() < p ? 0.0 : 1.0 / keep;
        }
    }
    return mask;
}

}  // namespace

Eigen::MatrixXd EncoderLayer::forward(const Eigen::MatrixXd& x,
                                      const std::vector<char>& key_valid, int window_len,
                                      bool train, Rng& rng, EncoderLayerCache* cache) const {
    const Eigen::Index rows = x.rows();
    const auto d = static_cast<Eigen::Index>(config_.dim);
    if (x.cols() != d) throw std::invalid_argument("encoder forward: width mismatch");
    if (rows % window_len != 0 || key_valid.size() != static_cast<size_t>(rows)) {
        throw std::invalid_argument("encoder forward: rows must stack whole windows");
    }
    const Eigen::Index windows = rows / window_len;
    const int heads = config_.heads;
    const Eigen::Index dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const bool drop = train && config_.dropout > 0.0;

    EncoderLayerCache local;
    EncoderLayerCache& c = cache ? *cache : local;
    c.x = x;
    c.key_valid = key_valid;
    c.window_len = window_len;
    c.q.noalias() = x * wq_.value;
    c.q.rowwise() += bq_.value.row(0);
    c.k.noalias() = x * wk_.value;
    c.k.rowwise() += bk_.value.row(0);
    c.v.noalias() = x * wv_.value;
    c.v.rowwise() += bv_.value.row(0);

    c.attn.assign(static_cast<size_t>(windows) * heads, Eigen::MatrixXd());
    c.context.resize(rows, d);
    for (Eigen::Index w = 0; w < windows; ++w) {
        const Eigen::Index base = w * window_len;
        for (int h = 0; h < heads; ++h) {
            const auto qh = c.q.block(base, h * dk, window_len, dk);
            const auto kh = c.k.block(base, h * dk, window_len, dk);
            const auto vh = c.v.block(base, h * dk, window_len, dk);
            Eigen::MatrixXd scores = scale * (qh * kh.transpose());
            for (Eigen::Index j = 0; j < window_len; ++j) {
                if (!key_valid[static_cast<size_t>(base + j)]) {
                    scores.col(j).setConstant(kMaskedScore);
                }
            }
            Eigen::MatrixXd probs(window_len, window_len);
            for (Eigen::Index i = 0; i < window_len; ++i) {
                const double row_max = scores.row(i).maxCoeff();
                Eigen::ArrayXd e = (scores.row(i).array() - row_max).exp();
                probs.row(i) = (e / e.sum()).matrix();
            }
            c.attn[static_cast<size_t>(w) * heads + h] = probs;
            c.context.block(base, h * dk, window_len, dk).noalias() = probs * vh;
        }
    }

    Eigen::MatrixXd attn_out = c.context * wo_.value;
    attn_out.rowwise() += bo_.value.row(0);
    if (drop) {
        c.attn_out_dropmask = dropout_mask(rows, d, config_.dropout, rng);
        attn_out = attn_out.cwiseProduct(c.attn_out_dropmask);
    } else {
        c.attn_out_dropmask.resize(0, 0);
    }
    c.r1 = x + attn_out;
    c.n1 = layer_norm(c.r1, ln1_g_.value.row(0), ln1_b_.value.row(0), &c.n1_hat,
                      &c.ln1_inv_std);

    c.ffn_pre.noalias() = c.n1 * w1_.value;
    c.ffn_pre.rowwise() += b1_.value.row(0);
    c.ffn_mid = c.ffn_pre.cwiseMax(0.0);
    if (drop) {
        c.ffn_middropmask = dropout_mask(rows, c.ffn_mid.cols(), config_.dropout, rng);
        c.ffn_mid = c.ffn_mid.cwiseProduct(c.ffn_middropmask);
    } else {
        c.ffn_middropmask.resize(0, 0);
    }
    Eigen::MatrixXd ffn_out = c.ffn_mid * w2_.value;
    ffn_out.rowwise() += b2_.value.row(0);
    if (drop) {
        c.ffn_out_dropmask = dropout_mask(rows, d, config_.dropout, rng);
        ffn_out = ffn_out.cwiseProduct(c.ffn_out_dropmask);
    } else {
        c.ffn_out_dropmask.resize(0, 0);
    }
    c.r2 = c.n1 + ffn_out;
    Eigen::MatrixXd out = layer_norm(c.r2, ln2_g_.value.row(0), ln2_b_.value.row(0),
                                     &c.n2_hat, &c.ln2_inv_std);
    return out;
}

Eigen::MatrixXd EncoderLayer::backward(const EncoderLayerCache& c, const Eigen::MatrixXd& dy) {
    const Eigen::Index rows = c.x.rows();
    const auto d = static_cast<Eigen::Index>(config_.dim);
    const int heads = config_.heads;
    const Eigen::Index dk = d / heads;
    const int window_len = c.window_len;
    const Eigen::Index windows = rows / window_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    // LN2
    Eigen::MatrixXd dr2 = layer_norm_backward(dy, c.n2_hat, c.ln2_inv_std,
                                              ln2_g_.value.row(0), &ln2_g_.grad, &ln2_b_.grad);
    Eigen::MatrixXd dn1 = dr2;  // residual branch

    // FFN
    Eigen::MatrixXd dffn_out = dr2;
    if (c.ffn_out_dropmask.size() > 0) {
        dffn_out = dffn_out.cwiseProduct(c.ffn_out_dropmask);
    }
    w2_.grad.noalias() += c.ffn_mid.transpose() * dffn_out;
    b2_.grad.noalias() += dffn_out.colwise().sum();
    Eigen::MatrixXd dmid = dffn_out * w2_.value.transpose();
    if (c.ffn_middropmask.size() > 0) {
        dmid = dmid.cwiseProduct(c.ffn_middropmask);
    }
    Eigen::MatrixXd dpre =
        dmid.cwiseProduct((c.ffn_pre.array() > 0.0).cast<double>().matrix());
    w1_.grad.noalias() += c.n1.transpose() * dpre;
    b1_.grad.noalias() += dpre.colwise().sum();
    dn1.noalias() += dpre * w1_.value.transpose();

    // LN1
    Eigen::MatrixXd dr1 = layer_norm_backward(dn1, c.n1_hat, c.ln1_inv_std,
                                              ln1_g_.value.row(0), &ln1_g_.grad, &ln1_b_.grad);
    Eigen::MatrixXd dx = dr1;  // residual branch

    // attention output projection
    Eigen::MatrixXd dattn_out = dr1;
    if (c.attn_out_dropmask.size() > 0) {
        dattn_out = dattn_out.cwiseProduct(c.attn_out_dropmask);
    }
    wo_.grad.noalias() += c.context.transpose() * dattn_out;
    bo_.grad.noalias() += dattn_out.colwise().sum();
    Eigen::MatrixXd dcontext = dattn_out * wo_.value.transpose();

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(rows, d);
    Eigen::MatrixXd dkm = Eigen::MatrixXd::Zero(rows, d);
    Eigen::MatrixXd dvm = Eigen::MatrixXd::Zero(rows, d);
    for (Eigen::Index w = 0; w < windows; ++w) {
        const Eigen::Index base = w * window_len;
        for (int h = 0; h < heads; ++h) {
            const Eigen::MatrixXd& probs = c.attn[static_cast<size_t>(w) * heads + h];
            const auto qh = c.q.block(base, h * dk, window_len, dk);
            const auto kh = c.k.block(base, h * dk, window_len, dk);
            const auto vh = c.v.block(base, h * dk, window_len, dk);
            const auto dctx = dcontext.block(base, h * dk, window_len, dk);
            Eigen::MatrixXd dprobs = dctx * vh.transpose();
            dvm.block(base, h * dk, window_len, dk).noalias() = probs.transpose() * dctx;
            // softmax backward, row-wise
            Eigen::MatrixXd dscores(window_len, window_len);
            for (Eigen::Index i = 0; i < window_len; ++i) {
                const double dot = dprobs.row(i).dot(probs.row(i));
                dscores.row(i) =
                    probs.row(i).cwiseProduct(dprobs.row(i).array().matrix()) -
                    dot * probs.row(i);
            }
            dscores *= scale;
            dq.block(base, h * dk, window_len, dk).noalias() = dscores * kh;
            dkm.block(base, h * dk, window_len, dk).noalias() = dscores.transpose() * qh;
        }
    }

    wq_.grad.noalias() += c.x.transpose() * dq;
    bq_.grad.noalias() += dq.colwise().sum();
    wk_.grad.noalias() += c.x.transpose() * dkm;
    bk_.grad.noalias() += dkm.colwise().sum();
    wv_.grad.noalias() += c.x.transpose() * dvm;
    bv_.grad.noalias() += dvm.colwise().sum();
    dx.noalias() += dq * wq_.value.transpose();
    dx.noalias() += dkm * wk_.value.transpose();
    dx.noalias() += dvm * wv_.value.transpose();
    return dx;
}

std::vector<Param*> EncoderLayer::params() {
    return {&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_,   &bo_,
            &ln1_g_, &ln1_b_, &w1_, &b1_, &w2_, &b2_, &ln2_g_, &ln2_b_};
}

void EncoderLayer::export_tensors(std::map<std::string, Eigen::MatrixXd>& out) const {
    for (const Param* p : const_cast<EncoderLayer*>(this)->params()) {
        out[p->name] = p->value;
    }
}

void EncoderLayer::import_tensors(const std::map<std::string, Eigen::MatrixXd>& in,
                                  const std::string& prefix,
                                  const EncoderLayerConfig& config) {
    config_ = config;
    Rng dummy(0);
    init(config, prefix, dummy);
    for (Param* p : params()) {
        auto it = in.find(p->name);
        if (it == in.end()) throw FormatError("checkpoint missing tensor " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
            throw FormatError("checkpoint tensor " + p->name + " has wrong shape");
        }
        p->value = it->second;
    }
}

Eigen::MatrixXd masked_mean_pool(const Eigen::MatrixXd& x, const std::vector<char>& valid,
                                 int window_len) {
    const Eigen::Index windows = x.rows() / window_len;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(windows, x.cols());
    for (Eigen::Index w = 0; w < windows; ++w) {
        int n = 0;
        for (Eigen::Index t = 0; t < window_len; ++t) {
            const Eigen::Index row = w * window_len + t;
            if (valid[static_cast<size_t>(row)]) {
                out.row(w) += x.row(row);
                ++n;
            }
        }
        if (n > 0) out.row(w) /= static_cast<double>(n);
    }
    return out;
}

Eigen::MatrixXd masked_mean_pool_backward(const Eigen::MatrixXd& dpooled,
                                          const std::vector<char>& valid, int window_len,
                                          Eigen::Index rows) {
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(rows, dpooled.cols());
    const Eigen::Index windows = rows / window_len;
    for (Eigen::Index w = 0; w < windows; ++w) {
        int n = 0;
        for (Eigen::Index t = 0; t < window_len; ++t) {
            if (valid[static_cast<size_t>(w * window_len + t)]) ++n;
        }
        if (n == 0) continue;
        const double inv = 1.0 / n;
        for (Eigen::Index t = 0; t < window_len; ++t) {
            const Eigen::Index row = w * window_len + t;
            if (valid[static_cast<size_t>(row)]) dx.row(row) = dpooled.row(w) * inv;
        }
    }
    return dx;
}

}  // namespace avbr
