#include "avbr/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "avbr/digest.hpp"
#include "avbr/errors.hpp"
#include "json.hpp"

namespace avbr {

std::string_view to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::linear: return "linear";
        case ClassifierKind::mlp: return "mlp";
        case ClassifierKind::temporal: return "temporal";
    }
    return "linear";
}

std::optional<ClassifierKind> parse_classifier_kind(std::string_view s) {
    if (s == "linear") return ClassifierKind::linear;
    if (s == "mlp") return ClassifierKind::mlp;
    if (s == "temporal") return ClassifierKind::temporal;
    return std::nullopt;
}

namespace {

std::vector<std::string> modality_names(const std::vector<Modality>& mods) {
    std::vector<std::string> out;
    for (Modality m : mods) out.emplace_back(to_string(m));
    return out;
}

}  // namespace

std::string ClassifierConfig::to_json() const {
    nlohmann::ordered_json obj;
    obj["kind"] = std::string(to_string(kind));
    obj["seed"] = seed;
    obj["modalities"] = modality_names(modalities);
    obj["fusion"] = avbr::to_string(fusion, modalities);
    obj["max_iterations"] = max_iterations;
    obj["l2"] = l2;
    obj["hidden_units"] = hidden_units;
    obj["learning_rate"] = learning_rate;
    obj["epochs"] = epochs;
    obj["batch_size"] = batch_size;
    obj["heads"] = heads;
    obj["ff_dim"] = ff_dim;
    obj["dropout"] = dropout;
    obj["use_class_weights"] = use_class_weights;
    obj["val_every"] = val_every;
    return obj.dump();
}

ClassifierConfig ClassifierConfig::from_json(const std::string& text) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("classifier config: ") + e.what());
    }
    ClassifierConfig c;
    const auto kind = parse_classifier_kind(obj.at("kind").get<std::string>());
    if (!kind) throw FormatError("classifier config: unknown kind");
    c.kind = *kind;
    c.seed = obj.at("seed").get<uint64_t>();
    for (const auto& m : obj.at("modalities")) {
        const auto mod = parse_modality(m.get<std::string>());
        if (!mod) throw FormatError("classifier config: unknown modality");
        c.modalities.push_back(*mod);
    }
    c.fusion = parse_fusion_spec(obj.at("fusion").get<std::string>(), c.modalities);
    c.max_iterations = obj.at("max_iterations").get<int>();
    c.l2 = obj.at("l2").get<double>();
    c.hidden_units = obj.at("hidden_units").get<int>();
    c.learning_rate = obj.at("learning_rate").get<double>();
    c.epochs = obj.at("epochs").get<int>();
    c.batch_size = obj.at("batch_size").get<int>();
    c.heads = obj.at("heads").get<int>();
    c.ff_dim = obj.at("ff_dim").get<int>();
    c.dropout = obj.at("dropout").get<double>();
    c.use_class_weights = obj.at("use_class_weights").get<bool>();
    c.val_every = obj.at("val_every").get<int>();
    return c;
}

ClassifierConfig default_classifier_config(ClassifierKind kind,
                                           std::vector<Modality> modalities,
                                           FusionSpec fusion) {
    ClassifierConfig c;
    c.kind = kind;
    c.modalities = std::move(modalities);
    c.fusion = std::move(fusion);
    switch (kind) {
        case ClassifierKind::linear:
            c.l2 = 1.0;
            break;
        case ClassifierKind::mlp:
            c.l2 = 1e-4;
            break;
        case ClassifierKind::temporal:
            c.use_class_weights = true;
            break;
    }
    return c;
}

// ---- dataset builders ----------------------------------------------------------

namespace {

Eigen::MatrixXd truth_rows(const std::vector<const ClipRecord*>& clips) {
    Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(clips.size()),
                                                  kNumCategories);
    for (size_t i = 0; i < clips.size(); ++i) {
        for (int id : clips[i]->labels.ids()) {
            truth(static_cast<Eigen::Index>(i), id) = 1.0;
        }
    }
    return truth;
}

}  // namespace

ClipDataset build_clip_dataset(const std::vector<const FeatureTable*>& tables,
                               const DatasetManifest& manifest, Split split) {
    ClipDataset ds;
    std::vector<const ClipRecord*> kept;
    for (const auto& clip : manifest.clips) {
        if (clip.split != split) continue;
        bool complete = true;
        for (const FeatureTable* t : tables) {
            if (t->find(clip.clip_id, -1) == nullptr) {
                complete = false;
                break;
            }
        }
        if (complete) kept.push_back(&clip);
    }
    ds.modality_features.resize(tables.size());
    for (size_t m = 0; m < tables.size(); ++m) {
        ds.modality_features[m].resize(static_cast<Eigen::Index>(kept.size()),
                                       tables[m]->dim);
    }
    for (size_t i = 0; i < kept.size(); ++i) {
        ds.clip_ids.push_back(kept[i]->clip_id);
        for (size_t m = 0; m < tables.size(); ++m) {
            const FeatureVector* fv = tables[m]->find(kept[i]->clip_id, -1);
            for (int d = 0; d < tables[m]->dim; ++d) {
                ds.modality_features[m](static_cast<Eigen::Index>(i), d) =
                    static_cast<double>(fv->values[static_cast<size_t>(d)]);
            }
        }
    }
    ds.truth = truth_rows(kept);
    return ds;
}

WindowDataset build_window_dataset(const std::vector<const FeatureTable*>& tables,
                                   const DatasetManifest& manifest, Split split) {
    WindowDataset ds;
    const auto clip_segments = gather_clip_segments(tables, manifest, split);
    std::map<std::string, int> segmentation;
    std::vector<const ClipRecord*> kept;
    for (const auto& cs : clip_segments) {
        segmentation[cs.clip_id] = static_cast<int>(cs.segments.front().rows());
        kept.push_back(manifest.find(cs.clip_id));
    }
    DatasetManifest sub;
    for (const auto* c : kept) sub.clips.push_back(*c);
    const auto labels = propagate_segment_labels(sub, segmentation);
    ds.windows = make_windows(clip_segments, labels);
    for (const auto* c : kept) ds.clip_ids.push_back(c->clip_id);
    ds.clip_truth = truth_rows(kept);
    return ds;
}

// ---- shared helpers -------------------------------------------------------------

namespace {

Eigen::MatrixXd fuse_rows(const FusionSpec& spec,
                          const std::vector<Eigen::MatrixXd>& per_modality) {
    const Eigen::Index n = per_modality.front().rows();
    std::vector<Eigen::VectorXd> xs(per_modality.size());
    Eigen::MatrixXd out;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (size_t m = 0; m < per_modality.size(); ++m) {
            xs[m] = per_modality[m].row(i).transpose();
        }
        const Eigen::VectorXd f = fuse(spec, xs);
        if (i == 0) out.resize(n, f.size());
        out.row(i) = f.transpose();
    }
    return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd sigmoid_matrix(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

void check_finite_loss(double loss, int epoch) {
    if (!std::isfinite(loss)) {
        throw TrainingError("NaN/inf loss at epoch " + std::to_string(epoch) +
                            "; aborting (check feature scale and learning rate)");
    }
}

}  // namespace

// ---- linear / mlp ----------------------------------------------------------------

namespace {

struct FlatNet {
    // linear: w0 (d x 10), b0; mlp adds hidden layer w0 (d x h), b0, w1 (h x 10), b1
    Param w0, b0, w1, b1;
    bool has_hidden = false;

    std::vector<Param*> params() {
        if (has_hidden) return {&w0, &b0, &w1, &b1};
        return {&w0, &b0};
    }
};

Eigen::MatrixXd flat_forward(const FlatNet& net, const Eigen::MatrixXd& x,
                             Eigen::MatrixXd* hidden) {
    if (!net.has_hidden) {
        Eigen::MatrixXd logits = x * net.w0.value;
        logits.rowwise() += net.b0.value.row(0);
        return logits;
    }
    Eigen::MatrixXd h = x * net.w0.value;
    h.rowwise() += net.b0.value.row(0);
    h = h.cwiseMax(0.0);
    if (hidden) *hidden = h;
    Eigen::MatrixXd logits = h * net.w1.value;
    logits.rowwise() += net.b1.value.row(0);
    return logits;
}

TrainedModel train_flat(const ClassifierConfig& config, const ClipDataset& train,
                        const LossConfig& loss_cfg) {
    if (train.clip_ids.empty()) throw TrainingError("empty training set");
    const Eigen::MatrixXd x = fuse_rows(config.fusion, train.modality_features);
    const Eigen::Index d = x.cols();
    const Eigen::Index n = x.rows();

    FlatNet net;
    Rng rng(hash_seed(config.seed, "flat-init"));
    if (config.kind == ClassifierKind::mlp) {
        net.has_hidden = true;
        net.w0.init("mlp.w0", d, config.hidden_units);
        net.w0.value = xavier_init(d, config.hidden_units, rng);
        net.b0.init("mlp.b0", 1, config.hidden_units);
        net.w1.init("mlp.w1", config.hidden_units, kNumCategories);
        net.w1.value = xavier_init(config.hidden_units, kNumCategories, rng);
        net.b1.init("mlp.b1", 1, kNumCategories);
    } else {
        net.w0.init("linear.w", d, kNumCategories);
        net.b0.init("linear.b", 1, kNumCategories);
    }

    const Eigen::VectorXd weights =
        config.use_class_weights ? loss_cfg.weights : Eigen::VectorXd::Ones(kNumCategories);
    AdamOptimizer adam(config.learning_rate);
    TrainedModel model;
    model.config = config;

    constexpr double kGradTol = 1e-7;
    for (int it = 1; it <= config.max_iterations; ++it) {
        Eigen::MatrixXd hidden;
        const Eigen::MatrixXd logits = flat_forward(net, x, &hidden);
        Eigen::MatrixXd dlogits;
        double loss = bce_with_logits(logits, train.truth, weights, &dlogits);
        // L2 penalty on weight matrices (biases excluded)
        const double reg = config.l2 / (2.0 * static_cast<double>(n));
        loss += reg * net.w0.value.squaredNorm();
        if (net.has_hidden) loss += reg * net.w1.value.squaredNorm();
        check_finite_loss(loss, it);

        for (Param* p : net.params()) p->zero_grad();
        if (net.has_hidden) {
            net.w1.grad.noalias() = hidden.transpose() * dlogits;
            net.w1.grad += (config.l2 / static_cast<double>(n)) * net.w1.value;
            net.b1.grad.noalias() = dlogits.colwise().sum();
            Eigen::MatrixXd dh = dlogits * net.w1.value.transpose();
            dh = dh.cwiseProduct((hidden.array() > 0.0).cast<double>().matrix());
            net.w0.grad.noalias() = x.transpose() * dh;
            net.b0.grad.noalias() = dh.colwise().sum();
        } else {
            net.w0.grad.noalias() = x.transpose() * dlogits;
            net.b0.grad.noalias() = dlogits.colwise().sum();
        }
        net.w0.grad += (config.l2 / static_cast<double>(n)) * net.w0.value;

        double grad_inf = 0.0;
        for (Param* p : net.params()) {
            grad_inf = std::max(grad_inf, p->grad.cwiseAbs().maxCoeff());
        }
        if (it % 10 == 0 || it == 1 || grad_inf < kGradTol || it == config.max_iterations) {
            model.log.push_back({it, loss, -1.0});
        }
        if (grad_inf < kGradTol) break;
        adam.step(net.params());
    }

    for (Param* p : net.params()) model.tensors[p->name] = p->value;
    return model;
}

}  // namespace

// ---- temporal --------------------------------------------------------------------

namespace {

struct TemporalNet {
    std::vector<EncoderLayer> layers;  // one per modality
    Param head_w, head_b;

    std::vector<Param*> params() {
        std::vector<Param*> out;
        for (auto& l : layers) {
            for (Param* p : l.params()) out.push_back(p);
        }
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
};

struct BatchCache {
    std::vector<EncoderLayerCache> layer_caches;   // per modality
    std::vector<Eigen::MatrixXd> pooled;           // per modality, B x d
    std::vector<Eigen::MatrixXd> inputs;           // per modality, (B*L) x d
    std::vector<char> valid;                       // (B*L)
    Eigen::MatrixXd fused;                         // B x fused_dim
    Eigen::MatrixXi max_source;                    // argmax modality (max fusion)
};

// Stacks the selected windows into one (B*L) x d matrix per modality.
void assemble_batch(const std::vector<const WindowSequence*>& batch,
                    size_t modality_count, std::vector<Eigen::MatrixXd>* inputs,
                    std::vector<char>* valid, Eigen::MatrixXd* targets) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    inputs->clear();
    for (size_t m = 0; m < modality_count; ++m) {
        const Eigen::Index dim = batch.front()->modality_features[m].cols();
        Eigen::MatrixXd x(b * kWindowLength, dim);
        for (Eigen::Index i = 0; i < b; ++i) {
            x.middleRows(i * kWindowLength, kWindowLength) =
                batch[static_cast<size_t>(i)]->modality_features[m];
        }
        inputs->push_back(std::move(x));
    }
    valid->assign(static_cast<size_t>(b) * kWindowLength, 1);
    for (Eigen::Index i = 0; i < b; ++i) {
        for (int t = 0; t < kWindowLength; ++t) {
            (*valid)[static_cast<size_t>(i * kWindowLength + t)] =
                !batch[static_cast<size_t>(i)]->pad_mask[static_cast<size_t>(t)];
        }
    }
    if (targets) {
        targets->setZero(b, kNumCategories);
        for (Eigen::Index i = 0; i < b; ++i) {
            for (int id : batch[static_cast<size_t>(i)]->labels.ids()) {
                (*targets)(i, id) = 1.0;
            }
        }
    }
}

// Row-wise fusion of pooled modality features with bookkeeping for backward.
Eigen::MatrixXd fuse_pooled(const FusionSpec& spec,
                            const std::vector<Eigen::MatrixXd>& pooled,
                            Eigen::MatrixXi* max_source) {
    const Eigen::Index b = pooled.front().rows();
    const auto m_count = static_cast<double>(pooled.size());
    switch (spec.method) {
        case FusionMethod::average: {
            Eigen::MatrixXd out = Eigen::MatrixXd::Zero(b, pooled.front().cols());
            for (const auto& p : pooled) out += p;
            return out / m_count;
        }
        case FusionMethod::weighted: {
            double total = 0.0;
            Eigen::MatrixXd out = Eigen::MatrixXd::Zero(b, pooled.front().cols());
            for (size_t m = 0; m < pooled.size(); ++m) {
                out += spec.weights[m] * pooled[m];
                total += spec.weights[m];
            }
            return out / total;
        }
        case FusionMethod::max: {
            Eigen::MatrixXd out = pooled.front();
            max_source->setZero(b, pooled.front().cols());
            for (size_t m = 1; m < pooled.size(); ++m) {
                for (Eigen::Index i = 0; i < b; ++i) {
                    for (Eigen::Index j = 0; j < out.cols(); ++j) {
                        if (pooled[m](i, j) > out(i, j)) {
                            out(i, j) = pooled[m](i, j);
                            (*max_source)(i, j) = static_cast<int>(m);
                        }
                    }
                }
            }
            return out;
        }
        case FusionMethod::concat: {
            Eigen::Index total = 0;
            for (const auto& p : pooled) total += p.cols();
            Eigen::MatrixXd out(b, total);
            Eigen::Index off = 0;
            for (const auto& p : pooled) {
                out.middleCols(off, p.cols()) = p;
                off += p.cols();
            }
            return out;
        }
    }
    throw std::logic_error("fuse_pooled: unreachable");
}

std::vector<Eigen::MatrixXd> unfuse_gradient(const FusionSpec& spec,
                                             const std::vector<Eigen::MatrixXd>& pooled,
                                             const Eigen::MatrixXd& dfused,
                                             const Eigen::MatrixXi& max_source) {
    std::vector<Eigen::MatrixXd> out(pooled.size());
    const auto m_count = static_cast<double>(pooled.size());
    switch (spec.method) {
        case FusionMethod::average:
            for (size_t m = 0; m < pooled.size(); ++m) out[m] = dfused / m_count;
            return out;
        case FusionMethod::weighted: {
            double total = 0.0;
            for (double w : spec.weights) total += w;
            for (size_t m = 0; m < pooled.size(); ++m) {
                out[m] = dfused * (spec.weights[m] / total);
            }
            return out;
        }
        case FusionMethod::max: {
            for (size_t m = 0; m < pooled.size(); ++m) {
                out[m] = Eigen::MatrixXd::Zero(dfused.rows(), dfused.cols());
            }
            for (Eigen::Index i = 0; i < dfused.rows(); ++i) {
                for (Eigen::Index j = 0; j < dfused.cols(); ++j) {
                    out[static_cast<size_t>(max_source(i, j))](i, j) = dfused(i, j);
                }
            }
            return out;
        }
        case FusionMethod::concat: {
            Eigen::Index off = 0;
            for (size_t m = 0; m < pooled.size(); ++m) {
                out[m] = dfused.middleCols(off, pooled[m].cols());
                off += pooled[m].cols();
            }
            return out;
        }
    }
    throw std::logic_error("unfuse_gradient: unreachable");
}

Eigen::MatrixXd temporal_forward(TemporalNet& net, const ClassifierConfig& config,
                                 const std::vector<const WindowSequence*>& batch,
                                 bool train, Rng& rng, BatchCache* cache) {
    BatchCache local;
    BatchCache& c = cache ? *cache : local;
    assemble_batch(batch, config.modalities.size(), &c.inputs, &c.valid, nullptr);
    c.layer_caches.resize(config.modalities.size());
    c.pooled.resize(config.modalities.size());
    for (size_t m = 0; m < config.modalities.size(); ++m) {
        const Eigen::MatrixXd y = net.layers[m].forward(
            c.inputs[m], c.valid, kWindowLength, train, rng,
            cache ? &c.layer_caches[m] : nullptr);
        c.pooled[m] = masked_mean_pool(y, c.valid, kWindowLength);
    }
    c.max_source.resize(0, 0);
    if (config.fusion.method == FusionMethod::max) {
        c.max_source.resize(static_cast<Eigen::Index>(batch.size()),
                            c.pooled.front().cols());
    }
    c.fused = fuse_pooled(config.fusion, c.pooled, &c.max_source);
    Eigen::MatrixXd logits = c.fused * net.head_w.value;
    logits.rowwise() += net.head_b.value.row(0);
    return logits;
}

void temporal_backward(TemporalNet& net, const ClassifierConfig& config, BatchCache& c,
                       const Eigen::MatrixXd& dlogits) {
    net.head_w.grad.noalias() += c.fused.transpose() * dlogits;
    net.head_b.grad.noalias() += dlogits.colwise().sum();
    const Eigen::MatrixXd dfused = dlogits * net.head_w.value.transpose();
    const auto dpooled = unfuse_gradient(config.fusion, c.pooled, dfused, c.max_source);
    for (size_t m = 0; m < config.modalities.size(); ++m) {
        const Eigen::MatrixXd dy = masked_mean_pool_backward(
            dpooled[m], c.valid, kWindowLength, c.inputs[m].rows());
        net.layers[m].backward(c.layer_caches[m], dy);
    }
}

// Clip probabilities: sigmoid per window, max over each clip's windows.
Eigen::MatrixXd temporal_clip_probs(TemporalNet& net, const ClassifierConfig& config,
                                    const WindowDataset& data, int batch_size) {
    std::map<std::string, Eigen::Index> clip_row;
    for (size_t i = 0; i < data.clip_ids.size(); ++i) {
        clip_row[data.clip_ids[i]] = static_cast<Eigen::Index>(i);
    }
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(data.clip_ids.size()), kNumCategories);
    Rng rng(0);  // unused in eval mode
    for (size_t start = 0; start < data.windows.size();
         start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(data.windows.size(), start + static_cast<size_t>(batch_size));
        std::vector<const WindowSequence*> batch;
        for (size_t i = start; i < end; ++i) batch.push_back(&data.windows[i]);
        const Eigen::MatrixXd logits =
            temporal_forward(net, config, batch, /*train=*/false, rng, nullptr);
        const Eigen::MatrixXd p = sigmoid_matrix(logits);
        for (size_t i = start; i < end; ++i) {
            const Eigen::Index row = clip_row.at(data.windows[i].clip_id);
            probs.row(row) =
                probs.row(row).cwiseMax(p.row(static_cast<Eigen::Index>(i - start)));
        }
    }
    return probs;
}

double macro_f1_from_probs(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& truth) {
    PredictionMatrix pm;
    pm.truth.resize(static_cast<size_t>(truth.rows()));
    pm.pred.resize(static_cast<size_t>(truth.rows()));
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        for (int c = 0; c < kNumCategories; ++c) {
            pm.truth[static_cast<size_t>(i)][static_cast<size_t>(c)] = truth(i, c) > 0.5;
            pm.pred[static_cast<size_t>(i)][static_cast<size_t>(c)] =
                probs(i, c) >= kDecisionThreshold;
        }
    }
    return evaluate(pm).macro_f1;
}

void init_temporal_net(TemporalNet& net, const ClassifierConfig& config,
                       const std::vector<Eigen::Index>& dims) {
    Rng rng(hash_seed(config.seed, "temporal-init"));
    net.layers.resize(config.modalities.size());
    Eigen::Index fused_dim = 0;
    for (size_t m = 0; m < config.modalities.size(); ++m) {
        EncoderLayerConfig lc;
        lc.dim = static_cast<int>(dims[m]);
        lc.heads = config.heads;
        lc.ff_dim = config.ff_dim;
        lc.dropout = config.dropout;
        const std::string prefix = std::string(to_string(config.modalities[m])) + ".enc.";
        net.layers[m].init(lc, prefix, rng);
        fused_dim = (config.fusion.method == FusionMethod::concat) ? fused_dim + dims[m]
                                                                   : dims[m];
    }
    net.head_w.init("head.w", fused_dim, kNumCategories);
    net.head_w.value = xavier_init(fused_dim, kNumCategories, rng);
    net.head_b.init("head.b", 1, kNumCategories);
}

TrainedModel train_temporal(const ClassifierConfig& config, const WindowDataset& train,
                            const WindowDataset* val, const LossConfig& loss_cfg) {
    if (train.windows.empty()) throw TrainingError("empty training set");
    for (const auto& w : train.windows) {
        if (w.modality_features.size() != config.modalities.size()) {
            throw TrainingError("window modality count does not match config");
        }
    }
    std::vector<Eigen::Index> dims;
    for (size_t m = 0; m < config.modalities.size(); ++m) {
        dims.push_back(train.windows.front().modality_features[m].cols());
    }

    TemporalNet net;
    init_temporal_net(net, config, dims);
    const Eigen::VectorXd weights =
        config.use_class_weights ? loss_cfg.weights : Eigen::VectorXd::Ones(kNumCategories);
    AdamOptimizer adam(config.learning_rate);
    Rng rng(hash_seed(config.seed, "temporal-train"));

    TrainedModel model;
    model.config = config;
    std::map<std::string, Eigen::MatrixXd> best_tensors;
    double best_val = -1.0;

    std::vector<size_t> order(train.windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(config.batch_size)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<const WindowSequence*> batch;
            Eigen::MatrixXd targets(static_cast<Eigen::Index>(end - start), kNumCategories);
            targets.setZero();
            for (size_t i = start; i < end; ++i) batch.push_back(&train.windows[order[i]]);
            for (size_t i = 0; i < batch.size(); ++i) {
                for (int id : batch[i]->labels.ids()) {
                    targets(static_cast<Eigen::Index>(i), id) = 1.0;
                }
            }
            BatchCache cache;
            const Eigen::MatrixXd logits =
                temporal_forward(net, config, batch, /*train=*/true, rng, &cache);
            Eigen::MatrixXd dlogits;
            const double loss = bce_with_logits(logits, targets, weights, &dlogits);
            check_finite_loss(loss, epoch);
            for (Param* p : net.params()) p->zero_grad();
            temporal_backward(net, config, cache, dlogits);
            adam.step(net.params());
            epoch_loss += loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        TrainingLogEntry entry{epoch, epoch_loss / static_cast<double>(seen), -1.0};
        if (val != nullptr && !val->windows.empty() && config.val_every > 0 &&
            epoch % config.val_every == 0) {
            const Eigen::MatrixXd probs =
                temporal_clip_probs(net, config, *val, config.batch_size);
            entry.val_macro_f1 = macro_f1_from_probs(probs, val->clip_truth);
            if (entry.val_macro_f1 > best_val) {
                best_val = entry.val_macro_f1;
                best_tensors.clear();
                for (Param* p : net.params()) best_tensors[p->name] = p->value;
            }
        }
        model.log.push_back(entry);
    }

    if (!best_tensors.empty()) {
        model.tensors = std::move(best_tensors);
    } else {
        for (Param* p : net.params()) model.tensors[p->name] = p->value;
    }
    return model;
}

TemporalNet rebuild_temporal(const TrainedModel& model,
                             const std::vector<Eigen::Index>& dims) {
    TemporalNet net;
    net.layers.resize(model.config.modalities.size());
    Eigen::Index fused_dim = 0;
    for (size_t m = 0; m < model.config.modalities.size(); ++m) {
        EncoderLayerConfig lc;
        lc.dim = static_cast<int>(dims[m]);
        lc.heads = model.config.heads;
        lc.ff_dim = model.config.ff_dim;
        lc.dropout = model.config.dropout;
        const std::string prefix =
            std::string(to_string(model.config.modalities[m])) + ".enc.";
        net.layers[m].import_tensors(model.tensors, prefix, lc);
        fused_dim = (model.config.fusion.method == FusionMethod::concat)
                        ? fused_dim + dims[m]
                        : dims[m];
    }
    auto it_w = model.tensors.find("head.w");
    auto it_b = model.tensors.find("head.b");
    if (it_w == model.tensors.end() || it_b == model.tensors.end()) {
        throw FormatError("checkpoint missing head tensors");
    }
    net.head_w.init("head.w", it_w->second.rows(), it_w->second.cols());
    net.head_w.value = it_w->second;
    net.head_b.init("head.b", 1, it_b->second.cols());
    net.head_b.value = it_b->second;
    return net;
}

std::vector<Eigen::Index> window_dims(const TrainedModel& model) {
    std::vector<Eigen::Index> dims;
    for (Modality m : model.config.modalities) {
        const std::string key = std::string(to_string(m)) + ".enc.wq";
        auto it = model.tensors.find(key);
        if (it == model.tensors.end()) throw FormatError("checkpoint missing " + key);
        dims.push_back(it->second.rows());
    }
    return dims;
}

}  // namespace

TrainedModel train_classifier(const ClassifierConfig& config, const TrainingData& train,
                              const TrainingData& val, const LossConfig& loss) {
    if (config.kind == ClassifierKind::temporal) {
        if (train.windows == nullptr) {
            throw TrainingError("temporal training requires window data");
        }
        return train_temporal(config, *train.windows, val.windows, loss);
    }
    if (train.clips == nullptr) {
        throw TrainingError("linear/mlp training requires clip-level data");
    }
    return train_flat(config, *train.clips, loss);
}

// ---- prediction ------------------------------------------------------------------

namespace {

FlatNet rebuild_flat(const TrainedModel& model) {
    FlatNet net;
    const bool mlp = model.config.kind == ClassifierKind::mlp;
    net.has_hidden = mlp;
    auto need = [&](const std::string& name) {
        auto it = model.tensors.find(name);
        if (it == model.tensors.end()) throw FormatError("checkpoint missing " + name);
        return it->second;
    };
    if (mlp) {
        net.w0.init("mlp.w0", 1, 1);
        net.w0.value = need("mlp.w0");
        net.b0.init("mlp.b0", 1, 1);
        net.b0.value = need("mlp.b0");
        net.w1.init("mlp.w1", 1, 1);
        net.w1.value = need("mlp.w1");
        net.b1.init("mlp.b1", 1, 1);
        net.b1.value = need("mlp.b1");
    } else {
        net.w0.init("linear.w", 1, 1);
        net.w0.value = need("linear.w");
        net.b0.init("linear.b", 1, 1);
        net.b0.value = need("linear.b");
    }
    return net;
}

}  // namespace

Eigen::MatrixXd predict_probabilities(const TrainedModel& model, const ClipDataset& data) {
    if (model.config.kind == ClassifierKind::temporal) {
        throw std::invalid_argument("temporal model needs window data");
    }
    if (data.modality_features.size() != model.config.modalities.size()) {
        throw std::invalid_argument("modality count mismatch");
    }
    FlatNet net = rebuild_flat(model);
    const Eigen::MatrixXd x = fuse_rows(model.config.fusion, data.modality_features);
    return sigmoid_matrix(flat_forward(net, x, nullptr));
}

Eigen::MatrixXd predict_probabilities(const TrainedModel& model, const WindowDataset& data) {
    if (model.config.kind != ClassifierKind::temporal) {
        throw std::invalid_argument("flat model needs clip-level data");
    }
    if (!data.windows.empty() &&
        data.windows.front().modality_features.size() != model.config.modalities.size()) {
        throw std::invalid_argument("modality count mismatch");
    }
    TemporalNet net = rebuild_temporal(model, window_dims(model));
    return temporal_clip_probs(net, model.config, data, model.config.batch_size);
}

namespace {

ClipPrediction to_prediction(const Eigen::VectorXd& probs) {
    ClipPrediction out;
    out.probabilities = probs;
    for (int c = 0; c < kNumCategories; ++c) {
        if (probs(c) >= kDecisionThreshold) out.labels.add(c);
    }
    return out;
}

}  // namespace

ClipPrediction predict_clip(const TrainedModel& model,
                            const std::vector<Eigen::VectorXd>& modality_vectors) {
    ClipDataset ds;
    ds.clip_ids = {"clip"};
    for (const auto& v : modality_vectors) {
        Eigen::MatrixXd m(1, v.size());
        m.row(0) = v.transpose();
        ds.modality_features.push_back(std::move(m));
    }
    ds.truth = Eigen::MatrixXd::Zero(1, kNumCategories);
    const Eigen::MatrixXd probs = predict_probabilities(model, ds);
    return to_prediction(probs.row(0).transpose());
}

ClipPrediction predict_clip(const TrainedModel& model,
                            const std::vector<WindowSequence>& clip_windows) {
    if (clip_windows.empty()) throw std::invalid_argument("predict_clip: no windows");
    WindowDataset ds;
    ds.windows = clip_windows;
    for (auto& w : ds.windows) w.clip_id = "clip";
    ds.clip_ids = {"clip"};
    ds.clip_truth = Eigen::MatrixXd::Zero(1, kNumCategories);
    const Eigen::MatrixXd probs = predict_probabilities(model, ds);
    return to_prediction(probs.row(0).transpose());
}

namespace {

PredictionMatrix matrix_from_probs(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& truth,
                                   const std::vector<std::string>& clip_ids) {
    PredictionMatrix pm;
    pm.clip_ids = clip_ids;
    pm.truth.resize(static_cast<size_t>(truth.rows()));
    pm.pred.resize(static_cast<size_t>(truth.rows()));
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        for (int c = 0; c < kNumCategories; ++c) {
            pm.truth[static_cast<size_t>(i)][static_cast<size_t>(c)] = truth(i, c) > 0.5;
            pm.pred[static_cast<size_t>(i)][static_cast<size_t>(c)] =
                probs(i, c) >= kDecisionThreshold;
        }
    }
    return pm;
}

}  // namespace

PredictionMatrix prediction_matrix(const TrainedModel& model, const ClipDataset& data) {
    return matrix_from_probs(predict_probabilities(model, data), data.truth, data.clip_ids);
}

PredictionMatrix prediction_matrix(const TrainedModel& model, const WindowDataset& data) {
    return matrix_from_probs(predict_probabilities(model, data), data.clip_truth,
                             data.clip_ids);
}

// ---- checkpoint io -----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'A', 'V', 'C', 'P'};
constexpr uint8_t kCkptVersion = 0x01;

void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

uint32_t get_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

std::string checkpoint_bytes(const TrainedModel& model) {
    std::string out;
    out.append(kCkptMagic, 4);
    out.push_back(static_cast<char>(kCkptVersion));
    nlohmann::ordered_json header;
    header["config"] = nlohmann::ordered_json::parse(model.config.to_json());
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, value] : model.tensors) {
        tensors.push_back({{"name", name}, {"rows", value.rows()}, {"cols", value.cols()}});
    }
    header["tensors"] = tensors;
    nlohmann::ordered_json log = nlohmann::ordered_json::array();
    for (const auto& e : model.log) {
        nlohmann::ordered_json entry;
        entry["epoch"] = e.epoch;
        entry["loss"] = e.loss;
        if (e.val_macro_f1 >= 0.0) entry["val_macro_f1"] = e.val_macro_f1;
        log.push_back(entry);
    }
    header["training_log"] = log;
    out += header.dump();
    out += '\n';
    for (const auto& [name, value] : model.tensors) {
        for (Eigen::Index i = 0; i < value.rows(); ++i) {
            for (Eigen::Index j = 0; j < value.cols(); ++j) {
                const auto f = static_cast<float>(value(i, j));
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32le(out, bits);
            }
        }
    }
    put_u32le(out, crc32_bytes(out.data(), out.size()));
    return out;
}

void save_checkpoint(const TrainedModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    const std::string bytes = checkpoint_bytes(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainedModel parse_checkpoint(const std::string& bytes) {
    const auto* p = reinterpret_cast<const uint8_t*>(bytes.data());
    const size_t n = bytes.size();
    if (n < 5 || std::memcmp(p, kCkptMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    if (p[4] != kCkptVersion) throw VersionError("checkpoint: unsupported version");
    const size_t newline = bytes.find('\n', 5);
    if (newline == std::string::npos) throw TruncationError("checkpoint: missing header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(5, newline - 5));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    TrainedModel model;
    model.config = ClassifierConfig::from_json(header.at("config").dump());
    for (const auto& e : header.at("training_log")) {
        TrainingLogEntry entry;
        entry.epoch = e.at("epoch").get<int>();
        entry.loss = e.at("loss").get<double>();
        entry.val_macro_f1 = e.contains("val_macro_f1") ? e["val_macro_f1"].get<double>() : -1.0;
        model.log.push_back(entry);
    }
    size_t off = newline + 1;
    for (const auto& t : header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        if (rows < 0 || cols < 0) throw FormatError("checkpoint: negative tensor shape");
        const size_t count = static_cast<size_t>(rows) * static_cast<size_t>(cols);
        if (off + count * 4 + 4 > n) throw TruncationError("checkpoint: truncated payload");
        Eigen::MatrixXd value(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                const uint32_t bits = get_u32le(p + off);
                float f;
                std::memcpy(&f, &bits, 4);
                value(i, j) = static_cast<double>(f);
                off += 4;
            }
        }
        model.tensors[name] = std::move(value);
    }
    if (off + 4 != n) throw TruncationError("checkpoint: trailing bytes");
    const uint32_t stored = get_u32le(p + off);
    if (stored != crc32_bytes(bytes.data(), off)) {
        throw ChecksumError("checkpoint: checksum mismatch");
    }
    return model;
}

TrainedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace avbr
