#include "avbr/fusion.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "avbr/errors.hpp"

namespace avbr {

std::string_view to_string(FusionMethod m) {
    switch (m) {
        case FusionMethod::average: return "average";
        case FusionMethod::max: return "max";
        case FusionMethod::concat: return "concat";
        case FusionMethod::weighted: return "weighted";
    }
    return "average";
}

std::optional<FusionMethod> parse_fusion_method(std::string_view s) {
    if (s == "average" || s == "avg") return FusionMethod::average;
    if (s == "max") return FusionMethod::max;
    if (s == "concat") return FusionMethod::concat;
    if (s == "weighted") return FusionMethod::weighted;
    return std::nullopt;
}

namespace {

char modality_letter(Modality m) {
    switch (m) {
        case Modality::audio: return 'a';
        case Modality::visual: return 'v';
        case Modality::speech: return 's';
        case Modality::image: return 'i';
    }
    return '?';
}

}  // namespace

FusionSpec parse_fusion_spec(const std::string& text, const std::vector<Modality>& order) {
    FusionSpec spec;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const auto method = parse_fusion_method(head);
    if (!method) throw ConfigError("unknown fusion method \"" + head + "\"");
    spec.method = *method;
    if (spec.method != FusionMethod::weighted) {
        if (colon != std::string::npos) {
            throw ConfigError("fusion \"" + head + "\" takes no weights");
        }
        return spec;
    }
    spec.weights.assign(order.size(), 1.0);
    if (colon == std::string::npos) return spec;  // weighted with uniform weights
    std::istringstream in(text.substr(colon + 1));
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("bad weight token \"" + item + "\"");
        }
        const char letter = item[0];
        double value = 0.0;
        try {
            value = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad weight value in \"" + item + "\"");
        }
        if (value <= 0.0) throw ConfigError("fusion weights must be positive");
        bool matched = false;
        for (size_t i = 0; i < order.size(); ++i) {
            if (modality_letter(order[i]) == letter) {
                spec.weights[i] = value;
                matched = true;
            }
        }
        if (!matched) {
            throw ConfigError(std::string("weight letter '") + letter +
                              "' not in the active modality set");
        }
    }
    return spec;
}

std::string to_string(const FusionSpec& spec, const std::vector<Modality>& order) {
    std::string out(to_string(spec.method));
    if (spec.method != FusionMethod::weighted) return out;
    out += ':';
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) out += ',';
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%c=%g", modality_letter(order[i]),
                      i < spec.weights.size() ? spec.weights[i] : 1.0);
        out += buf;
    }
    return out;
}

Eigen::VectorXd fuse(const FusionSpec& spec, const std::vector<Eigen::VectorXd>& xs) {
    if (xs.empty()) throw std::invalid_argument("fuse: empty modality set");
    const auto m = static_cast<Eigen::Index>(xs.size());
    if (spec.method == FusionMethod::concat) {
        Eigen::Index total = 0;
        for (const auto& x : xs) total += x.size();
        Eigen::VectorXd out(total);
        Eigen::Index off = 0;
        for (const auto& x : xs) {
            out.segment(off, x.size()) = x;
            off += x.size();
        }
        return out;
    }
    const Eigen::Index dim = xs.front().size();
    for (const auto& x : xs) {
        if (x.size() != dim) throw std::invalid_argument("fuse: dimension mismatch");
    }
    switch (spec.method) {
        case FusionMethod::average: {
            Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
            for (const auto& x : xs) out += x;
            return out / static_cast<double>(m);
        }
        case FusionMethod::max: {
            Eigen::VectorXd out = xs.front();
            for (size_t i = 1; i < xs.size(); ++i) out = out.cwiseMax(xs[i]);
            return out;
        }
        case FusionMethod::weighted: {
            if (spec.weights.size() != xs.size()) {
                throw std::invalid_argument("fuse: weighted needs one weight per modality");
            }
            double total = 0.0;
            Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
            for (size_t i = 0; i < xs.size(); ++i) {
                if (spec.weights[i] <= 0.0) {
                    throw std::invalid_argument("fuse: weights must be positive");
                }
                out += spec.weights[i] * xs[i];
                total += spec.weights[i];
            }
            return out / total;
        }
        case FusionMethod::concat: break;  // handled above
    }
    throw std::logic_error("fuse: unreachable");
}

int WindowSequence::valid_count() const {
    int n = 0;
    for (bool p : pad_mask) n += !p;
    return n;
}

std::vector<WindowSequence> make_windows(const std::vector<ClipSegmentFeatures>& clips,
                                         const SegmentLabelTable& labels) {
    std::vector<WindowSequence> windows;
    for (const auto& clip : clips) {
        if (clip.segments.empty()) {
            throw ValidationError("clip " + clip.clip_id + ": no modality features");
        }
        const Eigen::Index t_count = clip.segments.front().rows();
        for (const auto& seg : clip.segments) {
            if (seg.rows() != t_count) {
                throw ValidationError("clip " + clip.clip_id +
                                      ": modality segment counts misaligned");
            }
        }
        if (t_count == 0) {
            throw ValidationError("clip " + clip.clip_id + ": zero segments");
        }
        const int window_count =
            static_cast<int>((t_count + kWindowLength - 1) / kWindowLength);
        for (int w = 0; w < window_count; ++w) {
            WindowSequence win;
            win.clip_id = clip.clip_id;
            win.window_index = w;
            const Eigen::Index start = static_cast<Eigen::Index>(w) * kWindowLength;
            const Eigen::Index real =
                std::min<Eigen::Index>(kWindowLength, t_count - start);
            for (const auto& seg : clip.segments) {
                Eigen::MatrixXd block = Eigen::MatrixXd::Zero(kWindowLength, seg.cols());
                block.topRows(real) = seg.middleRows(start, real);
                win.modality_features.push_back(std::move(block));
            }
            for (int t = 0; t < kWindowLength; ++t) win.pad_mask[static_cast<size_t>(t)] = t >= real;
            for (Eigen::Index t = start; t < start + real; ++t) {
                win.labels = win.labels | labels.at(clip.clip_id, static_cast<int>(t) + 1);
            }
            windows.push_back(std::move(win));
        }
    }
    return windows;
}

std::vector<ClipSegmentFeatures> gather_clip_segments(
    const std::vector<const FeatureTable*>& tables, const DatasetManifest& manifest,
    std::optional<Split> split) {
    std::vector<ClipSegmentFeatures> out;
    for (const auto& clip : manifest.clips) {
        if (split && clip.split != *split) continue;
        ClipSegmentFeatures csf;
        csf.clip_id = clip.clip_id;
        bool complete = true;
        for (const FeatureTable* table : tables) {
            const auto segs = table->clip_segments(clip.clip_id);
            if (segs.empty()) {
                complete = false;
                break;
            }
            Eigen::MatrixXd mat(static_cast<Eigen::Index>(segs.size()), table->dim);
            for (size_t t = 0; t < segs.size(); ++t) {
                for (int d = 0; d < table->dim; ++d) {
                    mat(static_cast<Eigen::Index>(t), d) =
                        static_cast<double>(segs[t]->values[static_cast<size_t>(d)]);
                }
            }
            csf.segments.push_back(std::move(mat));
        }
        if (complete) out.push_back(std::move(csf));
    }
    return out;
}

}  // namespace avbr
