#include "avbr/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "avbr/digest.hpp"
#include "avbr/errors.hpp"
#include "avbr/parallel.hpp"
#include "avbr/rng.hpp"
#include "json.hpp"

namespace avbr {

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::audio: return "audio";
        case Modality::visual: return "visual";
        case Modality::speech: return "speech";
        case Modality::image: return "image";
    }
    return "visual";
}

std::optional<Modality> parse_modality(std::string_view s) {
    if (s == "audio" || s == "a") return Modality::audio;
    if (s == "visual" || s == "v" || s == "video") return Modality::visual;
    if (s == "speech" || s == "s") return Modality::speech;
    if (s == "image" || s == "i") return Modality::image;
    return std::nullopt;
}

std::string_view to_string(Level l) { return l == Level::clip ? "clip" : "segment"; }

std::optional<Level> parse_level(std::string_view s) {
    if (s == "clip") return Level::clip;
    if (s == "segment") return Level::segment;
    return std::nullopt;
}

const FeatureVector* FeatureTable::find(std::string_view clip_id, int segment_index) const {
    for (const auto& e : entries) {
        if (e.segment_index == segment_index && e.clip_id == clip_id) return &e;
    }
    return nullptr;
}

std::vector<const FeatureVector*> FeatureTable::clip_segments(std::string_view clip_id) const {
    std::vector<const FeatureVector*> out;
    for (const auto& e : entries) {
        if (e.clip_id == clip_id) out.push_back(&e);
    }
    std::sort(out.begin(), out.end(), [](const FeatureVector* a, const FeatureVector* b) {
        return a->segment_index < b->segment_index;
    });
    return out;
}

void FeatureTable::validate() const {
    std::set<std::pair<std::string_view, int>> keys;
    std::map<std::string_view, std::vector<int>> per_clip;
    for (const auto& e : entries) {
        if (static_cast<int>(e.values.size()) != dim) {
            throw ValidationError("feature " + e.clip_id + ": dim mismatch");
        }
        for (float v : e.values) {
            if (!std::isfinite(v)) {
                throw ValidationError("feature " + e.clip_id + ": non-finite value");
            }
        }
        if (level == Level::clip && e.segment_index != -1) {
            throw ValidationError("feature " + e.clip_id +
                                  ": clip-level entry with segment index");
        }
        if (level == Level::segment && e.segment_index < 1) {
            throw ValidationError("feature " + e.clip_id +
                                  ": segment-level entry without segment index");
        }
        if (!keys.insert({e.clip_id, e.segment_index}).second) {
            throw ValidationError("duplicate feature key " + e.clip_id);
        }
        if (level == Level::segment) per_clip[e.clip_id].push_back(e.segment_index);
    }
    for (auto& [clip, idxs] : per_clip) {
        std::sort(idxs.begin(), idxs.end());
        for (size_t i = 0; i < idxs.size(); ++i) {
            if (idxs[i] != static_cast<int>(i) + 1) {
                throw ValidationError("clip " + std::string(clip) +
                                      ": segment indices not contiguous from 1");
            }
        }
    }
}

// ---- mock encoders ----------------------------------------------------------

namespace {

class MockEncoder final : public EncoderAdapter {
public:
    MockEncoder(uint64_t seed, Modality modality, Level level, int dim,
                MockEncoderOptions options)
        : seed_(seed), modality_(modality), level_(level), dim_(dim), options_(options) {}

    std::string name() const override {
        return std::string("mock-") + std::string(to_string(modality_)) + "-" +
               std::string(to_string(level_));
    }
    Modality modality() const override { return modality_; }
    Level level() const override { return level_; }
    int dim() const override { return dim_; }

    std::vector<float> encode(const EncodeRequest& req) override {
        const std::string& clip_id = req.clip->clip_id;
        Rng rng(stream_seed(clip_id, req.segment_index));
        std::vector<float> out(static_cast<size_t>(dim_));
        if (options_.mode == MockEncoderOptions::Mode::hash) {
            for (auto& v : out) v = static_cast<float>(rng.normal());
            return out;
        }
        // Separable: sum the centroids of the labels this encoder carries,
        // normalize, then add seeded noise.
        std::vector<double> acc(static_cast<size_t>(dim_), 0.0);
        bool any = false;
        for (int id : req.clip->labels.ids()) {
            if (!options_.label_subset.empty() && !options_.label_subset.contains(id)) {
                continue;
            }
            const auto& c = centroid(id);
            for (int i = 0; i < dim_; ++i) acc[static_cast<size_t>(i)] += c[static_cast<size_t>(i)];
            any = true;
        }
        if (any) {
            double norm = 0.0;
            for (double v : acc) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 0) {
                for (auto& v : acc) v /= norm;
            }
        }
        for (int i = 0; i < dim_; ++i) {
            out[static_cast<size_t>(i)] = static_cast<float>(
                acc[static_cast<size_t>(i)] + options_.noise_scale * rng.normal());
        }
        return out;
    }

    const std::vector<double>& centroid(int id) {
        auto it = centroids_.find(id);
        if (it != centroids_.end()) return it->second;
        Rng rng(hash_mix(hash_seed(seed_, "centroid"), static_cast<uint64_t>(id)));
        std::vector<double> c(static_cast<size_t>(dim_));
        double norm = 0.0;
        for (auto& v : c) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : c) v /= norm;
        return centroids_.emplace(id, std::move(c)).first->second;
    }

private:
    uint64_t stream_seed(const std::string& clip_id, int segment_index) const {
        uint64_t h = hash_seed(seed_, to_string(modality_));
        h = hash_mix(h, to_string(level_));
        h = hash_mix(h, clip_id);
        h = hash_mix(h, static_cast<uint64_t>(segment_index + 1));
        return h;
    }

    uint64_t seed_;
    Modality modality_;
    Level level_;
    int dim_;
    MockEncoderOptions options_;
    std::map<int, std::vector<double>> centroids_;
};

}  // namespace

std::unique_ptr<EncoderAdapter> mock_encoder(uint64_t seed, Modality modality, Level level,
                                             int dim, MockEncoderOptions options) {
    if (dim < 1) throw std::invalid_argument("mock_encoder: dim must be >= 1");
    auto enc = std::make_unique<MockEncoder>(seed, modality, level, dim, options);
    // Pre-build centroids so concurrent encode() calls never mutate shared state.
    if (options.mode == MockEncoderOptions::Mode::separable) {
        for (int id = 0; id < kNumCategories; ++id) enc->centroid(id);
    }
    return enc;
}

// ---- extraction --------------------------------------------------------------

ExtractionResult extract_features(const DatasetManifest& manifest, EncoderAdapter& adapter,
                                  MediaResolver& media, int workers) {
    ExtractionResult result;
    result.table.modality = adapter.modality();
    result.table.level = adapter.level();
    result.table.dim = adapter.dim();

    struct ClipOutcome {
        std::vector<FeatureVector> vectors;
        std::optional<std::string> failure;
    };
    std::vector<ClipOutcome> outcomes(manifest.clips.size());

    parallel_for(manifest.clips.size(), workers, [&](size_t i) {
        const ClipRecord& clip = manifest.clips[i];
        ClipOutcome& out = outcomes[i];
        try {
            if (adapter.level() == Level::clip) {
                EncodeRequest req{&clip, -1, nullptr, &media};
                out.vectors.push_back({clip.clip_id, -1, adapter.encode(req)});
            } else {
                const auto spans = segment_clip(clip.duration());
                for (const auto& span : spans) {
                    EncodeRequest req{&clip, span.index, &span, &media};
                    out.vectors.push_back({clip.clip_id, span.index, adapter.encode(req)});
                }
            }
        } catch (const std::exception& e) {
            out.vectors.clear();
            out.failure = e.what();
        }
    });

    for (size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].failure) {
            result.failures.push_back({manifest.clips[i].clip_id, *outcomes[i].failure});
            continue;
        }
        for (auto& v : outcomes[i].vectors) result.table.entries.push_back(std::move(v));
    }
    result.table.validate();
    return result;
}

std::vector<float> pool_time(const std::vector<std::vector<float>>& frames) {
    if (frames.empty()) throw std::invalid_argument("pool_time: empty sequence");
    const size_t dim = frames.front().size();
    std::vector<double> acc(dim, 0.0);
    for (const auto& f : frames) {
        if (f.size() != dim) throw std::invalid_argument("pool_time: dimension mismatch");
        for (size_t i = 0; i < dim; ++i) acc[i] += f[i];
    }
    std::vector<float> out(dim);
    for (size_t i = 0; i < dim; ++i) {
        out[i] = static_cast<float>(acc[i] / static_cast<double>(frames.size()));
    }
    return out;
}

// ---- cache --------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', 'V', 'F', 'C'};
constexpr uint8_t kVersion = 0x01;

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

void put_f32le(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

float get_f32le(const uint8_t* p) {
    const uint32_t bits = get_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

std::string cache_bytes(const FeatureTable& table) {
    table.validate();
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    nlohmann::ordered_json header;
    header["modality"] = std::string(to_string(table.modality));
    header["level"] = std::string(to_string(table.level));
    header["dim"] = table.dim;
    header["count"] = table.entries.size();
    header["dtype"] = "f32le";
    out += header.dump();
    out += '\n';
    for (const auto& e : table.entries) {
        put_u32le(out, static_cast<uint32_t>(e.clip_id.size()));
        out += e.clip_id;
        put_u32le(out, static_cast<uint32_t>(e.segment_index));
    }
    for (const auto& e : table.entries) {
        for (float v : e.values) put_f32le(out, v);
    }
    put_u32le(out, crc32_bytes(out.data(), out.size()));
    return out;
}

void write_cache(const FeatureTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write feature cache " + path);
    const std::string bytes = cache_bytes(table);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

FeatureTable parse_cache(const std::string& bytes) {
    const auto* p = reinterpret_cast<const uint8_t*>(bytes.data());
    const size_t n = bytes.size();
    if (n < 5 || std::memcmp(p, kMagic, 4) != 0) {
        throw FormatError("feature cache: bad magic");
    }
    if (p[4] != kVersion) {
        throw VersionError("feature cache: unsupported version " + std::to_string(p[4]));
    }
    const size_t header_start = 5;
    const size_t newline = bytes.find('\n', header_start);
    if (newline == std::string::npos) throw TruncationError("feature cache: missing header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(header_start, newline - header_start));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("feature cache: malformed header: ") + e.what());
    }
    FeatureTable table;
    try {
        const auto modality = parse_modality(header.at("modality").get<std::string>());
        const auto level = parse_level(header.at("level").get<std::string>());
        if (!modality || !level || header.at("dtype").get<std::string>() != "f32le") {
            throw FormatError("feature cache: unknown modality/level/dtype");
        }
        table.modality = *modality;
        table.level = *level;
        table.dim = header.at("dim").get<int>();
        table.entries.resize(header.at("count").get<size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("feature cache: malformed header: ") + e.what());
    }
    if (table.dim < 0) throw FormatError("feature cache: negative dim");

    size_t off = newline + 1;
    auto need = [&](size_t k, const char* what) {
        if (off + k + 4 > n) {  // always leave room for the trailing CRC
            throw TruncationError(std::string("feature cache: truncated ") + what);
        }
    };
    for (auto& e : table.entries) {
        need(4, "index");
        const uint32_t len = get_u32le(p + off);
        off += 4;
        need(len, "index");
        e.clip_id.assign(bytes, off, len);
        off += len;
        need(4, "index");
        e.segment_index = static_cast<int32_t>(get_u32le(p + off));
        off += 4;
    }
    for (auto& e : table.entries) {
        need(static_cast<size_t>(table.dim) * 4, "payload");
        e.values.resize(static_cast<size_t>(table.dim));
        for (int i = 0; i < table.dim; ++i) {
            e.values[static_cast<size_t>(i)] = get_f32le(p + off);
            off += 4;
        }
    }
    if (off + 4 != n) throw TruncationError("feature cache: trailing bytes");
    const uint32_t stored = get_u32le(p + off);
    const uint32_t computed = crc32_bytes(bytes.data(), off);
    if (stored != computed) throw ChecksumError("feature cache: checksum mismatch");
    table.validate();
    return table;
}

FeatureTable read_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open feature cache " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_cache(ss.str());
}

}  // namespace avbr
