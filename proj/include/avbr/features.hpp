#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avbr/manifest.hpp"
#include "avbr/media.hpp"
#include "avbr/taxonomy.hpp"

namespace avbr {

enum class Modality { audio, visual, speech, image };
enum class Level { clip, segment };

std::string_view to_string(Modality m);
std::optional<Modality> parse_modality(std::string_view s);
std::string_view to_string(Level l);
std::optional<Level> parse_level(std::string_view s);

struct FeatureVector {
    std::string clip_id;
    int segment_index = -1;  // -1 for clip level
    std::vector<float> values;
};

// Uniform (modality, level, dim) collection keyed by (clip_id, segment_index).
struct FeatureTable {
    Modality modality = Modality::visual;
    Level level = Level::clip;
    int dim = 0;
    std::vector<FeatureVector> entries;  // manifest order; segments contiguous from 1

    const FeatureVector* find(std::string_view clip_id, int segment_index = -1) const;
    std::vector<const FeatureVector*> clip_segments(std::string_view clip_id) const;
    // Validates key uniqueness, dims, and per-clip segment contiguity.
    void validate() const;
};

struct EncodeRequest {
    const ClipRecord* clip = nullptr;
    int segment_index = -1;                 // -1 for clip level
    const SegmentSpan* span = nullptr;      // segment level only
    MediaResolver* media = nullptr;
};

class EncoderAdapter {
public:
    virtual ~EncoderAdapter() = default;
    virtual std::string name() const = 0;
    virtual Modality modality() const = 0;
    virtual Level level() const = 0;
    virtual int dim() const = 0;
    // Deterministic for identical input bytes.
    virtual std::vector<float> encode(const EncodeRequest& req) = 0;
};

// ---- mock encoders ----------------------------------------------------------

struct MockEncoderOptions {
    enum class Mode { hash, separable } mode = Mode::hash;
    double noise_scale = 0.05;
    // Empty mask = encoder carries signal for every category. Otherwise only
    // the masked categories are encoded; other labels look like noise.
    LabelMask label_subset;
};

// Pure hash-seeded adapter; in separable mode vectors sit near per-label
// centroids so classifiers can provably fit them.
std::unique_ptr<EncoderAdapter> mock_encoder(uint64_t seed, Modality modality, Level level,
                                             int dim, MockEncoderOptions options = {});

// ---- extraction ------------------------------------------------------------

struct ClipFailure {
    std::string clip_id;
    std::string reason;
};

struct ExtractionResult {
    FeatureTable table;
    std::vector<ClipFailure> failures;  // recorded, not thrown
};

ExtractionResult extract_features(const DatasetManifest& manifest, EncoderAdapter& adapter,
                                  MediaResolver& media, int workers = 4);

// Element-wise mean over a non-empty sequence of uniform-length vectors.
std::vector<float> pool_time(const std::vector<std::vector<float>>& frames);

// ---- cache ------------------------------------------------------------------

// Feature cache container: "AVFC" magic, version byte, one-line JSON header,
// an index of (clip_id, segment_index) records, f32le payload, CRC-32 over
// all preceding bytes.
void write_cache(const FeatureTable& table, const std::string& path);
FeatureTable read_cache(const std::string& path);
std::string cache_bytes(const FeatureTable& table);
FeatureTable parse_cache(const std::string& bytes);

}  // namespace avbr
