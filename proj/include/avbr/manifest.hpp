#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avbr/taxonomy.hpp"

namespace avbr {

enum class Split { train, val, test };

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

struct ClipRecord {
    std::string clip_id;
    std::string video_id;
    double start_s = 0.0;
    double end_s = 0.0;
    LabelMask labels;
    Split split = Split::train;

    double duration() const { return end_s - start_s; }
};

struct DatasetManifest {
    std::vector<ClipRecord> clips;  // file order preserved

    const ClipRecord* find(std::string_view clip_id) const;
    std::vector<const ClipRecord*> split_clips(Split s) const;
};

// Enforces all record/manifest invariants; throws ValidationError naming the
// offending clip_id.
void validate_manifest(const DatasetManifest& m);

// JSONL round-trip. load_manifest throws ParseError (line numbers) or
// ValidationError (clip ids); serialization is canonical byte output.
DatasetManifest load_manifest(const std::string& path);
DatasetManifest parse_manifest(const std::string& text);
std::string to_jsonl(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::string& path);

// ---- statistics -----------------------------------------------------------

struct StatisticsExpectations {
    std::optional<std::array<int, kNumCategories>> category_counts;
    std::optional<std::array<int, 3>> split_sizes;  // train, val, test
    std::optional<int> total_clips;
    std::optional<int> label_sum;
    std::optional<double> mean_labels;     // compared after rounding to 2 decimals
    std::optional<double> mean_duration;   // compared after rounding to 2 decimals
    std::optional<double> median_duration; // compared after rounding to 2 decimals
};

// Expectations matching the published dataset statistics.
StatisticsExpectations reference_expectations();

struct StatisticsCheck {
    std::string name;
    std::string expected;
    std::string actual;
    bool pass = false;
};

struct StatisticsReport {
    int total_clips = 0;
    std::array<int, kNumCategories> category_counts{};
    std::array<int, 3> split_sizes{};
    int label_sum = 0;
    double mean_labels = 0.0;
    double mean_duration = 0.0;
    double median_duration = 0.0;
    double min_duration = 0.0;
    double max_duration = 0.0;
    std::vector<StatisticsCheck> checks;
    bool all_pass = false;

    std::string to_json() const;
    std::string to_text() const;
};

StatisticsReport validate_statistics(const DatasetManifest& m,
                                     const StatisticsExpectations& expect);

// ---- segment label propagation ---------------------------------------------

struct SegmentLabelTable {
    // clip_id -> per-segment label sets, index 0 holds segment 1
    std::map<std::string, std::vector<LabelMask>> segments;

    LabelMask at(const std::string& clip_id, int segment_index) const;
};

SegmentLabelTable propagate_segment_labels(const DatasetManifest& m,
                                           const std::map<std::string, int>& segmentation);

// ---- synthesis --------------------------------------------------------------

struct DurationModel {
    enum class Kind { constant, stat_targets } kind = Kind::constant;
    double constant_s = 10.0;
    double mean_s = 25.88;
    double median_s = 10.0;
    double min_s = 1.0;
    double max_s = 887.01;
};

struct SynthesisSpec {
    std::array<int, kNumCategories> category_counts{};
    int total_clips = 0;
    std::array<double, 3> split_fractions{1.0, 0.0, 0.0};
    DurationModel durations;
};

// Spec reproducing the published dataset statistics.
SynthesisSpec reference_synthesis_spec();

// Deterministic synthetic manifest matching the requested counts exactly.
// Throws ConfigError for infeasible specs.
DatasetManifest synthesize_manifest(uint64_t seed, const SynthesisSpec& spec);

}  // namespace avbr
