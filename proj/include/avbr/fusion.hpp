#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "avbr/features.hpp"
#include "avbr/manifest.hpp"
#include "avbr/taxonomy.hpp"

namespace avbr {

enum class FusionMethod { average, max, concat, weighted };

std::string_view to_string(FusionMethod m);
std::optional<FusionMethod> parse_fusion_method(std::string_view s);

struct FusionSpec {
    FusionMethod method = FusionMethod::average;
    // Per-modality weights in the fixed (audio, visual, speech) order of the
    // active modality subset; used by weighted fusion only.
    std::vector<double> weights;
};

// Parses "average" | "max" | "concat" | "weighted:a=1,v=1,s=2". The modality
// order fixes which weight letter maps to which position.
FusionSpec parse_fusion_spec(const std::string& text, const std::vector<Modality>& order);
std::string to_string(const FusionSpec& spec, const std::vector<Modality>& order);

// Fuses one vector per modality. average/max/weighted require equal dims;
// concat requires only finite inputs. Throws std::invalid_argument on
// dimension mismatch or an empty modality set.
Eigen::VectorXd fuse(const FusionSpec& spec, const std::vector<Eigen::VectorXd>& xs);

inline constexpr int kWindowLength = 10;

struct WindowSequence {
    std::string clip_id;
    int window_index = 0;  // 0-based within the clip
    // One (kWindowLength x dim_m) matrix per modality, padded rows zero.
    std::vector<Eigen::MatrixXd> modality_features;
    std::array<bool, kWindowLength> pad_mask{};  // true = padded position
    LabelMask labels;

    int valid_count() const;
};

// Per-clip segment features for a fixed modality order.
struct ClipSegmentFeatures {
    std::string clip_id;
    // per modality: T x dim matrix (row t-1 = segment t)
    std::vector<Eigen::MatrixXd> segments;
};

// Slices aligned per-segment features into non-overlapping 10-step windows
// starting at t = 1, 11, 21, ...; the final short window is zero-padded.
// Window labels are the union of member segment labels. Throws
// ValidationError naming the clip on modality misalignment.
std::vector<WindowSequence> make_windows(const std::vector<ClipSegmentFeatures>& clips,
                                         const SegmentLabelTable& labels);

// Convenience: gathers aligned segment tables (one per modality) into
// ClipSegmentFeatures for every clip present in all tables.
std::vector<ClipSegmentFeatures> gather_clip_segments(
    const std::vector<const FeatureTable*>& tables, const DatasetManifest& manifest,
    std::optional<Split> split = std::nullopt);

}  // namespace avbr
