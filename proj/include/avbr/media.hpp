#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace avbr {

struct ClipRecord;

// Packed RGB8 raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;

    bool empty() const { return rgb.empty(); }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

struct FrameSequence {
    std::vector<Image> frames;
    std::vector<double> timestamps_s;  // strictly increasing
};

struct CompositeImage {
    Image image;  // 3w x 3h, cells filled row-major
    std::array<int, 9> source_indices{};
};

struct SegmentSpan {
    int index = 0;  // 1-based
    double start_s = 0.0;
    double end_s = 0.0;
    bool padded = false;
};

// Endpoint-inclusive even spacing over n frames with round-half-up ties.
// Duplicates appear when n < 9. Throws std::invalid_argument for n < 1.
std::array<int, 9> select_grid_frames(int n);

// Tiles the indexed frames into a 3x3 grid. Frames must share dimensions.
CompositeImage compose_grid(const FrameSequence& frames, const std::array<int, 9>& indices);

// Non-overlapping 1-second spans; a final residual >= 0.5 s becomes one
// padded span. Throws std::invalid_argument for duration < 1.0.
std::vector<SegmentSpan> segment_clip(double duration_s);

// Deterministic synthetic frames for a clip (test/mock media path).
FrameSequence synthetic_frames(const std::string& clip_id, double duration_s,
                               int width = 32, int height = 32, double fps = 2.0);

// Binary PPM (P6) writer; lossless and byte-deterministic.
void write_ppm(const Image& img, const std::string& path);
std::string ppm_bytes(const Image& img);

// Pluggable media access. The synthetic resolver is the mandatory mock path;
// real decoders implement the same interface.
class MediaResolver {
public:
    virtual ~MediaResolver() = default;
    virtual FrameSequence frames(const ClipRecord& clip) = 0;
    virtual std::vector<uint8_t> audio_segment(const ClipRecord& clip,
                                               const SegmentSpan& span) = 0;
};

class SyntheticMediaResolver : public MediaResolver {
public:
    explicit SyntheticMediaResolver(uint64_t seed = 0) : seed_(seed) {}
    FrameSequence frames(const ClipRecord& clip) override;
    std::vector<uint8_t> audio_segment(const ClipRecord& clip,
                                       const SegmentSpan& span) override;

private:
    uint64_t seed_;
};

}  // namespace avbr
