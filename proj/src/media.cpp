#include "avbr/media.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "avbr/errors.hpp"
#include "avbr/manifest.hpp"
#include "avbr/rng.hpp"

namespace avbr {

std::array<int, 9> select_grid_frames(int n) {
    if (n < 1) throw std::invalid_argument("select_grid_frames: frame count must be >= 1");
    std::array<int, 9> out{};
    for (int k = 0; k < 9; ++k) {
        // round_half_up(k*(n-1)/8) in exact integer arithmetic
        const int64_t num = 2LL * k * (n - 1) + 8;
        out[static_cast<size_t>(k)] = static_cast<int>(num / 16);
    }
    return out;
}

CompositeImage compose_grid(const FrameSequence& frames, const std::array<int, 9>& indices) {
    if (frames.frames.empty()) throw std::invalid_argument("compose_grid: no frames");
    const int w = frames.frames.front().width;
    const int h = frames.frames.front().height;
    for (const auto& f : frames.frames) {
        if (f.width != w || f.height != h) {
            throw std::invalid_argument("compose_grid: frames must share dimensions");
        }
    }
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(frames.frames.size())) {
            throw std::out_of_range("compose_grid: frame index " + std::to_string(idx) +
                                    " out of range");
        }
    }
    CompositeImage out;
    out.source_indices = indices;
    out.image.width = 3 * w;
    out.image.height = 3 * h;
    out.image.rgb.assign(out.image.pixel_count() * 3, 0);
    const size_t src_stride = static_cast<size_t>(w) * 3;
    const size_t dst_stride = static_cast<size_t>(out.image.width) * 3;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            const Image& src = frames.frames[static_cast<size_t>(indices[3 * r + c])];
            for (int y = 0; y < h; ++y) {
                const size_t dst_off =
                    (static_cast<size_t>(r) * h + y) * dst_stride + static_cast<size_t>(c) * src_stride;
                std::memcpy(out.image.rgb.data() + dst_off,
                            src.rgb.data() + static_cast<size_t>(y) * src_stride, src_stride);
            }
        }
    }
    return out;
}

std::vector<SegmentSpan> segment_clip(double duration_s) {
    if (duration_s < 1.0) {
        throw std::invalid_argument("segment_clip: duration must be >= 1.0 s");
    }
    std::vector<SegmentSpan> spans;
    const int full = static_cast<int>(std::floor(duration_s));
    for (int t = 0; t < full; ++t) {
        spans.push_back({t + 1, static_cast<double>(t), static_cast<double>(t + 1), false});
    }
    const double residual = duration_s - full;
    if (residual >= 0.5) {
        spans.push_back({full + 1, static_cast<double>(full), duration_s, true});
    }
    return spans;
}

FrameSequence synthetic_frames(const std::string& clip_id, double duration_s, int width,
                               int height, double fps) {
    FrameSequence seq;
    const int n = std::max(1, static_cast<int>(std::floor(duration_s * fps)));
    Rng rng(hash_seed(hash_mix(0xf5a3u, clip_id), "frames"));
    const uint8_t base_r = static_cast<uint8_t>(rng.below(256));
    const uint8_t base_g = static_cast<uint8_t>(rng.below(256));
    const uint8_t base_b = static_cast<uint8_t>(rng.below(256));
    for (int i = 0; i < n; ++i) {
        Image img;
        img.width = width;
        img.height = height;
        img.rgb.resize(static_cast<size_t>(width) * height * 3);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const size_t off = (static_cast<size_t>(y) * width + x) * 3;
                img.rgb[off] = static_cast<uint8_t>(base_r + 7 * i + x);
                img.rgb[off + 1] = static_cast<uint8_t>(base_g + 11 * i + y);
                img.rgb[off + 2] = static_cast<uint8_t>(base_b + 13 * i + x + y);
            }
        }
        seq.frames.push_back(std::move(img));
        seq.timestamps_s.push_back(i / fps);
    }
    return seq;
}

std::string ppm_bytes(const Image& img) {
    std::ostringstream out;
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
    return out.str();
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image " + path);
    const std::string bytes = ppm_bytes(img);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

FrameSequence SyntheticMediaResolver::frames(const ClipRecord& clip) {
    return synthetic_frames(clip.clip_id, clip.duration());
}

std::vector<uint8_t> SyntheticMediaResolver::audio_segment(const ClipRecord& clip,
                                                           const SegmentSpan& span) {
    Rng rng(hash_seed(hash_mix(seed_, clip.clip_id), "audio") ^
            static_cast<uint64_t>(span.index));
    std::vector<uint8_t> bytes(256);
    for (auto& b : bytes) b = static_cast<uint8_t>(rng.below(256));
    return bytes;
}

}  // namespace avbr
