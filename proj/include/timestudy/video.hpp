// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "timestudy/rng.hpp"
#include "timestudy/tensor.hpp"

namespace ts {

// Decoded clip: T x H x W x 3 interleaved RGB bytes.
struct FrameClip {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    double fps = 0.0;
    std::string source_id;
    std::vector<std::uint8_t> data;

    std::size_t frame_bytes() const { return height * width * 3; }
    std::uint8_t* frame(std::size_t t) { return data.data() + t * frame_bytes(); }
    const std::uint8_t* frame(std::size_t t) const { return data.data() + t * frame_bytes(); }
    double duration_seconds() const { return fps > 0 ? static_cast<double>(frames) / fps : 0.0; }
};

// ---------------------------------------------------------------------------
// .rvf container: "RVF1", u32le width, height, fps_milli, frame_count, then
// frame_count raw H*W*3 RGB frames.
// ---------------------------------------------------------------------------

namespace rvf {

constexpr char kMagic[4] = {'R', 'V', 'F', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct Header {
    std::uint32_t width = 0, height = 0, fps_milli = 0, frame_count = 0;
};

inline Header read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw data_error("rvf: bad magic in " + path);
    Header h;
    h.width = get_u32(is);
    h.height = get_u32(is);
    h.fps_milli = get_u32(is);
    h.frame_count = get_u32(is);
    if (!is) throw data_error("rvf: truncated header in " + path);
    if (h.width == 0 || h.height == 0 || h.fps_milli == 0)
        throw data_error("rvf: invalid header fields in " + path);
    return h;
}

inline void write(const std::string& path, const FrameClip& clip) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("rvf: cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(clip.width));
    put_u32(os, static_cast<std::uint32_t>(clip.height));
    put_u32(os, static_cast<std::uint32_t>(std::llround(clip.fps * 1000.0)));
    put_u32(os, static_cast<std::uint32_t>(clip.frames));
    os.write(reinterpret_cast<const char*>(clip.data.data()),
             static_cast<std::streamsize>(clip.data.size()));
    if (!os) throw data_error("rvf: write failed: " + path);
}

inline Header probe(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("rvf: cannot open: " + path);
    return read_header(is, path);
}

// Read frames [first, first+count); count 0 means all remaining.
inline FrameClip read(const std::string& path, std::size_t first = 0, std::size_t count = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("rvf: cannot open: " + path);
    Header h = read_header(is, path);
    if (first >= h.frame_count) throw data_error("rvf: frame range past end of " + path);
    if (count == 0 || first + count > h.frame_count) count = h.frame_count - first;

    FrameClip clip;
    clip.width = h.width;
    clip.height = h.height;
    clip.fps = h.fps_milli / 1000.0;
    clip.frames = count;
    clip.source_id = path;
    std::size_t fb = clip.frame_bytes();
    clip.data.resize(count * fb);
    is.seekg(static_cast<std::streamoff>(kHeaderBytes + first * fb));
    is.read(reinterpret_cast<char*>(clip.data.data()), static_cast<std::streamsize>(count * fb));
    if (is.gcount() != static_cast<std::streamsize>(count * fb))
        throw data_error("rvf: truncated frame data in " + path);
    return clip;
}

}  // namespace rvf

// Directory of binary PPM ("P6", maxval 255) files, sorted lexicographically;
// fps comes from the caller (manifest).
inline FrameClip read_ppm_dir(const std::string& dir, double fps) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw data_error("ppm: no .ppm files in " + dir);

    FrameClip clip;
    clip.fps = fps;
    clip.source_id = dir;
    for (const auto& f : files) {
        std::ifstream is(f, std::ios::binary);
        if (!is) throw data_error("ppm: cannot open " + f);
        std::string magic;
        std::size_t w = 0, h = 0, maxval = 0;
        is >> magic >> w >> h >> maxval;
        if (magic != "P6" || maxval != 255) throw data_error("ppm: unsupported format in " + f);
        is.get();  // single whitespace after maxval
        if (clip.frames == 0) {
            clip.width = w;
            clip.height = h;
        } else if (w != clip.width || h != clip.height) {
            throw data_error("ppm: frame size mismatch in " + f);
        }
        std::size_t fb = w * h * 3;
        std::size_t off = clip.data.size();
        clip.data.resize(off + fb);
        is.read(reinterpret_cast<char*>(clip.data.data() + off), static_cast<std::streamsize>(fb));
        if (is.gcount() != static_cast<std::streamsize>(fb)) throw data_error("ppm: truncated pixel data in " + f);
        ++clip.frames;
    }
    return clip;
}

inline FrameClip load_clip(const std::string& path, double fps) {
    if (std::filesystem::is_directory(path)) return read_ppm_dir(path, fps);
    return rvf::read(path);
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

struct TransformConfig {
    std::size_t num_frames = 8;
    std::size_t train_scale_min = 256;
    std::size_t train_scale_max = 320;
    std::size_t crop_size = 244;  // kept verbatim from the source setup; configurable
    double hflip_probability = 0.5;
    std::size_t val_scale = 256;
    std::array<float, 3> mean{0.45f, 0.45f, 0.45f};
    std::array<float, 3> stddev{0.225f, 0.225f, 0.225f};
};

// Endpoint-inclusive uniform frame indices; round-half-up on i*(T-1)/(n-1).
inline std::vector<std::size_t> uniform_subsample_indices(std::size_t total, std::size_t n) {
    if (total < 1 || n < 1) throw std::invalid_argument("subsample: T and n must be >= 1");
    std::vector<std::size_t> idx(n);
    if (n == 1) return idx;  // {0}
    for (std::size_t i = 0; i < n; ++i)
        idx[i] = static_cast<std::size_t>(std::floor(
            static_cast<double>(i) * static_cast<double>(total - 1) / static_cast<double>(n - 1) + 0.5));
    return idx;
}

inline FrameClip uniform_temporal_subsample(const FrameClip& clip, std::size_t n) {
    auto idx = uniform_subsample_indices(clip.frames, n);
    FrameClip out;
    out.width = clip.width;
    out.height = clip.height;
    out.fps = clip.fps;
    out.source_id = clip.source_id;
    out.frames = n;
    out.data.resize(n * clip.frame_bytes());
    for (std::size_t i = 0; i < n; ++i)
        std::memcpy(out.frame(i), clip.frame(idx[i]), clip.frame_bytes());
    return out;
}

// Bilinear resize with half-pixel centers; aspect-preserving so the short
// side lands on `target`, long side rounds to nearest.
inline FrameClip short_side_scale(const FrameClip& clip, std::size_t target) {
    if (target < 1) throw std::invalid_argument("short_side_scale: target must be >= 1");
    std::size_t new_h, new_w;
    if (clip.height <= clip.width) {
        new_h = target;
        new_w = static_cast<std::size_t>(std::llround(
            static_cast<double>(clip.width) * static_cast<double>(target) / static_cast<double>(clip.height)));
    } else {
        new_w = target;
        new_h = static_cast<std::size_t>(std::llround(
            static_cast<double>(clip.height) * static_cast<double>(target) / static_cast<double>(clip.width)));
    }
    if (new_h == clip.height && new_w == clip.width) return clip;

    FrameClip out;
    out.width = new_w;
    out.height = new_h;
    out.fps = clip.fps;
    out.source_id = clip.source_id;
    out.frames = clip.frames;
    out.data.resize(clip.frames * new_h * new_w * 3);

    double sy = static_cast<double>(clip.height) / static_cast<double>(new_h);
    double sx = static_cast<double>(clip.width) / static_cast<double>(new_w);
    for (std::size_t t = 0; t < clip.frames; ++t) {
        const std::uint8_t* src = clip.frame(t);
        std::uint8_t* dst = out.frame(t);
        for (std::size_t y = 0; y < new_h; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            double y0f = std::floor(fy);
            double wy = fy - y0f;
            std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(y0f), 0,
                                                       static_cast<std::int64_t>(clip.height) - 1);
            std::int64_t y1 = std::min<std::int64_t>(y0 + 1, static_cast<std::int64_t>(clip.height) - 1);
            if (fy < 0) wy = 0;
            for (std::size_t x = 0; x < new_w; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                double x0f = std::floor(fx);
                double wx = fx - x0f;
                std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(x0f), 0,
                                                           static_cast<std::int64_t>(clip.width) - 1);
                std::int64_t x1 = std::min<std::int64_t>(x0 + 1, static_cast<std::int64_t>(clip.width) - 1);
                if (fx < 0) wx = 0;
                for (std::size_t c = 0; c < 3; ++c) {
                    double v00 = src[(y0 * clip.width + x0) * 3 + c];
                    double v01 = src[(y0 * clip.width + x1) * 3 + c];
                    double v10 = src[(y1 * clip.width + x0) * 3 + c];
                    double v11 = src[(y1 * clip.width + x1) * 3 + c];
                    double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                    dst[(y * new_w + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::clamp(std::llround(v), 0ll, 255ll));
                }
            }
        }
    }
    return out;
}

inline FrameClip crop_at(const FrameClip& clip, std::size_t size, std::size_t off_y, std::size_t off_x) {
    if (clip.height < size || clip.width < size)
        throw std::invalid_argument("crop: frame smaller than crop size");
    if (off_y + size > clip.height || off_x + size > clip.width)
        throw std::invalid_argument("crop: offsets out of range");
    FrameClip out;
    out.width = size;
    out.height = size;
    out.fps = clip.fps;
    out.source_id = clip.source_id;
    out.frames = clip.frames;
    out.data.resize(clip.frames * size * size * 3);
    for (std::size_t t = 0; t < clip.frames; ++t) {
        const std::uint8_t* src = clip.frame(t);
        std::uint8_t* dst = out.frame(t);
        for (std::size_t y = 0; y < size; ++y)
            std::memcpy(dst + y * size * 3, src + ((off_y + y) * clip.width + off_x) * 3, size * 3);
    }
    return out;
}

inline FrameClip center_crop(const FrameClip& clip, std::size_t size) {
    return crop_at(clip, size, (clip.height - size) / 2, (clip.width - size) / 2);
}

inline FrameClip random_crop(const FrameClip& clip, std::size_t size, Rng& rng) {
    if (clip.height < size || clip.width < size)
        throw std::invalid_argument("crop: frame smaller than crop size");
    std::size_t oy = static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(clip.height - size)));
    std::size_t ox = static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(clip.width - size)));
    return crop_at(clip, size, oy, ox);
}

inline FrameClip flip_horizontal(const FrameClip& clip) {
    FrameClip out = clip;
    for (std::size_t t = 0; t < clip.frames; ++t) {
        const std::uint8_t* src = clip.frame(t);
        std::uint8_t* dst = out.frame(t);
        for (std::size_t y = 0; y < clip.height; ++y)
            for (std::size_t x = 0; x < clip.width; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    dst[(y * clip.width + x) * 3 + c] = src[(y * clip.width + (clip.width - 1 - x)) * 3 + c];
    }
    return out;
}

// All frames of a clip flip together.
inline FrameClip horizontal_flip(const FrameClip& clip, double p, Rng& rng) {
    if (p < 0 || p > 1) throw std::invalid_argument("flip: probability out of range");
    return rng.next_bernoulli(p) ? flip_horizontal(clip) : clip;
}

// (byte/255 - mean_c) / std_c, layout T,H,W,3 -> channels-first [3,T,H,W]
inline Tensor<float> normalize(const FrameClip& clip, const std::array<float, 3>& mean,
                               const std::array<float, 3>& stddev) {
    for (float s : stddev)
        if (s <= 0) throw std::invalid_argument("normalize: std must be positive");
    std::size_t thw = clip.frames * clip.height * clip.width;
    auto out = Tensor<float>::zeros({3, clip.frames, clip.height, clip.width});
    float* d = out.data().data();
    for (std::size_t c = 0; c < 3; ++c) {
        float m = mean[c], inv = 1.0f / stddev[c];
        float* dst = d + c * thw;
        const std::uint8_t* src = clip.data.data();
        for (std::size_t i = 0; i < thw; ++i)
            dst[i] = (static_cast<float>(src[i * 3 + c]) / 255.0f - m) * inv;
    }
    return out;
}

// Deterministic draw of the training scale target for a given stream.
inline std::size_t train_scale_target(const TransformConfig& cfg, Rng& rng) {
    return static_cast<std::size_t>(rng.next_int(static_cast<std::int64_t>(cfg.train_scale_min),
                                                 static_cast<std::int64_t>(cfg.train_scale_max)));
}

// subsample -> seeded short-side scale -> random crop -> random flip -> normalize
inline Tensor<float> train_transform(const FrameClip& clip, const TransformConfig& cfg, Rng& rng) {
    FrameClip c = uniform_temporal_subsample(clip, cfg.num_frames);
    c = short_side_scale(c, train_scale_target(cfg, rng));
    c = random_crop(c, cfg.crop_size, rng);
    c = horizontal_flip(c, cfg.hflip_probability, rng);
    return normalize(c, cfg.mean, cfg.stddev);
}

// subsample -> fixed scale -> center crop -> normalize; no randomness
inline Tensor<float> val_transform(const FrameClip& clip, const TransformConfig& cfg) {
    FrameClip c = uniform_temporal_subsample(clip, cfg.num_frames);
    c = short_side_scale(c, cfg.val_scale);
    c = center_crop(c, cfg.crop_size);
    return normalize(c, cfg.mean, cfg.stddev);
}

}  // namespace ts
