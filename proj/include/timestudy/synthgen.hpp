// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "timestudy/dataset.hpp"
#include "timestudy/video.hpp"

namespace ts {
namespace synth {

struct SynthSpec {
    std::string label = "driving";
    std::size_t width = 64;
    std::size_t height = 64;
    double fps = 16.0;
    double duration_seconds = 4.0;
    std::uint64_t seed = 0;
    double noise_level = 0.0;  // in [0, 0.5]

    void validate() const {
        if (width < 16 || height < 16) throw std::invalid_argument("synth: dimensions must be >= 16");
        if (std::llround(duration_seconds * fps) < 1)
            throw std::invalid_argument("synth: duration must cover at least one frame");
        if (noise_level < 0 || noise_level > 0.5)
            throw std::invalid_argument("synth: noise_level out of [0, 0.5]");
        if (!ClassVocabulary::is_active(label))
            throw std::invalid_argument("synth: label must be an active class, got " + label);
    }
};

struct ScriptSegment {
    std::string label;
    double seconds = 0.0;
};

struct TimelineScript {
    std::vector<ScriptSegment> segments;

    void validate() const {
        if (segments.empty()) throw std::invalid_argument("script: no segments");
        for (const auto& s : segments) {
            if (s.seconds <= 0) throw std::invalid_argument("script: segment duration must be positive");
            if (!ClassVocabulary::is_active(s.label))
                throw std::invalid_argument("script: label must be an active class, got " + s.label);
        }
    }
};

struct GroundTruthSegment {
    std::size_t start_frame = 0;
    std::size_t end_frame = 0;  // exclusive
    std::string label;
};

namespace detail {

// Grayscale value-noise texture, coarse grid bilinearly upsampled.
inline std::vector<std::uint8_t> make_texture(std::uint64_t seed, std::size_t w, std::size_t h) {
    Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x3c6ef372fe94f82bull);
    const std::size_t step = 8;
    std::size_t gw = w / step + 2, gh = h / step + 2;
    std::vector<double> grid(gw * gh);
    for (auto& v : grid) v = 40.0 + rng.next_real() * 140.0;
    std::vector<std::uint8_t> tex(w * h);
    for (std::size_t y = 0; y < h; ++y) {
        std::size_t gy = y / step;
        double fy = static_cast<double>(y % step) / step;
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t gx = x / step;
            double fx = static_cast<double>(x % step) / step;
            double v = (1 - fy) * ((1 - fx) * grid[gy * gw + gx] + fx * grid[gy * gw + gx + 1]) +
                       fy * ((1 - fx) * grid[(gy + 1) * gw + gx] + fx * grid[(gy + 1) * gw + gx + 1]);
            tex[y * w + x] = static_cast<std::uint8_t>(v);
        }
    }
    return tex;
}

inline void set_px(std::uint8_t* frame, std::size_t w, std::size_t h, std::int64_t x, std::int64_t y,
                   std::uint8_t v) {
    if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(w) || y >= static_cast<std::int64_t>(h)) return;
    std::uint8_t* p = frame + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3;
    p[0] = p[1] = p[2] = v;
}

inline void fill_rect(std::uint8_t* frame, std::size_t w, std::size_t h, std::int64_t x0, std::int64_t y0,
                      std::int64_t rw, std::int64_t rh, std::uint8_t v) {
    for (std::int64_t y = y0; y < y0 + rh; ++y)
        for (std::int64_t x = x0; x < x0 + rw; ++x) set_px(frame, w, h, x, y, v);
}

// Render one frame of a class segment onto `frame` (T,H,W,3 layout slice).
// seg_frame/seg_total give progress within the segment; global_frame drives
// motion that must stay continuous across concatenated segments.
inline void render_frame(std::uint8_t* frame, std::size_t w, std::size_t h,
                         const std::vector<std::uint8_t>& tex, const std::string& label,
                         std::size_t seg_frame, std::size_t seg_total, std::size_t global_frame) {
    const std::int64_t unit = static_cast<std::int64_t>(std::max<std::size_t>(4, std::min(w, h) / 8));

    if (label == "driving") {
        // whole-frame horizontal scroll, integer velocity, wrap-around
        const std::size_t v = 2;
        std::size_t shift = (v * global_frame) % w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                std::uint8_t t = tex[y * w + (x + shift) % w];
                std::uint8_t* p = frame + (y * w + x) * 3;
                p[0] = p[1] = p[2] = t;
            }
        return;
    }

    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t t = tex[y * w + x];
            std::uint8_t* p = frame + (y * w + x) * 3;
            p[0] = p[1] = p[2] = t;
        }

    if (label == "crane_out") {
        // bright block shuttling between the center and the top-left corner
        // at constant speed; the fixed period keeps the motion statistics
        // identical for every window regardless of segment length
        (void)seg_total;
        const std::size_t period = 64;
        std::size_t ph = seg_frame % period;
        double prog = ph < period / 2 ? static_cast<double>(ph) / (period / 2)
                                      : static_cast<double>(period - ph) / (period / 2);
        std::int64_t cx = static_cast<std::int64_t>(w) / 2, cy = static_cast<std::int64_t>(h) / 2;
        std::int64_t x = cx + static_cast<std::int64_t>(std::llround((unit / 2.0 - cx) * prog));
        std::int64_t y = cy + static_cast<std::int64_t>(std::llround((unit / 2.0 - cy) * prog));
        fill_rect(frame, w, h, x, y, unit, unit, 235);
    } else if (label == "cutting_and_to_processing") {
        // dark bar with slow vertical oscillation, localized center-right
        std::int64_t dy = static_cast<std::int64_t>(std::llround((unit / 2.0) * std::sin(2.0 * M_PI * 0.06 * seg_frame)));
        std::int64_t x = 3 * static_cast<std::int64_t>(w) / 4;
        std::int64_t y = static_cast<std::int64_t>(h) / 2 - unit + dy;
        fill_rect(frame, w, h, x, y, unit / 2, 2 * unit, 15);
    } else if (label == "processing") {
        // fast back-and-forth patch plus discretely spawning bright strips
        std::int64_t dx = static_cast<std::int64_t>(std::llround(unit * std::sin(2.0 * M_PI * 0.3 * seg_frame)));
        std::int64_t x = static_cast<std::int64_t>(w) / 4 + dx;
        std::int64_t y = static_cast<std::int64_t>(h) / 2;
        fill_rect(frame, w, h, x, y, unit, unit, 235);
        std::size_t slot = (seg_frame / 12) % 3;
        fill_rect(frame, w, h, static_cast<std::int64_t>(slot) * 2 * unit + unit / 2,
                  static_cast<std::int64_t>(h) - unit, 2 * unit, unit / 2, 200);
    }
}

inline void add_noise(std::uint8_t* frame, std::size_t n_bytes, double level, Rng& rng) {
    if (level <= 0) return;
    double amp = level * 255.0;
    for (std::size_t i = 0; i < n_bytes; ++i) {
        double d = (rng.next_real() * 2.0 - 1.0) * amp;
        std::int64_t v = static_cast<std::int64_t>(frame[i]) + std::llround(d);
        frame[i] = static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
    }
}

}  // namespace detail

inline FrameClip generate_clip(const SynthSpec& spec) {
    spec.validate();
    std::size_t frames = static_cast<std::size_t>(std::llround(spec.duration_seconds * spec.fps));
    FrameClip clip;
    clip.width = spec.width;
    clip.height = spec.height;
    clip.fps = spec.fps;
    clip.frames = frames;
    clip.source_id = spec.label + "@" + std::to_string(spec.seed);
    clip.data.resize(frames * clip.frame_bytes());

    auto tex = detail::make_texture(spec.seed, spec.width, spec.height);
    Rng noise_rng(spec.seed ^ 0xa5a5a5a5ull);
    for (std::size_t t = 0; t < frames; ++t) {
        std::uint8_t* f = clip.frame(t);
        detail::render_frame(f, spec.width, spec.height, tex, spec.label, t, frames, t);
        detail::add_noise(f, clip.frame_bytes(), spec.noise_level, noise_rng);
    }
    return clip;
}

// Concatenated per-segment renderings over one continuous background texture;
// returns exact frame boundaries per segment.
inline std::pair<FrameClip, std::vector<GroundTruthSegment>> generate_long_video(
    const TimelineScript& script, const SynthSpec& base, std::uint64_t seed) {
    script.validate();
    SynthSpec probe = base;
    probe.label = script.segments.front().label;
    probe.validate();

    std::vector<std::size_t> seg_frames;
    std::size_t total = 0;
    for (const auto& s : script.segments) {
        std::size_t n = static_cast<std::size_t>(std::llround(s.seconds * base.fps));
        if (n < 1) n = 1;
        seg_frames.push_back(n);
        total += n;
    }

    FrameClip clip;
    clip.width = base.width;
    clip.height = base.height;
    clip.fps = base.fps;
    clip.frames = total;
    clip.source_id = "script@" + std::to_string(seed);
    clip.data.resize(total * clip.frame_bytes());

    auto tex = detail::make_texture(seed, base.width, base.height);
    Rng noise_rng(seed ^ 0xa5a5a5a5ull);
    std::vector<GroundTruthSegment> truth;
    std::size_t g = 0;
    for (std::size_t si = 0; si < script.segments.size(); ++si) {
        const auto& seg = script.segments[si];
        truth.push_back({g, g + seg_frames[si], seg.label});
        for (std::size_t t = 0; t < seg_frames[si]; ++t, ++g) {
            std::uint8_t* f = clip.frame(g);
            detail::render_frame(f, base.width, base.height, tex, seg.label, t, seg_frames[si], g);
            detail::add_noise(f, clip.frame_bytes(), base.noise_level, noise_rng);
        }
    }
    return {std::move(clip), std::move(truth)};
}

// Writes .rvf clips plus a manifest with a seeded 80/20 per-class split.
// Durations cycle 2-8 s to exercise windowing. Returns the manifest path.
inline std::string generate_dataset(std::size_t per_class, const SynthSpec& tmpl, std::uint64_t seed,
                                    const std::string& out_dir) {
    if (per_class < 2) throw std::invalid_argument("generate_dataset: per_class must be >= 2");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<ManifestEntry> entries;
    const auto& classes = ClassVocabulary::active();
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        for (std::size_t i = 0; i < per_class; ++i) {
            SynthSpec spec = tmpl;
            spec.label = classes[ci];
            spec.duration_seconds = static_cast<double>(2 + (i % 7));
            spec.seed = seed * 1000003ull + ci * 101ull + i;
            FrameClip clip = generate_clip(spec);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03zu.rvf", classes[ci].c_str(), i);
            rvf::write((fs::path(out_dir) / name).string(), clip);
            ManifestEntry e;
            e.clip_path = name;
            e.label = classes[ci];
            e.frame_count = clip.frames;
            e.fps = clip.fps;
            e.split = "train";  // reassigned below
            entries.push_back(std::move(e));
        }
    }
    assign_split(entries, seed ^ 0x5eedull);
    std::string manifest = (fs::path(out_dir) / "manifest.csv").string();
    write_manifest(manifest, entries);
    return manifest;
}

inline TimelineScript load_script(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("script: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("script: bad JSON in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw data_error("script: expected a JSON array of {class, seconds}");
    TimelineScript script;
    for (const auto& item : j) {
        if (!item.contains("class") || !item.contains("seconds"))
            throw data_error("script: each entry needs class and seconds");
        script.segments.push_back({ClassVocabulary::normalize(item["class"].get<std::string>()),
                                   item["seconds"].get<double>()});
    }
    script.validate();
    return script;
}

}  // namespace synth
}  // namespace ts
