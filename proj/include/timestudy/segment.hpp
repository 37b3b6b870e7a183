// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "timestudy/dataset.hpp"
#include "timestudy/video.hpp"

namespace ts {

struct SegmenterConfig {
    double window_seconds = 4.0;
    double stride_seconds = 1.0;
    std::size_t smoothing = 3;  // majority-vote filter width, odd

    void validate() const {
        if (stride_seconds <= 0 || window_seconds <= 0)
            throw std::invalid_argument("segmenter: window and stride must be positive");
        if (stride_seconds > window_seconds)
            throw std::invalid_argument("segmenter: stride must not exceed window");
        if (smoothing < 1 || smoothing % 2 == 0)
            throw std::invalid_argument("segmenter: smoothing width must be odd and >= 1");
    }
};

struct Segment {
    double start_seconds = 0.0;
    double end_seconds = 0.0;
    std::string label;
    double mean_confidence = 0.0;
};

struct SegmentTimeline {
    std::vector<Segment> segments;
};

// Classifier contract: transformed clip tensor [3,F,S,S] -> (class index, max
// softmax probability). Lets tests drive the segmenter with oracle models.
using WindowClassifier = std::function<std::pair<std::size_t, double>(const Tensor<float>&)>;

// Edge-replicated odd-width majority vote over categorical labels. A numeric
// median is wrong here: at a transition between classes a and b it can emit a
// class whose index merely lies between them. Ties keep the center label when
// it is among the tied classes, otherwise the smallest tied index.
inline std::vector<std::size_t> majority_smooth(const std::vector<std::size_t>& labels,
                                                std::size_t width) {
    if (width <= 1 || labels.size() <= 1) return labels;
    std::size_t half = width / 2;
    std::vector<std::size_t> out(labels.size());
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        counts.clear();
        for (std::size_t k = 0; k < width; ++k) {
            std::int64_t j = static_cast<std::int64_t>(i) + static_cast<std::int64_t>(k) - static_cast<std::int64_t>(half);
            j = std::clamp<std::int64_t>(j, 0, static_cast<std::int64_t>(labels.size()) - 1);
            counts[labels[static_cast<std::size_t>(j)]] += 1;
        }
        std::size_t best_count = 0;
        for (const auto& [lab, n] : counts) best_count = std::max(best_count, n);
        if (counts[labels[i]] == best_count) {
            out[i] = labels[i];
        } else {
            for (const auto& [lab, n] : counts)
                if (n == best_count) {
                    out[i] = lab;
                    break;
                }
        }
    }
    return out;
}

// Sliding-window classification -> smoothed labels -> merged segments.
// Boundaries fall halfway between adjacent differing window midpoints,
// clamped so segments tile [0, duration] exactly.
inline SegmentTimeline segment_clip(const FrameClip& video, const TransformConfig& tcfg,
                                    const SegmenterConfig& scfg, const WindowClassifier& classify) {
    scfg.validate();
    if (video.frames < 1 || video.fps <= 0) throw data_error("segment: empty or fps-less video");
    const double duration = video.duration_seconds();

    std::size_t wlen = static_cast<std::size_t>(std::llround(scfg.window_seconds * video.fps));
    if (wlen < 1) wlen = 1;
    std::size_t stride = static_cast<std::size_t>(std::llround(scfg.stride_seconds * video.fps));
    if (stride < 1) stride = 1;

    // Video shorter than one window: classify the whole clip once.
    std::vector<std::size_t> starts;
    if (video.frames <= wlen) {
        wlen = video.frames;
        starts.push_back(0);
    } else {
        for (std::size_t s = 0; s + wlen <= video.frames; s += stride) starts.push_back(s);
    }

    std::vector<std::size_t> labels(starts.size());
    std::vector<double> conf(starts.size());
    std::vector<double> mid(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        FrameClip window;
        window.width = video.width;
        window.height = video.height;
        window.fps = video.fps;
        window.frames = wlen;
        window.data.assign(video.data.begin() + static_cast<std::ptrdiff_t>(starts[i] * video.frame_bytes()),
                           video.data.begin() + static_cast<std::ptrdiff_t>((starts[i] + wlen) * video.frame_bytes()));
        auto [cls, p] = classify(val_transform(window, tcfg));
        labels[i] = cls;
        conf[i] = p;
        mid[i] = (static_cast<double>(starts[i]) + static_cast<double>(wlen) / 2.0) / video.fps;
    }

    labels = majority_smooth(labels, scfg.smoothing);

    const auto& vocab = ClassVocabulary::active();
    SegmentTimeline timeline;
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= labels.size(); ++i) {
        if (i < labels.size() && labels[i] == labels[run_start]) continue;
        Segment seg;
        seg.label = vocab[labels[run_start]];
        seg.start_seconds = run_start == 0 ? 0.0 : (mid[run_start - 1] + mid[run_start]) / 2.0;
        seg.end_seconds = i == labels.size() ? duration : (mid[i - 1] + mid[i]) / 2.0;
        seg.start_seconds = std::clamp(seg.start_seconds, 0.0, duration);
        seg.end_seconds = std::clamp(seg.end_seconds, 0.0, duration);
        double c = 0.0;
        for (std::size_t k = run_start; k < i; ++k) c += conf[k];
        seg.mean_confidence = c / static_cast<double>(i - run_start);
        timeline.segments.push_back(seg);
        run_start = i;
    }
    return timeline;
}

inline nlohmann::json timeline_to_json(const SegmentTimeline& tl) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : tl.segments)
        segs.push_back({{"start_s", s.start_seconds},
                        {"end_s", s.end_seconds},
                        {"class", s.label},
                        {"confidence", s.mean_confidence}});
    return {{"segments", segs}};
}

// CSV header start_s,end_s,class,confidence with 3-decimal fixed-point seconds.
inline std::string timeline_to_csv(const SegmentTimeline& tl) {
    std::string out = "start_s,end_s,class,confidence\n";
    char buf[160];
    for (const auto& s : tl.segments) {
        std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%s,%.3f\n", s.start_seconds, s.end_seconds,
                      s.label.c_str(), s.mean_confidence);
        out += buf;
    }
    return out;
}

// Temporal intersection-over-union of two intervals.
inline double temporal_iou(double a0, double a1, double b0, double b1) {
    double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
    double uni = std::max(a1, b1) - std::min(a0, b0);
    return uni <= 0 ? 0.0 : inter / uni;
}

}  // namespace ts
