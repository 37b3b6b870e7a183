// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "timestudy/segment.hpp"

using ts::FrameClip;
using ts::SegmenterConfig;
using ts::Tensor;

namespace {

// Constant-brightness frames per labeled span; classified below by mean value.
FrameClip brightness_video(const std::vector<std::pair<std::size_t, std::uint8_t>>& spans, double fps) {
    FrameClip c;
    c.height = 32;
    c.width = 32;
    c.fps = fps;
    for (const auto& [frames, value] : spans) {
        std::size_t off = c.data.size();
        c.data.resize(off + frames * 32 * 32 * 3, value);
        c.frames += frames;
    }
    return c;
}

// Oracle classifier: class index from the mean of the normalized tensor.
// Brightness levels 40/120/200 map to classes 0/1/2 after the standard
// normalization; confidence is fixed.
ts::WindowClassifier brightness_classifier() {
    return [](const Tensor<float>& x) {
        double mu = 0;
        for (float v : x.data()) mu += v;
        mu /= static_cast<double>(x.numel());
        double byte = (mu * 0.225 + 0.45) * 255.0;
        std::size_t cls = byte < 80 ? 0 : byte < 160 ? 1 : 2;
        return std::make_pair(cls, 0.9);
    };
}

ts::TransformConfig small_tcfg() {
    ts::TransformConfig t;
    t.val_scale = 32;
    t.crop_size = 28;
    return t;
}

}  // namespace

TEST(SegmenterConfig, Validation) {
    SegmenterConfig c;
    EXPECT_NO_THROW(c.validate());
    c.stride_seconds = 5.0;  // > window
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SegmenterConfig{};
    c.smoothing = 2;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SegmenterConfig{};
    c.window_seconds = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(MajoritySmooth, WidthOneIsIdentity) {
    std::vector<std::size_t> labels{0, 1, 0, 2, 2};
    EXPECT_EQ(ts::majority_smooth(labels, 1), labels);
}

TEST(MajoritySmooth, RemovesSingleFlicker) {
    std::vector<std::size_t> labels{0, 0, 1, 0, 0, 2, 2, 2};
    auto out = ts::majority_smooth(labels, 3);
    EXPECT_EQ(out, (std::vector<std::size_t>{0, 0, 0, 0, 0, 2, 2, 2}));
}

TEST(MajoritySmooth, EdgeReplication) {
    std::vector<std::size_t> labels{1, 0, 0, 0, 1};
    auto out = ts::majority_smooth(labels, 3);
    // first window sees {1,1,0} -> 1, last {0,1,1} -> 1
    EXPECT_EQ(out, (std::vector<std::size_t>{1, 0, 0, 0, 1}));
}

TEST(SegmentClip, ConstantVideoGivesOneFullSegment) {
    auto video = brightness_video({{160, 40}}, 16.0);  // 10 s
    auto tl = ts::segment_clip(video, small_tcfg(), SegmenterConfig{}, brightness_classifier());
    ASSERT_EQ(tl.segments.size(), 1u);
    EXPECT_DOUBLE_EQ(tl.segments[0].start_seconds, 0.0);
    EXPECT_DOUBLE_EQ(tl.segments[0].end_seconds, 10.0);
    EXPECT_EQ(tl.segments[0].label, "crane_out");  // class 0
    EXPECT_DOUBLE_EQ(tl.segments[0].mean_confidence, 0.9);
}

TEST(SegmentClip, ShortVideoClassifiedWhole) {
    auto video = brightness_video({{16, 200}}, 16.0);  // 1 s, shorter than the 4 s window
    auto tl = ts::segment_clip(video, small_tcfg(), SegmenterConfig{}, brightness_classifier());
    ASSERT_EQ(tl.segments.size(), 1u);
    EXPECT_DOUBLE_EQ(tl.segments[0].end_seconds, 1.0);
    EXPECT_EQ(tl.segments[0].label, "driving");  // class 2
}

TEST(SegmentClip, BoundariesNearTruthAndTiling) {
    // 8 s at level 40, 8 s at 120, 8 s at 200
    auto video = brightness_video({{128, 40}, {128, 120}, {128, 200}}, 16.0);
    auto tl = ts::segment_clip(video, small_tcfg(), SegmenterConfig{}, brightness_classifier());
    ASSERT_EQ(tl.segments.size(), 3u);
    EXPECT_DOUBLE_EQ(tl.segments[0].start_seconds, 0.0);
    EXPECT_DOUBLE_EQ(tl.segments[2].end_seconds, 24.0);
    for (std::size_t i = 1; i < tl.segments.size(); ++i)
        EXPECT_DOUBLE_EQ(tl.segments[i].start_seconds, tl.segments[i - 1].end_seconds);  // exact tiling
    EXPECT_NEAR(tl.segments[0].end_seconds, 8.0, 2.0);
    EXPECT_NEAR(tl.segments[1].end_seconds, 16.0, 2.0);
    EXPECT_EQ(tl.segments[0].label, "crane_out");
    EXPECT_EQ(tl.segments[1].label, "cutting_and_to_processing");
    EXPECT_EQ(tl.segments[2].label, "driving");
}

TEST(SegmentClip, EmptyVideoThrows) {
    FrameClip empty;
    EXPECT_THROW(ts::segment_clip(empty, small_tcfg(), SegmenterConfig{}, brightness_classifier()),
                 ts::data_error);
}

TEST(Timeline, CsvFormat) {
    ts::SegmentTimeline tl;
    tl.segments.push_back({0.0, 7.53125, "driving", 0.875});
    tl.segments.push_back({7.53125, 12.0, "processing", 0.5});
    auto csv = ts::timeline_to_csv(tl);
    EXPECT_EQ(csv,
              "start_s,end_s,class,confidence\n"
              "0.000,7.531,driving,0.875\n"
              "7.531,12.000,processing,0.500\n");
}

TEST(Timeline, JsonMirrorsSegments) {
    ts::SegmentTimeline tl;
    tl.segments.push_back({0.0, 2.5, "crane_out", 0.8});
    auto j = ts::timeline_to_json(tl);
    ASSERT_EQ(j["segments"].size(), 1u);
    EXPECT_EQ(j["segments"][0]["class"], "crane_out");
    EXPECT_DOUBLE_EQ(j["segments"][0]["end_s"].get<double>(), 2.5);
}

TEST(TemporalIoU, KnownValues) {
    EXPECT_DOUBLE_EQ(ts::temporal_iou(0, 10, 0, 10), 1.0);
    EXPECT_DOUBLE_EQ(ts::temporal_iou(0, 10, 5, 15), 5.0 / 15.0);
    EXPECT_DOUBLE_EQ(ts::temporal_iou(0, 5, 5, 10), 0.0);
    EXPECT_DOUBLE_EQ(ts::temporal_iou(0, 8, 1, 8), 7.0 / 8.0);
}
