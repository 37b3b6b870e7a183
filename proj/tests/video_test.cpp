// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "timestudy/video.hpp"

namespace fs = std::filesystem;
using ts::FrameClip;

namespace {

FrameClip make_gradient_clip(std::size_t frames, std::size_t h, std::size_t w, double fps) {
    FrameClip c;
    c.frames = frames;
    c.height = h;
    c.width = w;
    c.fps = fps;
    c.data.resize(frames * h * w * 3);
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = static_cast<std::uint8_t>((i * 7 + 13) % 256);
    return c;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("ts_video_" + name)).string();
}

}  // namespace

TEST(Rvf, RoundTrip) {
    auto clip = make_gradient_clip(5, 12, 10, 16.0);
    std::string path = temp_path("roundtrip.rvf");
    ts::rvf::write(path, clip);
    auto back = ts::rvf::read(path);
    EXPECT_EQ(back.frames, 5u);
    EXPECT_EQ(back.height, 12u);
    EXPECT_EQ(back.width, 10u);
    EXPECT_DOUBLE_EQ(back.fps, 16.0);
    EXPECT_EQ(back.data, clip.data);
    fs::remove(path);
}

TEST(Rvf, FrameRangeRead) {
    auto clip = make_gradient_clip(6, 4, 4, 10.0);
    std::string path = temp_path("range.rvf");
    ts::rvf::write(path, clip);
    auto part = ts::rvf::read(path, 2, 3);
    EXPECT_EQ(part.frames, 3u);
    EXPECT_TRUE(std::equal(part.data.begin(), part.data.end(),
                           clip.data.begin() + static_cast<std::ptrdiff_t>(2 * clip.frame_bytes())));
    EXPECT_THROW(ts::rvf::read(path, 6, 1), ts::data_error);
    fs::remove(path);
}

TEST(Rvf, RejectsBadMagicAndTruncation) {
    std::string path = temp_path("bad.rvf");
    {
        std::ofstream os(path, std::ios::binary);
        os << "JUNKxxxxxxxxxxxxxxxxxxxx";
    }
    EXPECT_THROW(ts::rvf::read(path), ts::data_error);

    auto clip = make_gradient_clip(3, 4, 4, 10.0);
    ts::rvf::write(path, clip);
    fs::resize_file(path, fs::file_size(path) - 7);
    EXPECT_THROW(ts::rvf::read(path), ts::data_error);
    EXPECT_THROW(ts::rvf::read("/nonexistent/clip.rvf"), ts::data_error);
    fs::remove(path);
}

TEST(Ppm, DirectoryRead) {
    std::string dir = temp_path("ppmdir");
    fs::create_directories(dir);
    for (int i = 0; i < 3; ++i) {
        std::ofstream os(dir + "/f" + std::to_string(i) + ".ppm", std::ios::binary);
        os << "P6\n2 2\n255\n";
        for (int b = 0; b < 12; ++b) os.put(static_cast<char>(i * 10 + b));
    }
    auto clip = ts::read_ppm_dir(dir, 25.0);
    EXPECT_EQ(clip.frames, 3u);
    EXPECT_EQ(clip.width, 2u);
    EXPECT_EQ(clip.height, 2u);
    EXPECT_DOUBLE_EQ(clip.fps, 25.0);
    EXPECT_EQ(clip.frame(1)[0], 10);
    EXPECT_THROW(ts::read_ppm_dir(temp_path("empty_nonexistent"), 25.0), std::exception);
    fs::remove_all(dir);
}

TEST(Subsample, EndpointInclusiveIndices) {
    EXPECT_EQ(ts::uniform_subsample_indices(15, 8),
              (std::vector<std::size_t>{0, 2, 4, 6, 8, 10, 12, 14}));
    EXPECT_EQ(ts::uniform_subsample_indices(10, 1), (std::vector<std::size_t>{0}));
    EXPECT_EQ(ts::uniform_subsample_indices(3, 8), (std::vector<std::size_t>{0, 0, 1, 1, 1, 1, 2, 2}));
    EXPECT_EQ(ts::uniform_subsample_indices(8, 8), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
    auto idx = ts::uniform_subsample_indices(100, 8);
    EXPECT_EQ(idx.front(), 0u);
    EXPECT_EQ(idx.back(), 99u);
}

TEST(Scale, ShortSideLandsOnTarget) {
    auto clip = make_gradient_clip(2, 1080, 1920, 30.0);
    auto scaled = ts::short_side_scale(clip, 256);
    EXPECT_EQ(scaled.height, 256u);
    EXPECT_EQ(scaled.width, 455u);  // round(1920 * 256 / 1080)

    auto tall = make_gradient_clip(1, 100, 50, 30.0);
    auto st = ts::short_side_scale(tall, 25);
    EXPECT_EQ(st.width, 25u);
    EXPECT_EQ(st.height, 50u);

    // no-op when already at target
    auto same = ts::short_side_scale(make_gradient_clip(1, 64, 64, 30.0), 64);
    EXPECT_EQ(same.height, 64u);
    EXPECT_EQ(same.width, 64u);
}

TEST(Scale, ConstantImageStaysConstant) {
    FrameClip c;
    c.frames = 1;
    c.height = 20;
    c.width = 30;
    c.fps = 1.0;
    c.data.assign(20 * 30 * 3, 137);
    auto scaled = ts::short_side_scale(c, 13);
    for (auto v : scaled.data) EXPECT_EQ(v, 137);
}

TEST(Crop, CenterOffsets) {
    auto clip = make_gradient_clip(1, 256, 455, 30.0);
    auto cropped = ts::center_crop(clip, 244);
    EXPECT_EQ(cropped.height, 244u);
    EXPECT_EQ(cropped.width, 244u);
    // offsets floor((256-244)/2)=6, floor((455-244)/2)=105
    EXPECT_EQ(cropped.frame(0)[0], clip.frame(0)[(6 * 455 + 105) * 3]);
    EXPECT_THROW(ts::center_crop(make_gradient_clip(1, 10, 10, 1.0), 11), std::invalid_argument);
}

TEST(Flip, MirrorsRows) {
    auto clip = make_gradient_clip(1, 2, 3, 1.0);
    auto flipped = ts::flip_horizontal(clip);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 3; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                EXPECT_EQ(flipped.frame(0)[(y * 3 + x) * 3 + c], clip.frame(0)[(y * 3 + (2 - x)) * 3 + c]);
    EXPECT_EQ(ts::flip_horizontal(flipped).data, clip.data);
}

TEST(Normalize, ValuesAndLayout) {
    FrameClip c;
    c.frames = 1;
    c.height = 1;
    c.width = 2;
    c.fps = 1.0;
    c.data = {255, 0, 114, 0, 255, 114};  // two RGB pixels
    auto t = ts::normalize(c, {0.45f, 0.45f, 0.45f}, {0.225f, 0.225f, 0.225f});
    EXPECT_EQ(t.shape(), (std::vector<std::size_t>{3, 1, 1, 2}));
    // channel 0: pixel0 R=255 -> (1 - 0.45)/0.225
    EXPECT_NEAR(t.data()[0], (1.0f - 0.45f) / 0.225f, 1e-6);
    EXPECT_NEAR(t.data()[1], (0.0f - 0.45f) / 0.225f, 1e-6);
    // channel 2: both pixels 114 -> (114/255 - 0.45)/0.225 ~ 0
    EXPECT_NEAR(t.data()[4], (114.0f / 255.0f - 0.45f) / 0.225f, 1e-6);
    EXPECT_NEAR(t.data()[4], t.data()[5], 1e-7);
}

TEST(Transforms, ValTransformDeterministic) {
    auto clip = make_gradient_clip(15, 80, 120, 16.0);
    ts::TransformConfig cfg;
    cfg.val_scale = 64;
    cfg.crop_size = 56;
    auto a = ts::val_transform(clip, cfg);
    auto b = ts::val_transform(clip, cfg);
    EXPECT_EQ(a.shape(), (std::vector<std::size_t>{3, 8, 56, 56}));
    EXPECT_EQ(a.data(), b.data());  // bit identical
}

TEST(Transforms, TrainTransformSeedStableAndBounded) {
    auto clip = make_gradient_clip(20, 80, 120, 16.0);
    ts::TransformConfig cfg;
    cfg.train_scale_min = 64;
    cfg.train_scale_max = 80;
    cfg.crop_size = 56;
    ts::Rng r1(99), r2(99), r3(100);
    auto a = ts::train_transform(clip, cfg, r1);
    auto b = ts::train_transform(clip, cfg, r2);
    EXPECT_EQ(a.data(), b.data());
    auto c = ts::train_transform(clip, cfg, r3);
    EXPECT_EQ(c.shape(), a.shape());

    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        ts::Rng rng(seed);
        std::size_t s = ts::train_scale_target(cfg, rng);
        ASSERT_GE(s, 64u);
        ASSERT_LE(s, 80u);
    }
}
