#include <gtest/gtest.h>

#include <filesystem>

#include "vad/core/rng.hpp"
#include "vad/ingest/sequence.hpp"

using namespace vad;

namespace {

Video make_video(std::size_t n, int w = 32, int h = 24, std::string id = "v") {
  Video v{id, {}};
  for (std::size_t i = 0; i < n; ++i) {
    Raster img(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((i * 7 + x * 3 + y * 5 + c) % 256);
    v.frames.push_back({id, i, i / 30.0, std::move(img)});
  }
  return v;
}

std::vector<std::size_t> indices(auto&& frames) {
  std::vector<std::size_t> out;
  for (const auto& f : frames) out.push_back(f.frame_index);
  return out;
}

}  // namespace

TEST(SampleFrames, EveryTenthOfThirty) {
  auto v = make_video(30, 4, 4);
  EXPECT_EQ(indices(sample_frames(v.frames, 10)), (std::vector<std::size_t>{0, 10, 20}));
}

TEST(SampleFrames, StrideOneIsIdentity) {
  auto v = make_video(13, 4, 4);
  EXPECT_EQ(indices(sample_frames(v.frames, 1)), indices(v.frames));
}

TEST(SampleFrames, StrideSevenOfTwentyFive) {
  auto v = make_video(25, 4, 4);
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < 25; ++i)
    if (i % 7 == 0) expect.push_back(i);
  EXPECT_EQ(expect, (std::vector<std::size_t>{0, 7, 14, 21}));
  EXPECT_EQ(indices(sample_frames(v.frames, 7)), expect);
}

TEST(SampleFrames, EmptyVideoAndZeroStride) {
  std::vector<FrameRef> none;
  EXPECT_TRUE(indices(sample_frames(none, 3)).empty());
  EXPECT_THROW(sample_frames(none, 0), ConfigError);
}

TEST(SampleFrames, ResamplingWithStrideOneIsStable) {
  auto v = make_video(40, 4, 4);
  for (std::size_t s = 1; s <= 9; ++s) {
    auto once = sampled_copy(v.frames, s);
    EXPECT_EQ(indices(sample_frames(once, 1)), indices(once));
  }
}

TEST(DetectObjects, ScriptedDetectorEchoesAndClamps) {
  auto v = make_video(2);
  ScriptedDetector det;
  det.add("v", {0, {2, 3, 5, 6}, "person", 0.9});
  det.add("v", {0, {28, 4, 10, 5}, "car", 1.3});
  auto out = detect_objects(v.frames[0], det);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].bbox, (BBox{2, 3, 5, 6}));
  EXPECT_EQ(out[1].bbox, (BBox{28, 4, 4, 5}));  // right edge clamped to width 32
  EXPECT_EQ(out[1].confidence, 1.0);
  EXPECT_TRUE(detect_objects(v.frames[1], det).empty());
}

TEST(DetectObjects, EmptyFrameListAndUnavailableDetector) {
  ScriptedDetector det;
  RunLog log;
  EXPECT_TRUE(detect_frames({}, det, 4, &log).empty());
  auto v = make_video(3);
  det.set_available(false);
  std::vector<const FrameRef*> ptrs{&v.frames[0], &v.frames[1], &v.frames[2]};
  EXPECT_THROW(detect_objects(v.frames[0], det), TransportError);
  auto idx = detect_frames(ptrs, det, 2, &log);
  EXPECT_TRUE(idx.empty());
  EXPECT_EQ(log.count("skipped-detection"), 3u);
}

TEST(DetectObjects, ParallelResultsOrderedByFrame) {
  auto v = make_video(20);
  ScriptedDetector det;
  for (std::size_t i = 0; i < 20; ++i) det.add("v", {i, {1, 1, 4, 4}, "person", 0.5});
  std::vector<const FrameRef*> ptrs;
  for (auto& f : v.frames) ptrs.push_back(&f);
  auto idx = detect_frames(ptrs, det, 4);
  ASSERT_EQ(idx.size(), 20u);
  std::size_t expect = 0;
  for (const auto& [fi, dets] : idx) EXPECT_EQ(fi, expect++);
}

TEST(ObjectSequence, SevenCropsForTEqualsThree) {
  auto v = make_video(20);
  auto seq = build_object_sequence(v, {10, {4, 4, 10, 8}, "person", 1.0}, {});
  EXPECT_EQ(seq.length(), 7u);
  EXPECT_EQ(seq.positions.size(), 7u);
  for (const auto& c : seq.crops) {
    EXPECT_EQ(c.width, 64);
    EXPECT_EQ(c.height, 64);
  }
}

TEST(ObjectSequence, BoundaryReplicatesEdgeFrame) {
  auto v = make_video(20);
  auto seq = build_object_sequence(v, {0, {4, 4, 10, 8}, "person", 1.0}, {});
  for (int k = 0; k < 3; ++k) EXPECT_EQ(seq.crops[k], seq.crops[3]);
  EXPECT_NE(seq.crops[4], seq.crops[3]);
  auto tail = build_object_sequence(v, {19, {4, 4, 10, 8}, "person", 1.0}, {});
  for (int k = 4; k < 7; ++k) EXPECT_EQ(tail.crops[k], tail.crops[3]);
}

TEST(ObjectSequence, LargeCropResizedTo64) {
  auto v = make_video(5, 160, 160);
  auto seq = build_object_sequence(v, {2, {10, 10, 128, 128}, "car", 1.0}, {});
  EXPECT_EQ(seq.crops[3].width, 64);
  EXPECT_EQ(seq.crops[3].height, 64);
}

TEST(ObjectSequence, DegenerateBoxRejected) {
  auto v = make_video(5);
  EXPECT_THROW(build_object_sequence(v, {2, {4, 4, 1, 8}, "person", 1.0}, {}), DegenerateBoxError);
  EXPECT_THROW(build_object_sequence(v, {2, {31.5, 4, 8, 8}, "person", 1.0}, {}), DegenerateBoxError);
  EXPECT_THROW(build_object_sequence(v, {2, {4, 4, 8, 8}, "person", 1.0}, {.half_window_t = 0}), ConfigError);
}

TEST(ObjectSequence, PropertyShapesAndDeterminism) {
  auto v = make_video(30);
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    SequenceOptions opt;
    opt.half_window_t = 1 + rng.index(5);
    opt.frame_step = 1 + rng.index(3);
    Detection d{rng.index(30), {rng.uniform(0, 20), rng.uniform(0, 14), rng.uniform(3, 12), rng.uniform(3, 10)}, "x", 1.0};
    auto a = build_object_sequence(v, d, opt);
    auto b = build_object_sequence(v, d, opt);
    EXPECT_EQ(a.length(), 2 * opt.half_window_t + 1);
    EXPECT_EQ(a.positions.size(), a.length());
    for (std::size_t i = 0; i < a.length(); ++i) {
      EXPECT_EQ(a.crops[i].width, 64);
      EXPECT_EQ(a.crops[i], b.crops[i]);
    }
  }
}

TEST(ObjectSequence, PositionsFollowNearestSameClassDetection) {
  auto v = make_video(10);
  DetectionIndex dets;
  for (std::size_t i = 0; i < 10; ++i) {
    dets[i].push_back({i, {static_cast<double>(i), 5, 4, 4}, "person", 1.0});
    dets[i].push_back({i, {static_cast<double>(i), 5, 4, 4}, "car", 1.0});
    dets[i].push_back({i, {20, 15, 4, 4}, "person", 1.0});
  }
  auto seq = build_object_sequence(v, dets[5][0], {}, &dets);
  for (std::size_t k = 0; k < 7; ++k) {
    EXPECT_DOUBLE_EQ(seq.positions[k].x, static_cast<double>(2 + k) + 2.0);
    EXPECT_DOUBLE_EQ(seq.positions[k].y, 7.0);
  }
}

TEST(Image, BilinearResizeOracle) {
  Raster flat(10, 6, 77);
  auto r = resize_bilinear(flat, 64, 64);
  for (auto p : r.pixels) EXPECT_EQ(p, 77);
  // 2x2 -> 1x1 under half-pixel centers averages all four.
  Raster q(2, 2);
  q.at(0, 0, 0) = 0; q.at(1, 0, 0) = 100; q.at(0, 1, 0) = 200; q.at(1, 1, 0) = 40;
  EXPECT_EQ(resize_bilinear(q, 1, 1).at(0, 0, 0), 85);
}

TEST(Image, PngRoundTripAndDirectoryLoad) {
  auto dir = std::filesystem::temp_directory_path() / "vad_ingest_test";
  std::filesystem::remove_all(dir);
  auto v = make_video(12, 16, 8);
  for (const auto& f : v.frames) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", f.frame_index);
    save_png(f.image, dir / name);
  }
  auto loaded = load_video_dir(dir, "v");
  ASSERT_EQ(loaded.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(loaded.frames[i].image, v.frames[i].image);
  std::filesystem::remove_all(dir);
}
