#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "spikefuse/synth.hpp"
#include "test_util.hpp"

using namespace spikefuse;

namespace {

SynthConfig small_cfg() {
  SynthConfig cfg;
  cfg.event_width = 96;
  cfg.event_height = 72;
  cfg.depth_width = 128;
  cfg.depth_height = 96;
  cfg.duration_ms = 1000.0;
  cfg.noise_events = 40;
  return cfg;
}

// Least-squares slope of mean event x over fixed time windows.
double centroid_slope(const EventStream& s, double duration_ms,
                      int n_windows) {
  std::vector<double> sum_x(static_cast<std::size_t>(n_windows), 0.0);
  std::vector<long> count(static_cast<std::size_t>(n_windows), 0);
  for (const Event& e : s.events) {
    const int w = std::min<int>(
        n_windows - 1,
        static_cast<int>(static_cast<double>(e.t_us) / 1000.0 / duration_ms *
                         n_windows));
    sum_x[static_cast<std::size_t>(w)] += e.x;
    count[static_cast<std::size_t>(w)]++;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int w = 0; w < n_windows; ++w) {
    if (count[static_cast<std::size_t>(w)] == 0) continue;
    const double mean = sum_x[static_cast<std::size_t>(w)] /
                        static_cast<double>(count[static_cast<std::size_t>(w)]);
    sx += w;
    sy += mean;
    sxx += static_cast<double>(w) * w;
    sxy += w * mean;
    ++n;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double frame_mean(const std::vector<std::uint16_t>& frame) {
  double acc = 0;
  long n = 0;
  for (std::uint16_t v : frame) {
    if (v == 0) continue;
    acc += v;
    ++n;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("synth_gesture is deterministic per (kind, seed)") {
  const SynthConfig cfg = small_cfg();
  for (int k = 0; k < kGestureKindCount; ++k) {
    const GestureKind kind = static_cast<GestureKind>(k);
    const SynthSample a = synth_gesture(kind, 12345, cfg);
    const SynthSample b = synth_gesture(kind, 12345, cfg);
    REQUIRE(a.events == b.events);
    REQUIRE(a.depth == b.depth);
    REQUIRE(a.label == k);
    const SynthSample c = synth_gesture(kind, 54321, cfg);
    REQUIRE(a.events.events != c.events.events);
  }
}

TEST_CASE("synthetic streams are structurally valid") {
  const SynthConfig cfg = small_cfg();
  for (int k = 0; k < kGestureKindCount; ++k) {
    const SynthSample s =
        synth_gesture(static_cast<GestureKind>(k), 777 + k, cfg);
    REQUIRE_NOTHROW(s.events.validate());
    REQUIRE_NOTHROW(s.depth.validate());
    REQUIRE(s.events.events.size() >
            static_cast<std::size_t>(cfg.noise_events));
    REQUIRE(s.depth.frames.size() == 30);  // 1000 ms at 30 fps
  }
}

TEST_CASE("swipe gestures move the event centroid in the right direction") {
  const SynthConfig cfg = small_cfg();
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    const SynthSample left =
        synth_gesture(GestureKind::SwipeLeft, seed, cfg);
    REQUIRE(centroid_slope(left.events, cfg.duration_ms, 5) < 0.0);
    const SynthSample right =
        synth_gesture(GestureKind::SwipeRight, seed, cfg);
    REQUIRE(centroid_slope(right.events, cfg.duration_ms, 5) > 0.0);
  }
}

TEST_CASE("push decreases and pull increases the scene's mean depth") {
  const SynthConfig cfg = small_cfg();
  for (std::uint64_t seed : {10ULL, 20ULL, 30ULL}) {
    const SynthSample push = synth_gesture(GestureKind::Push, seed, cfg);
    for (std::size_t f = 1; f < push.depth.frames.size(); ++f)
      REQUIRE(frame_mean(push.depth.frames[f]) <
              frame_mean(push.depth.frames[f - 1]));
    const SynthSample pull = synth_gesture(GestureKind::Pull, seed, cfg);
    for (std::size_t f = 1; f < pull.depth.frames.size(); ++f)
      REQUIRE(frame_mean(pull.depth.frames[f]) >
              frame_mean(pull.depth.frames[f - 1]));
  }
}

TEST_CASE("push/pull event streams look alike, depth tells them apart") {
  const SynthConfig cfg = small_cfg();
  const SynthSample push = synth_gesture(GestureKind::Push, 99, cfg);
  const SynthSample pull = synth_gesture(GestureKind::Pull, 99, cfg);
  // events: both are sparse rim wobble + noise, same order of magnitude
  const double ratio = static_cast<double>(push.events.events.size()) /
                       static_cast<double>(pull.events.events.size());
  REQUIRE(ratio > 0.5);
  REQUIRE(ratio < 2.0);
  // depth: opposite polarity balance
  const std::vector<DepthPolarity> pol_push = depth_polarity(
      push.depth.frames[10], push.depth.frames[11], 25.0);
  const std::vector<DepthPolarity> pol_pull = depth_polarity(
      pull.depth.frames[10], pull.depth.frames[11], 25.0);
  long on_push = 0, off_push = 0, on_pull = 0, off_pull = 0;
  for (DepthPolarity p : pol_push) {
    on_push += p == DepthPolarity::On;
    off_push += p == DepthPolarity::Off;
  }
  for (DepthPolarity p : pol_pull) {
    on_pull += p == DepthPolarity::On;
    off_pull += p == DepthPolarity::Off;
  }
  REQUIRE(off_push > on_push);  // approaching: depth decreases
  REQUIRE(on_pull > off_pull);
}

TEST_CASE("generate_dataset writes a stratified reproducible tree") {
  testutil::TempDir dir("synthset");
  const std::vector<GestureKind> classes = {
      GestureKind::SwipeLeft, GestureKind::SwipeRight, GestureKind::SwipeUp};
  const SynthConfig cfg = small_cfg();
  const DatasetManifest m =
      generate_dataset(10, classes, 7, dir.str(), cfg, 2);
  SECTION("counts and split sizes") {
    REQUIRE(m.samples.size() == 30);
    long train_n = 0, test_n = 0;
    for (const ManifestSample& s : m.samples)
      (s.split == "train" ? train_n : test_n)++;
    REQUIRE(train_n == 24);
    REQUIRE(test_n == 6);
    // stratified: each class contributes 8/2
    for (int c = 0; c < 3; ++c) {
      long ct = 0;
      for (const ManifestSample& s : m.samples)
        if (s.label == c && s.split == "train") ++ct;
      REQUIRE(ct == 8);
    }
  }
  SECTION("files exist and load") {
    for (const ManifestSample& s : m.samples) {
      REQUIRE_NOTHROW(read_events(dir.str() + "/" + s.event_path));
      REQUIRE_NOTHROW(read_depth(dir.str() + "/" + s.depth_path));
    }
  }
  SECTION("same seed reproduces identical bytes") {
    testutil::TempDir dir2("synthset2");
    generate_dataset(10, classes, 7, dir2.str(), cfg, 1);
    for (const ManifestSample& s : m.samples) {
      REQUIRE(read_file_bytes(dir.str() + "/" + s.event_path) ==
              read_file_bytes(dir2.str() + "/" + s.event_path));
      REQUIRE(read_file_bytes(dir.str() + "/" + s.depth_path) ==
              read_file_bytes(dir2.str() + "/" + s.depth_path));
    }
    REQUIRE(read_file_bytes(dir.str() + "/manifest.json") ==
            read_file_bytes(dir2.str() + "/manifest.json"));
  }
  SECTION("different seed changes the data") {
    testutil::TempDir dir3("synthset3");
    generate_dataset(10, classes, 8, dir3.str(), cfg, 1);
    REQUIRE(read_file_bytes(dir.str() + "/" + m.samples[0].event_path) !=
            read_file_bytes(dir3.str() + "/" + m.samples[0].event_path));
  }
}
