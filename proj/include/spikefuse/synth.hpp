#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spikefuse/core.hpp"
#include "spikefuse/data_io.hpp"
#include "spikefuse/error.hpp"
#include "spikefuse/rng.hpp"
#include "spikefuse/threading.hpp"

namespace spikefuse {

enum class GestureKind : int {
  SwipeLeft = 0,
  SwipeRight = 1,
  SwipeUp = 2,
  Push = 3,
  Pull = 4,
  Circle = 5,
};

inline constexpr int kGestureKindCount = 6;

inline const char* gesture_name(GestureKind k) {
  switch (k) {
    case GestureKind::SwipeLeft: return "swipe-left";
    case GestureKind::SwipeRight: return "swipe-right";
    case GestureKind::SwipeUp: return "swipe-up";
    case GestureKind::Push: return "push";
    case GestureKind::Pull: return "pull";
    case GestureKind::Circle: return "circle";
  }
  return "?";
}

inline std::optional<GestureKind> gesture_from_name(const std::string& s) {
  for (int i = 0; i < kGestureKindCount; ++i)
    if (s == gesture_name(static_cast<GestureKind>(i)))
      return static_cast<GestureKind>(i);
  return std::nullopt;
}

// Scene and sensor parameters for the generator. Defaults mirror a bimodal
// rig: event camera at 480x360, depth camera at 640x480 and 30 fps.
struct SynthConfig {
  int event_width = 480;
  int event_height = 360;
  int depth_width = 640;
  int depth_height = 480;
  double fps = 30.0;
  double duration_ms = 2000.0;
  double d_max = 4000.0;        // keep all depths below the encoder range
  double sim_step_ms = 2.0;     // event simulation granularity
  int noise_events = 150;       // uniform background activity
};

struct SynthSample {
  EventStream events;
  DepthSequence depth;
  int label = 0;
};

namespace detail {

struct SceneParams {
  double radius;           // normalized, relative to min(w,h)
  double cx0, cy0;         // start position, normalized
  double vx, vy;           // normalized units per ms
  double orbit_r;          // circle gesture
  double phase;
  double depth0, depth1;   // disk depth ramp endpoints (mm)
  double wobble_amp, wobble_period_ms, wobble_phase;
};

inline SceneParams scene_params(GestureKind kind, std::uint64_t seed,
                                const SynthConfig& cfg) {
  Rng rng(derive_seed(seed, 0x5CE11Eu, static_cast<std::uint64_t>(kind)));
  SceneParams p{};
  p.radius = 0.09 * rng.uniform(0.8, 1.2);
  p.orbit_r = 0.0;
  p.phase = 0.0;
  p.wobble_amp = 0.0;
  p.wobble_period_ms = 250.0;
  p.wobble_phase = rng.uniform(0.0, 6.283185307179586);
  const double travel = 0.55 * rng.uniform(0.85, 1.15);  // per sequence
  const double speed = travel / cfg.duration_ms;
  const double drift = speed * rng.uniform(-0.15, 0.15);
  const double jx = rng.uniform(-0.05, 0.05);
  const double jy = rng.uniform(-0.05, 0.05);
  p.depth0 = p.depth1 = 1500.0 + rng.uniform(-150.0, 150.0);
  switch (kind) {
    case GestureKind::SwipeLeft:
      p.cx0 = 0.78 + jx;
      p.cy0 = 0.5 + jy;
      p.vx = -speed;
      p.vy = drift;
      break;
    case GestureKind::SwipeRight:
      p.cx0 = 0.22 + jx;
      p.cy0 = 0.5 + jy;
      p.vx = speed;
      p.vy = drift;
      break;
    case GestureKind::SwipeUp:
      p.cx0 = 0.5 + jx;
      p.cy0 = 0.78 + jy;
      p.vx = drift;
      p.vy = -speed;
      break;
    case GestureKind::Push:
      p.cx0 = 0.5 + jx;
      p.cy0 = 0.5 + jy;
      p.vx = p.vy = 0.0;
      p.depth0 = 2700.0 + rng.uniform(-80.0, 80.0);
      p.depth1 = 800.0 + rng.uniform(-80.0, 80.0);
      p.wobble_amp = 0.015;
      break;
    case GestureKind::Pull:
      p.cx0 = 0.5 + jx;
      p.cy0 = 0.5 + jy;
      p.vx = p.vy = 0.0;
      p.depth0 = 800.0 + rng.uniform(-80.0, 80.0);
      p.depth1 = 2700.0 + rng.uniform(-80.0, 80.0);
      p.wobble_amp = 0.015;
      break;
    case GestureKind::Circle:
      p.orbit_r = 0.18 * rng.uniform(0.85, 1.15);
      p.cx0 = 0.5 + jx * 0.5;
      p.cy0 = 0.5 + jy * 0.5;
      p.vx = p.vy = 0.0;
      p.phase = rng.uniform(0.0, 6.283185307179586);
      break;
  }
  return p;
}

inline void disk_at(const SceneParams& p, GestureKind kind, double t_ms,
                    double duration_ms, double& cx, double& cy, double& r) {
  if (kind == GestureKind::Circle) {
    const double a = p.phase + 6.283185307179586 * t_ms / duration_ms;
    cx = p.cx0 + p.orbit_r * std::cos(a);
    cy = p.cy0 + p.orbit_r * std::sin(a);
  } else {
    cx = p.cx0 + p.vx * t_ms;
    cy = p.cy0 + p.vy * t_ms;
  }
  r = p.radius;
  if (p.wobble_amp > 0.0)
    r *= 1.0 + p.wobble_amp *
                   std::sin(6.283185307179586 * t_ms / p.wobble_period_ms +
                            p.wobble_phase);
}

inline double disk_depth(const SceneParams& p, double t_ms,
                         double duration_ms) {
  const double f = t_ms / duration_ms;
  return p.depth0 + (p.depth1 - p.depth0) * f;
}

inline bool covered(double px, double py, double cx, double cy, double r) {
  const double dx = px - cx;
  const double dy = py - cy;
  return dx * dx + dy * dy <= r * r;
}

}  // namespace detail

// Renders one gesture deterministically from (kind, seed): a disk moving
// along the kind's trajectory. Events fire where the disk edge crosses
// pixels (ON entering, OFF leaving); depth frames render the disk nearer
// than the static background, with push/pull ramping the disk depth.
inline SynthSample synth_gesture(GestureKind kind, std::uint64_t seed,
                                 const SynthConfig& cfg = SynthConfig{}) {
  const detail::SceneParams p = detail::scene_params(kind, seed, cfg);
  SynthSample out;
  out.label = static_cast<int>(kind);

  // --- events ---
  const int ew = cfg.event_width, eh = cfg.event_height;
  const double escale = static_cast<double>(std::min(ew, eh));
  out.events.width = ew;
  out.events.height = eh;
  const long n_instants =
      std::max<long>(1, std::llround(cfg.duration_ms / cfg.sim_step_ms));
  std::vector<Event> pending;
  double pcx, pcy, pr;
  detail::disk_at(p, kind, 0.0, cfg.duration_ms, pcx, pcy, pr);
  for (long i = 1; i <= n_instants; ++i) {
    const double t_ms = static_cast<double>(i) * cfg.sim_step_ms;
    double cx, cy, r;
    detail::disk_at(p, kind, t_ms, cfg.duration_ms, cx, cy, r);
    const double pcx_px = pcx * ew, pcy_px = pcy * eh, pr_px = pr * escale;
    const double cx_px = cx * ew, cy_px = cy * eh, r_px = r * escale;
    const int x0 = std::max(
        0, static_cast<int>(std::floor(std::min(pcx_px - pr_px, cx_px - r_px))) - 1);
    const int x1 = std::min(
        ew - 1,
        static_cast<int>(std::ceil(std::max(pcx_px + pr_px, cx_px + r_px))) + 1);
    const int y0 = std::max(
        0, static_cast<int>(std::floor(std::min(pcy_px - pr_px, cy_px - r_px))) - 1);
    const int y1 = std::min(
        eh - 1,
        static_cast<int>(std::ceil(std::max(pcy_px + pr_px, cy_px + r_px))) + 1);
    pending.clear();
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const bool was = detail::covered(px, py, pcx_px, pcy_px, pr_px);
        const bool now = detail::covered(px, py, cx_px, cy_px, r_px);
        if (was == now) continue;
        Event e;
        // spread events inside the simulation window, deterministically
        const std::uint64_t jitter =
            derive_seed(seed, 0x11, static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(y) * ew + x) %
            static_cast<std::uint64_t>(cfg.sim_step_ms * 1000.0);
        e.t_us = static_cast<std::uint64_t>((t_ms - cfg.sim_step_ms) * 1000.0) +
                 jitter;
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        e.polarity = now ? Polarity::On : Polarity::Off;
        pending.push_back(e);
      }
    }
    std::stable_sort(pending.begin(), pending.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    out.events.events.insert(out.events.events.end(), pending.begin(),
                             pending.end());
    pcx = cx;
    pcy = cy;
    pr = r;
  }
  // background noise, identical statistics for every kind
  Rng noise_rng(derive_seed(seed, 0x4015Eu, static_cast<std::uint64_t>(kind)));
  std::vector<Event> noise;
  for (int i = 0; i < cfg.noise_events; ++i) {
    Event e;
    e.t_us = static_cast<std::uint64_t>(
        noise_rng.uniform(0.0, cfg.duration_ms) * 1000.0);
    e.x = static_cast<std::uint16_t>(noise_rng.next_below(ew));
    e.y = static_cast<std::uint16_t>(noise_rng.next_below(eh));
    e.polarity = noise_rng.bernoulli(0.5) ? Polarity::On : Polarity::Off;
    noise.push_back(e);
  }
  out.events.events.insert(out.events.events.end(), noise.begin(), noise.end());
  std::stable_sort(out.events.events.begin(), out.events.events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  out.events.validate();

  // --- depth ---
  const int dw = cfg.depth_width, dh = cfg.depth_height;
  const double dscale = static_cast<double>(std::min(dw, dh));
  out.depth.width = dw;
  out.depth.height = dh;
  out.depth.fps = cfg.fps;
  const long n_frames =
      std::max<long>(2, std::llround(cfg.duration_ms * cfg.fps / 1000.0));
  // static background with a mild vertical gradient and a few dead pixels
  std::vector<std::uint16_t> background(static_cast<std::size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x)
      background[static_cast<std::size_t>(y) * dw + x] = static_cast<std::uint16_t>(
          3300.0 + 300.0 * static_cast<double>(y) / dh);
  Rng hole_rng(derive_seed(seed, 0x401Eu));
  const int n_holes = static_cast<int>(0.003 * dw * dh);
  for (int i = 0; i < n_holes; ++i)
    background[hole_rng.next_below(background.size())] = 0;

  out.depth.frames.reserve(static_cast<std::size_t>(n_frames));
  for (long f = 0; f < n_frames; ++f) {
    const double t_ms = static_cast<double>(f) * (1000.0 / cfg.fps);
    double cx, cy, r;
    detail::disk_at(p, kind, t_ms, cfg.duration_ms, cx, cy, r);
    // depth camera does not see the event-path wobble
    r = p.radius;
    const double d_disk = detail::disk_depth(p, t_ms, cfg.duration_ms);
    std::vector<std::uint16_t> frame = background;
    const double cx_px = cx * dw, cy_px = cy * dh, r_px = r * dscale;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx_px - r_px)) - 1);
    const int x1 = std::min(dw - 1, static_cast<int>(std::ceil(cx_px + r_px)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy_px - r_px)) - 1);
    const int y1 = std::min(dh - 1, static_cast<int>(std::ceil(cy_px + r_px)) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (detail::covered(x + 0.5, y + 0.5, cx_px, cy_px, r_px))
          frame[static_cast<std::size_t>(y) * dw + x] =
              static_cast<std::uint16_t>(d_disk);
    out.depth.frames.push_back(std::move(frame));
  }
  out.depth.validate();
  return out;
}

// Writes event/depth files plus a manifest with a stratified, seeded 80/20
// split. The output tree is a pure function of (classes, n_per_class, seed).
inline DatasetManifest generate_dataset(int n_per_class,
                                        const std::vector<GestureKind>& classes,
                                        std::uint64_t seed,
                                        const std::string& out_dir,
                                        const SynthConfig& cfg = SynthConfig{},
                                        int workers = 1) {
  namespace fs = std::filesystem;
  if (n_per_class < 1)
    throw ConfigError("generate_dataset: n_per_class must be >= 1");
  if (classes.empty())
    throw ConfigError("generate_dataset: need at least one class");
  fs::create_directories(fs::path(out_dir) / "events");
  fs::create_directories(fs::path(out_dir) / "depth");

  DatasetManifest manifest;
  for (GestureKind k : classes) manifest.classes.push_back(gesture_name(k));

  // stratified split: per class, shuffle indices and mark the first 80% train
  std::vector<std::vector<bool>> is_train(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<int> idx(static_cast<std::size_t>(n_per_class));
    for (int i = 0; i < n_per_class; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, 0x5911u, c));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.next_below(i)]);
    const int n_train = (n_per_class * 4) / 5;
    is_train[c].assign(static_cast<std::size_t>(n_per_class), false);
    for (int i = 0; i < n_train; ++i)
      is_train[c][static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
          true;
  }

  const std::size_t total = classes.size() * static_cast<std::size_t>(n_per_class);
  std::vector<ManifestSample> samples(total);
  parallel_for(total, workers, [&](std::size_t j) {
    const std::size_t c = j / static_cast<std::size_t>(n_per_class);
    const int i = static_cast<int>(j % static_cast<std::size_t>(n_per_class));
    const GestureKind kind = classes[c];
    char idx_buf[16];
    std::snprintf(idx_buf, sizeof idx_buf, "%03d", i);
    const std::string id = std::string(gesture_name(kind)) + "_" + idx_buf;
    const SynthSample sample =
        synth_gesture(kind, derive_seed(seed, 0x5A3Du, c, i), cfg);
    const std::string event_rel = "events/" + id + ".evs";
    const std::string depth_rel = "depth/" + id + ".dps";
    write_events(sample.events, (fs::path(out_dir) / event_rel).string());
    write_depth(sample.depth, (fs::path(out_dir) / depth_rel).string());
    ManifestSample& ms = samples[j];
    ms.id = id;
    ms.label = static_cast<int>(c);
    ms.label_name = gesture_name(kind);
    ms.event_path = event_rel;
    ms.depth_path = depth_rel;
    ms.split = is_train[c][static_cast<std::size_t>(i)] ? "train" : "test";
  });
  manifest.samples = std::move(samples);
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace spikefuse
