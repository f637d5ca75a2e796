#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spikefuse/core.hpp"
#include "spikefuse/error.hpp"

namespace spikefuse {

enum class DMaxMode : std::uint8_t { Fixed = 0, PerFrame = 1 };

// Settings shared by both encoding paths. d_max is the depth mapped to zero
// delay; in Fixed mode it is the sensor range, in PerFrame mode it is taken
// from each frame's maximum valid depth.
struct EncoderConfig {
  double d_max = 4000.0;          // mm, used when mode == Fixed
  double fps = 30.0;              // depth frame rate
  double dt = 1.0;                // ms per simulation step
  double polarity_epsilon = 25.0; // mm, minimum change that counts as motion
  int grid_height = 128;
  int grid_width = 128;
  DMaxMode d_max_mode = DMaxMode::Fixed;

  void validate() const {
    if (d_max_mode == DMaxMode::Fixed && !(d_max > 0.0))
      throw ConfigError("encoder: d_max must be > 0 in fixed mode");
    if (!(fps > 0.0)) throw ConfigError("encoder: fps must be > 0");
    if (!(dt > 0.0)) throw ConfigError("encoder: dt must be > 0");
    if (dt > 1000.0 / fps + 1e-9)
      throw ConfigError("encoder: dt must not exceed the frame window " +
                        std::to_string(1000.0 / fps) + " ms");
    if (polarity_epsilon < 0.0)
      throw ConfigError("encoder: polarity_epsilon must be >= 0");
    if (grid_height <= 0 || grid_width <= 0)
      throw ConfigError("encoder: target grid must be positive");
  }

  double frame_window_ms() const { return 1000.0 / fps; }
};

// Number of steps covering duration_ms at step size dt.
inline long quantize_steps(double duration_ms, double dt) {
  const long n = std::llround(duration_ms / dt);
  return n < 1 ? 1 : n;
}

// Time-to-first-spike delay for one depth value: deep pixels fire early,
// near pixels late, linearly across the frame window.
inline double ttfs_delay(double d, double d_max, double fps) {
  if (!(d_max > 0.0)) throw DomainError("ttfs_delay: d_max must be > 0");
  if (!(fps > 0.0)) throw DomainError("ttfs_delay: fps must be > 0");
  if (d < 0.0) throw DomainError("ttfs_delay: depth must be >= 0");
  if (d > d_max)
    throw DomainError("ttfs_delay: depth " + std::to_string(d) +
                      " exceeds d_max " + std::to_string(d_max));
  return (1.0 - d / d_max) * (1000.0 / fps);
}

// Per-pixel polarity between two depth frames. Pixels invalid (0) in either
// frame give None, as do changes within +-epsilon.
inline std::vector<DepthPolarity> depth_polarity(
    const std::vector<std::uint16_t>& prev,
    const std::vector<std::uint16_t>& curr, double epsilon) {
  if (prev.size() != curr.size())
    throw ShapeError("depth_polarity: frames differ in size");
  std::vector<DepthPolarity> out(prev.size(), DepthPolarity::None);
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (prev[i] == 0 || curr[i] == 0) continue;
    const double diff =
        static_cast<double>(curr[i]) - static_cast<double>(prev[i]);
    if (diff > epsilon)
      out[i] = DepthPolarity::On;
    else if (diff < -epsilon)
      out[i] = DepthPolarity::Off;
  }
  return out;
}

namespace detail {

// Maps a source pixel coordinate onto the target grid (floor scaling).
inline int scale_coord(int v, int src, int dst) {
  return static_cast<int>((static_cast<long>(v) * dst) / src);
}

}  // namespace detail

// TTFS encoding of a depth sequence into a two-channel spike tensor
// (channel 0 = ON/excitatory, channel 1 = OFF/inhibitory). Frame k >= 1
// emits, for every pixel whose depth changed by more than epsilon, exactly
// one spike inside the window [(k-1)*W, k*W).
inline SpikeTensor encode_depth(const DepthSequence& seq,
                                const EncoderConfig& cfg) {
  cfg.validate();
  seq.validate();
  if (std::fabs(cfg.fps - seq.fps) > 1e-9)
    throw ConfigError("encode_depth: config fps " + std::to_string(cfg.fps) +
                      " does not match sequence fps " +
                      std::to_string(seq.fps));
  const double window = cfg.frame_window_ms();
  const double duration = static_cast<double>(seq.frames.size()) * window;
  const long t_steps = quantize_steps(duration, cfg.dt);
  SpikeTensor out(2, cfg.grid_height, cfg.grid_width, t_steps, cfg.dt);

  for (std::size_t k = 1; k < seq.frames.size(); ++k) {
    const std::vector<std::uint16_t>& prev = seq.frames[k - 1];
    const std::vector<std::uint16_t>& curr = seq.frames[k];
    double d_max = cfg.d_max;
    if (cfg.d_max_mode == DMaxMode::PerFrame) {
      std::uint16_t m = 0;
      for (std::uint16_t d : curr) m = std::max(m, d);
      if (m == 0) continue;  // frame has no valid pixel
      d_max = static_cast<double>(m);
    }
    const std::vector<DepthPolarity> pol =
        depth_polarity(prev, curr, cfg.polarity_epsilon);
    const double window_start = static_cast<double>(k - 1) * window;
    // A delay equal to the full window would quantize into the next window;
    // clamp such spikes onto the window's last step.
    const long last_step_in_window = std::min(
        t_steps - 1,
        static_cast<long>(
            std::ceil(static_cast<double>(k) * window / cfg.dt - 1e-9)) -
            1);
    for (int y = 0; y < seq.height; ++y) {
      for (int x = 0; x < seq.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * seq.width + x;
        if (pol[i] == DepthPolarity::None) continue;
        const double t_ms =
            window_start + ttfs_delay(static_cast<double>(curr[i]), d_max,
                                      cfg.fps);
        long step = static_cast<long>(std::floor(t_ms / cfg.dt));
        step = std::min(step, last_step_in_window);
        const int channel = pol[i] == DepthPolarity::On ? 0 : 1;
        out.set(channel, detail::scale_coord(y, seq.height, cfg.grid_height),
                detail::scale_coord(x, seq.width, cfg.grid_width), step, true);
      }
    }
  }
  return out;
}

// Bins a sparse event stream into a two-channel spike tensor. Multiple
// events landing in the same (cell, step) saturate to a single spike; events
// at or beyond duration_ms are dropped.
inline SpikeTensor bin_events(const EventStream& stream,
                              const EncoderConfig& cfg, double duration_ms) {
  cfg.validate();
  stream.validate();
  if (!(duration_ms > 0.0))
    throw ConfigError("bin_events: duration must be > 0");
  const long t_steps = quantize_steps(duration_ms, cfg.dt);
  SpikeTensor out(2, cfg.grid_height, cfg.grid_width, t_steps, cfg.dt);
  for (const Event& e : stream.events) {
    const double t_ms = static_cast<double>(e.t_us) / 1000.0;
    const long step = static_cast<long>(std::floor(t_ms / cfg.dt));
    if (step >= t_steps) continue;
    const int channel = e.polarity == Polarity::On ? 0 : 1;
    out.set(channel, detail::scale_coord(e.y, stream.height, cfg.grid_height),
            detail::scale_coord(e.x, stream.width, cfg.grid_width), step,
            true);
  }
  return out;
}

}  // namespace spikefuse
