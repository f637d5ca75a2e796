#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spikefuse/error.hpp"

namespace spikefuse {

enum class Polarity : std::uint8_t { Off = 0, On = 1 };

// Per-pixel polarity of a depth difference. None marks no-change or invalid.
enum class DepthPolarity : std::uint8_t { None = 0, On = 1, Off = 2 };

// Dense binary spike occupancy over (channel, y, x, time step).
//
// Storage is bit-packed per neuron: each flat neuron index (c-major, then y,
// then x) owns a padded run of 64-bit words covering its t_steps bits. The
// flat order is fixed; checkpoints and dumps rely on it.
class SpikeTensor {
 public:
  SpikeTensor() = default;

  SpikeTensor(int channels, int height, int width, long t_steps, double dt)
      : channels_(channels),
        height_(height),
        width_(width),
        t_steps_(t_steps),
        dt_(dt) {
    if (channels <= 0 || height <= 0 || width <= 0 || t_steps <= 0)
      throw ShapeError("SpikeTensor dimensions must be positive");
    if (!(dt > 0.0)) throw ShapeError("SpikeTensor dt must be > 0");
    words_per_neuron_ = static_cast<std::size_t>((t_steps + 63) / 64);
    words_.assign(static_cast<std::size_t>(neuron_count()) * words_per_neuron_,
                  0);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  long t_steps() const { return t_steps_; }
  double dt() const { return dt_; }
  double duration_ms() const { return static_cast<double>(t_steps_) * dt_; }

  long neuron_count() const {
    return static_cast<long>(channels_) * height_ * width_;
  }

  long flat_index(int c, int y, int x) const {
    check_cyx(c, y, x);
    return (static_cast<long>(c) * height_ + y) * width_ + x;
  }

  bool get(int c, int y, int x, long t) const {
    return get_flat(flat_index(c, y, x), t);
  }

  void set(int c, int y, int x, long t, bool v = true) {
    set_flat(flat_index(c, y, x), t, v);
  }

  bool get_flat(long neuron, long t) const {
    check_neuron_t(neuron, t);
    const std::size_t bit = static_cast<std::size_t>(t);
    return (word(neuron, bit / 64) >> (bit % 64)) & 1ULL;
  }

  void set_flat(long neuron, long t, bool v = true) {
    check_neuron_t(neuron, t);
    const std::size_t bit = static_cast<std::size_t>(t);
    std::uint64_t& w = word(neuron, bit / 64);
    const std::uint64_t mask = 1ULL << (bit % 64);
    if (v)
      w |= mask;
    else
      w &= ~mask;
  }

  long total_spikes() const {
    long n = 0;
    for (std::uint64_t w : words_) n += std::popcount(w);
    return n;
  }

  // Sequential word access for one neuron's spike train.
  const std::uint64_t* neuron_words(long neuron) const {
    return words_.data() + static_cast<std::size_t>(neuron) * words_per_neuron_;
  }
  std::size_t words_per_neuron() const { return words_per_neuron_; }

  bool same_grid(const SpikeTensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ &&
           width_ == o.width_ && t_steps_ == o.t_steps_ && dt_ == o.dt_;
  }

  bool operator==(const SpikeTensor& o) const {
    return same_grid(o) && words_ == o.words_;
  }

  friend SpikeTensor concat_channels(const SpikeTensor&, const SpikeTensor&);

 private:
  void check_cyx(int c, int y, int x) const {
    if (c < 0 || c >= channels_ || y < 0 || y >= height_ || x < 0 ||
        x >= width_)
      throw BoundsError("SpikeTensor index (" + std::to_string(c) + "," +
                        std::to_string(y) + "," + std::to_string(x) +
                        ") out of range");
  }
  void check_neuron_t(long neuron, long t) const {
    if (neuron < 0 || neuron >= neuron_count())
      throw BoundsError("SpikeTensor neuron index " + std::to_string(neuron) +
                        " out of range");
    if (t < 0 || t >= t_steps_)
      throw BoundsError("SpikeTensor step " + std::to_string(t) +
                        " out of range");
  }
  std::uint64_t& word(long neuron, std::size_t wi) {
    return words_[static_cast<std::size_t>(neuron) * words_per_neuron_ + wi];
  }
  const std::uint64_t& word(long neuron, std::size_t wi) const {
    return words_[static_cast<std::size_t>(neuron) * words_per_neuron_ + wi];
  }

  int channels_ = 0, height_ = 0, width_ = 0;
  long t_steps_ = 0;
  double dt_ = 0.0;
  std::size_t words_per_neuron_ = 0;
  std::vector<std::uint64_t> words_;
};

// One sensor event: timestamp in microseconds, pixel position, polarity.
struct Event {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity polarity = Polarity::On;

  bool operator==(const Event&) const = default;
};

// Sparse, time-ordered stream of sensor events.
struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<Event> events;

  void validate() const {
    if (width <= 0 || height <= 0)
      throw ShapeError("EventStream dimensions must be positive");
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.t_us < prev)
        throw DomainError("EventStream timestamps not sorted at record " +
                          std::to_string(i));
      if (e.x >= width || e.y >= height)
        throw BoundsError("EventStream event " + std::to_string(i) +
                          " outside sensor area");
      prev = e.t_us;
    }
  }

  bool operator==(const EventStream&) const = default;
};

// Frames of millimetre depth values at a fixed frame rate. 0 marks an
// invalid pixel (no sensor return).
struct DepthSequence {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  std::vector<std::vector<std::uint16_t>> frames;  // row-major width*height

  void validate() const {
    if (width <= 0 || height <= 0)
      throw ShapeError("DepthSequence dimensions must be positive");
    if (!(fps > 0.0)) throw DomainError("DepthSequence fps must be > 0");
    if (frames.size() < 2)
      throw DomainError("DepthSequence needs at least 2 frames");
    const std::size_t px = static_cast<std::size_t>(width) * height;
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (frames[i].size() != px)
        throw ShapeError("DepthSequence frame " + std::to_string(i) +
                         " has wrong pixel count");
  }

  std::uint16_t at(std::size_t frame, int y, int x) const {
    return frames[frame][static_cast<std::size_t>(y) * width + x];
  }

  bool operator==(const DepthSequence&) const = default;
};

// Per-neuron spike rates over a time window.
struct RateVector {
  std::vector<double> rates;
  double window_ms = 0.0;
};

// Number of spikes emitted by one neuron over the whole sequence.
inline long spike_count(const SpikeTensor& t, long neuron) {
  if (neuron < 0 || neuron >= t.neuron_count())
    throw BoundsError("spike_count: neuron " + std::to_string(neuron) +
                      " out of range");
  const std::uint64_t* w = t.neuron_words(neuron);
  long n = 0;
  for (std::size_t i = 0; i < t.words_per_neuron(); ++i)
    n += std::popcount(w[i]);
  return n;
}

// Average spikes per window of window_ms for every neuron. The window must be
// commensurate with dt; a whole-sequence window yields the plain spike count.
inline RateVector spike_rate(const SpikeTensor& t, double window_ms) {
  if (!(window_ms > 0.0)) throw ConfigError("spike_rate: window must be > 0");
  const double q = window_ms / t.dt();
  if (std::fabs(q - std::llround(q)) > 1e-9)
    throw ConfigError("spike_rate: window " + std::to_string(window_ms) +
                      " ms not commensurate with dt " + std::to_string(t.dt()));
  RateVector rv;
  rv.window_ms = window_ms;
  rv.rates.resize(static_cast<std::size_t>(t.neuron_count()));
  const double windows = t.duration_ms() / window_ms;
  for (long n = 0; n < t.neuron_count(); ++n)
    rv.rates[static_cast<std::size_t>(n)] =
        static_cast<double>(spike_count(t, n)) / windows;
  return rv;
}

// Stacks b's channels after a's. Both tensors must agree on spatial and
// temporal dimensions.
inline SpikeTensor concat_channels(const SpikeTensor& a, const SpikeTensor& b) {
  if (a.height() != b.height() || a.width() != b.width() ||
      a.t_steps() != b.t_steps() || a.dt() != b.dt())
    throw ShapeError("concat_channels: tensors disagree on (height, width, "
                     "t_steps, dt)");
  SpikeTensor out(a.channels() + b.channels(), a.height(), a.width(),
                  a.t_steps(), a.dt());
  // The flat neuron order is c-major, so a's neurons occupy the first block
  // of out and b's the second; the padded word layout transfers verbatim.
  std::copy(a.words_.begin(), a.words_.end(), out.words_.begin());
  std::copy(b.words_.begin(), b.words_.end(),
            out.words_.begin() + static_cast<std::ptrdiff_t>(a.words_.size()));
  return out;
}

inline const char* polarity_name(Polarity p) {
  return p == Polarity::On ? "ON" : "OFF";
}

}  // namespace spikefuse
