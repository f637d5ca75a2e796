#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikefuse/error.hpp"

namespace spikefuse {

enum class ResetMode : std::uint8_t { Subtract = 0, ToZero = 1 };

// Leaky integrate-and-fire constants plus the surrogate-derivative shape.
struct LifParams {
  double threshold = 1.25;
  double voltage_decay = 0.3;  // per-step fraction, dt-independent
  double current_decay = 1.0;  // 1.0 makes the current state memoryless
  ResetMode reset = ResetMode::Subtract;
  double surrogate_scale = 1.0;
  double surrogate_width = 3.0;

  void validate() const {
    if (!(threshold > 0.0)) throw ConfigError("lif: threshold must be > 0");
    if (voltage_decay < 0.0 || voltage_decay > 1.0)
      throw ConfigError("lif: voltage_decay must lie in [0,1]");
    if (current_decay < 0.0 || current_decay > 1.0)
      throw ConfigError("lif: current_decay must lie in [0,1]");
    if (!(surrogate_scale > 0.0))
      throw ConfigError("lif: surrogate_scale must be > 0");
    if (!(surrogate_width > 0.0))
      throw ConfigError("lif: surrogate_width must be > 0");
  }

  bool operator==(const LifParams&) const = default;
};

// Per-neuron dynamic state: synaptic current and post-reset membrane.
struct LifState {
  std::vector<double> current;
  std::vector<double> membrane;

  explicit LifState(std::size_t n = 0) : current(n, 0.0), membrane(n, 0.0) {}
  std::size_t size() const { return membrane.size(); }
};

// Fast-sigmoid derivative centred at the threshold; the differentiable
// stand-in for the spike nonlinearity.
inline double surrogate_grad(double u_pre_reset, const LifParams& p) {
  const double z = 1.0 + p.surrogate_width * std::fabs(u_pre_reset - p.threshold);
  return p.surrogate_scale / (z * z);
}

// Smooth saturating spike used by the gradient-check relaxation. Its exact
// derivative with respect to the membrane is surrogate_grad, so analytic
// backward sweeps can be validated against finite differences.
inline double soft_spike(double u_pre_reset, const LifParams& p) {
  const double z = u_pre_reset - p.threshold;
  const double a = p.surrogate_scale / p.surrogate_width;
  const double h = z >= 0.0 ? a * (1.0 - 1.0 / (1.0 + p.surrogate_width * z))
                            : a * (1.0 / (1.0 - p.surrogate_width * z) - 1.0);
  return a + h;  // in (0, 2a), equals a at the threshold
}

// One discrete step of the LIF recursion over a population. Returns the
// post-reset state; `spikes` receives 0/1 per neuron.
inline void lif_step(LifState& state, std::span<const double> net_input,
                     const LifParams& p, std::vector<std::uint8_t>& spikes,
                     long step_for_errors = -1) {
  if (net_input.size() != state.size())
    throw ShapeError("lif_step: input size does not match state");
  spikes.assign(state.size(), 0);
  const double keep_i = 1.0 - p.current_decay;
  const double keep_v = 1.0 - p.voltage_decay;
  for (std::size_t n = 0; n < state.size(); ++n) {
    if (!std::isfinite(net_input[n]))
      throw NumericError(
          "lif_step: non-finite input at neuron " + std::to_string(n) +
          (step_for_errors >= 0 ? " step " + std::to_string(step_for_errors)
                                : ""));
    const double i_new = keep_i * state.current[n] + net_input[n];
    const double u_pre = keep_v * state.membrane[n] + i_new;
    const bool fired = u_pre >= p.threshold;
    spikes[n] = fired ? 1 : 0;
    state.current[n] = i_new;
    state.membrane[n] =
        fired ? (p.reset == ResetMode::Subtract ? u_pre - p.threshold : 0.0)
              : u_pre;
  }
}

struct LifForwardResult {
  // spikes[t][n] and the pre-reset membrane trace[t][n]; the trace is what
  // the backward pass differentiates through.
  std::vector<std::vector<std::uint8_t>> spikes;
  std::vector<std::vector<double>> membrane_trace;
};

// Runs the LIF recursion from a zero state over net_input[t][n].
inline LifForwardResult lif_forward(
    const std::vector<std::vector<double>>& net_input, const LifParams& p) {
  if (net_input.empty()) throw ShapeError("lif_forward: need t_steps >= 1");
  p.validate();
  const std::size_t n_neurons = net_input.front().size();
  LifState state(n_neurons);
  LifForwardResult out;
  out.spikes.resize(net_input.size());
  out.membrane_trace.resize(net_input.size());
  const double keep_i = 1.0 - p.current_decay;
  const double keep_v = 1.0 - p.voltage_decay;
  for (std::size_t t = 0; t < net_input.size(); ++t) {
    if (net_input[t].size() != n_neurons)
      throw ShapeError("lif_forward: ragged input at step " +
                       std::to_string(t));
    std::vector<std::uint8_t>& spikes = out.spikes[t];
    std::vector<double>& trace = out.membrane_trace[t];
    spikes.assign(n_neurons, 0);
    trace.assign(n_neurons, 0.0);
    for (std::size_t n = 0; n < n_neurons; ++n) {
      if (!std::isfinite(net_input[t][n]))
        throw NumericError("lif_forward: non-finite input at neuron " +
                           std::to_string(n) + " step " + std::to_string(t));
      const double i_new = keep_i * state.current[n] + net_input[t][n];
      const double u_pre = keep_v * state.membrane[n] + i_new;
      trace[n] = u_pre;
      const bool fired = u_pre >= p.threshold;
      spikes[n] = fired ? 1 : 0;
      state.current[n] = i_new;
      state.membrane[n] =
          fired ? (p.reset == ResetMode::Subtract ? u_pre - p.threshold : 0.0)
                : u_pre;
    }
  }
  return out;
}

}  // namespace spikefuse
