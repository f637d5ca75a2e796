#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "spikefuse/neuron.hpp"
#include "spikefuse/rng.hpp"

using namespace spikefuse;

TEST_CASE("lif_step hand-checked updates") {
  LifParams p;  // threshold 1.25, vdecay 0.3, idecay 1.0, subtract
  SECTION("pure decay, no input") {
    LifState s(1);
    s.membrane[0] = 1.0;
    std::vector<std::uint8_t> spikes;
    const double in[] = {0.0};
    lif_step(s, std::span<const double>(in, 1), p, spikes);
    REQUIRE(s.membrane[0] == Catch::Approx(0.7));
    REQUIRE(spikes[0] == 0);
  }
  SECTION("suprathreshold input spikes and subtract-resets") {
    LifState s(1);
    std::vector<std::uint8_t> spikes;
    const double in[] = {1.3};
    lif_step(s, std::span<const double>(in, 1), p, spikes);
    REQUIRE(spikes[0] == 1);
    REQUIRE(s.current[0] == Catch::Approx(1.3));
    REQUIRE(s.membrane[0] == Catch::Approx(0.05).margin(1e-12));
  }
  SECTION("to-zero reset clears the membrane") {
    LifParams pz = p;
    pz.reset = ResetMode::ToZero;
    LifState s(1);
    std::vector<std::uint8_t> spikes;
    const double in[] = {2.0};
    lif_step(s, std::span<const double>(in, 1), pz, spikes);
    REQUIRE(spikes[0] == 1);
    REQUIRE(s.membrane[0] == 0.0);
  }
  SECTION("zero state and zero input are a fixed point") {
    LifState s(2);
    std::vector<std::uint8_t> spikes;
    const double in[] = {0.0, 0.0};
    lif_step(s, std::span<const double>(in, 2), p, spikes);
    REQUIRE(s.membrane[0] == 0.0);
    REQUIRE(s.current[1] == 0.0);
    REQUIRE(spikes[0] == 0);
  }
  SECTION("non-finite input throws") {
    LifState s(1);
    std::vector<std::uint8_t> spikes;
    const double in[] = {std::numeric_limits<double>::quiet_NaN()};
    REQUIRE_THROWS_AS(lif_step(s, std::span<const double>(in, 1), p, spikes),
                      NumericError);
  }
}

TEST_CASE("lif_forward constant drive crosses threshold at the known step") {
  // u-sequence 0.5, 0.85, 1.095, 1.2665 -> first spike on the fourth step
  LifParams p;
  std::vector<std::vector<double>> input(6, std::vector<double>(1, 0.5));
  const LifForwardResult r = lif_forward(input, p);
  REQUIRE(r.membrane_trace[0][0] == Catch::Approx(0.5));
  REQUIRE(r.membrane_trace[1][0] == Catch::Approx(0.85));
  REQUIRE(r.membrane_trace[2][0] == Catch::Approx(1.095));
  REQUIRE(r.membrane_trace[3][0] == Catch::Approx(1.2665));
  REQUIRE(r.spikes[0][0] == 0);
  REQUIRE(r.spikes[1][0] == 0);
  REQUIRE(r.spikes[2][0] == 0);
  REQUIRE(r.spikes[3][0] == 1);
}

TEST_CASE("lif_forward zero input stays silent") {
  LifParams p;
  std::vector<std::vector<double>> input(50, std::vector<double>(3, 0.0));
  const LifForwardResult r = lif_forward(input, p);
  for (const auto& step : r.spikes)
    for (std::uint8_t s : step) REQUIRE(s == 0);
}

namespace {

// Closed-form kernel-sum oracle for current_decay = 1 and subtract reset:
// u(t) = sum_{k<=t} x_k (1-l_v)^(t-k) - theta * sum_{spikes k<t} (1-l_v)^(t-k).
// Re-derives the spike train itself, so it is independent of lif_forward.
struct KernelOracle {
  std::vector<std::vector<double>> membrane;
  std::vector<std::vector<std::uint8_t>> spikes;
};

KernelOracle kernel_sum_oracle(const std::vector<std::vector<double>>& input,
                               const LifParams& p) {
  const std::size_t T = input.size();
  const std::size_t N = input.front().size();
  const double keep = 1.0 - p.voltage_decay;
  KernelOracle out;
  out.membrane.assign(T, std::vector<double>(N, 0.0));
  out.spikes.assign(T, std::vector<std::uint8_t>(N, 0));
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::size_t> spike_steps;
    for (std::size_t t = 0; t < T; ++t) {
      double u = 0.0;
      for (std::size_t k = 0; k <= t; ++k)
        u += input[k][n] * std::pow(keep, static_cast<double>(t - k));
      for (std::size_t k : spike_steps)
        u -= p.threshold * std::pow(keep, static_cast<double>(t - k));
      out.membrane[t][n] = u;
      if (u >= p.threshold) {
        out.spikes[t][n] = 1;
        spike_steps.push_back(t);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("lif_forward matches the kernel-sum oracle") {
  LifParams p;
  p.current_decay = 1.0;
  p.reset = ResetMode::Subtract;
  Rng rng(31337);
  for (int trial = 0; trial < 5; ++trial) {
    p.voltage_decay = rng.uniform(0.05, 0.95);
    std::vector<std::vector<double>> input(
        100, std::vector<double>(10, 0.0));
    for (auto& step : input)
      for (double& v : step) v = rng.uniform(-0.5, 1.0);
    const LifForwardResult got = lif_forward(input, p);
    const KernelOracle want = kernel_sum_oracle(input, p);
    for (std::size_t t = 0; t < input.size(); ++t)
      for (std::size_t n = 0; n < 10; ++n) {
        REQUIRE(got.membrane_trace[t][n] ==
                Catch::Approx(want.membrane[t][n]).margin(1e-9));
        REQUIRE(got.spikes[t][n] == want.spikes[t][n]);
      }
  }
}

TEST_CASE("surrogate_grad") {
  LifParams p;  // scale 1, width 3, threshold 1.25
  SECTION("maximal at the threshold") {
    REQUIRE(surrogate_grad(1.25, p) == Catch::Approx(1.0));
  }
  SECTION("symmetric around the threshold") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const double x = rng.uniform(0.0, 10.0);
      REQUIRE(surrogate_grad(1.25 + x, p) ==
              Catch::Approx(surrogate_grad(1.25 - x, p)));
    }
  }
  SECTION("unit offset with width 3 gives 1/16") {
    REQUIRE(surrogate_grad(2.25, p) == Catch::Approx(0.0625));
  }
  SECTION("strictly positive everywhere") {
    REQUIRE(surrogate_grad(-100.0, p) > 0.0);
    REQUIRE(surrogate_grad(100.0, p) > 0.0);
  }
}

TEST_CASE("surrogate integral is finite and threshold-independent") {
  auto trapezoid = [](const LifParams& p) {
    const double lo = p.threshold - 10.0, hi = p.threshold + 10.0;
    const int n = 200000;
    const double h = (hi - lo) / n;
    double acc = 0.5 * (surrogate_grad(lo, p) + surrogate_grad(hi, p));
    for (int i = 1; i < n; ++i) acc += surrogate_grad(lo + i * h, p);
    return acc * h;
  };
  LifParams a, b;
  a.threshold = 1.25;
  b.threshold = 5.0;
  const double ia = trapezoid(a), ib = trapezoid(b);
  REQUIRE(ia == Catch::Approx(ib).epsilon(1e-9));
  // closed form: 2 * (scale/width) * (1 - 1/(1 + 10*width))
  const double expect = 2.0 * (1.0 / 3.0) * (1.0 - 1.0 / 31.0);
  REQUIRE(ia == Catch::Approx(expect).epsilon(1e-6));
}

TEST_CASE("soft_spike is the surrogate's antiderivative") {
  LifParams p;
  p.surrogate_scale = 0.8;
  p.surrogate_width = 2.5;
  Rng rng(777);
  SECTION("finite-difference derivative equals surrogate_grad") {
    for (int i = 0; i < 200; ++i) {
      const double u = p.threshold + rng.uniform(-4.0, 4.0);
      const double h = 1e-6;
      const double fd = (soft_spike(u + h, p) - soft_spike(u - h, p)) / (2 * h);
      REQUIRE(fd == Catch::Approx(surrogate_grad(u, p)).epsilon(1e-5));
    }
  }
  SECTION("saturates into (0, 2*scale/width)") {
    const double a = p.surrogate_scale / p.surrogate_width;
    REQUIRE(soft_spike(p.threshold, p) == Catch::Approx(a));
    REQUIRE(soft_spike(-1e9, p) >= 0.0);
    REQUIRE(soft_spike(-1e9, p) == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(soft_spike(1e9, p) == Catch::Approx(2 * a).margin(1e-6));
  }
}

TEST_CASE("membrane trace is bounded by the total input magnitude") {
  Rng rng(2024);
  LifParams p;
  for (int trial = 0; trial < 10; ++trial) {
    p.voltage_decay = rng.uniform(0.0, 1.0);
    p.current_decay = rng.uniform(0.5, 1.0);
    std::vector<std::vector<double>> input(40, std::vector<double>(4, 0.0));
    double total = 0.0;
    for (auto& step : input)
      for (double& v : step) {
        v = rng.uniform(-1.0, 1.0);
      }
    for (std::size_t n = 0; n < 4; ++n) {
      total = 0.0;
      for (const auto& step : input) total += std::fabs(step[n]);
      const LifForwardResult r = lif_forward(input, p);
      for (const auto& tr : r.membrane_trace)
        REQUIRE(std::fabs(tr[n]) <= total + 1e-9);
    }
  }
}

TEST_CASE("scaling a constant positive input never delays the first spike") {
  LifParams p;
  auto first_spike = [&](double level) {
    std::vector<std::vector<double>> input(60, std::vector<double>(1, level));
    const LifForwardResult r = lif_forward(input, p);
    for (std::size_t t = 0; t < input.size(); ++t)
      if (r.spikes[t][0]) return static_cast<long>(t);
    return static_cast<long>(input.size());
  };
  Rng rng(606);
  for (int i = 0; i < 50; ++i) {
    const double base = rng.uniform(0.05, 2.0);
    const double scale = rng.uniform(1.0, 4.0);
    REQUIRE(first_spike(base * scale) <= first_spike(base));
  }
}

TEST_CASE("LifParams validation") {
  LifParams p;
  p.threshold = 0.0;
  REQUIRE_THROWS_AS(p.validate(), ConfigError);
  p = LifParams{};
  p.voltage_decay = 1.5;
  REQUIRE_THROWS_AS(p.validate(), ConfigError);
  p = LifParams{};
  p.surrogate_width = 0.0;
  REQUIRE_THROWS_AS(p.validate(), ConfigError);
}
