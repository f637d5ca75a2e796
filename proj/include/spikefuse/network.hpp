#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spikefuse/config.hpp"
#include "spikefuse/core.hpp"
#include "spikefuse/error.hpp"
#include "spikefuse/neuron.hpp"
#include "spikefuse/rng.hpp"
#include "spikefuse/threading.hpp"

namespace spikefuse {

enum class LayerKind : std::uint8_t {
  InputPool,
  Conv,
  Pool,
  Flatten,
  Dense,
  ConcatPoint,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::InputPool: return "input-pool";
    case LayerKind::Conv: return "conv";
    case LayerKind::Pool: return "pool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::ConcatPoint: return "concat-point";
  }
  return "?";
}

// One layer of the stack. Conv/pool/dense layers are followed by a LIF
// population; flatten is a pure reshape. LIF fields left unset fall back to
// the stack-wide parameters.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out_channels = 0;           // conv
  int kernel_h = 0, kernel_w = 0; // conv
  int stride = 1, pad = 0;        // conv
  bool norm = true;               // conv: mean batch norm on net inputs
  int pool_k = 0;                 // pool / input-pool
  int out_features = 0;           // dense
  double dropout = 0.0;           // on spike outputs, train mode only

  std::optional<double> threshold;
  std::optional<double> voltage_decay;
  std::optional<double> current_decay;
  std::optional<ResetMode> reset;
  std::optional<double> surrogate_scale;
  std::optional<double> surrogate_width;

  LifParams resolve_lif(const LifParams& base) const {
    LifParams p = base;
    if (threshold) p.threshold = *threshold;
    if (voltage_decay) p.voltage_decay = *voltage_decay;
    if (current_decay) p.current_decay = *current_decay;
    if (reset) p.reset = *reset;
    if (surrogate_scale) p.surrogate_scale = *surrogate_scale;
    if (surrogate_width) p.surrogate_width = *surrogate_width;
    return p;
  }

  bool spiking() const {
    return kind == LayerKind::InputPool || kind == LayerKind::Conv ||
           kind == LayerKind::Pool || kind == LayerKind::Dense;
  }
};

struct LayerShape {
  int c = 0, h = 0, w = 0;
  long count() const { return static_cast<long>(c) * h * w; }
  bool operator==(const LayerShape&) const = default;
};

namespace detail {

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace detail

// Output shape of one layer given its input shape.
inline LayerShape infer_layer_shape(const LayerSpec& spec,
                                    const LayerShape& in, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + " (" +
                            layer_kind_name(spec.kind) + ")";
  switch (spec.kind) {
    case LayerKind::InputPool:
    case LayerKind::Pool: {
      if (spec.pool_k < 1) throw ConfigError(where + ": pool k must be >= 1");
      return {in.c, detail::ceil_div(in.h, spec.pool_k),
              detail::ceil_div(in.w, spec.pool_k)};
    }
    case LayerKind::Conv: {
      if (spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1 ||
          spec.stride < 1 || spec.pad < 0)
        throw ConfigError(where + ": invalid conv geometry");
      const int oh = (in.h + 2 * spec.pad - spec.kernel_h) / spec.stride + 1;
      const int ow = (in.w + 2 * spec.pad - spec.kernel_w) / spec.stride + 1;
      if (oh < 1 || ow < 1)
        throw ConfigError(where + ": kernel larger than padded input");
      return {spec.out_channels, oh, ow};
    }
    case LayerKind::Flatten:
      return {static_cast<int>(in.count()), 1, 1};
    case LayerKind::Dense: {
      if (in.h != 1 || in.w != 1)
        throw ConfigError(where + ": dense needs flattened input");
      if (spec.out_features < 1)
        throw ConfigError(where + ": out_features must be >= 1");
      return {spec.out_features, 1, 1};
    }
    case LayerKind::ConcatPoint:
      throw ConfigError(where + ": concat-point is only valid inside a "
                        "fusion network");
  }
  throw ConfigError(where + ": unknown layer kind");
}

inline long layer_weight_count(const LayerSpec& spec, const LayerShape& in) {
  if (spec.kind == LayerKind::Conv)
    return static_cast<long>(spec.out_channels) * in.c * spec.kernel_h *
           spec.kernel_w;
  if (spec.kind == LayerKind::Dense)
    return static_cast<long>(spec.out_features) * in.count();
  return 0;
}

// ---------------------------------------------------------------------------
// Layer spec <-> text (used by config files and checkpoints)
// ---------------------------------------------------------------------------

inline std::string format_layer_spec(const LayerSpec& s) {
  std::string out = layer_kind_name(s.kind);
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  switch (s.kind) {
    case LayerKind::InputPool:
    case LayerKind::Pool:
      out += " k=" + std::to_string(s.pool_k);
      break;
    case LayerKind::Conv:
      out += " out=" + std::to_string(s.out_channels) + " kernel=" +
             std::to_string(s.kernel_h) + "x" + std::to_string(s.kernel_w) +
             " stride=" + std::to_string(s.stride) +
             " pad=" + std::to_string(s.pad);
      if (!s.norm) out += " norm=false";
      break;
    case LayerKind::Dense:
      out += " out=" + std::to_string(s.out_features);
      break;
    case LayerKind::Flatten:
    case LayerKind::ConcatPoint:
      break;
  }
  if (s.dropout > 0.0) out += " dropout=" + num(s.dropout);
  if (s.threshold) out += " threshold=" + num(*s.threshold);
  if (s.voltage_decay) out += " vdecay=" + num(*s.voltage_decay);
  if (s.current_decay) out += " idecay=" + num(*s.current_decay);
  if (s.reset)
    out += std::string(" reset=") +
           (*s.reset == ResetMode::Subtract ? "subtract" : "to-zero");
  if (s.surrogate_scale) out += " sscale=" + num(*s.surrogate_scale);
  if (s.surrogate_width) out += " swidth=" + num(*s.surrogate_width);
  return out;
}

inline LayerSpec parse_layer_spec(const std::string& line) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
    if (pos > start) tokens.push_back(line.substr(start, pos - start));
  }
  if (tokens.empty()) throw ConfigError("layer spec: empty line");

  LayerSpec s;
  const std::string& kind = tokens.front();
  if (kind == "input-pool")
    s.kind = LayerKind::InputPool;
  else if (kind == "conv")
    s.kind = LayerKind::Conv;
  else if (kind == "pool")
    s.kind = LayerKind::Pool;
  else if (kind == "flatten")
    s.kind = LayerKind::Flatten;
  else if (kind == "dense")
    s.kind = LayerKind::Dense;
  else if (kind == "concat-point")
    s.kind = LayerKind::ConcatPoint;
  else
    throw ConfigError("layer spec: unknown kind '" + kind + "'");

  auto to_int = [](const std::string& v, const std::string& key) {
    char* end = nullptr;
    long r = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      throw ConfigError("layer spec: " + key + " is not an integer: " + v);
    return static_cast<int>(r);
  };
  auto to_double = [](const std::string& v, const std::string& key) {
    char* end = nullptr;
    double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      throw ConfigError("layer spec: " + key + " is not a number: " + v);
    return r;
  };

  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::size_t eq = tokens[i].find('=');
    if (eq == std::string::npos)
      throw ConfigError("layer spec: expected key=value, got '" + tokens[i] +
                        "'");
    const std::string key = tokens[i].substr(0, eq);
    const std::string val = tokens[i].substr(eq + 1);
    if (key == "k")
      s.pool_k = to_int(val, key);
    else if (key == "out") {
      if (s.kind == LayerKind::Dense)
        s.out_features = to_int(val, key);
      else
        s.out_channels = to_int(val, key);
    } else if (key == "kernel") {
      const std::size_t x = val.find('x');
      if (x == std::string::npos) {
        s.kernel_h = s.kernel_w = to_int(val, key);
      } else {
        s.kernel_h = to_int(val.substr(0, x), key);
        s.kernel_w = to_int(val.substr(x + 1), key);
      }
    } else if (key == "stride")
      s.stride = to_int(val, key);
    else if (key == "pad")
      s.pad = to_int(val, key);
    else if (key == "norm") {
      if (val != "true" && val != "false")
        throw ConfigError("layer spec: norm must be true or false");
      s.norm = val == "true";
    } else if (key == "dropout")
      s.dropout = to_double(val, key);
    else if (key == "threshold")
      s.threshold = to_double(val, key);
    else if (key == "vdecay")
      s.voltage_decay = to_double(val, key);
    else if (key == "idecay")
      s.current_decay = to_double(val, key);
    else if (key == "reset") {
      if (val == "subtract")
        s.reset = ResetMode::Subtract;
      else if (val == "to-zero")
        s.reset = ResetMode::ToZero;
      else
        throw ConfigError("layer spec: reset must be subtract or to-zero");
    } else if (key == "sscale")
      s.surrogate_scale = to_double(val, key);
    else if (key == "swidth")
      s.surrogate_width = to_double(val, key);
    else
      throw ConfigError("layer spec: unknown key '" + key + "'");
  }
  if (s.dropout < 0.0 || s.dropout >= 1.0)
    throw ConfigError("layer spec: dropout must lie in [0,1)");
  return s;
}

// ---------------------------------------------------------------------------
// Network configuration
// ---------------------------------------------------------------------------

struct NetworkConfig {
  int in_channels = 2;
  int in_height = 128;
  int in_width = 128;
  long t_steps = 2000;
  double dt = 1.0;
  int n_classes = 0;
  std::uint64_t seed = 1;
  LifParams lif;
  std::vector<LayerSpec> layers;

  LayerShape input_shape() const { return {in_channels, in_height, in_width}; }

  void validate() const {
    if (in_channels < 1 || in_height < 1 || in_width < 1)
      throw ConfigError("network: input grid must be positive");
    if (t_steps < 1) throw ConfigError("network: t_steps must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("network: dt must be > 0");
    if (n_classes < 1) throw ConfigError("network: n_classes must be >= 1");
    lif.validate();
    if (layers.empty()) throw ConfigError("network: layer stack is empty");
    LayerShape shape = input_shape();
    for (std::size_t i = 0; i < layers.size(); ++i)
      shape = infer_layer_shape(layers[i], shape, i);
    const LayerSpec& last = layers.back();
    if (last.kind != LayerKind::Dense || last.out_features != n_classes)
      throw ConfigError("network: last layer must be dense with out = "
                        "n_classes");
  }
};

// Conv/pool feature extractor with two dense layers, sized for a 128x128
// input; hidden sizes are configuration defaults, not fixed by the model.
inline std::vector<LayerSpec> default_topology(int n_classes) {
  std::vector<LayerSpec> layers;
  layers.push_back(parse_layer_spec("input-pool k=4"));
  layers.push_back(parse_layer_spec("conv out=16 kernel=5x5 stride=1 pad=2"));
  layers.push_back(parse_layer_spec("pool k=2"));
  layers.push_back(parse_layer_spec("conv out=32 kernel=3x3 stride=1 pad=1"));
  layers.push_back(parse_layer_spec("pool k=2"));
  layers.push_back(parse_layer_spec("flatten"));
  layers.push_back(parse_layer_spec("dense out=512 dropout=0.1"));
  layers.push_back(parse_layer_spec("dense out=" + std::to_string(n_classes)));
  return layers;
}

// ---------------------------------------------------------------------------
// Layer stack: specs + shapes + weights; the unit the engine executes.
// ---------------------------------------------------------------------------

inline constexpr double kWeightInitGain = 2.0;

struct LayerStack {
  LayerShape input;
  long t_steps = 0;
  double dt = 1.0;
  LifParams lif;
  std::vector<LayerSpec> layers;
  std::vector<LayerShape> shapes;              // output shape per layer
  std::vector<std::vector<float>> weights;     // empty for weightless layers
  std::vector<std::vector<float>> bn_mean;     // running mean per conv layer

  void build() {
    shapes.clear();
    weights.clear();
    bn_mean.clear();
    LayerShape shape = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerShape out = infer_layer_shape(layers[i], shape, i);
      shapes.push_back(out);
      weights.emplace_back(
          static_cast<std::size_t>(layer_weight_count(layers[i], shape)), 0.0f);
      bn_mean.emplace_back(
          layers[i].kind == LayerKind::Conv && layers[i].norm
              ? static_cast<std::size_t>(layers[i].out_channels)
              : 0,
          0.0f);
      shape = out;
    }
  }

  void init_weights(std::uint64_t seed) {
    LayerShape shape = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (!weights[l].empty()) {
        long fan_in = 0;
        if (layers[l].kind == LayerKind::Conv)
          fan_in = static_cast<long>(shape.c) * layers[l].kernel_h *
                   layers[l].kernel_w;
        else
          fan_in = shape.count();
        const double bound = kWeightInitGain / std::sqrt(
                                  static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, 0x57A7u, l));
        for (float& w : weights[l])
          w = static_cast<float>(rng.uniform(-bound, bound));
      }
      std::fill(bn_mean[l].begin(), bn_mean[l].end(), 0.0f);
      shape = shapes[l];
    }
  }

  const LayerShape& shape_in(std::size_t l) const {
    return l == 0 ? input : shapes[l - 1];
  }
  const LayerShape& shape_out(std::size_t l) const { return shapes[l]; }

  LifParams lif_for(std::size_t l) const { return layers[l].resolve_lif(lif); }

  long weight_count() const {
    long n = 0;
    for (const auto& w : weights) n += static_cast<long>(w.size());
    return n;
  }

  // Index of the first layer owning trainable weights, or layers.size().
  std::size_t first_weighted() const {
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (!weights[l].empty()) return l;
    return layers.size();
  }
};

// ---------------------------------------------------------------------------
// Activation traces
// ---------------------------------------------------------------------------

// Layer output over all steps of one sample: bit rows per step in hard mode,
// float rows in the soft (gradient-check) relaxation.
struct ActTrace {
  long t_steps = 0;
  long n = 0;
  bool soft = false;
  std::size_t words_per_row = 0;
  std::vector<std::uint64_t> bits;  // hard: t_steps rows
  std::vector<double> vals;         // soft: t_steps * n

  static ActTrace hard(long t_steps, long n) {
    ActTrace a;
    a.t_steps = t_steps;
    a.n = n;
    a.words_per_row = static_cast<std::size_t>((n + 63) / 64);
    a.bits.assign(static_cast<std::size_t>(t_steps) * a.words_per_row, 0);
    return a;
  }
  static ActTrace make_soft(long t_steps, long n) {
    ActTrace a;
    a.t_steps = t_steps;
    a.n = n;
    a.soft = true;
    a.vals.assign(static_cast<std::size_t>(t_steps * n), 0.0);
    return a;
  }

  std::uint64_t* row(long t) {
    return bits.data() + static_cast<std::size_t>(t) * words_per_row;
  }
  const std::uint64_t* row(long t) const {
    return bits.data() + static_cast<std::size_t>(t) * words_per_row;
  }
  double* val_row(long t) {
    return vals.data() + static_cast<std::size_t>(t) * n;
  }
  const double* val_row(long t) const {
    return vals.data() + static_cast<std::size_t>(t) * n;
  }

  void set_bit(long t, long i) { row(t)[i / 64] |= 1ULL << (i % 64); }
  bool bit(long t, long i) const { return (row(t)[i / 64] >> (i % 64)) & 1ULL; }

  double value(long t, long i) const {
    return soft ? static_cast<double>(val_row(t)[i])
                : (bit(t, i) ? 1.0 : 0.0);
  }
};

// Converts an exchange tensor (neuron-major bits) into step-major rows.
inline ActTrace to_act_trace(const SpikeTensor& t) {
  ActTrace a = ActTrace::hard(t.t_steps(), t.neuron_count());
  for (long n = 0; n < t.neuron_count(); ++n) {
    const std::uint64_t* words = t.neuron_words(n);
    for (std::size_t wi = 0; wi < t.words_per_neuron(); ++wi) {
      std::uint64_t w = words[wi];
      while (w) {
        const int b = std::countr_zero(w);
        w &= w - 1;
        const long step = static_cast<long>(wi) * 64 + b;
        if (step < t.t_steps()) a.set_bit(step, n);
      }
    }
  }
  return a;
}

// The reverse conversion; used to expose layer outputs as SpikeTensors.
inline SpikeTensor to_spike_tensor(const ActTrace& a, const LayerShape& shape,
                                   double dt) {
  if (a.soft) throw UsageError("to_spike_tensor: soft traces are not binary");
  SpikeTensor t(shape.c, shape.h, shape.w, a.t_steps, dt);
  for (long step = 0; step < a.t_steps; ++step) {
    const std::uint64_t* row = a.row(step);
    for (std::size_t wi = 0; wi < a.words_per_row; ++wi) {
      std::uint64_t w = row[wi];
      while (w) {
        const int b = std::countr_zero(w);
        w &= w - 1;
        t.set_flat(static_cast<long>(wi) * 64 + b, step, true);
      }
    }
  }
  return t;
}

// Splices b's columns after a's, per step.
inline ActTrace concat_acts(const ActTrace& a, const ActTrace& b) {
  if (a.t_steps != b.t_steps || a.soft != b.soft)
    throw ShapeError("concat_acts: traces disagree");
  if (a.soft) {
    ActTrace out = ActTrace::make_soft(a.t_steps, a.n + b.n);
    for (long t = 0; t < a.t_steps; ++t) {
      std::memcpy(out.val_row(t), a.val_row(t), sizeof(double) * a.n);
      std::memcpy(out.val_row(t) + a.n, b.val_row(t), sizeof(double) * b.n);
    }
    return out;
  }
  ActTrace out = ActTrace::hard(a.t_steps, a.n + b.n);
  const std::size_t base = static_cast<std::size_t>(a.n) / 64;
  const int off = static_cast<int>(a.n % 64);
  for (long t = 0; t < a.t_steps; ++t) {
    const std::uint64_t* ra = a.row(t);
    const std::uint64_t* rb = b.row(t);
    std::uint64_t* ro = out.row(t);
    std::copy(ra, ra + a.words_per_row, ro);
    for (std::size_t i = 0; i < b.words_per_row; ++i) {
      const std::uint64_t w = rb[i];
      if (off == 0) {
        ro[base + i] |= w;
      } else {
        ro[base + i] |= w << off;
        if (base + i + 1 < out.words_per_row) ro[base + i + 1] |= w >> (64 - off);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Net-input buffers and the public per-layer operations
// ---------------------------------------------------------------------------

// Real-valued synaptic drive per neuron per step.
struct NetInput {
  long t_steps = 0;
  long neurons = 0;
  std::vector<double> values;  // t-major: values[t * neurons + n]

  NetInput() = default;
  NetInput(long t, long n)
      : t_steps(t), neurons(n),
        values(static_cast<std::size_t>(t * n), 0.0) {}

  double& at(long t, long n) {
    return values[static_cast<std::size_t>(t) * neurons + n];
  }
  double at(long t, long n) const {
    return values[static_cast<std::size_t>(t) * neurons + n];
  }
  double* row(long t) { return values.data() + static_cast<std::size_t>(t) * neurons; }
  const double* row(long t) const {
    return values.data() + static_cast<std::size_t>(t) * neurons;
  }
};

namespace detail {

template <typename Fn>
inline void for_active(const std::uint64_t* row, std::size_t words,
                       const std::uint64_t* mask, Fn&& fn) {
  for (std::size_t wi = 0; wi < words; ++wi) {
    std::uint64_t w = mask ? (row[wi] & mask[wi]) : row[wi];
    while (w) {
      const int b = std::countr_zero(w);
      w &= w - 1;
      fn(static_cast<long>(wi) * 64 + b);
    }
  }
}

inline bool mask_keeps(const std::uint64_t* mask, long i) {
  return !mask || ((mask[i / 64] >> (i % 64)) & 1ULL);
}

// Per-step 2-D cross-correlation of binary/soft activations with the kernel.
inline void net_input_conv(const ActTrace& in, const std::uint64_t* mask_bits,
                           const LayerShape& si, const LayerShape& so,
                           const LayerSpec& spec,
                           std::span<const float> weights, NetInput& out) {
  const int kh = spec.kernel_h, kw = spec.kernel_w;
  const int stride = spec.stride, pad = spec.pad;
  const long in_hw = static_cast<long>(si.h) * si.w;
  const long out_hw = static_cast<long>(so.h) * so.w;
  for (long t = 0; t < in.t_steps; ++t) {
    double* xrow = out.row(t);
    auto scatter = [&](long flat, double v) {
      const int ic = static_cast<int>(flat / in_hw);
      const long rem = flat % in_hw;
      const int iy = static_cast<int>(rem / si.w);
      const int ix = static_cast<int>(rem % si.w);
      for (int oc = 0; oc < so.c; ++oc) {
        const float* wbase =
            weights.data() +
            (static_cast<std::size_t>(oc) * si.c + ic) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          const int oy_num = iy + pad - ky;
          if (oy_num < 0 || oy_num % stride != 0) continue;
          const int oy = oy_num / stride;
          if (oy >= so.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ox_num = ix + pad - kx;
            if (ox_num < 0 || ox_num % stride != 0) continue;
            const int ox = ox_num / stride;
            if (ox >= so.w) continue;
            xrow[(static_cast<long>(oc) * so.h + oy) * so.w + ox] +=
                v * static_cast<double>(wbase[ky * kw + kx]);
          }
        }
      }
    };
    if (in.soft) {
      const double* vrow = in.val_row(t);
      for (long i = 0; i < in.n; ++i)
        if (vrow[i] != 0.0 && mask_keeps(mask_bits, i))
          scatter(i, static_cast<double>(vrow[i]));
    } else {
      for_active(in.row(t), in.words_per_row, mask_bits,
                 [&](long i) { scatter(i, 1.0); });
    }
  }
  (void)out_hw;
}

// Sum pooling with fixed weight 1/k^2; missing cells past the edge count as
// zero, which realizes pad-with-zero for non-divisible grids.
inline void net_input_pool(const ActTrace& in, const std::uint64_t* mask_bits,
                           const LayerShape& si, const LayerShape& so, int k,
                           NetInput& out) {
  const double inv = 1.0 / (static_cast<double>(k) * k);
  const long in_hw = static_cast<long>(si.h) * si.w;
  for (long t = 0; t < in.t_steps; ++t) {
    double* xrow = out.row(t);
    auto add = [&](long flat, double v) {
      const int c = static_cast<int>(flat / in_hw);
      const long rem = flat % in_hw;
      const int iy = static_cast<int>(rem / si.w);
      const int ix = static_cast<int>(rem % si.w);
      xrow[(static_cast<long>(c) * so.h + iy / k) * so.w + ix / k] += v * inv;
    };
    if (in.soft) {
      const double* vrow = in.val_row(t);
      for (long i = 0; i < in.n; ++i)
        if (vrow[i] != 0.0 && mask_keeps(mask_bits, i))
          add(i, static_cast<double>(vrow[i]));
    } else {
      for_active(in.row(t), in.words_per_row, mask_bits,
                 [&](long i) { add(i, 1.0); });
    }
  }
}

// Per-step matrix-vector product for dense layers.
inline void net_input_dense(const ActTrace& in, const std::uint64_t* mask_bits,
                            long out_features, std::span<const float> weights,
                            NetInput& out) {
  const long in_n = in.n;
  std::vector<long> active;
  for (long t = 0; t < in.t_steps; ++t) {
    double* xrow = out.row(t);
    if (in.soft) {
      const double* vrow = in.val_row(t);
      for (long o = 0; o < out_features; ++o) {
        const float* wrow = weights.data() + static_cast<std::size_t>(o) * in_n;
        double acc = 0.0;
        for (long j = 0; j < in_n; ++j)
          if (mask_keeps(mask_bits, j))
            acc += static_cast<double>(wrow[j]) * static_cast<double>(vrow[j]);
        xrow[o] = acc;
      }
    } else {
      active.clear();
      for_active(in.row(t), in.words_per_row, mask_bits,
                 [&](long i) { active.push_back(i); });
      if (active.empty()) continue;
      for (long o = 0; o < out_features; ++o) {
        const float* wrow = weights.data() + static_cast<std::size_t>(o) * in_n;
        double acc = 0.0;
        for (long j : active) acc += static_cast<double>(wrow[j]);
        xrow[o] += acc;
      }
    }
  }
}

}  // namespace detail

// Standard per-step cross-correlation of a spike tensor with conv weights.
inline NetInput conv_forward(const SpikeTensor& spikes,
                             std::span<const float> weights,
                             const LayerSpec& spec) {
  const LayerShape si{spikes.channels(), spikes.height(), spikes.width()};
  const LayerShape so = infer_layer_shape(spec, si, 0);
  if (static_cast<long>(weights.size()) != layer_weight_count(spec, si))
    throw ShapeError("conv_forward: weight count mismatch");
  NetInput out(spikes.t_steps(), so.count());
  const ActTrace acts = to_act_trace(spikes);
  detail::net_input_conv(acts, nullptr, si, so, spec, weights, out);
  return out;
}

// Sum pooling over k x k blocks with fixed weight 1/k^2.
inline NetInput pool_forward(const SpikeTensor& spikes, int k) {
  LayerSpec spec;
  spec.kind = LayerKind::Pool;
  spec.pool_k = k;
  const LayerShape si{spikes.channels(), spikes.height(), spikes.width()};
  const LayerShape so = infer_layer_shape(spec, si, 0);
  NetInput out(spikes.t_steps(), so.count());
  const ActTrace acts = to_act_trace(spikes);
  detail::net_input_pool(acts, nullptr, si, so, k, out);
  return out;
}

// Per-step matrix-vector product; spikes are consumed in flat neuron order.
inline NetInput dense_forward(const SpikeTensor& spikes,
                              std::span<const float> weights,
                              int out_features) {
  const long in_n = spikes.neuron_count();
  if (static_cast<long>(weights.size()) != in_n * out_features)
    throw ShapeError("dense_forward: weight count mismatch");
  NetInput out(spikes.t_steps(), out_features);
  const ActTrace acts = to_act_trace(spikes);
  detail::net_input_dense(acts, nullptr, out_features, weights, out);
  return out;
}

// Subtracts the per-channel mean of the batch (train mode; running mean is
// updated with momentum 0.9) or the running mean (eval mode). No variance
// scaling.
inline void mean_batch_norm(std::span<NetInput* const> batch, int channels,
                            std::vector<float>& running_mean, bool train,
                            double momentum = 0.9) {
  if (static_cast<int>(running_mean.size()) != channels)
    throw ShapeError("mean_batch_norm: running mean size mismatch");
  if (train && batch.empty())
    throw UsageError("mean_batch_norm: empty batch in train mode");
  if (batch.empty()) return;
  const long neurons = batch.front()->neurons;
  if (neurons % channels != 0)
    throw ShapeError("mean_batch_norm: neurons not divisible by channels");
  const long per_ch = neurons / channels;
  std::vector<double> mean(static_cast<std::size_t>(channels), 0.0);
  if (train) {
    double count = 0.0;
    for (const NetInput* ni : batch) {
      for (long t = 0; t < ni->t_steps; ++t) {
        const double* row = ni->row(t);
        for (int c = 0; c < channels; ++c) {
          double acc = 0.0;
          const double* p = row + static_cast<long>(c) * per_ch;
          for (long i = 0; i < per_ch; ++i) acc += p[i];
          mean[static_cast<std::size_t>(c)] += acc;
        }
      }
      count += static_cast<double>(ni->t_steps) * per_ch;
    }
    for (int c = 0; c < channels; ++c)
      mean[static_cast<std::size_t>(c)] /= count;
    for (int c = 0; c < channels; ++c)
      running_mean[static_cast<std::size_t>(c)] = static_cast<float>(
          momentum * running_mean[static_cast<std::size_t>(c)] +
          (1.0 - momentum) * mean[static_cast<std::size_t>(c)]);
  } else {
    for (int c = 0; c < channels; ++c)
      mean[static_cast<std::size_t>(c)] =
          running_mean[static_cast<std::size_t>(c)];
  }
  for (NetInput* ni : batch) {
    for (long t = 0; t < ni->t_steps; ++t) {
      double* row = ni->row(t);
      for (int c = 0; c < channels; ++c) {
        const double m = mean[static_cast<std::size_t>(c)];
        double* p = row + static_cast<long>(c) * per_ch;
        for (long i = 0; i < per_ch; ++i) p[i] -= m;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Engine: batch-synchronous forward / backward over a LayerStack
// ---------------------------------------------------------------------------

struct ForwardOptions {
  bool train = false;  // batch statistics + dropout
  bool soft = false;   // soft-spike relaxation (gradient checking)
  int workers = 1;
  // Per-sample seeds for dropout masks; required in train mode when any
  // layer drops. Independent of batch composition so runs replay exactly.
  std::vector<std::uint64_t> dropout_seeds;
};

struct LayerTraceData {
  ActTrace acts;                          // pre-dropout outputs
  std::vector<float> membrane;            // pre-reset membrane, t-major
  std::vector<std::uint64_t> dropout_mask;  // keep-bits, empty = keep all
};

struct SampleCache {
  ActTrace input;
  std::vector<LayerTraceData> layers;
  std::vector<double> out_counts;  // per output neuron, whole sequence
};

struct StackCache {
  std::vector<SampleCache> samples;
  bool soft = false;
  bool train = false;
};

namespace detail {

inline const std::uint64_t* mask_or_null(const std::vector<std::uint64_t>& m) {
  return m.empty() ? nullptr : m.data();
}

// LIF sweep over net inputs; records pre-reset membrane and output spikes.
inline void lif_sweep(const NetInput& x, const LifParams& p, bool soft,
                      std::size_t layer_index, LayerTraceData& out) {
  const long T = x.t_steps, N = x.neurons;
  out.membrane.assign(static_cast<std::size_t>(T * N), 0.0f);
  out.acts = soft ? ActTrace::make_soft(T, N) : ActTrace::hard(T, N);
  std::vector<double> cur(static_cast<std::size_t>(N), 0.0);
  std::vector<double> mem(static_cast<std::size_t>(N), 0.0);
  const double keep_i = 1.0 - p.current_decay;
  const double keep_v = 1.0 - p.voltage_decay;
  for (long t = 0; t < T; ++t) {
    const double* xrow = x.row(t);
    float* mrow = out.membrane.data() + static_cast<std::size_t>(t) * N;
    double check = 0.0;
    if (soft) {
      double* arow = out.acts.val_row(t);
      for (long n = 0; n < N; ++n) {
        const double i_new = keep_i * cur[n] + xrow[n];
        const double u_pre = keep_v * mem[n] + i_new;
        const double s = soft_spike(u_pre, p);
        cur[n] = i_new;
        mem[n] = p.reset == ResetMode::Subtract ? u_pre - p.threshold * s
                                                : u_pre * (1.0 - s);
        mrow[n] = static_cast<float>(u_pre);
        arow[n] = s;
        check += u_pre;
      }
    } else {
      std::uint64_t* arow = out.acts.row(t);
      for (long n = 0; n < N; ++n) {
        const double i_new = keep_i * cur[n] + xrow[n];
        const double u_pre = keep_v * mem[n] + i_new;
        const bool fired = u_pre >= p.threshold;
        cur[n] = i_new;
        mem[n] = fired ? (p.reset == ResetMode::Subtract ? u_pre - p.threshold
                                                         : 0.0)
                       : u_pre;
        mrow[n] = static_cast<float>(u_pre);
        if (fired) arow[n / 64] |= 1ULL << (n % 64);
        check += u_pre;
      }
    }
    if (!std::isfinite(check))
      throw NumericError("non-finite membrane at layer " +
                         std::to_string(layer_index) + " step " +
                         std::to_string(t));
  }
}

inline std::vector<std::uint64_t> make_dropout_mask(long n, double p_drop,
                                                    std::uint64_t seed) {
  std::vector<std::uint64_t> mask(static_cast<std::size_t>((n + 63) / 64),
                                  ~0ULL);
  Rng rng(seed);
  for (long i = 0; i < n; ++i)
    if (rng.bernoulli(p_drop)) mask[i / 64] &= ~(1ULL << (i % 64));
  // clear padding bits
  if (n % 64 != 0) mask.back() &= (1ULL << (n % 64)) - 1;
  return mask;
}

inline void compute_net_input(const LayerStack& stack, std::size_t l,
                              const ActTrace& in_acts,
                              const std::uint64_t* in_mask, NetInput& x) {
  const LayerSpec& spec = stack.layers[l];
  const LayerShape& si = stack.shape_in(l);
  const LayerShape& so = stack.shape_out(l);
  switch (spec.kind) {
    case LayerKind::InputPool:
    case LayerKind::Pool:
      net_input_pool(in_acts, in_mask, si, so, spec.pool_k, x);
      break;
    case LayerKind::Conv:
      net_input_conv(in_acts, in_mask, si, so, spec,
                     std::span<const float>(stack.weights[l]), x);
      break;
    case LayerKind::Dense:
      net_input_dense(in_acts, in_mask, so.count(),
                      std::span<const float>(stack.weights[l]), x);
      break;
    default:
      throw UsageError("compute_net_input: layer has no net input");
  }
}

}  // namespace detail

// Runs the full stack over a batch of input traces. Layers execute batch-
// synchronously so that mean batch norm can couple samples; per-sample work
// runs on `opts.workers` threads with all reductions in fixed sample order.
inline StackCache stack_forward(LayerStack& stack, std::vector<ActTrace> inputs,
                                const ForwardOptions& opts) {
  const std::size_t B = inputs.size();
  if (B == 0) throw UsageError("stack_forward: empty batch");
  for (const ActTrace& in : inputs) {
    if (in.t_steps != stack.t_steps || in.n != stack.input.count())
      throw ShapeError("stack_forward: input does not match stack input "
                       "shape/steps");
  }
  StackCache cache;
  cache.soft = opts.soft;
  cache.train = opts.train;
  cache.samples.resize(B);
  for (std::size_t s = 0; s < B; ++s) {
    cache.samples[s].input = std::move(inputs[s]);
    cache.samples[s].layers.resize(stack.layers.size());
  }

  std::vector<NetInput> xs(B);
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const LayerSpec& spec = stack.layers[l];
    const LayerShape& so = stack.shape_out(l);

    if (spec.kind == LayerKind::Flatten) {
      // Pure reshape: materialize the post-dropout view of the previous
      // layer; flat neuron order is unchanged.
      parallel_for(B, opts.workers, [&](std::size_t s) {
        SampleCache& sc = cache.samples[s];
        const ActTrace& prev = l == 0 ? sc.input : sc.layers[l - 1].acts;
        const std::uint64_t* pmask =
            l == 0 ? nullptr
                   : detail::mask_or_null(sc.layers[l - 1].dropout_mask);
        ActTrace flat = prev;  // copy, then apply mask if any
        if (pmask && !flat.soft)
          for (long t = 0; t < flat.t_steps; ++t) {
            std::uint64_t* row = flat.row(t);
            for (std::size_t wi = 0; wi < flat.words_per_row; ++wi)
              row[wi] &= pmask[wi];
          }
        if (pmask && flat.soft)
          for (long t = 0; t < flat.t_steps; ++t) {
            double* row = flat.val_row(t);
            for (long i = 0; i < flat.n; ++i)
              if (!((pmask[i / 64] >> (i % 64)) & 1ULL)) row[i] = 0.0;
          }
        flat.n = so.count();
        flat.words_per_row = flat.soft ? 0 : (flat.n + 63) / 64;
        sc.layers[l].acts = std::move(flat);
      });
      continue;
    }

    // Phase 1: net inputs per sample.
    parallel_for(B, opts.workers, [&](std::size_t s) {
      SampleCache& sc = cache.samples[s];
      const ActTrace& prev = l == 0 ? sc.input : sc.layers[l - 1].acts;
      const std::uint64_t* pmask =
          l == 0 ? nullptr : detail::mask_or_null(sc.layers[l - 1].dropout_mask);
      xs[s] = NetInput(stack.t_steps, so.count());
      detail::compute_net_input(stack, l, prev, pmask, xs[s]);
    });

    // Phase 2: mean batch norm on conv net inputs.
    if (spec.kind == LayerKind::Conv && spec.norm) {
      std::vector<NetInput*> ptrs(B);
      for (std::size_t s = 0; s < B; ++s) ptrs[s] = &xs[s];
      mean_batch_norm(std::span<NetInput* const>(ptrs), so.c, stack.bn_mean[l],
                      opts.train);
    }

    // Phase 3: LIF dynamics + dropout mask.
    const LifParams lif = stack.lif_for(l);
    lif.validate();
    parallel_for(B, opts.workers, [&](std::size_t s) {
      SampleCache& sc = cache.samples[s];
      detail::lif_sweep(xs[s], lif, opts.soft, l, sc.layers[l]);
      xs[s] = NetInput();  // release drive buffer
      if (opts.train && spec.dropout > 0.0) {
        if (s >= opts.dropout_seeds.size())
          throw UsageError("stack_forward: dropout requires per-sample seeds "
                           "in train mode");
        sc.layers[l].dropout_mask = detail::make_dropout_mask(
            so.count(), spec.dropout,
            derive_seed(opts.dropout_seeds[s], 0xD20Fu, l));
      }
    });
  }

  // Whole-sequence output counts (post-dropout).
  parallel_for(B, opts.workers, [&](std::size_t s) {
    SampleCache& sc = cache.samples[s];
    const LayerTraceData& last = sc.layers.back();
    const long N = stack.shapes.back().count();
    sc.out_counts.assign(static_cast<std::size_t>(N), 0.0);
    const std::uint64_t* mask = detail::mask_or_null(last.dropout_mask);
    for (long t = 0; t < stack.t_steps; ++t) {
      if (last.acts.soft) {
        const double* row = last.acts.val_row(t);
        for (long n = 0; n < N; ++n)
          if (!mask || ((mask[n / 64] >> (n % 64)) & 1ULL))
            sc.out_counts[static_cast<std::size_t>(n)] +=
                static_cast<double>(row[n]);
      } else {
        detail::for_active(last.acts.row(t), last.acts.words_per_row, mask,
                           [&](long n) {
                             sc.out_counts[static_cast<std::size_t>(n)] += 1.0;
                           });
      }
    }
  });
  return cache;
}

// Gradient seed at the stack output: either one value per output neuron
// (derivative of a count-based loss, constant over time) or a full
// per-step matrix (fusion branches).
struct OutputDelta {
  bool per_step = false;
  // per sample: [n] when !per_step, [t * n + i] when per_step.
  std::vector<std::vector<double>> values;
};

struct StackGrads {
  std::vector<std::vector<double>> weights;  // summed over the batch
};

// Reverse sweep over layers and time. Returns weight gradients summed over
// the batch; optionally emits dL/d(input activation) per sample for fusion.
inline StackGrads stack_backward(
    LayerStack& stack, const StackCache& cache, const OutputDelta& seed,
    const ForwardOptions& opts,
    std::vector<std::vector<double>>* input_delta_out = nullptr) {
  const std::size_t B = cache.samples.size();
  if (B == 0) throw UsageError("stack_backward: empty cache");
  if (seed.values.size() != B)
    throw ShapeError("stack_backward: seed batch size mismatch");
  for (const SampleCache& sc : cache.samples)
    if (sc.layers.size() != stack.layers.size() ||
        (sc.layers.empty() ? true : sc.layers.back().acts.t_steps == 0))
      throw UsageError("stack_backward: forward caches missing");

  const long T = stack.t_steps;
  const std::size_t L = stack.layers.size();
  const std::size_t stop_layer = input_delta_out ? 0 : stack.first_weighted();

  // Per-sample gradient buffers keep accumulation order independent of the
  // worker count; they are reduced in sample order at the end.
  std::vector<StackGrads> sample_grads(B);
  for (std::size_t s = 0; s < B; ++s) {
    sample_grads[s].weights.resize(L);
    for (std::size_t l = 0; l < L; ++l)
      sample_grads[s].weights[l].assign(stack.weights[l].size(), 0.0);
  }

  // cur[s] = dL/d(post-dropout acts of current layer), t-major.
  std::vector<std::vector<double>> cur(B);
  parallel_for(B, opts.workers, [&](std::size_t s) {
    const long N = stack.shapes.back().count();
    cur[s].assign(static_cast<std::size_t>(T * N), 0.0);
    if (seed.per_step) {
      if (static_cast<long>(seed.values[s].size()) != T * N)
        throw ShapeError("stack_backward: per-step seed size mismatch");
      std::copy(seed.values[s].begin(), seed.values[s].end(), cur[s].begin());
    } else {
      if (static_cast<long>(seed.values[s].size()) != N)
        throw ShapeError("stack_backward: per-neuron seed size mismatch");
      for (long t = 0; t < T; ++t)
        for (long n = 0; n < N; ++n)
          cur[s][static_cast<std::size_t>(t) * N + n] = seed.values[s][n];
    }
  });

  std::vector<std::vector<double>> dx(B);  // dL/d(net input) per sample

  for (std::size_t li = L; li-- > 0;) {
    const LayerSpec& spec = stack.layers[li];
    const LayerShape& so = stack.shape_out(li);
    const LayerShape& si = stack.shape_in(li);
    const long N = so.count();
    const long Nin = si.count();

    if (spec.kind == LayerKind::Flatten) {
      // Reshape only; the delta passes through in flat order.
      continue;
    }

    const LifParams lif = stack.lif_for(li);
    const double keep_i = 1.0 - lif.current_decay;
    const double keep_v = 1.0 - lif.voltage_decay;
    const bool subtract = lif.reset == ResetMode::Subtract;

    // Phase 1: LIF backward (time-reversed) per sample.
    parallel_for(B, opts.workers, [&](std::size_t s) {
      const SampleCache& sc = cache.samples[s];
      const LayerTraceData& tr = sc.layers[li];
      const std::uint64_t* mask = detail::mask_or_null(tr.dropout_mask);
      dx[s].assign(static_cast<std::size_t>(T * N), 0.0);
      std::vector<double> da_next(static_cast<std::size_t>(N), 0.0);
      std::vector<double> di_next(static_cast<std::size_t>(N), 0.0);
      for (long t = T - 1; t >= 0; --t) {
        const float* mrow = tr.membrane.data() + static_cast<std::size_t>(t) * N;
        const double* crow = cur[s].data() + static_cast<std::size_t>(t) * N;
        double* xrow = dx[s].data() + static_cast<std::size_t>(t) * N;
        for (long n = 0; n < N; ++n) {
          const double u_pre = static_cast<double>(mrow[n]);
          const double g = surrogate_grad(u_pre, lif);
          const double s_val = tr.acts.value(t, n);
          const double inc =
              (mask && !((mask[n / 64] >> (n % 64)) & 1ULL)) ? 0.0 : crow[n];
          const double du = keep_v * da_next[static_cast<std::size_t>(n)];
          const double ds = inc + (subtract ? -lif.threshold * du
                                            : -u_pre * du);
          const double da =
              ds * g + du * (subtract ? 1.0 : 1.0 - s_val);
          const double di = da + keep_i * di_next[static_cast<std::size_t>(n)];
          xrow[n] = di;
          da_next[static_cast<std::size_t>(n)] = da;
          di_next[static_cast<std::size_t>(n)] = di;
        }
      }
    });

    // Phase 2: mean-subtraction couples gradients across the batch.
    if (spec.kind == LayerKind::Conv && spec.norm && cache.train) {
      const long per_ch = N / so.c;
      std::vector<double> mean(static_cast<std::size_t>(so.c), 0.0);
      for (std::size_t s = 0; s < B; ++s)
        for (long t = 0; t < T; ++t) {
          const double* row = dx[s].data() + static_cast<std::size_t>(t) * N;
          for (int c = 0; c < so.c; ++c) {
            double acc = 0.0;
            const double* p = row + static_cast<long>(c) * per_ch;
            for (long i = 0; i < per_ch; ++i) acc += p[i];
            mean[static_cast<std::size_t>(c)] += acc;
          }
        }
      const double count = static_cast<double>(B) * T * per_ch;
      for (int c = 0; c < so.c; ++c)
        mean[static_cast<std::size_t>(c)] /= count;
      parallel_for(B, opts.workers, [&](std::size_t s) {
        for (long t = 0; t < T; ++t) {
          double* row = dx[s].data() + static_cast<std::size_t>(t) * N;
          for (int c = 0; c < so.c; ++c) {
            const double m = mean[static_cast<std::size_t>(c)];
            double* p = row + static_cast<long>(c) * per_ch;
            for (long i = 0; i < per_ch; ++i) p[i] -= m;
          }
        }
      });
    }

    // Phase 3: weight gradients and the delta for the layer below.
    const bool want_prev =
        li > stop_layer ||
        (input_delta_out != nullptr && li == 0);
    parallel_for(B, opts.workers, [&](std::size_t s) {
      const SampleCache& sc = cache.samples[s];
      const ActTrace& prev =
          li == 0 ? sc.input : sc.layers[li - 1].acts;
      const std::uint64_t* pmask =
          li == 0 ? nullptr
                  : detail::mask_or_null(sc.layers[li - 1].dropout_mask);
      std::vector<double>& gw = sample_grads[s].weights[li];
      std::vector<double> prev_delta;
      if (want_prev)
        prev_delta.assign(static_cast<std::size_t>(T * Nin), 0.0);

      const long in_hw = static_cast<long>(si.h) * si.w;
      for (long t = 0; t < T; ++t) {
        const double* xrow = dx[s].data() + static_cast<std::size_t>(t) * N;
        switch (spec.kind) {
          case LayerKind::Conv: {
            const int kh = spec.kernel_h, kw = spec.kernel_w;
            const int stride = spec.stride, pad = spec.pad;
            // dW from active inputs (sparse in hard mode)
            auto accum = [&](long flat, double v) {
              const int ic = static_cast<int>(flat / in_hw);
              const long rem = flat % in_hw;
              const int iy = static_cast<int>(rem / si.w);
              const int ix = static_cast<int>(rem % si.w);
              for (int oc = 0; oc < so.c; ++oc) {
                double* gbase =
                    gw.data() +
                    (static_cast<std::size_t>(oc) * si.c + ic) * kh * kw;
                const double* xbase =
                    xrow + static_cast<long>(oc) * so.h * so.w;
                for (int ky = 0; ky < kh; ++ky) {
                  const int oy_num = iy + pad - ky;
                  if (oy_num < 0 || oy_num % stride != 0) continue;
                  const int oy = oy_num / stride;
                  if (oy >= so.h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ox_num = ix + pad - kx;
                    if (ox_num < 0 || ox_num % stride != 0) continue;
                    const int ox = ox_num / stride;
                    if (ox >= so.w) continue;
                    gbase[ky * kw + kx] +=
                        v * xbase[static_cast<long>(oy) * so.w + ox];
                  }
                }
              }
            };
            if (prev.soft) {
              const double* vrow = prev.val_row(t);
              for (long i = 0; i < Nin; ++i)
                if (vrow[i] != 0.0 && detail::mask_keeps(pmask, i))
                  accum(i, static_cast<double>(vrow[i]));
            } else {
              detail::for_active(prev.row(t), prev.words_per_row, pmask,
                                 [&](long i) { accum(i, 1.0); });
            }
            if (want_prev) {
              double* prow = prev_delta.data() + static_cast<std::size_t>(t) * Nin;
              for (int oc = 0; oc < so.c; ++oc) {
                for (int oy = 0; oy < so.h; ++oy) {
                  for (int ox = 0; ox < so.w; ++ox) {
                    const double d =
                        xrow[(static_cast<long>(oc) * so.h + oy) * so.w + ox];
                    if (d == 0.0) continue;
                    for (int ic = 0; ic < si.c; ++ic) {
                      const float* wbase =
                          stack.weights[li].data() +
                          (static_cast<std::size_t>(oc) * si.c + ic) * kh * kw;
                      for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= si.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                          const int ix = ox * stride - pad + kx;
                          if (ix < 0 || ix >= si.w) continue;
                          prow[(static_cast<long>(ic) * si.h + iy) * si.w +
                               ix] +=
                              static_cast<double>(wbase[ky * kw + kx]) * d;
                        }
                      }
                    }
                  }
                }
              }
            }
            break;
          }
          case LayerKind::InputPool:
          case LayerKind::Pool: {
            if (want_prev) {
              const int k = spec.pool_k;
              const double inv = 1.0 / (static_cast<double>(k) * k);
              double* prow =
                  prev_delta.data() + static_cast<std::size_t>(t) * Nin;
              for (int c = 0; c < si.c; ++c)
                for (int iy = 0; iy < si.h; ++iy)
                  for (int ix = 0; ix < si.w; ++ix)
                    prow[(static_cast<long>(c) * si.h + iy) * si.w + ix] =
                        inv * xrow[(static_cast<long>(c) * so.h + iy / k) *
                                       so.w +
                                   ix / k];
            }
            break;
          }
          case LayerKind::Dense: {
            auto accum_dense = [&](long j, double v) {
              for (long o = 0; o < N; ++o)
                gw[static_cast<std::size_t>(o) * Nin + j] += v * xrow[o];
            };
            if (prev.soft) {
              const double* vrow = prev.val_row(t);
              for (long j = 0; j < Nin; ++j)
                if (vrow[j] != 0.0 && detail::mask_keeps(pmask, j))
                  accum_dense(j, static_cast<double>(vrow[j]));
            } else {
              detail::for_active(prev.row(t), prev.words_per_row, pmask,
                                 [&](long j) { accum_dense(j, 1.0); });
            }
            if (want_prev) {
              double* prow =
                  prev_delta.data() + static_cast<std::size_t>(t) * Nin;
              for (long o = 0; o < N; ++o) {
                const double d = xrow[o];
                if (d == 0.0) continue;
                const float* wrow = stack.weights[li].data() +
                                    static_cast<std::size_t>(o) * Nin;
                for (long j = 0; j < Nin; ++j)
                  prow[j] += static_cast<double>(wrow[j]) * d;
              }
            }
            break;
          }
          default:
            break;
        }
      }
      if (want_prev) cur[s] = std::move(prev_delta);
    });
    if (!want_prev) break;  // nothing below needs gradients
  }

  if (input_delta_out) *input_delta_out = std::move(cur);

  StackGrads total;
  total.weights.resize(L);
  for (std::size_t l = 0; l < L; ++l)
    total.weights[l].assign(stack.weights[l].size(), 0.0);
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t i = 0; i < total.weights[l].size(); ++i)
        total.weights[l][i] += sample_grads[s].weights[l][i];
  return total;
}

// ---------------------------------------------------------------------------
// Network and fusion network
// ---------------------------------------------------------------------------

struct Network {
  NetworkConfig cfg;
  LayerStack stack;

  static Network build(const NetworkConfig& cfg) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    net.stack.input = cfg.input_shape();
    net.stack.t_steps = cfg.t_steps;
    net.stack.dt = cfg.dt;
    net.stack.lif = cfg.lif;
    net.stack.layers = cfg.layers;
    net.stack.build();
    net.stack.init_weights(cfg.seed);
    return net;
  }

  LayerShape output_shape() const { return stack.shapes.back(); }

  // Index of the flatten layer, i.e. the end of the conv/pool stage.
  std::size_t flatten_index() const {
    for (std::size_t l = 0; l < stack.layers.size(); ++l)
      if (stack.layers[l].kind == LayerKind::Flatten) return l;
    throw ConfigError("network: no flatten layer in stack");
  }
};

struct NetForwardResult {
  SpikeTensor output;
  StackCache cache;
};

// Full forward pass over one input tensor. Eval mode by default: running
// batch-norm means, no dropout.
inline NetForwardResult forward(Network& net, const SpikeTensor& input,
                                bool train = false, int workers = 1) {
  if (input.channels() != net.cfg.in_channels ||
      input.height() != net.cfg.in_height ||
      input.width() != net.cfg.in_width || input.t_steps() != net.cfg.t_steps)
    throw ShapeError("forward: input tensor does not match network config");
  ForwardOptions opts;
  opts.train = train;
  opts.workers = workers;
  opts.dropout_seeds = {net.cfg.seed};
  std::vector<ActTrace> inputs;
  inputs.push_back(to_act_trace(input));
  StackCache cache = stack_forward(net.stack, std::move(inputs), opts);
  const LayerTraceData& last = cache.samples[0].layers.back();
  ActTrace out_acts = last.acts;  // apply dropout mask if present
  if (!last.dropout_mask.empty())
    for (long t = 0; t < out_acts.t_steps; ++t) {
      std::uint64_t* row = out_acts.row(t);
      for (std::size_t wi = 0; wi < out_acts.words_per_row; ++wi)
        row[wi] &= last.dropout_mask[wi];
    }
  NetForwardResult r{to_spike_tensor(out_acts, net.output_shape(), net.cfg.dt),
                     std::move(cache)};
  return r;
}

struct FusionConfig {
  NetworkConfig subnet_a;  // events
  NetworkConfig subnet_b;  // depth
  std::vector<LayerSpec> head;  // two dense layers

  int n_classes() const {
    return head.empty() ? 0 : head.back().out_features;
  }

  void validate() const {
    subnet_a.validate();
    subnet_b.validate();
    if (subnet_a.t_steps != subnet_b.t_steps || subnet_a.dt != subnet_b.dt)
      throw ConfigError("fusion: subnets must share t_steps and dt");
    if (head.size() != 2)
      throw ConfigError("fusion: head must consist of two dense layers");
    for (const LayerSpec& h : head)
      if (h.kind != LayerKind::Dense)
        throw ConfigError("fusion: head layers must be dense");
  }
};

struct FusionNetwork {
  FusionConfig cfg;
  LayerStack branch_a, branch_b;  // conv/pool stage up to flatten
  LayerStack head;                // dense layers on concatenated features

  long t_steps() const { return head.t_steps; }
  double dt() const { return head.dt; }
  int n_classes() const { return cfg.n_classes(); }
  long feature_width_a() const { return branch_a.shapes.back().count(); }
  long feature_width_b() const { return branch_b.shapes.back().count(); }
};

namespace detail {

// Branch = subnet layers up to and including flatten.
inline LayerStack make_branch(const NetworkConfig& sub) {
  std::size_t flat = sub.layers.size();
  for (std::size_t l = 0; l < sub.layers.size(); ++l)
    if (sub.layers[l].kind == LayerKind::Flatten) {
      flat = l;
      break;
    }
  if (flat == sub.layers.size())
    throw ConfigError("fusion: subnet has no flatten layer");
  for (std::size_t l = flat + 1; l < sub.layers.size(); ++l)
    if (sub.layers[l].kind != LayerKind::Dense)
      throw ConfigError("fusion: subnet layers after flatten must be dense");
  if (flat + 1 == sub.layers.size())
    throw ConfigError("fusion: subnet has no dense head to replace");
  LayerStack stack;
  stack.input = sub.input_shape();
  stack.t_steps = sub.t_steps;
  stack.dt = sub.dt;
  stack.lif = sub.lif;
  stack.layers.assign(sub.layers.begin(),
                      sub.layers.begin() + static_cast<std::ptrdiff_t>(flat + 1));
  stack.build();
  return stack;
}

}  // namespace detail

// Assembles a fusion network with freshly initialized weights everywhere.
inline FusionNetwork make_fusion(const FusionConfig& cfg,
                                 std::uint64_t head_seed = 0) {
  cfg.validate();
  FusionNetwork f;
  f.cfg = cfg;
  f.branch_a = detail::make_branch(cfg.subnet_a);
  f.branch_b = detail::make_branch(cfg.subnet_b);
  f.branch_a.init_weights(cfg.subnet_a.seed);
  f.branch_b.init_weights(cfg.subnet_b.seed);
  f.head.input = {static_cast<int>(f.branch_a.shapes.back().count() +
                                   f.branch_b.shapes.back().count()),
                  1, 1};
  f.head.t_steps = cfg.subnet_a.t_steps;
  f.head.dt = cfg.subnet_a.dt;
  f.head.lif = cfg.subnet_a.lif;
  f.head.layers = cfg.head;
  f.head.build();
  f.head.init_weights(derive_seed(head_seed, 0xF00Du));
  return f;
}

// Builds the fusion network and copies every conv/pool-stage parameter
// (weights and batch-norm running means) from the trained subnets; the two
// fusion dense layers are freshly initialized from head_seed.
inline FusionNetwork init_fusion_from_subnets(const Network& trained_a,
                                              const Network& trained_b,
                                              const std::vector<LayerSpec>& head,
                                              std::uint64_t head_seed) {
  FusionConfig cfg;
  cfg.subnet_a = trained_a.cfg;
  cfg.subnet_b = trained_b.cfg;
  cfg.head = head;
  FusionNetwork f = make_fusion(cfg, head_seed);
  for (std::size_t l = 0; l < f.branch_a.layers.size(); ++l) {
    if (trained_a.stack.weights[l].size() != f.branch_a.weights[l].size())
      throw ConfigError("fusion: subnet A architecture mismatch at layer " +
                        std::to_string(l));
    f.branch_a.weights[l] = trained_a.stack.weights[l];
    f.branch_a.bn_mean[l] = trained_a.stack.bn_mean[l];
  }
  for (std::size_t l = 0; l < f.branch_b.layers.size(); ++l) {
    if (trained_b.stack.weights[l].size() != f.branch_b.weights[l].size())
      throw ConfigError("fusion: subnet B architecture mismatch at layer " +
                        std::to_string(l));
    f.branch_b.weights[l] = trained_b.stack.weights[l];
    f.branch_b.bn_mean[l] = trained_b.stack.bn_mean[l];
  }
  return f;
}

struct FusionForwardResult {
  SpikeTensor output;
  StackCache cache_a, cache_b, cache_head;
};

// Runs both feature stacks, concatenates the flattened features per step,
// then runs the fusion head.
inline FusionForwardResult fusion_forward_batch(
    FusionNetwork& f, std::vector<ActTrace> inputs_a,
    std::vector<ActTrace> inputs_b, const ForwardOptions& opts) {
  if (inputs_a.size() != inputs_b.size())
    throw ShapeError("fusion_forward: modality batches differ in size");
  StackCache ca = stack_forward(f.branch_a, std::move(inputs_a), opts);
  StackCache cb = stack_forward(f.branch_b, std::move(inputs_b), opts);
  std::vector<ActTrace> feats(ca.samples.size());
  parallel_for(ca.samples.size(), opts.workers, [&](std::size_t s) {
    feats[s] = concat_acts(ca.samples[s].layers.back().acts,
                           cb.samples[s].layers.back().acts);
  });
  StackCache ch = stack_forward(f.head, std::move(feats), opts);
  FusionForwardResult r;
  r.cache_a = std::move(ca);
  r.cache_b = std::move(cb);
  r.cache_head = std::move(ch);
  return r;
}

inline FusionForwardResult fusion_forward(FusionNetwork& f,
                                          const SpikeTensor& input_events,
                                          const SpikeTensor& input_depth,
                                          bool train = false, int workers = 1) {
  ForwardOptions opts;
  opts.train = train;
  opts.workers = workers;
  opts.dropout_seeds = {0};
  std::vector<ActTrace> ia, ib;
  ia.push_back(to_act_trace(input_events));
  ib.push_back(to_act_trace(input_depth));
  if (ia[0].n != f.branch_a.input.count() ||
      ib[0].n != f.branch_b.input.count() ||
      ia[0].t_steps != f.t_steps() || ib[0].t_steps != f.t_steps())
    throw ShapeError("fusion_forward: inputs do not match subnet configs");
  FusionForwardResult r =
      fusion_forward_batch(f, std::move(ia), std::move(ib), opts);
  const LayerTraceData& last = r.cache_head.samples[0].layers.back();
  r.output = to_spike_tensor(last.acts, f.head.shapes.back(), f.dt());
  return r;
}

struct FusionGrads {
  StackGrads branch_a, branch_b, head;
};

// Backward through head, split the concat delta, then through both branches.
inline FusionGrads fusion_backward(FusionNetwork& f,
                                   const FusionForwardResult& fr,
                                   const OutputDelta& seed,
                                   const ForwardOptions& opts) {
  FusionGrads g;
  std::vector<std::vector<double>> concat_delta;
  g.head = stack_backward(f.head, fr.cache_head, seed, opts, &concat_delta);

  const std::size_t B = concat_delta.size();
  const long T = f.t_steps();
  const long na = f.feature_width_a();
  const long nb = f.feature_width_b();
  OutputDelta seed_a, seed_b;
  seed_a.per_step = seed_b.per_step = true;
  seed_a.values.resize(B);
  seed_b.values.resize(B);
  parallel_for(B, opts.workers, [&](std::size_t s) {
    seed_a.values[s].resize(static_cast<std::size_t>(T * na));
    seed_b.values[s].resize(static_cast<std::size_t>(T * nb));
    for (long t = 0; t < T; ++t) {
      const double* row = concat_delta[s].data() +
                          static_cast<std::size_t>(t) * (na + nb);
      std::copy(row, row + na,
                seed_a.values[s].data() + static_cast<std::size_t>(t) * na);
      std::copy(row + na, row + na + nb,
                seed_b.values[s].data() + static_cast<std::size_t>(t) * nb);
    }
  });
  g.branch_a = stack_backward(f.branch_a, fr.cache_a, seed_a, opts);
  g.branch_b = stack_backward(f.branch_b, fr.cache_b, seed_b, opts);
  return g;
}

// ---------------------------------------------------------------------------
// Config (de)serialization
// ---------------------------------------------------------------------------

inline void lif_to_config(ConfigDoc& doc, const std::string& section,
                          const LifParams& p) {
  doc.set_double(section, "threshold", p.threshold);
  doc.set_double(section, "voltage_decay", p.voltage_decay);
  doc.set_double(section, "current_decay", p.current_decay);
  doc.set(section, "reset",
          p.reset == ResetMode::Subtract ? "subtract" : "to-zero");
  doc.set_double(section, "surrogate_scale", p.surrogate_scale);
  doc.set_double(section, "surrogate_width", p.surrogate_width);
}

inline LifParams lif_from_config(const ConfigDoc& doc,
                                 const std::string& section,
                                 const LifParams& defaults = LifParams{}) {
  LifParams p = defaults;
  p.threshold = doc.get_double_or(section, "threshold", p.threshold);
  p.voltage_decay = doc.get_double_or(section, "voltage_decay", p.voltage_decay);
  p.current_decay = doc.get_double_or(section, "current_decay", p.current_decay);
  const std::string reset = doc.get_string_or(
      section, "reset", p.reset == ResetMode::Subtract ? "subtract" : "to-zero");
  if (reset == "subtract")
    p.reset = ResetMode::Subtract;
  else if (reset == "to-zero")
    p.reset = ResetMode::ToZero;
  else
    throw ConfigError("config: " + section + ".reset must be subtract or "
                      "to-zero");
  p.surrogate_scale =
      doc.get_double_or(section, "surrogate_scale", p.surrogate_scale);
  p.surrogate_width =
      doc.get_double_or(section, "surrogate_width", p.surrogate_width);
  return p;
}

// Writes [<prefix>network], [<prefix>lif] and [<prefix>layers] sections.
inline void network_to_config(ConfigDoc& doc, const NetworkConfig& cfg,
                              const std::string& prefix = "") {
  const std::string net = prefix + "network";
  doc.set_int(net, "input_channels", cfg.in_channels);
  doc.set_int(net, "input_height", cfg.in_height);
  doc.set_int(net, "input_width", cfg.in_width);
  doc.set_int(net, "t_steps", cfg.t_steps);
  doc.set_double(net, "dt", cfg.dt);
  doc.set_int(net, "n_classes", cfg.n_classes);
  doc.set_uint(net, "seed", cfg.seed);
  lif_to_config(doc, prefix + "lif", cfg.lif);
  const std::string layers = prefix + "layers";
  for (std::size_t i = 0; i < cfg.layers.size(); ++i)
    doc.set(layers, "layer" + std::to_string(i),
            format_layer_spec(cfg.layers[i]));
}

inline NetworkConfig network_from_config(const ConfigDoc& doc,
                                         const std::string& prefix = "",
                                         const NetworkConfig& defaults =
                                             NetworkConfig{}) {
  NetworkConfig cfg = defaults;
  const std::string net = prefix + "network";
  cfg.in_channels = static_cast<int>(
      doc.get_int_or(net, "input_channels", cfg.in_channels));
  cfg.in_height =
      static_cast<int>(doc.get_int_or(net, "input_height", cfg.in_height));
  cfg.in_width =
      static_cast<int>(doc.get_int_or(net, "input_width", cfg.in_width));
  cfg.t_steps = doc.get_int_or(net, "t_steps", cfg.t_steps);
  cfg.dt = doc.get_double_or(net, "dt", cfg.dt);
  cfg.n_classes = static_cast<int>(doc.get_int_or(net, "n_classes", cfg.n_classes));
  cfg.seed = doc.get_uint_or(net, "seed", cfg.seed);
  cfg.lif = lif_from_config(doc, prefix + "lif", cfg.lif);
  const std::string layers = prefix + "layers";
  if (doc.has_section(layers)) {
    cfg.layers.clear();
    for (const std::string& key : doc.keys(layers))
      cfg.layers.push_back(parse_layer_spec(doc.get_string(layers, key)));
  }
  return cfg;
}

}  // namespace spikefuse
