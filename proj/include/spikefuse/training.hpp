#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spikefuse/core.hpp"
#include "spikefuse/error.hpp"
#include "spikefuse/network.hpp"
#include "spikefuse/rng.hpp"
#include "spikefuse/threading.hpp"

namespace spikefuse {

enum class Modality : std::uint8_t { Events = 0, Depth = 1, Fusion = 2 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Events: return "events";
    case Modality::Depth: return "depth";
    case Modality::Fusion: return "fusion";
  }
  return "?";
}

inline std::optional<Modality> modality_from_name(const std::string& s) {
  if (s == "events") return Modality::Events;
  if (s == "depth") return Modality::Depth;
  if (s == "fusion") return Modality::Fusion;
  return std::nullopt;
}

// Target spike counts per sequence: r_true for the labelled class, r_false
// as the tolerated background rate for all others.
struct TargetRateSpec {
  double r_true = 60.0;
  double r_false = 10.0;

  void validate() const {
    if (!(r_true > r_false) || r_false < 0.0)
      throw ConfigError("target rates: need r_true > r_false >= 0");
  }
};

enum class LossVariant : std::uint8_t {
  SumAll = 0,        // penalizes every class's deviation
  PaperLiteral = 1,  // only the labelled class enters the loss
};

inline const char* loss_variant_name(LossVariant v) {
  return v == LossVariant::SumAll ? "sum-all" : "paper-literal";
}

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 100;  // 200 for fusion by CLI convention
  int batch_size = 8;
  std::uint64_t seed = 1;
  TargetRateSpec target;
  LossVariant loss_variant = LossVariant::SumAll;
  double momentum = 0.0;  // plain SGD unless set
  int workers = 1;

  void validate() const {
    if (!(learning_rate >= 0.0))
      throw ConfigError("train: learning rate must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    target.validate();
  }
};

// Per-epoch curves plus the final evaluation artifacts.
struct Metrics {
  std::vector<double> train_accuracy, train_loss;
  std::vector<double> test_accuracy, test_loss;
  std::vector<std::vector<long>> confusion;  // rows = truth, cols = predicted
  double accuracy = 0.0;
  double mean_ms = 0.0;
  std::vector<std::string> sample_ids;
  std::vector<int> sample_labels, sample_predictions;
  std::vector<double> sample_ms;
};

// One encoded sample; single-modality training uses whichever tensor its
// modality requires, fusion needs both.
struct EncodedSample {
  std::string id;
  int label = 0;
  std::optional<SpikeTensor> events;
  std::optional<SpikeTensor> depth;
};

struct EncodedDataset {
  std::vector<std::string> class_names;
  std::vector<EncodedSample> train;
  std::vector<EncodedSample> test;

  int n_classes() const { return static_cast<int>(class_names.size()); }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Target rate vector of Eq-style one-hot structure; rates are counts per
// whole sequence (window_ms = 0 denotes the full sequence).
inline RateVector target_rate(int label, const TargetRateSpec& spec,
                              int n_classes) {
  spec.validate();
  if (label < 0 || label >= n_classes)
    throw BoundsError("target_rate: label " + std::to_string(label) +
                      " out of range for " + std::to_string(n_classes) +
                      " classes");
  RateVector rv;
  rv.window_ms = 0.0;
  rv.rates.assign(static_cast<std::size_t>(n_classes), spec.r_false);
  rv.rates[static_cast<std::size_t>(label)] = spec.r_true;
  return rv;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> d_count;  // dL/d(spike count) per output neuron
};

// Squared distance between achieved whole-sequence counts and the target.
inline LossResult spike_rate_loss_counts(std::span<const double> counts,
                                         const RateVector& target,
                                         LossVariant variant) {
  if (counts.size() != target.rates.size())
    throw ShapeError("spike_rate_loss: output size does not match target");
  LossResult r;
  r.d_count.assign(counts.size(), 0.0);
  if (variant == LossVariant::SumAll) {
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const double resid = counts[k] - target.rates[k];
      r.loss += 0.5 * resid * resid;
      r.d_count[k] = resid;
    }
  } else {
    // One-hot inner product taken verbatim: only the labelled entry counts.
    const std::size_t label = static_cast<std::size_t>(
        std::max_element(target.rates.begin(), target.rates.end()) -
        target.rates.begin());
    const double resid = counts[label] - target.rates[label];
    r.loss = 0.5 * resid * resid;
    r.d_count[label] = resid;
  }
  return r;
}

inline LossResult spike_rate_loss(const SpikeTensor& output,
                                  const RateVector& target,
                                  LossVariant variant = LossVariant::SumAll) {
  std::vector<double> counts(static_cast<std::size_t>(output.neuron_count()));
  for (long n = 0; n < output.neuron_count(); ++n)
    counts[static_cast<std::size_t>(n)] =
        static_cast<double>(spike_count(output, n));
  return spike_rate_loss_counts(counts, target, variant);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

inline void sgd_step(std::span<float> weights, std::span<const double> grads,
                     double lr) {
  if (weights.size() != grads.size())
    throw ShapeError("sgd_step: weight/gradient size mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i)
    weights[i] = static_cast<float>(static_cast<double>(weights[i]) -
                                    lr * grads[i]);
}

inline void sgd_step(std::span<float> weights, std::span<const double> grads,
                     double lr, double momentum, std::span<double> velocity) {
  if (weights.size() != grads.size() || velocity.size() != grads.size())
    throw ShapeError("sgd_step: weight/gradient size mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    weights[i] = static_cast<float>(static_cast<double>(weights[i]) -
                                    lr * velocity[i]);
  }
}

// ---------------------------------------------------------------------------
// Backward entry point (surrogate-gradient BPTT)
// ---------------------------------------------------------------------------

// Reverse sweep over layers and time, seeded with dL/d(output spike count)
// per sample. Returns weight gradients summed over the cached batch.
inline StackGrads backward(Network& net, const StackCache& cache,
                           const std::vector<std::vector<double>>& d_counts,
                           int workers = 1) {
  OutputDelta seed;
  seed.per_step = false;
  seed.values = d_counts;
  ForwardOptions opts;
  opts.workers = workers;
  opts.train = cache.train;
  opts.soft = cache.soft;
  return stack_backward(net.stack, cache, seed, opts);
}

inline FusionGrads backward(FusionNetwork& net, const FusionForwardResult& fr,
                            const std::vector<std::vector<double>>& d_counts,
                            int workers = 1) {
  OutputDelta seed;
  seed.per_step = false;
  seed.values = d_counts;
  ForwardOptions opts;
  opts.workers = workers;
  opts.train = fr.cache_head.train;
  opts.soft = fr.cache_head.soft;
  return fusion_backward(net, fr, seed, opts);
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail {

inline const SpikeTensor& sample_tensor(const EncodedSample& s, Modality m) {
  if (m == Modality::Events) {
    if (!s.events)
      throw UsageError("sample '" + s.id + "' has no event tensor");
    return *s.events;
  }
  if (!s.depth) throw UsageError("sample '" + s.id + "' has no depth tensor");
  return *s.depth;
}

inline int argmax_class(std::span<const double> counts) {
  // Ties resolve to the lowest index.
  return static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  return idx;
}

struct EpochStats {
  double loss_sum = 0.0;
  long correct = 0;
  long total = 0;
};

// Forward either network kind over one batch; returns per-sample counts.
struct BatchRunner {
  Network* net = nullptr;
  FusionNetwork* fusion = nullptr;
  Modality modality = Modality::Events;

  int n_classes() const {
    return net ? net->cfg.n_classes : fusion->n_classes();
  }
  long t_steps() const { return net ? net->cfg.t_steps : fusion->t_steps(); }

  // Holds whichever caches the backward pass needs.
  struct RunCaches {
    StackCache single;
    FusionForwardResult fused;
  };

  std::vector<std::vector<double>> forward_counts(
      std::span<const EncodedSample* const> batch, const ForwardOptions& opts,
      RunCaches* caches) {
    std::vector<std::vector<double>> counts(batch.size());
    if (net) {
      std::vector<ActTrace> inputs(batch.size());
      parallel_for(batch.size(), opts.workers, [&](std::size_t i) {
        inputs[i] = to_act_trace(sample_tensor(*batch[i], modality));
      });
      StackCache cache = stack_forward(net->stack, std::move(inputs), opts);
      for (std::size_t i = 0; i < batch.size(); ++i)
        counts[i] = cache.samples[i].out_counts;
      if (caches) caches->single = std::move(cache);
    } else {
      std::vector<ActTrace> ia(batch.size()), ib(batch.size());
      parallel_for(batch.size(), opts.workers, [&](std::size_t i) {
        ia[i] = to_act_trace(sample_tensor(*batch[i], Modality::Events));
        ib[i] = to_act_trace(sample_tensor(*batch[i], Modality::Depth));
      });
      FusionForwardResult fr =
          fusion_forward_batch(*fusion, std::move(ia), std::move(ib), opts);
      for (std::size_t i = 0; i < batch.size(); ++i)
        counts[i] = fr.cache_head.samples[i].out_counts;
      if (caches) caches->fused = std::move(fr);
    }
    return counts;
  }

  void backward_and_step(RunCaches& caches,
                         const std::vector<std::vector<double>>& d_counts,
                         const TrainConfig& cfg,
                         std::vector<std::vector<double>>* velocity) {
    OutputDelta seed;
    seed.per_step = false;
    seed.values = d_counts;
    ForwardOptions opts;
    opts.workers = cfg.workers;
    auto apply = [&](LayerStack& stack, const StackGrads& grads,
                     std::size_t vel_base) {
      for (std::size_t l = 0; l < stack.weights.size(); ++l) {
        if (stack.weights[l].empty()) continue;
        if (velocity)
          sgd_step(stack.weights[l], grads.weights[l], cfg.learning_rate,
                   cfg.momentum, (*velocity)[vel_base + l]);
        else
          sgd_step(stack.weights[l], grads.weights[l], cfg.learning_rate);
      }
    };
    if (net) {
      opts.train = caches.single.train;
      opts.soft = caches.single.soft;
      StackGrads grads = stack_backward(net->stack, caches.single, seed, opts);
      apply(net->stack, grads, 0);
    } else {
      opts.train = caches.fused.cache_head.train;
      opts.soft = caches.fused.cache_head.soft;
      FusionGrads grads = fusion_backward(*fusion, caches.fused, seed, opts);
      apply(fusion->branch_a, grads.branch_a, 0);
      apply(fusion->branch_b, grads.branch_b, fusion->branch_a.weights.size());
      apply(fusion->head, grads.head,
            fusion->branch_a.weights.size() + fusion->branch_b.weights.size());
    }
  }

  std::vector<std::vector<float>*> weight_slots() {
    std::vector<std::vector<float>*> slots;
    auto add = [&](LayerStack& s) {
      for (auto& w : s.weights) slots.push_back(&w);
    };
    if (net)
      add(net->stack);
    else {
      add(fusion->branch_a);
      add(fusion->branch_b);
      add(fusion->head);
    }
    return slots;
  }
};

}  // namespace detail

// Evaluates a network on one split: rate-argmax prediction, confusion
// matrix, accuracy, and per-sample wall-clock time.
inline Metrics evaluate_impl(detail::BatchRunner runner,
                             std::span<const EncodedSample> samples,
                             int workers) {
  const int n_classes = runner.n_classes();
  Metrics m;
  m.confusion.assign(static_cast<std::size_t>(n_classes),
                     std::vector<long>(static_cast<std::size_t>(n_classes), 0));
  const std::size_t n = samples.size();
  m.sample_ids.resize(n);
  m.sample_labels.resize(n);
  m.sample_predictions.resize(n);
  m.sample_ms.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    ForwardOptions opts;  // eval mode, single sample
    opts.workers = 1;
    const EncodedSample* one[] = {&samples[i]};
    detail::BatchRunner local = runner;
    std::vector<std::vector<double>> counts =
        local.forward_counts(std::span<const EncodedSample* const>(one, 1),
                             opts, nullptr);
    const auto t1 = std::chrono::steady_clock::now();
    m.sample_ids[i] = samples[i].id;
    m.sample_labels[i] = samples[i].label;
    m.sample_predictions[i] = detail::argmax_class(counts[0]);
    m.sample_ms[i] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  });
  long correct = 0;
  double ms_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.confusion[static_cast<std::size_t>(m.sample_labels[i])]
               [static_cast<std::size_t>(m.sample_predictions[i])]++;
    if (m.sample_labels[i] == m.sample_predictions[i]) ++correct;
    ms_sum += m.sample_ms[i];
  }
  m.accuracy = n == 0 ? 0.0 : static_cast<double>(correct) / n;
  m.mean_ms = n == 0 ? 0.0 : ms_sum / static_cast<double>(n);
  return m;
}

inline Metrics evaluate(Network& net, std::span<const EncodedSample> samples,
                        Modality modality, int workers = 1) {
  detail::BatchRunner runner;
  runner.net = &net;
  runner.modality = modality;
  return evaluate_impl(runner, samples, workers);
}

inline Metrics evaluate(FusionNetwork& net,
                        std::span<const EncodedSample> samples,
                        int workers = 1) {
  detail::BatchRunner runner;
  runner.fusion = &net;
  return evaluate_impl(runner, samples, workers);
}

namespace detail {

inline Metrics train_impl(BatchRunner runner, const EncodedDataset& data,
                          const TrainConfig& cfg,
                          const std::function<void(int, const Metrics&)>&
                              progress) {
  cfg.validate();
  if (data.train.empty()) throw UsageError("train: dataset has no samples");
  const int n_classes = runner.n_classes();
  for (const EncodedSample& s : data.train)
    if (s.label < 0 || s.label >= n_classes)
      throw UsageError("train: sample '" + s.id + "' label out of range");

  std::optional<std::vector<std::vector<double>>> velocity;
  if (cfg.momentum > 0.0) {
    velocity.emplace();
    detail::BatchRunner probe = runner;
    for (std::vector<float>* w : probe.weight_slots())
      velocity->emplace_back(w->size(), 0.0);
  }

  Metrics metrics;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(
        data.train.size(), derive_seed(cfg.seed, 0xE60Cu, epoch));
    EpochStats stats;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t B = end - start;
      std::vector<const EncodedSample*> batch(B);
      ForwardOptions opts;
      opts.train = true;
      opts.workers = cfg.workers;
      opts.dropout_seeds.resize(B);
      for (std::size_t i = 0; i < B; ++i) {
        batch[i] = &data.train[order[start + i]];
        opts.dropout_seeds[i] =
            derive_seed(cfg.seed, 0xD80u, epoch, order[start + i]);
      }
      BatchRunner::RunCaches caches;
      const std::vector<std::vector<double>> counts = runner.forward_counts(
          std::span<const EncodedSample* const>(batch), opts, &caches);

      std::vector<std::vector<double>> d_counts(B);
      for (std::size_t i = 0; i < B; ++i) {
        const RateVector target =
            target_rate(batch[i]->label, cfg.target, n_classes);
        LossResult lr =
            spike_rate_loss_counts(counts[i], target, cfg.loss_variant);
        if (!std::isfinite(lr.loss))
          throw NumericError("train: loss diverged at epoch " +
                             std::to_string(epoch + 1));
        stats.loss_sum += lr.loss;
        if (argmax_class(counts[i]) == batch[i]->label) ++stats.correct;
        ++stats.total;
        // Mean gradient over the batch.
        d_counts[i] = std::move(lr.d_count);
        for (double& v : d_counts[i]) v /= static_cast<double>(B);
      }
      runner.backward_and_step(caches, d_counts, cfg,
                               velocity ? &*velocity : nullptr);
    }
    metrics.train_loss.push_back(stats.loss_sum /
                                 static_cast<double>(stats.total));
    metrics.train_accuracy.push_back(static_cast<double>(stats.correct) /
                                     static_cast<double>(stats.total));

    // Test-split evaluation each epoch (chunked to bound memory).
    double test_loss_sum = 0.0;
    long test_correct = 0;
    long test_total = 0;
    for (std::size_t start = 0; start < data.test.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          data.test.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t B = end - start;
      std::vector<const EncodedSample*> batch(B);
      for (std::size_t i = 0; i < B; ++i) batch[i] = &data.test[start + i];
      ForwardOptions opts;
      opts.workers = cfg.workers;
      const std::vector<std::vector<double>> counts = runner.forward_counts(
          std::span<const EncodedSample* const>(batch), opts, nullptr);
      for (std::size_t i = 0; i < B; ++i) {
        const RateVector target =
            target_rate(batch[i]->label, cfg.target, n_classes);
        test_loss_sum +=
            spike_rate_loss_counts(counts[i], target, cfg.loss_variant).loss;
        if (argmax_class(counts[i]) == batch[i]->label) ++test_correct;
        ++test_total;
      }
    }
    metrics.test_loss.push_back(
        test_total == 0 ? 0.0 : test_loss_sum / static_cast<double>(test_total));
    metrics.test_accuracy.push_back(
        test_total == 0 ? 0.0
                        : static_cast<double>(test_correct) /
                              static_cast<double>(test_total));
    if (progress) progress(epoch, metrics);
  }
  return metrics;
}

}  // namespace detail

// Trains a single-modality network; per-epoch metrics include a test-split
// evaluation. The final confusion matrix comes from a closing evaluate().
inline Metrics train(Network& net, const EncodedDataset& data,
                     Modality modality, const TrainConfig& cfg,
                     const std::function<void(int, const Metrics&)>& progress =
                         nullptr) {
  detail::BatchRunner runner;
  runner.net = &net;
  runner.modality = modality;
  Metrics m = detail::train_impl(runner, data, cfg, progress);
  if (!data.test.empty()) {
    Metrics final_eval = evaluate(net, data.test, modality, cfg.workers);
    m.confusion = std::move(final_eval.confusion);
    m.accuracy = final_eval.accuracy;
    m.mean_ms = final_eval.mean_ms;
    m.sample_ids = std::move(final_eval.sample_ids);
    m.sample_labels = std::move(final_eval.sample_labels);
    m.sample_predictions = std::move(final_eval.sample_predictions);
    m.sample_ms = std::move(final_eval.sample_ms);
  }
  return m;
}

inline Metrics train(FusionNetwork& net, const EncodedDataset& data,
                     const TrainConfig& cfg,
                     const std::function<void(int, const Metrics&)>& progress =
                         nullptr) {
  for (const EncodedSample& s : data.train)
    if (!s.events || !s.depth)
      throw UsageError("fusion training requires both modalities; sample '" +
                       s.id + "' is incomplete");
  detail::BatchRunner runner;
  runner.fusion = &net;
  Metrics m = detail::train_impl(runner, data, cfg, progress);
  if (!data.test.empty()) {
    Metrics final_eval = evaluate(net, data.test, cfg.workers);
    m.confusion = std::move(final_eval.confusion);
    m.accuracy = final_eval.accuracy;
    m.mean_ms = final_eval.mean_ms;
    m.sample_ids = std::move(final_eval.sample_ids);
    m.sample_labels = std::move(final_eval.sample_labels);
    m.sample_predictions = std::move(final_eval.sample_predictions);
    m.sample_ms = std::move(final_eval.sample_ms);
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV formatting
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const Metrics& m) {
  std::string out = "epoch,train_accuracy,train_loss,test_accuracy,test_loss\n";
  char buf[160];
  for (std::size_t e = 0; e < m.train_accuracy.size(); ++e) {
    const double ta = e < m.test_accuracy.size() ? m.test_accuracy[e] : 0.0;
    const double tl = e < m.test_loss.size() ? m.test_loss[e] : 0.0;
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", e + 1,
                  m.train_accuracy[e], m.train_loss[e], ta, tl);
    out += buf;
  }
  return out;
}

inline std::string confusion_csv(const Metrics& m) {
  std::string out;
  for (const std::vector<long>& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ",";
      out += std::to_string(row[j]);
    }
    out += "\n";
  }
  return out;
}

inline std::string timing_csv(const Metrics& m) {
  std::string out = "sample,label,predicted,wall_ms\n";
  char buf[64];
  for (std::size_t i = 0; i < m.sample_ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%d,%d,%.3f\n", m.sample_labels[i],
                  m.sample_predictions[i], m.sample_ms[i]);
    out += m.sample_ids[i] + buf;
  }
  return out;
}

}  // namespace spikefuse
