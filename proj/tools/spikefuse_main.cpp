// spikefuse command-line tool: dataset synthesis, encoding inspection,
// training (single-modality and fusion), evaluation, and file-pair inference.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikefuse/spikefuse.hpp"

namespace fs = std::filesystem;
using namespace spikefuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("SPIKEFUSE_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw UsageError("SPIKEFUSE_SEED is not an unsigned integer");
    return v;
  }
  return 1;
}

ConfigDoc load_config_file(const std::string& path) {
  if (path.empty()) return ConfigDoc{};
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return ConfigDoc::parse(
      std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void fail_usage(const std::vector<std::string>& problems) {
  for (const std::string& p : problems) std::cerr << "error: " << p << "\n";
  throw UsageError("invalid configuration (" +
                   std::to_string(problems.size()) + " problem(s))");
}

EncoderConfig encoder_from_config(const ConfigDoc& doc, int grid_h, int grid_w,
                                  double dt) {
  EncoderConfig enc;
  enc.grid_height = grid_h;
  enc.grid_width = grid_w;
  enc.dt = dt;
  enc.d_max = doc.get_double_or("encoder", "d_max", enc.d_max);
  enc.polarity_epsilon =
      doc.get_double_or("encoder", "polarity_epsilon", enc.polarity_epsilon);
  const std::string mode =
      doc.get_string_or("encoder", "d_max_mode", "fixed");
  if (mode == "fixed")
    enc.d_max_mode = DMaxMode::Fixed;
  else if (mode == "per-frame")
    enc.d_max_mode = DMaxMode::PerFrame;
  else
    throw ConfigError("encoder.d_max_mode must be fixed or per-frame");
  return enc;
}

TrainConfig train_config_from(const ConfigDoc& doc, bool fusion) {
  TrainConfig cfg;
  cfg.epochs = fusion ? 200 : 100;
  cfg.learning_rate =
      doc.get_double_or("training", "learning_rate", cfg.learning_rate);
  cfg.epochs = static_cast<int>(doc.get_int_or("training", "epochs", cfg.epochs));
  cfg.batch_size =
      static_cast<int>(doc.get_int_or("training", "batch_size", cfg.batch_size));
  cfg.target.r_true = doc.get_double_or("training", "r_true", cfg.target.r_true);
  cfg.target.r_false =
      doc.get_double_or("training", "r_false", cfg.target.r_false);
  cfg.momentum = doc.get_double_or("training", "momentum", cfg.momentum);
  const std::string variant =
      doc.get_string_or("training", "loss_variant", "sum-all");
  if (variant == "sum-all")
    cfg.loss_variant = LossVariant::SumAll;
  else if (variant == "paper-literal")
    cfg.loss_variant = LossVariant::PaperLiteral;
  else
    throw ConfigError("training.loss_variant must be sum-all or paper-literal");
  return cfg;
}

struct CommonTrainFlags {
  std::string modality;
  std::string data;
  std::string config;
  std::string out;
  std::string init_from_a, init_from_b;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch;
  int workers = default_workers();
};

void print_epoch(int epoch, const Metrics& m) {
  std::printf("epoch %d train_accuracy=%.4f train_loss=%.4f "
              "test_accuracy=%.4f test_loss=%.4f\n",
              epoch + 1, m.train_accuracy.back(), m.train_loss.back(),
              m.test_accuracy.back(), m.test_loss.back());
  std::fflush(stdout);
}

int cmd_synth(int classes, int per_class, std::optional<std::uint64_t> seed,
              const std::string& out) {
  std::vector<std::string> problems;
  if (classes < 1 || classes > kGestureKindCount)
    problems.push_back("--classes must lie in 1.." +
                       std::to_string(kGestureKindCount));
  if (per_class < 1) problems.push_back("--per-class must be >= 1");
  if (out.empty()) problems.push_back("--out is required");
  if (!problems.empty()) fail_usage(problems);

  std::vector<GestureKind> kinds;
  for (int i = 0; i < classes; ++i)
    kinds.push_back(static_cast<GestureKind>(i));
  const std::uint64_t s = resolve_seed(seed);
  const DatasetManifest manifest =
      generate_dataset(per_class, kinds, s, out, SynthConfig{},
                       default_workers());
  long train_n = 0, test_n = 0;
  for (const ManifestSample& ms : manifest.samples)
    (ms.split == "train" ? train_n : test_n)++;
  std::printf("manifest=%s samples=%zu train=%ld test=%ld classes=%d\n",
              (fs::path(out) / "manifest.json").string().c_str(),
              manifest.samples.size(), train_n, test_n, classes);
  return kExitOk;
}

int cmd_train(const CommonTrainFlags& flags) {
  std::vector<std::string> problems;
  const std::optional<Modality> modality = modality_from_name(flags.modality);
  if (!modality)
    problems.push_back("--modality must be events, depth or fusion");
  if (flags.data.empty()) problems.push_back("--data is required");
  if (flags.out.empty()) problems.push_back("--out is required");
  if (modality && *modality == Modality::Fusion &&
      (flags.init_from_a.empty() || flags.init_from_b.empty()))
    problems.push_back(
        "fusion training requires --init-from-a and --init-from-b");
  if (flags.epochs && *flags.epochs < 1)
    problems.push_back("--epochs must be >= 1");
  if (flags.lr && *flags.lr < 0.0) problems.push_back("--lr must be >= 0");
  if (flags.batch && *flags.batch < 1)
    problems.push_back("--batch must be >= 1");
  if (flags.workers < 1) problems.push_back("--workers must be >= 1");
  if (!problems.empty()) fail_usage(problems);

  const ConfigDoc doc = load_config_file(flags.config);
  const std::uint64_t seed = resolve_seed(flags.seed);

  TrainConfig tcfg = train_config_from(doc, *modality == Modality::Fusion);
  if (flags.epochs) tcfg.epochs = *flags.epochs;
  if (flags.lr) tcfg.learning_rate = *flags.lr;
  if (flags.batch) tcfg.batch_size = *flags.batch;
  tcfg.seed = seed;
  tcfg.workers = flags.workers;

  const DatasetManifest manifest = read_manifest(flags.data);
  const int n_classes = static_cast<int>(manifest.classes.size());

  Metrics metrics;
  CheckpointMeta meta;
  meta.modality = *modality;
  meta.train_seed = seed;
  meta.epoch = tcfg.epochs;

  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);
  const std::string model_path = (out_dir / "model.snnc").string();

  if (*modality == Modality::Fusion) {
    LoadedCheckpoint a = load_checkpoint(flags.init_from_a);
    LoadedCheckpoint b = load_checkpoint(flags.init_from_b);
    if (!a.net || !b.net)
      throw ConfigError("fusion init checkpoints must be single-modality");
    if (a.meta.modality != Modality::Events ||
        b.meta.modality != Modality::Depth)
      throw ConfigError("--init-from-a must be an events checkpoint and "
                        "--init-from-b a depth checkpoint");
    std::vector<LayerSpec> head;
    if (doc.has_section("fusion_head")) {
      for (const std::string& key : doc.keys("fusion_head"))
        head.push_back(parse_layer_spec(doc.get_string("fusion_head", key)));
    } else {
      head.push_back(parse_layer_spec("dense out=512 dropout=0.1"));
      head.push_back(
          parse_layer_spec("dense out=" + std::to_string(n_classes)));
    }
    FusionNetwork fnet =
        init_fusion_from_subnets(*a.net, *b.net, head, seed);
    if (fnet.n_classes() != n_classes)
      throw ConfigError("fusion head emits " +
                        std::to_string(fnet.n_classes()) +
                        " classes, dataset has " + std::to_string(n_classes));

    EncoderConfig enc = encoder_from_config(doc, fnet.cfg.subnet_a.in_height,
                                            fnet.cfg.subnet_a.in_width,
                                            fnet.dt());
    const EncodedDataset data = load_encoded_dataset(
        flags.data, enc, static_cast<double>(fnet.t_steps()) * fnet.dt(),
        Modality::Fusion, flags.workers);
    metrics = train(fnet, data, tcfg, print_epoch);
    meta.kind = "fusion";
    save_checkpoint(fnet, meta, model_path);
  } else {
    NetworkConfig defaults;
    defaults.n_classes = n_classes;
    defaults.layers = default_topology(n_classes);
    defaults.seed = seed;
    NetworkConfig ncfg = network_from_config(doc, "", defaults);
    ncfg.seed = seed;
    Network net = Network::build(ncfg);

    EncoderConfig enc =
        encoder_from_config(doc, ncfg.in_height, ncfg.in_width, ncfg.dt);
    const EncodedDataset data = load_encoded_dataset(
        flags.data, enc, static_cast<double>(ncfg.t_steps) * ncfg.dt,
        *modality, flags.workers);
    metrics = train(net, data, *modality, tcfg, print_epoch);
    meta.kind = "single";
    save_checkpoint(net, meta, model_path);
  }

  atomic_write_file((out_dir / "metrics.csv").string(), metrics_csv(metrics));
  std::printf("checkpoint=%s\n", model_path.c_str());
  std::printf("final train_accuracy=%.4f test_accuracy=%.4f\n",
              metrics.train_accuracy.empty() ? 0.0
                                             : metrics.train_accuracy.back(),
              metrics.test_accuracy.empty() ? 0.0
                                            : metrics.test_accuracy.back());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             const std::string& out_metrics, const std::string& split,
             const std::string& config, int workers) {
  std::vector<std::string> problems;
  if (checkpoint.empty()) problems.push_back("--checkpoint is required");
  if (data.empty()) problems.push_back("--data is required");
  if (out_metrics.empty()) problems.push_back("--out-metrics is required");
  if (split != "test" && split != "train" && split != "all")
    problems.push_back("--split must be test, train or all");
  if (workers < 1) problems.push_back("--workers must be >= 1");
  if (!problems.empty()) fail_usage(problems);

  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const ConfigDoc doc = load_config_file(config);
  const DatasetManifest manifest = read_manifest(data);
  const int n_classes = static_cast<int>(manifest.classes.size());

  // Compatibility problems at this stage are runtime failures (exit 1).
  int ckpt_classes = 0;
  if (ckpt.net)
    ckpt_classes = ckpt.net->cfg.n_classes;
  else
    ckpt_classes = ckpt.fusion->n_classes();
  if (ckpt_classes != n_classes)
    throw Error("checkpoint expects " + std::to_string(ckpt_classes) +
                " classes but dataset has " + std::to_string(n_classes));

  EncodedDataset dataset;
  Metrics metrics;
  if (ckpt.net) {
    Network& net = *ckpt.net;
    EncoderConfig enc = encoder_from_config(doc, net.cfg.in_height,
                                            net.cfg.in_width, net.cfg.dt);
    dataset = load_encoded_dataset(
        data, enc, static_cast<double>(net.cfg.t_steps) * net.cfg.dt,
        ckpt.meta.modality, workers);
  } else {
    FusionNetwork& fnet = *ckpt.fusion;
    EncoderConfig enc = encoder_from_config(doc, fnet.cfg.subnet_a.in_height,
                                            fnet.cfg.subnet_a.in_width,
                                            fnet.dt());
    dataset = load_encoded_dataset(
        data, enc, static_cast<double>(fnet.t_steps()) * fnet.dt(),
        Modality::Fusion, workers);
  }

  std::vector<EncodedSample> samples;
  if (split == "train" || split == "all")
    for (EncodedSample& s : dataset.train) samples.push_back(std::move(s));
  if (split == "test" || split == "all")
    for (EncodedSample& s : dataset.test) samples.push_back(std::move(s));
  if (samples.empty()) throw Error("selected split contains no samples");

  if (ckpt.net)
    metrics = evaluate(*ckpt.net, samples, ckpt.meta.modality, workers);
  else
    metrics = evaluate(*ckpt.fusion, samples, workers);

  const fs::path out_dir(out_metrics);
  fs::create_directories(out_dir);
  atomic_write_file((out_dir / "confusion.csv").string(),
                    confusion_csv(metrics));
  atomic_write_file((out_dir / "timing.csv").string(), timing_csv(metrics));
  char buf[128];
  std::snprintf(buf, sizeof buf, "accuracy,mean_ms,samples\n%.9g,%.3f,%zu\n",
                metrics.accuracy, metrics.mean_ms, samples.size());
  atomic_write_file((out_dir / "summary.csv").string(), buf);
  std::printf("accuracy=%.4f mean_ms=%.3f\n", metrics.accuracy,
              metrics.mean_ms);
  return kExitOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& events_path,
              const std::string& depth_path, const std::string& csv_size,
              const std::string& config) {
  std::vector<std::string> problems;
  if (checkpoint.empty()) problems.push_back("--checkpoint is required");
  if (events_path.empty() && depth_path.empty())
    problems.push_back("need --events and/or --depth");
  if (!problems.empty()) fail_usage(problems);

  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const Modality modality = ckpt.meta.modality;
  if (modality == Modality::Events && (events_path.empty() || !depth_path.empty()))
    throw UsageError("checkpoint is events-only: pass exactly --events");
  if (modality == Modality::Depth && (depth_path.empty() || !events_path.empty()))
    throw UsageError("checkpoint is depth-only: pass exactly --depth");
  if (modality == Modality::Fusion && (events_path.empty() || depth_path.empty()))
    throw UsageError("fusion checkpoint needs both --events and --depth");

  const ConfigDoc doc = load_config_file(config);
  int grid_h = 0, grid_w = 0;
  long t_steps = 0;
  double dt = 1.0;
  if (ckpt.net) {
    grid_h = ckpt.net->cfg.in_height;
    grid_w = ckpt.net->cfg.in_width;
    t_steps = ckpt.net->cfg.t_steps;
    dt = ckpt.net->cfg.dt;
  } else {
    grid_h = ckpt.fusion->cfg.subnet_a.in_height;
    grid_w = ckpt.fusion->cfg.subnet_a.in_width;
    t_steps = ckpt.fusion->t_steps();
    dt = ckpt.fusion->dt();
  }
  EncoderConfig enc = encoder_from_config(doc, grid_h, grid_w, dt);
  const double duration = static_cast<double>(t_steps) * dt;

  auto load_event_tensor = [&](const std::string& path) {
    EventStream stream;
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
      int w = 480, h = 360;
      if (std::sscanf(csv_size.c_str(), "%dx%d", &w, &h) != 2)
        throw UsageError("--csv-size must look like 480x360");
      stream = read_events_csv(path, w, h);
    } else {
      stream = read_events(path);
    }
    return bin_events(stream, enc, duration);
  };
  auto load_depth_tensor = [&](const std::string& path) {
    const DepthSequence seq = read_depth(path);
    EncoderConfig depth_enc = enc;
    depth_enc.fps = seq.fps;
    SpikeTensor t = encode_depth(seq, depth_enc);
    if (t.t_steps() != t_steps)
      throw Error("depth file covers " + std::to_string(t.t_steps()) +
                  " steps, checkpoint expects " + std::to_string(t_steps));
    return t;
  };

  std::vector<double> counts;
  double ms = 0.0;
  if (ckpt.net) {
    const SpikeTensor input = modality == Modality::Events
                                  ? load_event_tensor(events_path)
                                  : load_depth_tensor(depth_path);
    const auto t0 = std::chrono::steady_clock::now();
    NetForwardResult r = forward(*ckpt.net, input);
    const auto t1 = std::chrono::steady_clock::now();
    ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    counts = r.cache.samples[0].out_counts;
  } else {
    const SpikeTensor ev = load_event_tensor(events_path);
    const SpikeTensor de = load_depth_tensor(depth_path);
    const auto t0 = std::chrono::steady_clock::now();
    FusionForwardResult r = fusion_forward(*ckpt.fusion, ev, de);
    const auto t1 = std::chrono::steady_clock::now();
    ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    counts = r.cache_head.samples[0].out_counts;
  }

  int best = 0;
  for (std::size_t k = 1; k < counts.size(); ++k)
    if (counts[k] > counts[static_cast<std::size_t>(best)])
      best = static_cast<int>(k);
  // Class names: gesture kinds when the width matches the builtin set,
  // otherwise positional names.
  std::string label;
  if (counts.size() <= static_cast<std::size_t>(kGestureKindCount))
    label = gesture_name(static_cast<GestureKind>(best));
  else
    label = "class" + std::to_string(best);
  std::printf("label=%s\n", label.c_str());
  std::printf("counts=");
  for (std::size_t k = 0; k < counts.size(); ++k)
    std::printf("%s%.0f", k ? "," : "", counts[k]);
  std::printf("\n");
  std::printf("wall_ms=%.3f\n", ms);
  return kExitOk;
}

int cmd_encode(const std::string& events_path, const std::string& depth_path,
               const std::string& out, const std::string& config,
               double duration_ms, const std::string& csv_size) {
  std::vector<std::string> problems;
  if (events_path.empty() == depth_path.empty())
    problems.push_back("pass exactly one of --events or --depth");
  if (out.empty()) problems.push_back("--out is required");
  if (duration_ms <= 0) problems.push_back("--duration-ms must be > 0");
  if (!problems.empty()) fail_usage(problems);

  const ConfigDoc doc = load_config_file(config);
  EncoderConfig enc = encoder_from_config(
      doc, static_cast<int>(doc.get_int_or("encoder", "grid_height", 128)),
      static_cast<int>(doc.get_int_or("encoder", "grid_width", 128)),
      doc.get_double_or("encoder", "dt", 1.0));

  SpikeTensor tensor;
  if (!events_path.empty()) {
    EventStream stream;
    if (events_path.size() > 4 &&
        events_path.substr(events_path.size() - 4) == ".csv") {
      int w = 480, h = 360;
      if (std::sscanf(csv_size.c_str(), "%dx%d", &w, &h) != 2)
        throw UsageError("--csv-size must look like 480x360");
      stream = read_events_csv(events_path, w, h);
    } else {
      stream = read_events(events_path);
    }
    tensor = bin_events(stream, enc, duration_ms);
  } else {
    const DepthSequence seq = read_depth(depth_path);
    enc.fps = seq.fps;
    tensor = encode_depth(seq, enc);
  }

  atomic_write_file(out, spike_tensor_dump(tensor));

  // summary: total spikes and the spikes-per-step distribution
  std::vector<long> per_step(static_cast<std::size_t>(tensor.t_steps()), 0);
  for (long n = 0; n < tensor.neuron_count(); ++n) {
    const std::uint64_t* words = tensor.neuron_words(n);
    for (std::size_t wi = 0; wi < tensor.words_per_neuron(); ++wi) {
      std::uint64_t w = words[wi];
      while (w) {
        const int b = std::countr_zero(w);
        w &= w - 1;
        const long step = static_cast<long>(wi) * 64 + b;
        if (step < tensor.t_steps())
          per_step[static_cast<std::size_t>(step)]++;
      }
    }
  }
  const long total = tensor.total_spikes();
  long max_per_step = 0;
  for (long v : per_step) max_per_step = std::max(max_per_step, v);
  std::printf("total_spikes=%ld t_steps=%ld mean_per_step=%.3f "
              "max_per_step=%ld\n",
              total, tensor.t_steps(),
              static_cast<double>(total) / static_cast<double>(tensor.t_steps()),
              max_per_step);
  std::printf("spikes_per_step_histogram:\n");
  const int bins = 8;
  for (int b = 0; b < bins; ++b) {
    const long lo = max_per_step * b / bins;
    const long hi = b == bins - 1 ? max_per_step : max_per_step * (b + 1) / bins - 1;
    long count = 0;
    for (long v : per_step)
      if (v >= lo && v <= hi) ++count;
    std::printf("  [%ld..%ld] steps=%ld\n", lo, std::max(lo, hi), count);
    if (max_per_step == 0) break;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spikefuse: spiking convolutional gesture recognition on "
               "event and depth data"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int synth_classes = 3, synth_per_class = 10;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  synth->add_option("--classes", synth_classes,
                    "number of gesture classes (1..6)");
  synth->add_option("--per-class", synth_per_class, "samples per class");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a classifier");
  CommonTrainFlags tf;
  train->add_option("--modality", tf.modality, "events|depth|fusion")
      ->required();
  train->add_option("--data", tf.data, "dataset manifest path")->required();
  train->add_option("--config", tf.config, "config file (TOML-style)");
  train->add_option("--epochs", tf.epochs, "training epochs");
  train->add_option("--lr", tf.lr, "learning rate");
  train->add_option("--batch", tf.batch, "batch size");
  train->add_option("--seed", tf.seed, "training seed");
  train->add_option("--out", tf.out, "output directory")->required();
  train->add_option("--init-from-a", tf.init_from_a,
                    "events subnet checkpoint (fusion)");
  train->add_option("--init-from-b", tf.init_from_b,
                    "depth subnet checkpoint (fusion)");
  train->add_option("--workers", tf.workers, "parallel workers");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out, eval_split = "test",
              eval_config;
  int eval_workers = default_workers();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset manifest path")->required();
  eval->add_option("--out-metrics", eval_out, "metrics output directory")
      ->required();
  eval->add_option("--split", eval_split, "test|train|all");
  eval->add_option("--config", eval_config, "config file");
  eval->add_option("--workers", eval_workers, "parallel workers");

  // infer
  auto* infer = app.add_subcommand("infer", "classify one sample");
  std::string infer_ckpt, infer_events, infer_depth, infer_csv_size = "480x360",
              infer_config;
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint path")->required();
  infer->add_option("--events", infer_events, "event file (.evs or .csv)");
  infer->add_option("--depth", infer_depth, "depth file (.dps)");
  infer->add_option("--csv-size", infer_csv_size,
                    "sensor size for CSV imports (WxH)");
  infer->add_option("--config", infer_config, "config file");

  // encode
  auto* encode = app.add_subcommand("encode", "run the encoder standalone");
  std::string enc_events, enc_depth, enc_out, enc_config,
      enc_csv_size = "480x360";
  double enc_duration = 2000.0;
  encode->add_option("--events", enc_events, "event file (.evs or .csv)");
  encode->add_option("--depth", enc_depth, "depth file (.dps)");
  encode->add_option("--out", enc_out, "spike dump output path")->required();
  encode->add_option("--config", enc_config, "config file");
  encode->add_option("--duration-ms", enc_duration,
                     "sequence duration for event binning");
  encode->add_option("--csv-size", enc_csv_size,
                     "sensor size for CSV imports (WxH)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_classes, synth_per_class, synth_seed, synth_out);
    if (train->parsed()) return cmd_train(tf);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_out, eval_split, eval_config,
                      eval_workers);
    if (infer->parsed())
      return cmd_infer(infer_ckpt, infer_events, infer_depth, infer_csv_size,
                       infer_config);
    if (encode->parsed())
      return cmd_encode(enc_events, enc_depth, enc_out, enc_config,
                        enc_duration, enc_csv_size);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
