#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "spikefuse/data_io.hpp"
#include "test_util.hpp"

using namespace spikefuse;

namespace {

EventStream random_stream(std::uint64_t seed, std::size_t n, int w = 64,
                          int h = 48) {
  EventStream s;
  s.width = w;
  s.height = h;
  Rng rng(seed);
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.next_below(5000);
    s.events.push_back({t,
                        static_cast<std::uint16_t>(rng.next_below(w)),
                        static_cast<std::uint16_t>(rng.next_below(h)),
                        rng.bernoulli(0.5) ? Polarity::On : Polarity::Off});
  }
  return s;
}

DepthSequence random_depth(std::uint64_t seed, int frames = 5, int w = 12,
                           int h = 9) {
  DepthSequence d;
  d.width = w;
  d.height = h;
  d.fps = 30.0;
  Rng rng(seed);
  for (int f = 0; f < frames; ++f) {
    std::vector<std::uint16_t> frame(static_cast<std::size_t>(w) * h);
    for (auto& v : frame) v = static_cast<std::uint16_t>(rng.next_below(4000));
    d.frames.push_back(std::move(frame));
  }
  return d;
}

}  // namespace

TEST_CASE("event file round trips") {
  SECTION("empty stream") {
    EventStream s;
    s.width = 10;
    s.height = 10;
    REQUIRE(decode_events(encode_events(s)) == s);
  }
  SECTION("1000 random sorted events") {
    const EventStream s = random_stream(42, 1000);
    REQUIRE(decode_events(encode_events(s)) == s);
  }
  SECTION("via the filesystem") {
    testutil::TempDir dir("events");
    const EventStream s = random_stream(7, 64);
    const std::string path = dir.str() + "/sample.evs";
    write_events(s, path);
    REQUIRE(read_events(path) == s);
  }
}

TEST_CASE("event file rejections carry byte offsets") {
  const EventStream s = random_stream(3, 4, 8, 8);
  std::vector<std::uint8_t> bytes = encode_events(s);
  SECTION("bad magic") {
    bytes[0] = 'X';
    try {
      decode_events(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.offset() == 0);
    }
  }
  SECTION("x at width bound is rejected at the record offset") {
    // header is 4+2+2+8 = 16 bytes; records are 13 bytes: t(8) x(2) y(2) p(1)
    const std::size_t record1 = 16 + 13;
    bytes[record1 + 8] = 8;  // x = width
    bytes[record1 + 9] = 0;
    try {
      decode_events(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.offset() == record1);
    }
  }
  SECTION("unsorted timestamps are rejected") {
    const std::size_t record2 = 16 + 2 * 13;
    for (int i = 0; i < 8; ++i) bytes[record2 + i] = 0;  // t = 0
    REQUIRE_THROWS_AS(decode_events(bytes), ParseError);
  }
  SECTION("truncation is rejected") {
    bytes.resize(bytes.size() - 5);
    REQUIRE_THROWS_AS(decode_events(bytes), ParseError);
  }
  SECTION("trailing bytes are rejected") {
    bytes.push_back(0);
    REQUIRE_THROWS_AS(decode_events(bytes), ParseError);
  }
}

TEST_CASE("depth file round trips and rejections") {
  SECTION("round trip") {
    const DepthSequence d = random_depth(11);
    REQUIRE(decode_depth_file(encode_depth_file(d)) == d);
    testutil::TempDir dir("depth");
    const std::string path = dir.str() + "/sample.dps";
    write_depth(d, path);
    REQUIRE(read_depth(path) == d);
  }
  SECTION("single-frame files are rejected") {
    std::vector<std::uint8_t> bytes = encode_depth_file(random_depth(1, 2));
    // frame count lives after magic(4) w(2) h(2) fps(4)
    bytes[12] = 1;
    bytes[13] = bytes[14] = bytes[15] = 0;
    REQUIRE_THROWS_AS(decode_depth_file(bytes), ParseError);
  }
  SECTION("non-positive fps is rejected") {
    std::vector<std::uint8_t> bytes = encode_depth_file(random_depth(1, 3));
    bytes[8] = bytes[9] = bytes[10] = bytes[11] = 0;  // fps = 0.0f
    try {
      decode_depth_file(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.offset() == 8);
    }
  }
  SECTION("truncated payload is rejected") {
    std::vector<std::uint8_t> bytes = encode_depth_file(random_depth(2, 3));
    bytes.resize(bytes.size() - 3);
    REQUIRE_THROWS_AS(decode_depth_file(bytes), ParseError);
  }
}

TEST_CASE("events CSV import") {
  SECTION("parses records with an optional header") {
    const std::string text =
        "t_us,x,y,p\n"
        "100,3,4,1\n"
        "250,0,0,0\n";
    const EventStream s = parse_events_csv(text, 8, 8);
    REQUIRE(s.events.size() == 2);
    REQUIRE(s.events[0].t_us == 100);
    REQUIRE(s.events[0].polarity == Polarity::On);
    REQUIRE(s.events[1].polarity == Polarity::Off);
  }
  SECTION("malformed rows carry the line's byte offset") {
    const std::string text = "100,3,4,1\nbroken line\n";
    try {
      parse_events_csv(text, 8, 8);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.offset() == 10);
    }
  }
  SECTION("rejects out-of-range and unsorted rows") {
    REQUIRE_THROWS_AS(parse_events_csv("100,9,0,1\n", 8, 8), ParseError);
    REQUIRE_THROWS_AS(parse_events_csv("100,0,0,1\n50,0,0,1\n", 8, 8),
                      ParseError);
    REQUIRE_THROWS_AS(parse_events_csv("100,0,0,2\n", 8, 8), ParseError);
  }
}

namespace {

NetworkConfig tiny_net_cfg() {
  NetworkConfig cfg;
  cfg.in_channels = 2;
  cfg.in_height = 8;
  cfg.in_width = 8;
  cfg.t_steps = 10;
  cfg.dt = 1.0;
  cfg.n_classes = 2;
  cfg.seed = 77;
  cfg.layers.push_back(parse_layer_spec("input-pool k=2"));
  cfg.layers.push_back(parse_layer_spec("conv out=3 kernel=3x3 stride=1 pad=1"));
  cfg.layers.push_back(parse_layer_spec("flatten"));
  cfg.layers.push_back(parse_layer_spec("dense out=2"));
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint save/load") {
  Network net = Network::build(tiny_net_cfg());
  // make the state non-trivial
  net.stack.bn_mean[1][0] = 0.25f;
  net.stack.bn_mean[1][2] = -0.5f;
  CheckpointMeta meta;
  meta.modality = Modality::Depth;
  meta.train_seed = 424242;
  meta.epoch = 17;

  SECTION("save -> load -> save is byte-identical") {
    const std::vector<std::uint8_t> bytes1 = encode_checkpoint(net, meta);
    LoadedCheckpoint loaded = decode_checkpoint(bytes1);
    REQUIRE(loaded.net.has_value());
    REQUIRE(loaded.meta.modality == Modality::Depth);
    REQUIRE(loaded.meta.train_seed == 424242);
    REQUIRE(loaded.meta.epoch == 17);
    const std::vector<std::uint8_t> bytes2 =
        encode_checkpoint(*loaded.net, loaded.meta);
    REQUIRE(bytes1 == bytes2);
    REQUIRE(loaded.net->stack.weights == net.stack.weights);
    REQUIRE(loaded.net->stack.bn_mean == net.stack.bn_mean);
  }
  SECTION("filesystem round trip") {
    testutil::TempDir dir("ckpt");
    const std::string path = dir.str() + "/model.snnc";
    save_checkpoint(net, meta, path);
    LoadedCheckpoint loaded = load_checkpoint(path);
    REQUIRE(loaded.net->stack.weights == net.stack.weights);
  }
  SECTION("truncation errors name the failing blob") {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(net, meta);
    std::vector<std::uint8_t> cut(bytes.begin(),
                                  bytes.begin() + static_cast<long>(bytes.size()) - 9);
    try {
      decode_checkpoint(cut);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      REQUIRE(std::string(e.what()).find("layer") != std::string::npos);
    }
  }
  SECTION("unsupported version is rejected") {
    std::vector<std::uint8_t> bytes = encode_checkpoint(net, meta);
    bytes[4] = 99;
    REQUIRE_THROWS_AS(decode_checkpoint(bytes), CheckpointError);
  }
  SECTION("fusion checkpoints round trip") {
    NetworkConfig sub = tiny_net_cfg();
    sub.layers.push_back(parse_layer_spec("dense out=2"));
    // rebuild: flatten->dense->dense tail
    sub.layers.clear();
    sub.layers.push_back(parse_layer_spec("input-pool k=2"));
    sub.layers.push_back(
        parse_layer_spec("conv out=3 kernel=3x3 stride=1 pad=1"));
    sub.layers.push_back(parse_layer_spec("flatten"));
    sub.layers.push_back(parse_layer_spec("dense out=8"));
    sub.layers.push_back(parse_layer_spec("dense out=2"));
    Network a = Network::build(sub);
    NetworkConfig sub_b = sub;
    sub_b.seed = 78;
    Network b = Network::build(sub_b);
    std::vector<LayerSpec> head;
    head.push_back(parse_layer_spec("dense out=8"));
    head.push_back(parse_layer_spec("dense out=2"));
    FusionNetwork f = init_fusion_from_subnets(a, b, head, 5);
    CheckpointMeta fmeta;
    fmeta.kind = "fusion";
    fmeta.modality = Modality::Fusion;
    const std::vector<std::uint8_t> bytes1 = encode_checkpoint(f, fmeta);
    LoadedCheckpoint loaded = decode_checkpoint(bytes1);
    REQUIRE(loaded.fusion.has_value());
    REQUIRE(loaded.fusion->branch_a.weights == f.branch_a.weights);
    REQUIRE(loaded.fusion->head.weights == f.head.weights);
    REQUIRE(encode_checkpoint(*loaded.fusion, loaded.meta) == bytes1);
  }
}

TEST_CASE("manifest round trip and validation") {
  DatasetManifest m;
  m.classes = {"swipe-left", "swipe-right"};
  m.samples.push_back(
      {"swipe-left_000", 0, "swipe-left", "events/a.evs", "depth/a.dps",
       "train"});
  m.samples.push_back(
      {"swipe-right_000", 1, "swipe-right", "events/b.evs", "", "test"});
  SECTION("round trip") {
    const DatasetManifest back = manifest_from_json(manifest_to_json(m));
    REQUIRE(back.classes == m.classes);
    REQUIRE(back.samples.size() == 2);
    REQUIRE(back.samples[1].depth_path.empty());
    REQUIRE(back.samples[1].split == "test");
  }
  SECTION("bad labels and splits are rejected") {
    DatasetManifest bad = m;
    bad.samples[0].label = 5;
    REQUIRE_THROWS_AS(manifest_to_json(bad), ConfigError);
    bad = m;
    bad.samples[0].split = "holdout";
    REQUIRE_THROWS_AS(manifest_to_json(bad), ConfigError);
  }
  SECTION("malformed JSON carries an offset") {
    try {
      manifest_from_json("{ not json");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(std::string(e.what()).find("byte") != std::string::npos);
    }
  }
}

TEST_CASE("fuzzed inputs never crash the parsers") {
  // Deterministic mutation fuzzing: every outcome must be either success or
  // a typed ParseError carrying an offset.
  const std::vector<std::uint8_t> events = encode_events(random_stream(5, 50));
  const std::vector<std::uint8_t> depth =
      encode_depth_file(random_depth(6, 3, 8, 6));
  Network net = Network::build(tiny_net_cfg());
  const std::vector<std::uint8_t> ckpt =
      encode_checkpoint(net, CheckpointMeta{});
  Rng rng(20240601);
  long rejected = 0, accepted = 0;
  auto fuzz_one = [&](const std::vector<std::uint8_t>& base, auto decode) {
    std::vector<std::uint8_t> bytes = base;
    const int mutations = 1 + static_cast<int>(rng.next_below(8));
    for (int m = 0; m < mutations; ++m) {
      switch (rng.next_below(3)) {
        case 0:  // byte flip
          if (!bytes.empty())
            bytes[rng.next_below(bytes.size())] ^=
                static_cast<std::uint8_t>(1 + rng.next_below(255));
          break;
        case 1:  // truncate
          bytes.resize(rng.next_below(bytes.size() + 1));
          break;
        default:  // append garbage
          bytes.push_back(static_cast<std::uint8_t>(rng.next_below(256)));
          break;
      }
    }
    try {
      decode(bytes);
      ++accepted;
    } catch (const ParseError&) {
      ++rejected;
    }
  };
  for (int i = 0; i < 800; ++i) {
    fuzz_one(events, [](const std::vector<std::uint8_t>& b) {
      return decode_events(b);
    });
    fuzz_one(depth, [](const std::vector<std::uint8_t>& b) {
      return decode_depth_file(b);
    });
    fuzz_one(ckpt, [](const std::vector<std::uint8_t>& b) {
      return decode_checkpoint(b);
    });
  }
  REQUIRE(rejected > 0);  // mutations really do get rejected
  REQUIRE(rejected + accepted == 2400);
}

TEST_CASE("load_encoded_dataset assembles tensors per modality") {
  testutil::TempDir dir("dataset");
  DatasetManifest m;
  m.classes = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    const std::string id = "s" + std::to_string(i);
    const EventStream stream = random_stream(100 + i, 40, 16, 16);
    DepthSequence depth = random_depth(200 + i, 3, 8, 8);
    depth.fps = 1.5;  // 3 frames / 1.5 fps = 2000 ms
    for (auto& f : depth.frames)
      for (auto& v : f) v = static_cast<std::uint16_t>(v % 3500 + 100);
    write_events(stream, dir.str() + "/" + id + ".evs");
    write_depth(depth, dir.str() + "/" + id + ".dps");
    m.samples.push_back({id, i % 2, m.classes[static_cast<std::size_t>(i % 2)],
                         id + ".evs", id + ".dps",
                         i < 3 ? "train" : "test"});
  }
  write_manifest(m, dir.str() + "/manifest.json");

  EncoderConfig enc;
  enc.grid_height = 8;
  enc.grid_width = 8;
  enc.dt = 10.0;
  enc.fps = 1.5;
  const EncodedDataset ds = load_encoded_dataset(
      dir.str() + "/manifest.json", enc, 2000.0, Modality::Fusion, 2);
  REQUIRE(ds.train.size() == 3);
  REQUIRE(ds.test.size() == 1);
  REQUIRE(ds.n_classes() == 2);
  for (const EncodedSample& s : ds.train) {
    REQUIRE(s.events.has_value());
    REQUIRE(s.depth.has_value());
    REQUIRE(s.events->t_steps() == 200);
    REQUIRE(s.depth->t_steps() == 200);
  }
  // events-only loading skips depth tensors
  const EncodedDataset ev_only = load_encoded_dataset(
      dir.str() + "/manifest.json", enc, 2000.0, Modality::Events, 1);
  REQUIRE(ev_only.train[0].events.has_value());
  REQUIRE_FALSE(ev_only.train[0].depth.has_value());
}

TEST_CASE("atomic_write_file leaves no temp residue") {
  testutil::TempDir dir("atomic");
  const std::string path = dir.str() + "/nested/out.txt";
  atomic_write_file(path, std::string_view("hello"));
  REQUIRE(std::filesystem::exists(path));
  REQUIRE_FALSE(std::filesystem::exists(path + ".tmp"));
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  REQUIRE(std::string(bytes.begin(), bytes.end()) == "hello");
}
