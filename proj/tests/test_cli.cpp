#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "spikefuse/data_io.hpp"
#include "spikefuse/synth.hpp"
#include "test_util.hpp"

using namespace spikefuse;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args, const std::string& tag) {
  const fs::path out_file =
      fs::temp_directory_path() / ("spikefuse_cli_out_" + tag + ".txt");
  const std::string cmd = std::string(SPIKEFUSE_CLI_PATH) + " " + args + " >" +
                          out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(out_file);
  r.out.assign(std::istreambuf_iterator<char>(f),
               std::istreambuf_iterator<char>());
  fs::remove(out_file);
  return r;
}

// Small end-to-end configuration: 16x16 grid, 100 steps of 20 ms.
const char* kSmallConfig = R"cfg(
[network]
input_height = 16
input_width = 16
t_steps = 100
dt = 20.0

[layers]
layer0 = input-pool k=2 threshold=0.4
layer1 = conv out=4 kernel=3x3 stride=1 pad=1 threshold=0.8
layer2 = pool k=2
layer3 = flatten
layer4 = dense out=16
layer5 = dense out=3

[training]
batch_size = 6
r_true = 30
r_false = 5
)cfg";

}  // namespace

TEST_CASE("cli help and usage errors") {
  REQUIRE(run_cli("--help", "help").exit_code == 0);
  for (const char* sub : {"synth", "train", "eval", "infer", "encode"})
    REQUIRE(run_cli(std::string(sub) + " --help", "subhelp").exit_code == 0);
  SECTION("missing required flag exits 2") {
    const CliResult r = run_cli("synth --classes 3", "noout");
    REQUIRE(r.exit_code == 2);
  }
  SECTION("unknown subcommand exits 2") {
    REQUIRE(run_cli("transmogrify", "unknown").exit_code == 2);
  }
  SECTION("bad flag values exit 2") {
    REQUIRE(run_cli("synth --classes 9 --per-class 1 --out /tmp/x", "badcls")
                .exit_code == 2);
  }
}

TEST_CASE("cli synth is reproducible") {
  testutil::TempDir dir("clisynth");
  const std::string out1 = dir.str() + "/d1";
  const std::string out2 = dir.str() + "/d2";
  const CliResult r1 =
      run_cli("synth --classes 2 --per-class 5 --seed 7 --out " + out1, "s1");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r1.out.find("samples=10") != std::string::npos);
  REQUIRE(fs::exists(out1 + "/manifest.json"));
  const CliResult r2 =
      run_cli("synth --classes 2 --per-class 5 --seed 7 --out " + out2, "s2");
  REQUIRE(r2.exit_code == 0);
  // identical trees, byte for byte
  const DatasetManifest m = read_manifest(out1 + "/manifest.json");
  REQUIRE(read_file_bytes(out1 + "/manifest.json") ==
          read_file_bytes(out2 + "/manifest.json"));
  for (const ManifestSample& s : m.samples) {
    REQUIRE(read_file_bytes(out1 + "/" + s.event_path) ==
            read_file_bytes(out2 + "/" + s.event_path));
    REQUIRE(read_file_bytes(out1 + "/" + s.depth_path) ==
            read_file_bytes(out2 + "/" + s.depth_path));
  }
}

TEST_CASE("cli encode") {
  testutil::TempDir dir("cliencode");
  SECTION("static depth emits zero spikes") {
    DepthSequence d;
    d.width = 8;
    d.height = 8;
    d.fps = 30.0;
    d.frames.assign(3, std::vector<std::uint16_t>(64, 1200));
    write_depth(d, dir.str() + "/static.dps");
    const CliResult r = run_cli(
        "encode --depth " + dir.str() + "/static.dps --out " + dir.str() +
            "/dump.txt",
        "enc0");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("total_spikes=0") != std::string::npos);
  }
  SECTION("hand-built two-frame file reproduces the hand computation") {
    // one pixel rising 1000 -> 3000 mm: ON spike at 8 ms (see encoder tests)
    DepthSequence d;
    d.width = 1;
    d.height = 1;
    d.fps = 30.0;
    d.frames = {{1000}, {3000}};
    write_depth(d, dir.str() + "/rise.dps");
    const std::string cfg_path = dir.str() + "/enc.toml";
    atomic_write_file(cfg_path, std::string_view("[encoder]\ngrid_height = 1\n"
                                                 "grid_width = 1\ndt = 1.0\n"));
    const CliResult r = run_cli("encode --depth " + dir.str() +
                                    "/rise.dps --config " + cfg_path +
                                    " --out " + dir.str() + "/dump.txt",
                                "enc1");
    REQUIRE(r.exit_code == 0);
    const std::vector<std::uint8_t> dump =
        read_file_bytes(dir.str() + "/dump.txt");
    const std::string text(dump.begin(), dump.end());
    REQUIRE(text.find("\n0,0,0,8\n") != std::string::npos);
    // exactly one spike line
    REQUIRE(r.out.find("total_spikes=1") != std::string::npos);
  }
  SECTION("encoding twice is deterministic") {
    const SynthSample s = synth_gesture(GestureKind::SwipeLeft, 5);
    write_events(s.events, dir.str() + "/a.evs");
    REQUIRE(run_cli("encode --events " + dir.str() + "/a.evs --out " +
                        dir.str() + "/d1.txt",
                    "enc2")
                .exit_code == 0);
    REQUIRE(run_cli("encode --events " + dir.str() + "/a.evs --out " +
                        dir.str() + "/d2.txt",
                    "enc3")
                .exit_code == 0);
    REQUIRE(read_file_bytes(dir.str() + "/d1.txt") ==
            read_file_bytes(dir.str() + "/d2.txt"));
  }
  SECTION("csv import feeds the encoder") {
    atomic_write_file(dir.str() + "/ev.csv",
                      std::string_view("t_us,x,y,p\n1500,3,4,1\n"));
    const CliResult r = run_cli(
        "encode --events " + dir.str() + "/ev.csv --csv-size 8x8 --out " +
            dir.str() + "/csvdump.txt",
        "enc4");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("total_spikes=1") != std::string::npos);
  }
  SECTION("parse failure exits 1") {
    atomic_write_file(dir.str() + "/junk.dps", std::string_view("not a file"));
    REQUIRE(run_cli("encode --depth " + dir.str() + "/junk.dps --out " +
                        dir.str() + "/x.txt",
                    "enc5")
                .exit_code == 1);
  }
}

TEST_CASE("cli train/eval/infer round trip on a small set") {
  testutil::TempDir dir("clitrain");
  const std::string data_dir = dir.str() + "/data";
  REQUIRE(run_cli("synth --classes 3 --per-class 5 --seed 7 --out " + data_dir,
                  "t0")
              .exit_code == 0);
  const std::string cfg_path = dir.str() + "/small.toml";
  atomic_write_file(cfg_path, std::string_view(kSmallConfig));
  const std::string manifest = data_dir + "/manifest.json";

  SECTION("training writes checkpoint and metrics; lr=0 keeps init weights") {
    const CliResult r = run_cli(
        "train --modality events --data " + manifest + " --config " +
            cfg_path + " --epochs 2 --lr 0 --seed 5 --out " + dir.str() +
            "/run0 --workers 2",
        "t1");
    INFO(r.out);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(dir.str() + "/run0/model.snnc"));
    REQUIRE(fs::exists(dir.str() + "/run0/metrics.csv"));
    // a second run with more epochs but lr=0 has identical weights
    REQUIRE(run_cli("train --modality events --data " + manifest +
                        " --config " + cfg_path +
                        " --epochs 4 --lr 0 --seed 5 --out " + dir.str() +
                        "/run1",
                    "t2")
                .exit_code == 0);
    LoadedCheckpoint a = load_checkpoint(dir.str() + "/run0/model.snnc");
    LoadedCheckpoint b = load_checkpoint(dir.str() + "/run1/model.snnc");
    REQUIRE(a.net->stack.weights == b.net->stack.weights);
  }

  SECTION("same flags replay byte-identically regardless of workers") {
    for (int i = 0; i < 2; ++i) {
      const std::string out = dir.str() + "/det" + std::to_string(i);
      REQUIRE(run_cli("train --modality events --data " + manifest +
                          " --config " + cfg_path +
                          " --epochs 2 --seed 9 --out " + out + " --workers " +
                          (i == 0 ? "1" : "2"),
                      "t3")
                  .exit_code == 0);
    }
    REQUIRE(read_file_bytes(dir.str() + "/det0/model.snnc") ==
            read_file_bytes(dir.str() + "/det1/model.snnc"));
    REQUIRE(read_file_bytes(dir.str() + "/det0/metrics.csv") ==
            read_file_bytes(dir.str() + "/det1/metrics.csv"));
  }

  SECTION("fusion requires init checkpoints") {
    REQUIRE(run_cli("train --modality fusion --data " + manifest + " --out " +
                        dir.str() + "/f0",
                    "t4")
                .exit_code == 2);
  }

  SECTION("eval and infer consume a trained checkpoint") {
    REQUIRE(run_cli("train --modality events --data " + manifest +
                        " --config " + cfg_path +
                        " --epochs 2 --seed 5 --out " + dir.str() + "/runE",
                    "t5")
                .exit_code == 0);
    const std::string ckpt = dir.str() + "/runE/model.snnc";
    const CliResult ev = run_cli(
        "eval --checkpoint " + ckpt + " --data " + manifest +
            " --out-metrics " + dir.str() + "/m0 --split test",
        "t6");
    INFO(ev.out);
    REQUIRE(ev.exit_code == 0);
    REQUIRE(ev.out.find("accuracy=") != std::string::npos);
    REQUIRE(ev.out.find("mean_ms=") != std::string::npos);
    REQUIRE(fs::exists(dir.str() + "/m0/confusion.csv"));
    REQUIRE(fs::exists(dir.str() + "/m0/timing.csv"));
    // confusion grid is n_classes x n_classes
    const std::vector<std::uint8_t> conf =
        read_file_bytes(dir.str() + "/m0/confusion.csv");
    const std::string conf_text(conf.begin(), conf.end());
    REQUIRE(std::count(conf_text.begin(), conf_text.end(), '\n') == 3);
    // timing CSV has one row per sample (3 test samples + header)
    const std::vector<std::uint8_t> timing =
        read_file_bytes(dir.str() + "/m0/timing.csv");
    const std::string timing_text(timing.begin(), timing.end());
    REQUIRE(std::count(timing_text.begin(), timing_text.end(), '\n') == 4);

    // infer on one sample file
    const DatasetManifest m = read_manifest(manifest);
    const CliResult inf = run_cli(
        "infer --checkpoint " + ckpt + " --events " + data_dir + "/" +
            m.samples[0].event_path,
        "t7");
    INFO(inf.out);
    REQUIRE(inf.exit_code == 0);
    REQUIRE(inf.out.find("label=") != std::string::npos);
    REQUIRE(inf.out.find("counts=") != std::string::npos);
    REQUIRE(inf.out.find("wall_ms=") != std::string::npos);

    // modality mismatch: depth file into an events checkpoint
    REQUIRE(run_cli("infer --checkpoint " + ckpt + " --depth " + data_dir +
                        "/" + m.samples[0].depth_path,
                    "t8")
                .exit_code == 2);
  }

  SECTION("eval with a missing checkpoint exits 1") {
    REQUIRE(run_cli("eval --checkpoint " + dir.str() +
                        "/nope.snnc --data " + manifest + " --out-metrics " +
                        dir.str() + "/m1",
                    "t9")
                .exit_code == 1);
  }
}
