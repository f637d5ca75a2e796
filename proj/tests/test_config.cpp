#include <catch2/catch_amalgamated.hpp>

#include "spikefuse/config.hpp"
#include "spikefuse/network.hpp"

using namespace spikefuse;

TEST_CASE("ConfigDoc parse and access") {
  const std::string text =
      "# experiment settings\n"
      "[network]\n"
      "t_steps = 500\n"
      "dt = 4.0   # coarse steps\n"
      "name = \"desk run\"\n"
      "\n"
      "[training]\n"
      "learning_rate = 0.05\n"
      "shuffle = true\n";
  const ConfigDoc doc = ConfigDoc::parse(text);
  REQUIRE(doc.get_int("network", "t_steps") == 500);
  REQUIRE(doc.get_double("network", "dt") == Catch::Approx(4.0));
  REQUIRE(doc.get_string("network", "name") == "desk run");
  REQUIRE(doc.get_bool_or("training", "shuffle", false));
  REQUIRE(doc.get_int_or("training", "missing", 7) == 7);
  REQUIRE_FALSE(doc.has("network", "missing"));
  REQUIRE_THROWS_AS(doc.get_string("nowhere", "key"), ConfigError);
  REQUIRE_THROWS_AS(doc.get_int("network", "name"), ConfigError);
}

TEST_CASE("ConfigDoc parse errors") {
  REQUIRE_THROWS_AS(ConfigDoc::parse("[unterminated\n"), ConfigError);
  REQUIRE_THROWS_AS(ConfigDoc::parse("key_without_value\n"), ConfigError);
  REQUIRE_THROWS_AS(ConfigDoc::parse("= value\n"), ConfigError);
  REQUIRE_THROWS_AS(ConfigDoc::parse("[]\n"), ConfigError);
}

TEST_CASE("ConfigDoc serialization round-trips") {
  ConfigDoc doc;
  doc.set("network", "t_steps", "500");
  doc.set_double("network", "dt", 0.125);
  doc.set("layers", "layer0", "conv out=8 kernel=3x3 stride=1 pad=1");
  const std::string text = doc.serialize();
  const ConfigDoc back = ConfigDoc::parse(text);
  REQUIRE(back.serialize() == text);
  REQUIRE(back.get_double("network", "dt") == 0.125);
}

TEST_CASE("ConfigDoc merge overlays values") {
  ConfigDoc base;
  base.set("a", "x", "1");
  base.set("a", "y", "2");
  ConfigDoc over;
  over.set("a", "y", "9");
  over.set("b", "z", "3");
  base.merge_from(over);
  REQUIRE(base.get_int("a", "x") == 1);
  REQUIRE(base.get_int("a", "y") == 9);
  REQUIRE(base.get_int("b", "z") == 3);
}

TEST_CASE("layer spec parse/format round trip") {
  const std::vector<std::string> canonical = {
      "input-pool k=4",
      "conv out=16 kernel=5x5 stride=1 pad=2",
      "conv out=8 kernel=3x3 stride=2 pad=1 norm=false dropout=0.25",
      "pool k=2",
      "flatten",
      "dense out=512 dropout=0.10000000000000001",
      "dense out=6",
      "dense out=4 threshold=0.5 vdecay=0.25 reset=to-zero",
  };
  for (const std::string& line : canonical) {
    const LayerSpec spec = parse_layer_spec(line);
    REQUIRE(format_layer_spec(spec) == line);
    // parse(format(x)) is the identity on specs
    const LayerSpec again = parse_layer_spec(format_layer_spec(spec));
    REQUIRE(format_layer_spec(again) == line);
  }
}

TEST_CASE("layer spec rejects malformed lines") {
  REQUIRE_THROWS_AS(parse_layer_spec(""), ConfigError);
  REQUIRE_THROWS_AS(parse_layer_spec("warp k=2"), ConfigError);
  REQUIRE_THROWS_AS(parse_layer_spec("conv out"), ConfigError);
  REQUIRE_THROWS_AS(parse_layer_spec("conv out=abc"), ConfigError);
  REQUIRE_THROWS_AS(parse_layer_spec("dense out=4 dropout=1.0"), ConfigError);
  REQUIRE_THROWS_AS(parse_layer_spec("pool k=2 reset=sometimes"), ConfigError);
}

TEST_CASE("network config serialization round trip") {
  NetworkConfig cfg;
  cfg.in_height = 32;
  cfg.in_width = 32;
  cfg.t_steps = 500;
  cfg.dt = 4.0;
  cfg.n_classes = 3;
  cfg.seed = 1234567;
  cfg.lif.threshold = 1.25;
  cfg.layers = default_topology(3);
  ConfigDoc doc;
  network_to_config(doc, cfg);
  const NetworkConfig back = network_from_config(ConfigDoc::parse(doc.serialize()));
  REQUIRE(back.in_height == 32);
  REQUIRE(back.t_steps == 500);
  REQUIRE(back.dt == 4.0);
  REQUIRE(back.n_classes == 3);
  REQUIRE(back.seed == 1234567);
  REQUIRE(back.layers.size() == cfg.layers.size());
  for (std::size_t i = 0; i < cfg.layers.size(); ++i)
    REQUIRE(format_layer_spec(back.layers[i]) ==
            format_layer_spec(cfg.layers[i]));
  // serialization is canonical: a second round trip is byte-identical
  ConfigDoc doc2;
  network_to_config(doc2, back);
  REQUIRE(doc2.serialize() == doc.serialize());
}

TEST_CASE("lif params serialization round trip") {
  LifParams p;
  p.threshold = 0.75;
  p.voltage_decay = 0.2;
  p.current_decay = 0.9;
  p.reset = ResetMode::ToZero;
  p.surrogate_scale = 1.5;
  p.surrogate_width = 2.0;
  ConfigDoc doc;
  lif_to_config(doc, "lif", p);
  const LifParams back =
      lif_from_config(ConfigDoc::parse(doc.serialize()), "lif");
  REQUIRE(back == p);
}
