#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spikefuse/core.hpp"
#include "spikefuse/encoder.hpp"
#include "spikefuse/error.hpp"
#include "spikefuse/network.hpp"
#include "spikefuse/threading.hpp"
#include "spikefuse/training.hpp"

namespace spikefuse {

// ---------------------------------------------------------------------------
// Raw file helpers
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff size = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw Error("cannot read file: " + path);
  return bytes;
}

// Write-to-temp then rename, so failures never leave partial outputs.
inline void atomic_write_file(const std::string& path, std::string_view data) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open file for writing: " + tmp.string());
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline void atomic_write_file(const std::string& path,
                              const std::vector<std::uint8_t>& data) {
  atomic_write_file(path,
                    std::string_view(reinterpret_cast<const char*>(data.data()),
                                     data.size()));
}

namespace detail {

class BinReader {
 public:
  explicit BinReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_magic(const char magic[4], const std::string& format) {
    if (remaining() < 4)
      throw ParseError(pos_, format + ": file too short for magic");
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw ParseError(pos_, format + ": bad magic");
    pos_ += 4;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(
        bytes_[pos_] | (static_cast<std::uint16_t>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void read_f32_block(float* dst, std::size_t count, const char* what) {
    need(count * 4, what);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t v = 0;
      const std::uint8_t* p = bytes_.data() + pos_ + i * 4;
      v = static_cast<std::uint32_t>(p[0]) |
          (static_cast<std::uint32_t>(p[1]) << 8) |
          (static_cast<std::uint32_t>(p[2]) << 16) |
          (static_cast<std::uint32_t>(p[3]) << 24);
      dst[i] = std::bit_cast<float>(v);
    }
    pos_ += count * 4;
  }

  void expect_end(const std::string& format) {
    if (remaining() != 0)
      throw ParseError(pos_, format + ": trailing bytes after payload");
  }

  void need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw ParseError(pos_, std::string("truncated while reading ") + what);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

class BinWriter {
 public:
  void magic(const char m[4]) { append(m, 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    bytes_.push_back(static_cast<std::uint8_t>(v));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void text(const std::string& s) { append(s.data(), s.size()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void append(const char* p, std::size_t n) {
    bytes_.insert(bytes_.end(), reinterpret_cast<const std::uint8_t*>(p),
                  reinterpret_cast<const std::uint8_t*>(p) + n);
  }
  std::vector<std::uint8_t> bytes_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Event stream format (EVS1)
// ---------------------------------------------------------------------------
// magic "EVS1", u16 width, u16 height, u64 count,
// count * { u64 t_us, u16 x, u16 y, u8 polarity }

inline std::vector<std::uint8_t> encode_events(const EventStream& s) {
  s.validate();
  detail::BinWriter w;
  w.magic("EVS1");
  w.u16(static_cast<std::uint16_t>(s.width));
  w.u16(static_cast<std::uint16_t>(s.height));
  w.u64(s.events.size());
  for (const Event& e : s.events) {
    w.u64(e.t_us);
    w.u16(e.x);
    w.u16(e.y);
    w.u8(e.polarity == Polarity::On ? 1 : 0);
  }
  return w.bytes();
}

inline EventStream decode_events(const std::vector<std::uint8_t>& bytes) {
  detail::BinReader r(bytes);
  r.expect_magic("EVS1", "events");
  EventStream s;
  s.width = r.u16("width");
  s.height = r.u16("height");
  if (s.width == 0 || s.height == 0)
    throw ParseError(4, "events: zero sensor dimension");
  const std::uint64_t count = r.u64("event count");
  s.events.reserve(count < (1u << 20) ? static_cast<std::size_t>(count) : 0);
  std::uint64_t prev_t = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    Event e;
    e.t_us = r.u64("event timestamp");
    e.x = r.u16("event x");
    e.y = r.u16("event y");
    const std::uint8_t pol = r.u8("event polarity");
    if (pol > 1) throw ParseError(record_offset, "events: bad polarity value");
    e.polarity = pol ? Polarity::On : Polarity::Off;
    if (e.t_us < prev_t)
      throw ParseError(record_offset, "events: timestamps not sorted");
    if (e.x >= s.width || e.y >= s.height)
      throw ParseError(record_offset, "events: coordinates out of range");
    prev_t = e.t_us;
    s.events.push_back(e);
  }
  r.expect_end("events");
  return s;
}

inline void write_events(const EventStream& s, const std::string& path) {
  atomic_write_file(path, encode_events(s));
}

inline EventStream read_events(const std::string& path) {
  return decode_events(read_file_bytes(path));
}

// Text import hook: lines of `t_us,x,y,p` with an optional header line.
inline EventStream parse_events_csv(const std::string& text, int width,
                                    int height) {
  EventStream s;
  s.width = width;
  s.height = height;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = ConfigDoc::trim(text.substr(pos, end - pos));
    const std::size_t line_offset = pos;
    pos = end + 1;
    if (line.empty()) continue;
    if (first && line == "t_us,x,y,p") {
      first = false;
      continue;
    }
    first = false;
    unsigned long long t = 0, x = 0, y = 0, p = 0;
    char extra = 0;
    if (std::sscanf(line.c_str(), "%llu,%llu,%llu,%llu%c", &t, &x, &y, &p,
                    &extra) != 4)
      throw ParseError(line_offset, "events csv: expected t_us,x,y,p");
    if (p > 1) throw ParseError(line_offset, "events csv: polarity must be 0 or 1");
    if (x >= static_cast<unsigned long long>(width) ||
        y >= static_cast<unsigned long long>(height))
      throw ParseError(line_offset, "events csv: coordinates out of range");
    Event e;
    e.t_us = t;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.polarity = p ? Polarity::On : Polarity::Off;
    if (!s.events.empty() && e.t_us < s.events.back().t_us)
      throw ParseError(line_offset, "events csv: timestamps not sorted");
    s.events.push_back(e);
  }
  return s;
}

inline EventStream read_events_csv(const std::string& path, int width,
                                   int height) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return parse_events_csv(
      std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
      width, height);
}

// ---------------------------------------------------------------------------
// Depth sequence format (DPS1)
// ---------------------------------------------------------------------------
// magic "DPS1", u16 width, u16 height, f32 fps, u32 frames,
// frames * width*height u16 millimetre values (row-major)

inline std::vector<std::uint8_t> encode_depth_file(const DepthSequence& d) {
  d.validate();
  detail::BinWriter w;
  w.magic("DPS1");
  w.u16(static_cast<std::uint16_t>(d.width));
  w.u16(static_cast<std::uint16_t>(d.height));
  w.f32(static_cast<float>(d.fps));
  w.u32(static_cast<std::uint32_t>(d.frames.size()));
  for (const std::vector<std::uint16_t>& frame : d.frames)
    for (std::uint16_t v : frame) w.u16(v);
  return w.bytes();
}

inline DepthSequence decode_depth_file(const std::vector<std::uint8_t>& bytes) {
  detail::BinReader r(bytes);
  r.expect_magic("DPS1", "depth");
  DepthSequence d;
  d.width = r.u16("width");
  d.height = r.u16("height");
  if (d.width == 0 || d.height == 0)
    throw ParseError(4, "depth: zero frame dimension");
  const std::size_t fps_offset = r.offset();
  const float fps = r.f32("fps");
  if (!(fps > 0.0f) || !std::isfinite(fps))
    throw ParseError(fps_offset, "depth: fps must be positive and finite");
  d.fps = static_cast<double>(fps);
  const std::size_t count_offset = r.offset();
  const std::uint32_t n_frames = r.u32("frame count");
  if (n_frames < 2)
    throw ParseError(count_offset, "depth: need at least 2 frames");
  const std::size_t px = static_cast<std::size_t>(d.width) * d.height;
  r.need(static_cast<std::size_t>(n_frames) * px * 2, "depth frames");
  d.frames.assign(n_frames, std::vector<std::uint16_t>(px));
  for (std::uint32_t f = 0; f < n_frames; ++f)
    for (std::size_t i = 0; i < px; ++i)
      d.frames[f][i] = r.u16("depth value");
  r.expect_end("depth");
  return d;
}

inline void write_depth(const DepthSequence& d, const std::string& path) {
  atomic_write_file(path, encode_depth_file(d));
}

inline DepthSequence read_depth(const std::string& path) {
  return decode_depth_file(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Checkpoint format (SNNC)
// ---------------------------------------------------------------------------
// magic "SNNC", u32 version, u32 config_len, config text (TOML-style),
// u32 n_blobs, blobs * { u32 name_len, name, u64 count, count * f32 }

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string kind = "single";  // or "fusion"
  Modality modality = Modality::Events;
  std::uint64_t train_seed = 0;
  int epoch = 0;
};

namespace detail {

struct NamedBlob {
  std::string name;
  const std::vector<float>* data;
};

inline void collect_stack_blobs(const LayerStack& stack,
                                const std::string& prefix,
                                std::vector<NamedBlob>& blobs) {
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    if (!stack.weights[l].empty())
      blobs.push_back({prefix + "layer" + std::to_string(l) + ".weights",
                       &stack.weights[l]});
    if (!stack.bn_mean[l].empty())
      blobs.push_back({prefix + "layer" + std::to_string(l) + ".bn_mean",
                       &stack.bn_mean[l]});
  }
}

inline std::vector<std::uint8_t> encode_checkpoint_blobs(
    const std::string& config_text, const std::vector<NamedBlob>& blobs) {
  BinWriter w;
  w.magic("SNNC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(config_text.size()));
  w.text(config_text);
  w.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const NamedBlob& b : blobs) {
    w.u32(static_cast<std::uint32_t>(b.name.size()));
    w.text(b.name);
    w.u64(b.data->size());
    for (float v : *b.data) w.f32(v);
  }
  return w.bytes();
}

inline void meta_to_config(ConfigDoc& doc, const CheckpointMeta& meta) {
  doc.set("checkpoint", "kind", meta.kind);
  doc.set("checkpoint", "modality", modality_name(meta.modality));
  doc.set_int("checkpoint", "epoch", meta.epoch);
  doc.set_uint("checkpoint", "train_seed", meta.train_seed);
}

inline CheckpointMeta meta_from_config(const ConfigDoc& doc) {
  CheckpointMeta meta;
  meta.kind = doc.get_string_or("checkpoint", "kind", "single");
  const std::string mod =
      doc.get_string_or("checkpoint", "modality", "events");
  const std::optional<Modality> m = modality_from_name(mod);
  if (!m) throw CheckpointError(0, "checkpoint: unknown modality " + mod);
  meta.modality = *m;
  meta.epoch = static_cast<int>(doc.get_int_or("checkpoint", "epoch", 0));
  meta.train_seed = doc.get_uint_or("checkpoint", "train_seed", 0);
  return meta;
}

// Reads one blob and stores it into dst, enforcing the expected name/size.
inline void load_blob(BinReader& r, const std::string& expect_name,
                      std::vector<float>& dst) {
  const std::size_t blob_offset = r.offset();
  const std::uint32_t name_len = r.u32("blob name length");
  const std::string name = r.text(name_len, "blob name");
  if (name != expect_name)
    throw CheckpointError(blob_offset, "checkpoint: expected blob '" +
                                           expect_name + "', found '" + name +
                                           "'");
  const std::uint64_t count = r.u64("blob size");
  if (count != dst.size())
    throw CheckpointError(
        blob_offset, "checkpoint: blob '" + expect_name + "' holds " +
                         std::to_string(count) + " floats, config expects " +
                         std::to_string(dst.size()));
  try {
    r.read_f32_block(dst.data(), dst.size(), "blob data");
  } catch (const ParseError& e) {
    throw CheckpointError(e.offset(), "checkpoint: blob '" + expect_name +
                                          "' truncated");
  }
}

inline void load_stack_blobs(BinReader& r, const std::string& prefix,
                             LayerStack& stack) {
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    if (!stack.weights[l].empty())
      load_blob(r, prefix + "layer" + std::to_string(l) + ".weights",
                stack.weights[l]);
    if (!stack.bn_mean[l].empty())
      load_blob(r, prefix + "layer" + std::to_string(l) + ".bn_mean",
                stack.bn_mean[l]);
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Network& net,
                                                   const CheckpointMeta& meta) {
  ConfigDoc doc;
  detail::meta_to_config(doc, meta);
  network_to_config(doc, net.cfg);
  std::vector<detail::NamedBlob> blobs;
  detail::collect_stack_blobs(net.stack, "", blobs);
  return detail::encode_checkpoint_blobs(doc.serialize(), blobs);
}

inline std::vector<std::uint8_t> encode_checkpoint(const FusionNetwork& net,
                                                   const CheckpointMeta& meta) {
  ConfigDoc doc;
  detail::meta_to_config(doc, meta);
  network_to_config(doc, net.cfg.subnet_a, "subnet_a_");
  network_to_config(doc, net.cfg.subnet_b, "subnet_b_");
  for (std::size_t i = 0; i < net.cfg.head.size(); ++i)
    doc.set("fusion_head", "layer" + std::to_string(i),
            format_layer_spec(net.cfg.head[i]));
  std::vector<detail::NamedBlob> blobs;
  detail::collect_stack_blobs(net.branch_a, "a.", blobs);
  detail::collect_stack_blobs(net.branch_b, "b.", blobs);
  detail::collect_stack_blobs(net.head, "head.", blobs);
  return detail::encode_checkpoint_blobs(doc.serialize(), blobs);
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::optional<Network> net;
  std::optional<FusionNetwork> fusion;
};

inline LoadedCheckpoint decode_checkpoint(
    const std::vector<std::uint8_t>& bytes) {
  detail::BinReader r(bytes);
  r.expect_magic("SNNC", "checkpoint");
  const std::size_t version_offset = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(version_offset,
                          "checkpoint: unsupported version " +
                              std::to_string(version));
  const std::uint32_t config_len = r.u32("config length");
  const std::size_t config_offset = r.offset();
  const std::string config_text = r.text(config_len, "config text");
  ConfigDoc doc;
  try {
    doc = ConfigDoc::parse(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(config_offset,
                          std::string("checkpoint: bad config block: ") +
                              e.what());
  }
  // Interpretation of the embedded config can fail in many typed ways on a
  // corrupted file; all of them are checkpoint rejections.
  LoadedCheckpoint out;
  Network net;
  FusionNetwork fnet;
  std::size_t expected = 0;
  try {
    out.meta = detail::meta_from_config(doc);
    if (out.meta.kind == "single") {
      net = Network::build(network_from_config(doc));
      for (std::size_t l = 0; l < net.stack.layers.size(); ++l)
        expected += (net.stack.weights[l].empty() ? 0 : 1) +
                    (net.stack.bn_mean[l].empty() ? 0 : 1);
    } else if (out.meta.kind == "fusion") {
      FusionConfig cfg;
      cfg.subnet_a = network_from_config(doc, "subnet_a_");
      cfg.subnet_b = network_from_config(doc, "subnet_b_");
      for (const std::string& key : doc.keys("fusion_head"))
        cfg.head.push_back(
            parse_layer_spec(doc.get_string("fusion_head", key)));
      fnet = make_fusion(cfg, 0);
      for (const LayerStack* s : {&fnet.branch_a, &fnet.branch_b, &fnet.head})
        for (std::size_t l = 0; l < s->layers.size(); ++l)
          expected += (s->weights[l].empty() ? 0 : 1) +
                      (s->bn_mean[l].empty() ? 0 : 1);
    } else {
      throw ConfigError("unknown kind '" + out.meta.kind + "'");
    }
  } catch (const ConfigError& e) {
    throw CheckpointError(config_offset,
                          std::string("checkpoint: bad config block: ") +
                              e.what());
  }

  const std::size_t nblobs_offset = r.offset();
  const std::uint32_t n_blobs = r.u32("blob count");
  if (n_blobs != expected)
    throw CheckpointError(nblobs_offset,
                          "checkpoint: blob count " + std::to_string(n_blobs) +
                              " does not match config (" +
                              std::to_string(expected) + ")");
  if (out.meta.kind == "single") {
    detail::load_stack_blobs(r, "", net.stack);
    r.expect_end("checkpoint");
    out.net = std::move(net);
  } else {
    detail::load_stack_blobs(r, "a.", fnet.branch_a);
    detail::load_stack_blobs(r, "b.", fnet.branch_b);
    detail::load_stack_blobs(r, "head.", fnet.head);
    r.expect_end("checkpoint");
    out.fusion = std::move(fnet);
  }
  return out;
}

inline void save_checkpoint(const Network& net, const CheckpointMeta& meta,
                            const std::string& path) {
  atomic_write_file(path, encode_checkpoint(net, meta));
}

inline void save_checkpoint(const FusionNetwork& net,
                            const CheckpointMeta& meta,
                            const std::string& path) {
  atomic_write_file(path, encode_checkpoint(net, meta));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)
// ---------------------------------------------------------------------------

struct ManifestSample {
  std::string id;
  int label = 0;
  std::string label_name;
  std::string event_path;  // empty = absent
  std::string depth_path;  // empty = absent
  std::string split;       // "train" | "test"
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestSample> samples;

  void validate() const {
    if (classes.empty()) throw ConfigError("manifest: empty class table");
    for (const ManifestSample& s : samples) {
      if (s.label < 0 || s.label >= static_cast<int>(classes.size()))
        throw ConfigError("manifest: sample '" + s.id +
                          "' label out of range");
      if (s.label_name != classes[static_cast<std::size_t>(s.label)])
        throw ConfigError("manifest: sample '" + s.id +
                          "' label_name does not match class table");
      if (s.split != "train" && s.split != "test")
        throw ConfigError("manifest: sample '" + s.id + "' has bad split tag");
    }
  }
};

inline std::string manifest_to_json(const DatasetManifest& m) {
  m.validate();
  nlohmann::json j;
  j["classes"] = m.classes;
  j["samples"] = nlohmann::json::array();
  for (const ManifestSample& s : m.samples) {
    nlohmann::json js;
    js["id"] = s.id;
    js["label"] = s.label;
    js["label_name"] = s.label_name;
    if (!s.event_path.empty()) js["event_path"] = s.event_path;
    if (!s.depth_path.empty()) js["depth_path"] = s.depth_path;
    js["split"] = s.split;
    j["samples"].push_back(js);
  }
  return j.dump(2) + "\n";
}

inline DatasetManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, std::string("manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const nlohmann::json& js : j.at("samples")) {
      ManifestSample s;
      s.id = js.at("id").get<std::string>();
      s.label = js.at("label").get<int>();
      s.label_name = js.at("label_name").get<std::string>();
      s.event_path = js.value("event_path", "");
      s.depth_path = js.value("depth_path", "");
      s.split = js.at("split").get<std::string>();
      m.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("manifest: malformed structure: ") +
                            e.what());
  }
  m.validate();
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  atomic_write_file(path, manifest_to_json(m));
}

inline DatasetManifest read_manifest(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return manifest_from_json(
      std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// ---------------------------------------------------------------------------
// Encoded dataset assembly
// ---------------------------------------------------------------------------

// Loads manifest samples and encodes the tensors the chosen modality needs.
// duration_ms fixes the simulated window; depth sequences must quantize to
// the same number of steps.
inline EncodedDataset load_encoded_dataset(const std::string& manifest_path,
                                           const EncoderConfig& enc,
                                           double duration_ms,
                                           Modality modality, int workers = 1) {
  namespace fs = std::filesystem;
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  const long t_steps = quantize_steps(duration_ms, enc.dt);

  const bool want_events = modality != Modality::Depth;
  const bool want_depth = modality != Modality::Events;

  std::vector<EncodedSample> encoded(manifest.samples.size());
  parallel_for(manifest.samples.size(), workers, [&](std::size_t i) {
    const ManifestSample& ms = manifest.samples[i];
    EncodedSample& out = encoded[i];
    out.id = ms.id;
    out.label = ms.label;
    if (want_events) {
      if (ms.event_path.empty())
        throw UsageError("sample '" + ms.id + "' lacks an event file needed "
                         "by modality " + modality_name(modality));
      const EventStream stream = read_events((base / ms.event_path).string());
      out.events = bin_events(stream, enc, duration_ms);
    }
    if (want_depth) {
      if (ms.depth_path.empty())
        throw UsageError("sample '" + ms.id + "' lacks a depth file needed "
                         "by modality " + modality_name(modality));
      EncoderConfig depth_enc = enc;
      const DepthSequence seq = read_depth((base / ms.depth_path).string());
      depth_enc.fps = seq.fps;
      SpikeTensor t = encode_depth(seq, depth_enc);
      if (t.t_steps() != t_steps)
        throw ConfigError("sample '" + ms.id + "': depth sequence covers " +
                          std::to_string(t.t_steps()) + " steps, expected " +
                          std::to_string(t_steps));
      out.depth = std::move(t);
    }
  });

  EncodedDataset ds;
  ds.class_names = manifest.classes;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].split == "train")
      ds.train.push_back(std::move(encoded[i]));
    else
      ds.test.push_back(std::move(encoded[i]));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Sparse text dump of a spike tensor (for cmd_encode)
// ---------------------------------------------------------------------------

inline std::string spike_tensor_dump(const SpikeTensor& t) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "# channels=%d height=%d width=%d t_steps=%ld dt=%.17g\n",
                t.channels(), t.height(), t.width(), t.t_steps(), t.dt());
  std::string out = buf;
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) {
        const long neuron = t.flat_index(c, y, x);
        const std::uint64_t* words = t.neuron_words(neuron);
        for (std::size_t wi = 0; wi < t.words_per_neuron(); ++wi) {
          std::uint64_t w = words[wi];
          while (w) {
            const int b = std::countr_zero(w);
            w &= w - 1;
            const long step = static_cast<long>(wi) * 64 + b;
            std::snprintf(buf, sizeof buf, "%d,%d,%d,%ld\n", c, y, x, step);
            out += buf;
          }
        }
      }
  return out;
}

}  // namespace spikefuse
