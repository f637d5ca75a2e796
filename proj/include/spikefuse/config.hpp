#pragma once

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spikefuse/error.hpp"

namespace spikefuse {

// Flat TOML-style document: [section] headers over key = value lines.
// Insertion order is preserved so a document serializes deterministically.
class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text) {
    ConfigDoc doc;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      strip_comment(line);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": empty section name");
        doc.touch_section(section);
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        value = value.substr(1, value.size() - 2);
      doc.set(section, key, value);
    }
    return doc;
  }

  std::string serialize() const {
    std::string out;
    for (const Section& s : sections_) {
      if (!s.name.empty()) out += "[" + s.name + "]\n";
      for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
      out += "\n";
    }
    if (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  bool has_section(const std::string& section) const {
    for (const Section& s : sections_)
      if (s.name == section) return true;
    return false;
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    Section& s = touch_section(section);
    for (auto& [k, v] : s.entries)
      if (k == key) {
        v = value;
        return;
      }
    s.entries.emplace_back(key, value);
  }

  void set_int(const std::string& section, const std::string& key, long v) {
    set(section, key, std::to_string(v));
  }
  void set_uint(const std::string& section, const std::string& key,
                unsigned long long v) {
    set(section, key, std::to_string(v));
  }
  void set_double(const std::string& section, const std::string& key,
                  double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    set(section, key, buf);
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const std::string* v = find(section, key);
    if (!v) throw ConfigError("config: missing " + qualify(section, key));
    return *v;
  }
  std::string get_string_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
  }

  long get_int(const std::string& section, const std::string& key) const {
    return parse_int(get_string(section, key), section, key);
  }
  long get_int_or(const std::string& section, const std::string& key,
                  long fallback) const {
    const std::string* v = find(section, key);
    return v ? parse_int(*v, section, key) : fallback;
  }

  unsigned long long get_uint_or(const std::string& section,
                                 const std::string& key,
                                 unsigned long long fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    char* end = nullptr;
    const unsigned long long r = std::strtoull(v->c_str(), &end, 10);
    if (end == v->c_str() || *end != '\0')
      throw ConfigError("config: " + qualify(section, key) +
                        " is not an unsigned integer: " + *v);
    return r;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return parse_double(get_string(section, key), section, key);
  }
  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const {
    const std::string* v = find(section, key);
    return v ? parse_double(*v, section, key) : fallback;
  }

  bool get_bool_or(const std::string& section, const std::string& key,
                   bool fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError("config: " + qualify(section, key) +
                      " must be true or false, got: " + *v);
  }

  // Keys of one section in insertion order.
  std::vector<std::string> keys(const std::string& section) const {
    std::vector<std::string> out;
    for (const Section& s : sections_)
      if (s.name == section)
        for (const auto& [k, v] : s.entries) out.push_back(k);
    return out;
  }

  // Overlays every entry of `other` onto this document.
  void merge_from(const ConfigDoc& other) {
    for (const Section& s : other.sections_)
      for (const auto& [k, v] : s.entries) set(s.name, k, v);
  }

  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };

  static void strip_comment(std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        return;
      }
    }
  }

  static std::string qualify(const std::string& section,
                             const std::string& key) {
    return section.empty() ? key : section + "." + key;
  }

  static long parse_int(const std::string& v, const std::string& section,
                        const std::string& key) {
    char* end = nullptr;
    const long r = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      throw ConfigError("config: " + qualify(section, key) +
                        " is not an integer: " + v);
    return r;
  }

  static double parse_double(const std::string& v, const std::string& section,
                             const std::string& key) {
    char* end = nullptr;
    const double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      throw ConfigError("config: " + qualify(section, key) +
                        " is not a number: " + v);
    return r;
  }

  Section& touch_section(const std::string& name) {
    for (Section& s : sections_)
      if (s.name == name) return s;
    sections_.push_back(Section{name, {}});
    return sections_.back();
  }

  const std::string* find(const std::string& section,
                          const std::string& key) const {
    for (const Section& s : sections_)
      if (s.name == section)
        for (const auto& [k, v] : s.entries)
          if (k == key) return &v;
    return nullptr;
  }

  std::vector<Section> sections_;
};

}  // namespace spikefuse
