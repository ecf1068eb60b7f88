#pragma once

// Small text formats: delimiter-separated tables with a header row, and
// `key = value` documents with optional [section] headers.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "marsnet/core/common.hpp"

namespace marsnet::io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write " + path.string());
  out << text;
  if (!out) fail_runtime("write failed for " + path.string());
}

/// Header-indexed table of string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  int require_column(const std::string& name, const std::string& source) const {
    const int c = column(name);
    if (c < 0) fail_input(source + ": missing column '" + name + "'");
    return c;
  }
};

inline Table parse_table(const std::string& text, char delim, const std::string& source) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto cells = split(line, delim);
    for (auto& c : cells) c = trim(c);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      fail_input(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                 std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) fail_input(source + ": empty table");
  return t;
}

inline std::string format_table(const Table& t, char delim) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += delim;
      out += cells[i];
    }
    out += '\n';
  };
  emit(t.header);
  for (const auto& r : t.rows) emit(r);
  return out;
}

/// Flat key/value document. Keys inside a `[section]` are stored as
/// "section.key". Order of first appearance is preserved for output.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string s = trim(line);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') fail_input(source + ":" + std::to_string(lineno) + ": malformed section header");
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) fail_input(source + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      kv.set(key, trim(s.substr(eq + 1)));
    }
    return kv;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }
  void set(const std::string& key, double value) { set(key, format_number(value)); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail_input("missing key '" + key + "'");
    return it->second;
  }
  double number(const std::string& key) const { return parse_number(get(key), key); }
  long long integer(const std::string& key) const { return parse_integer(get(key), key); }

  const std::vector<std::string>& keys() const { return order_; }

  std::string str() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  fail_input(what + ": not a boolean: '" + s + "'");
}

}  // namespace marsnet::io
