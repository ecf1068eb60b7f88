#pragma once

// Parameter blob: magic, version, the model config as key/value text, then
// every parameter as (name, kind, shape, float64 values). All integers are
// little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "marsnet/io/text.hpp"
#include "marsnet/model/marsnet.hpp"

namespace marsnet::model {

inline constexpr char kParamMagic[8] = {'M', 'R', 'S', 'N', 'P', 'A', 'R', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

  void need(std::size_t n) {
    if (pos_ + n > data_.size()) fail_input(source_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_params(const MarsNet<T>& model) {
  std::string out(kParamMagic, kParamMagic + 8);
  detail::put_u32(out, kParamVersion);
  const std::string cfg = model.config().to_kv().str();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.kind));
    const Shape s = p.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : p.value.vec()) detail::put_f64(out, static_cast<double>(v));
  }
  return out;
}

template <class T>
void save_params(const std::filesystem::path& path, const MarsNet<T>& model) {
  io::write_file(path, serialize_params(model));
}

/// Rebuilds the model from the embedded config and fills every parameter.
template <class T>
std::unique_ptr<MarsNet<T>> deserialize_params(const std::string& data, const std::string& source) {
  detail::Reader r(data, source);
  if (r.bytes(8) != std::string(kParamMagic, kParamMagic + 8)) fail_input(source + ": not a parameter checkpoint");
  const auto version = r.u32();
  if (version != kParamVersion) fail_input(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = r.u32();
  const auto kv = io::KeyValues::parse(r.bytes(cfg_len), source + " (embedded config)");
  auto model = std::make_unique<MarsNet<T>>(ModelConfig::from_kv(kv));
  const auto count = r.u32();
  if (count != model->params().size())
    fail_input(source + ": checkpoint holds " + std::to_string(count) + " parameters, model expects " +
               std::to_string(model->params().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    const auto kind = r.u32();
    Shape s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    auto& p = model->params().at(name);
    if (static_cast<std::uint32_t>(p.kind) != kind || p.value.shape() != s)
      fail_input(source + ": parameter '" + name + "' does not match the embedded config");
    for (auto& v : p.value.vec()) v = static_cast<T>(r.f64());
  }
  if (!r.done()) fail_input(source + ": trailing bytes after parameters");
  return model;
}

template <class T>
std::unique_ptr<MarsNet<T>> load_params(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail_input("checkpoint not found: " + path.string());
  return deserialize_params<T>(io::read_file(path), path.string());
}

}  // namespace marsnet::model
