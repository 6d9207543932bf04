#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "voxseg/errors.hpp"
#include "voxseg/network.hpp"

namespace voxseg {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

// Binary container: magic, format version, network spec fields, then named
// parameter arrays (name, dims, float64 data), closed by a CRC32 of all
// preceding bytes. Round-trips bit-exactly.
namespace detail {

constexpr char kCkptMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

struct ByteSink {
  std::vector<char> bytes;
  template <typename T>
  void put(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
};

struct ByteSource {
  const std::vector<char>& bytes;
  size_t pos = 0;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > bytes.size()) throw TruncatedFile("checkpoint ends mid-field");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_bytes(void* p, size_t n) {
    if (pos + n > bytes.size()) throw TruncatedFile("checkpoint ends mid-field");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
};

}  // namespace detail

struct Checkpoint {
  NetworkSpec spec;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
  std::vector<std::vector<index_t>> shapes;
};

inline void save_checkpoint(const std::string& path, const NetworkPlan& plan, const NetworkState& state) {
  detail::ByteSink sink;
  sink.put_bytes(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  sink.put(detail::kCkptVersion);
  sink.put(static_cast<uint32_t>(plan.spec.variant));
  sink.put(static_cast<uint32_t>(plan.spec.in_channels));
  sink.put(static_cast<uint32_t>(plan.spec.levels));
  sink.put(static_cast<uint32_t>(plan.spec.base_width));
  sink.put(static_cast<uint32_t>(plan.spec.width_cap));
  sink.put(static_cast<uint32_t>(plan.param_info.size()));
  for (size_t i = 0; i < plan.param_info.size(); ++i) {
    const auto& info = plan.param_info[i];
    sink.put(static_cast<uint32_t>(info.name.size()));
    sink.put_bytes(info.name.data(), info.name.size());
    sink.put(static_cast<uint32_t>(info.shape.size()));
    for (index_t e : info.shape) sink.put(static_cast<uint64_t>(e));
    sink.put_bytes(state.params[i].value.data(), state.params[i].value.size() * sizeof(double));
  }
  const auto crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(sink.bytes.data()), static_cast<uInt>(sink.bytes.size())));
  sink.put(crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open checkpoint for writing: " + path);
  out.write(sink.bytes.data(), static_cast<std::streamsize>(sink.bytes.size()));
  if (!out) throw IoFailure("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(detail::kCkptMagic) + sizeof(uint32_t)) throw TruncatedFile("checkpoint too short");
  if (std::memcmp(bytes.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) != 0)
    throw BadMagic("not a checkpoint file: " + path);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - sizeof(uint32_t), sizeof(uint32_t));
  const auto computed = static_cast<uint32_t>(crc32(
      0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - sizeof(uint32_t))));
  if (stored_crc != computed) throw IoFailure("checkpoint checksum mismatch: " + path);

  detail::ByteSource src{bytes};
  src.pos = sizeof(detail::kCkptMagic);
  const auto version = src.get<uint32_t>();
  if (version != detail::kCkptVersion) throw UnsupportedDatatype("unknown checkpoint format version");
  Checkpoint ck;
  ck.spec.variant = static_cast<Variant>(src.get<uint32_t>());
  ck.spec.in_channels = src.get<uint32_t>();
  ck.spec.levels = src.get<uint32_t>();
  ck.spec.base_width = src.get<uint32_t>();
  ck.spec.width_cap = src.get<uint32_t>();
  const auto n_arrays = src.get<uint32_t>();
  ck.arrays.resize(n_arrays);
  ck.shapes.resize(n_arrays);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    const auto name_len = src.get<uint32_t>();
    std::string name(name_len, '\0');
    src.get_bytes(name.data(), name_len);
    const auto ndim = src.get<uint32_t>();
    std::vector<index_t> shape(ndim);
    index_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<index_t>(src.get<uint64_t>());
      count *= shape[d];
    }
    std::vector<double> data(static_cast<size_t>(count));
    src.get_bytes(data.data(), data.size() * sizeof(double));
    ck.arrays[i] = {std::move(name), std::move(data)};
    ck.shapes[i] = std::move(shape);
  }
  return ck;
}

// Rebuilds runnable parameters from a checkpoint, validating that every array
// matches the plan derived from the stored spec by name and shape.
inline NetworkState restore_network(const NetworkPlan& plan, const Checkpoint& ck) {
  if (ck.arrays.size() != plan.param_info.size()) throw ShapeMismatch("checkpoint: parameter array count mismatch");
  NetworkState state;
  state.params.resize(plan.param_info.size());
  for (size_t i = 0; i < plan.param_info.size(); ++i) {
    const auto& info = plan.param_info[i];
    if (ck.arrays[i].first != info.name) throw ShapeMismatch("checkpoint: array name mismatch: " + info.name);
    if (ck.shapes[i] != info.shape) throw ShapeMismatch("checkpoint: array shape mismatch: " + info.name);
    state.params[i].value = ck.arrays[i].second;
    state.params[i].grad.assign(state.params[i].value.size(), 0.0);
  }
  return state;
}

}  // namespace voxseg
