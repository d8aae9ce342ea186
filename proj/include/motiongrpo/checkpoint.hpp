#pragma once

#include "motiongrpo/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

// Layout: "MGRP" | u16 version | u32 dim count | u32 dims... | f64 weights...
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'R', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointData {
  std::vector<std::uint32_t> dims;
  std::vector<double> weights;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<double> flatten_parameters(const ParamRefs& params) {
  std::vector<double> out;
  out.reserve(parameter_count(params));
  for (const Tensor* p : params) out.insert(out.end(), p->data().begin(), p->data().end());
  return out;
}

inline void assign_parameters(const ParamRefs& params, const std::vector<double>& weights) {
  if (weights.size() != parameter_count(params)) {
    throw CheckpointError("checkpoint holds " + std::to_string(weights.size()) + " weights, model expects " +
                          std::to_string(parameter_count(params)));
  }
  std::size_t offset = 0;
  for (Tensor* p : params) {
    std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(offset), p->size(), p->data().begin());
    offset += p->size();
  }
}

inline std::vector<char> encode_checkpoint(const CheckpointData& ck) {
  std::vector<char> bytes(kCheckpointMagic, kCheckpointMagic + 4);
  auto put = [&bytes](const auto& value) {
    const char* p = reinterpret_cast<const char*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(value));
  };
  put(kCheckpointVersion);
  put(static_cast<std::uint32_t>(ck.dims.size()));
  for (auto d : ck.dims) put(d);
  for (double w : ck.weights) put(w);
  return bytes;
}

inline CheckpointData decode_checkpoint(const std::vector<char>& bytes) {
  std::size_t pos = 0;
  auto take = [&]<typename T>(T& value) {
    if (pos + sizeof(T) > bytes.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
    std::memcpy(&value, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not an MGRP checkpoint");
  }
  pos = 4;
  std::uint16_t version = 0;
  take(version);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint32_t count = 0;
  take(count);
  CheckpointData ck;
  ck.dims.resize(count);
  for (auto& d : ck.dims) take(d);
  const std::size_t rest = bytes.size() - pos;
  if (rest % sizeof(double) != 0) throw CheckpointError("checkpoint weight block is not a whole number of f64");
  ck.weights.resize(rest / sizeof(double));
  if (!ck.weights.empty()) std::memcpy(ck.weights.data(), bytes.data() + pos, rest);
  return ck;
}

inline void write_checkpoint(const std::string& path, const CheckpointData& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path + "'");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mgrpo
