#pragma once

// Checkpoint file, all integers and floats little-endian:
//
//   "SPLT"  u32 version (=1)
//   str arch                      (str = u32 byte length + bytes)
//   u32 d_l, f64 x d_l lambda0
//   u32 num_classes
//   u32 count, str x count        feature channels
//   u32 count, str x count        lattice channels
//   u8 normalize, str gravity_axis
//   u32 tensor_count, then per tensor:
//       str name, u8 trainable, u32 rank, u32 x rank dims, f32 x prod(dims)
//   u8 has_optimizer; if 1:
//       u64 step, then per tensor f32 first moments, f32 second moments

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "splatnet/error.hpp"
#include "splatnet/network.hpp"
#include "splatnet/optimizer.hpp"

namespace splatnet {

inline constexpr std::array<char, 4> kCheckpointMagic{'S', 'P', 'L', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::optional<OptimizerState> optimizer;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out_.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
  }

  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void floats(const std::vector<double>& values) {
    for (double v : values) put<float>(static_cast<float>(v));
  }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  template <typename T>
  T get() {
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in_.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
      throw ParseError("checkpoint truncated", static_cast<std::size_t>(offset_));
    }
    offset_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  std::string str() {
    const auto len = get<std::uint32_t>();
    if (len > (1u << 20)) throw ParseError("checkpoint string too long", static_cast<std::size_t>(offset_));
    std::string s(len, '\0');
    if (len && !in_.read(s.data(), len)) throw ParseError("checkpoint truncated", static_cast<std::size_t>(offset_));
    offset_ += len;
    return s;
  }

  std::vector<double> floats(std::size_t count) {
    std::vector<double> out(count);
    for (double& v : out) v = static_cast<double>(get<float>());
    return out;
  }

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

/// Tensors and optimizer moments are stored as 32-bit floats, so values
/// round to the nearest float on save.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  detail::LeWriter w(out);
  out.write(kCheckpointMagic.data(), 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.str(ck.config.arch);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.lambda0.dim()));
  for (double s : ck.config.lambda0.scale) w.put<double>(s);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.num_classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.feature_channels.size()));
  for (const auto& c : ck.config.feature_channels) w.str(c);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.lattice_channels.size()));
  for (const auto& c : ck.config.lattice_channels) w.str(c);
  w.put<std::uint8_t>(ck.config.normalize ? 1 : 0);
  w.str(ck.config.gravity_axis);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.tensors.size()));
  for (const auto& t : ck.params.tensors) {
    w.str(t.name);
    w.put<std::uint8_t>(t.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.floats(t.values);
  }
  w.put<std::uint8_t>(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    if (!ck.optimizer->matches(ck.params)) throw ShapeError("checkpoint: optimizer state layout mismatch");
    w.put<std::uint64_t>(ck.optimizer->step);
    for (std::size_t i = 0; i < ck.params.tensors.size(); ++i) {
      w.floats(ck.optimizer->first[i]);
      w.floats(ck.optimizer->second[i]);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kCheckpointMagic) throw ParseError("not a checkpoint (bad magic)", 0);
  detail::LeReader r(in);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ck;
  ck.config.arch = r.str();
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0 || dim > 64) throw ParseError("bad lattice dimensionality", r.offset());
  std::vector<double> scale(dim);
  for (double& s : scale) s = r.get<double>();
  try {
    ck.config.lambda0 = LatticeConfig(std::move(scale));
  } catch (const InvalidInput& e) {
    throw ParseError(e.what(), r.offset());
  }
  ck.config.num_classes = r.get<std::uint32_t>();
  ck.config.feature_channels.resize(r.get<std::uint32_t>());
  for (auto& c : ck.config.feature_channels) c = r.str();
  ck.config.lattice_channels.resize(r.get<std::uint32_t>());
  for (auto& c : ck.config.lattice_channels) c = r.str();
  ck.config.normalize = r.get<std::uint8_t>() != 0;
  ck.config.gravity_axis = r.str();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.str();
    t.trainable = r.get<std::uint8_t>() != 0;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw ParseError("bad tensor rank", r.offset());
    std::size_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.get<std::uint32_t>());
      total *= t.shape.back();
      if (total > (std::size_t{1} << 32)) throw ParseError("tensor too large", r.offset());
    }
    t.values = r.floats(total);
    ck.params.tensors.push_back(std::move(t));
  }
  if (r.get<std::uint8_t>() != 0) {
    OptimizerState s;
    s.step = r.get<std::uint64_t>();
    for (const auto& t : ck.params.tensors) {
      s.first.push_back(r.floats(t.size()));
      s.second.push_back(r.floats(t.size()));
    }
    ck.optimizer = std::move(s);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes in checkpoint", r.offset());
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, ck);
  if (!out) throw Error("write failed for checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

inline Checkpoint make_checkpoint(const Model& model, std::optional<OptimizerState> optimizer = std::nullopt) {
  return {model.config, model.params, std::move(optimizer)};
}

}  // namespace splatnet
