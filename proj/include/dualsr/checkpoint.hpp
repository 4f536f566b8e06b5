#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/tensor.hpp"

namespace dualsr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

// Layout: magic "DSRC", u32 version, u64 param count, then per parameter:
// u32 name length, name bytes, u32 ndim, i64 dims, raw f64 buffer.
inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'R', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape())
      detail::write_pod(os, static_cast<std::int64_t>(d));
    os.write(reinterpret_cast<const char*>(tensor.values().data()),
             static_cast<std::streamsize>(tensor.values().size() *
                                          sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const auto count = detail::read_pod<std::uint64_t>(is);
  std::map<std::string, Tensor> out;
  for (std::uint64_t p = 0; p < count; ++p) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape)
      d = static_cast<int>(detail::read_pod<std::int64_t>(is));
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    out.emplace(std::move(name), Tensor::from(std::move(values), shape));
  }
  return out;
}

/// Copies checkpoint values into an existing parameter list, shape-checked.
inline void restore_params(ParamList& params,
                           const std::map<std::string, Tensor>& ckpt) {
  for (auto& [name, tensor] : params) {
    auto it = ckpt.find(name);
    if (it == ckpt.end())
      throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape() != tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name +
                               ": " + shape_str(it->second.shape()) + " vs " +
                               shape_str(tensor.shape()));
    tensor.values() = it->second.values();
  }
}

}  // namespace dualsr
