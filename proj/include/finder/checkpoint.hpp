#pragma once

// Checkpoint container.
//
// Byte layout (all integers little-endian):
//   magic        8 bytes  "FNDRCKPT"
//   version      u32      currently 1
//   scalar_bytes u32      4 (float32) or 8 (float64)
//   manifest_len u64
//   manifest     manifest_len bytes of UTF-8 JSON (hyperparameters)
//   count        u64      number of tensors
//   per tensor:
//     name_len   u32, name bytes (UTF-8)
//     rank       u32, dims u64 x rank
//     data       prod(dims) IEEE-754 little-endian scalars of scalar_bytes each

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "finder/tensor.hpp"

namespace finder {

inline constexpr char kCheckpointMagic[8] = {'F', 'N', 'D', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t scalar_bytes = 4;
  std::string manifest;
  std::vector<std::string> order;
  std::map<std::string, StoredTensor> tensors;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename I>
void put(std::ostream& os, I v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

template <typename I>
I take(std::istream& is) {
  I v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(I))) throw CheckpointError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::string& manifest,
                     const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, sizeof(T));
  detail::put<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  detail::put<std::uint64_t>(os, named.size());
  for (const auto& [name, t] : named) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = detail::take<std::uint32_t>(is);
  if (ck.version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.scalar_bytes = detail::take<std::uint32_t>(is);
  if (ck.scalar_bytes != 4 && ck.scalar_bytes != 8)
    throw CheckpointError("checkpoint: unsupported scalar width " + std::to_string(ck.scalar_bytes));
  const auto mlen = detail::take<std::uint64_t>(is);
  ck.manifest.resize(mlen);
  if (!is.read(ck.manifest.data(), static_cast<std::streamsize>(mlen))) throw CheckpointError("checkpoint: truncated manifest");
  const auto count = detail::take<std::uint64_t>(is);
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto nlen = detail::take<std::uint32_t>(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw CheckpointError("checkpoint: truncated tensor name");
    StoredTensor st;
    const auto rank = detail::take<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) st.shape.push_back(detail::take<std::uint64_t>(is));
    const auto n_values = numel(st.shape);
    st.values.resize(n_values);
    if (ck.scalar_bytes == 4) {
      std::vector<float> buf(n_values);
      if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n_values * 4)))
        throw CheckpointError("checkpoint: truncated data for " + name);
      std::copy(buf.begin(), buf.end(), st.values.begin());
    } else {
      if (!is.read(reinterpret_cast<char*>(st.values.data()), static_cast<std::streamsize>(n_values * 8)))
        throw CheckpointError("checkpoint: truncated data for " + name);
    }
    ck.order.push_back(name);
    ck.tensors.emplace(std::move(name), std::move(st));
  }
  return ck;
}

}  // namespace finder
