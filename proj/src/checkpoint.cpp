#include "selim/tensor/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace selim::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << kCheckpointMagic << '\n';
  put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.cols()));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != kCheckpointMagic) throw DataError("bad checkpoint header in " + path.string());
  const auto count = get<std::uint64_t>(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name.resize(get<std::uint32_t>(is, path));
    if (!is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
      throw DataError("truncated checkpoint " + path.string());
    }
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)))) {
      throw DataError("truncated checkpoint " + path.string());
    }
    out.push_back(std::move(t));
  }
  return out;
}

void restore_parameters(std::span<Parameter> params, const std::vector<NamedTensor>& tensors) {
  for (auto& p : params) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == p.name; });
    if (it == tensors.end()) throw DataError("checkpoint lacks parameter '" + p.name + "'");
    require_same_shape(p.value, it->value, ("restore " + p.name).c_str());
    p.value = it->value;
  }
}

}  // namespace selim::ad
