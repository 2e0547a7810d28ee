#include "cirlab/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cirlab {

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(std::string("container: truncated while reading ") + what);
  return v;
}

}  // namespace

void write_tensor_container(std::ostream& out, const char magic[4], const std::vector<const Tensor*>& arrays) {
  out.write(magic, 4);
  write_pod<std::uint32_t>(out, kContainerVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const Tensor* t : arrays) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t->ndim()));
    for (std::size_t d : t->shape) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  }
  for (const Tensor* t : arrays)
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("container: write failed");
}

std::vector<Tensor> read_tensor_container(std::istream& in, const char magic[4]) {
  char got[4];
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error(std::string("container: bad magic, expected '") + std::string(magic, 4) + "'");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kContainerVersion)
    throw std::runtime_error("container: unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in, "array count");
  std::vector<Shape> shapes(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto ndim = read_pod<std::uint32_t>(in, "ndim");
    if (ndim > 8) throw std::runtime_error("container: implausible ndim " + std::to_string(ndim));
    shapes[i].resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      shapes[i][d] = static_cast<std::size_t>(read_pod<std::uint64_t>(in, "dimension"));
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t(shapes[i]);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in)
      throw std::runtime_error("container: truncated payload in array " + std::to_string(i) + " of " +
                               std::to_string(count));
    out.push_back(std::move(t));
  }
  return out;
}

void write_tensor_container_file(const std::string& path, const char magic[4],
                                 const std::vector<const Tensor*>& arrays) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_tensor_container(f, magic, arrays);
}

std::vector<Tensor> read_tensor_container_file(const std::string& path, const char magic[4]) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return read_tensor_container(f, magic);
}

}  // namespace cirlab
