#include "eqsae/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace eqsae::num {

static_assert(std::endian::native == std::endian::little,
              "ETNS IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'T', 'N', 'S'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

}  // namespace

template <typename T>
void write_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  const std::uint8_t header[3] = {kVersion, dtype_code<T>(),
                                  static_cast<std::uint8_t>(t.dims().size())};
  out.write(reinterpret_cast<const char*>(header), 3);
  for (std::size_t d : t.dims()) {
    const std::uint64_t v = d;
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw IoError("short write: " + path);
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4];
  std::uint8_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), 3);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not an ETNS file: " + path);
  }
  if (header[0] != kVersion) {
    throw IoError("unsupported ETNS version " + std::to_string(header[0]) + ": " + path);
  }
  if (header[1] != dtype_code<T>()) {
    throw IoError("dtype mismatch in " + path + ": file has " +
                  (header[1] == 0 ? std::string("f32") : std::string("f64")) +
                  ", requested " + (dtype_code<T>() == 0 ? "f32" : "f64"));
  }
  const std::size_t ndim = header[2];
  Dims dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    dims[i] = static_cast<std::size_t>(v);
  }
  const std::size_t n = element_count(dims);
  std::vector<T> data(n);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw IoError("truncated ETNS file: " + path);
  return Tensor<T>::from_data(std::move(dims), std::move(data));
}

template void write_tensor<float>(const std::string&, const Tensor<float>&);
template void write_tensor<double>(const std::string&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(const std::string&);
template Tensor<double> read_tensor<double>(const std::string&);

}  // namespace eqsae::num
