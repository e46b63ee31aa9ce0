#pragma once

#include <string>

#include "eqsae/tensor.hpp"

namespace eqsae::num {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ETNS tensor file: magic "ETNS", u8 version=1, u8 dtype (0=f32, 1=f64),
// u8 ndim, ndim little-endian u64 extents, then raw little-endian scalars
// in row-major order.
template <typename T>
void write_tensor(const std::string& path, const Tensor<T>& t);

// Reading a file whose dtype does not match T is an error; precision modes
// never mix silently.
template <typename T>
Tensor<T> read_tensor(const std::string& path);

extern template void write_tensor<float>(const std::string&, const Tensor<float>&);
extern template void write_tensor<double>(const std::string&, const Tensor<double>&);
extern template Tensor<float> read_tensor<float>(const std::string&);
extern template Tensor<double> read_tensor<double>(const std::string&);

}  // namespace eqsae::num
