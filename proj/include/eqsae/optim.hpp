#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eqsae/tensor.hpp"

namespace eqsae::num {

template <typename T>
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  T learning_rate = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
};

// Zero first/second moment buffers shaped after the parameter list.
template <typename T>
AdamState<T> init_adam(std::span<const Tensor<T>> params, T learning_rate);

// Standard bias-corrected Adam update, in place. Gradients are passed
// explicitly; the convenience overload pulls them from the tensors' grad
// buffers and clears them afterwards.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads,
               AdamState<T>& state);

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool pass = false;
  std::string worst_location;
};

// Central-difference check of the analytic gradients against
// (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate, double
// precision only. Reports the worst relative error; never throws on a
// mismatch.
GradCheckReport grad_check(const std::function<Tensor<double>()>& build_loss,
                           std::span<Tensor<double>> params, double eps, double tolerance);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace eqsae::num
