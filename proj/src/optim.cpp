#include "eqsae/optim.hpp"

#include <cmath>

#include "eqsae/parallel.hpp"

namespace eqsae::num {

template <typename T>
AdamState<T> init_adam(std::span<const Tensor<T>> params, T learning_rate) {
  AdamState<T> state;
  state.learning_rate = learning_rate;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.size(), T(0));
    state.v.emplace_back(p.size(), T(0));
  }
  return state;
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step_count += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step_count));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step_count));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].values_mut();
    const auto grad = grads[p];
    if (grad.size() != value.size() || state.m[p].size() != value.size()) {
      throw ShapeError("adam_step: shape mismatch on parameter " + std::to_string(p));
    }
    T* m = state.m[p].data();
    T* v = state.v[p].data();
    T* val = value.data();
    const T* gr = grad.data();
    const AdamState<T>& st = state;
    parallel_for(value.size(), [m, v, val, gr, bc1, bc2, &st](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        const T g = gr[i];
        m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * g;
        v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * g * g;
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        val[i] -= st.learning_rate * m_hat / (std::sqrt(v_hat) + st.epsilon);
      }
    });
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.grad());
  adam_step(params, std::span<const std::span<const T>>(grads), state);
  for (auto& p : params) p.clear_grad();
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& build_loss,
                           std::span<Tensor<double>> params, double eps, double tolerance) {
  GradCheckReport report;

  Tensor<double> loss = build_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    p.clear_grad();
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto value = params[pi].values_mut();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = build_loss().scalar();
      value[i] = saved - eps;
      const double down = build_loss().scalar();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel_err = abs_err / denom;
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_location =
            "param " + std::to_string(pi) + " index " + std::to_string(i);
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

template struct AdamState<float>;
template struct AdamState<double>;
template AdamState<float> init_adam(std::span<const Tensor<float>>, float);
template AdamState<double> init_adam(std::span<const Tensor<double>>, double);
template void adam_step(std::span<Tensor<float>>, std::span<const std::span<const float>>,
                        AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, std::span<const std::span<const double>>,
                        AdamState<double>&);
template void adam_step(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace eqsae::num
