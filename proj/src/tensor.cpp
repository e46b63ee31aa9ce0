#include "eqsae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_set>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define EQSAE_HAVE_AVX2 1
#endif

#include "eqsae/parallel.hpp"

namespace eqsae::num {

std::size_t element_count(const Dims& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  s += "]";
  return s;
}

namespace detail {

template <typename T>
T* Node<T>::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad.data();
}

template struct Node<float>;
template struct Node<double>;

}  // namespace detail

namespace {

using detail::Node;

template <typename T>
std::shared_ptr<Node<T>> make_node(Dims dims, std::vector<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->dims = std::move(dims);
  n->value = std::move(value);
  return n;
}

// Inner product. The double path accumulates strictly left to right so that
// results match a plain loop-nest oracle bit for bit; the float path uses
// explicit SIMD with a fixed lane-reduction order, deterministic across runs
// and thread counts.
#ifdef EQSAE_HAVE_AVX2
inline float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 c0 = _mm256_setzero_ps(), c1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    c0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), c0);
    c1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), c1);
  }
  if (i + 8 <= n) {
    c0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), c0);
    i += 8;
  }
  alignas(32) float buf[8];
  _mm256_store_ps(buf, _mm256_add_ps(c0, c1));
  float s = ((buf[0] + buf[1]) + (buf[2] + buf[3])) + ((buf[4] + buf[5]) + (buf[6] + buf[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}
#endif

template <typename T>
inline T row_dot(const T* a, const T* b, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
#ifdef EQSAE_HAVE_AVX2
    return dot_f32(a, b, n);
#else
    float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      s0 += a[i] * b[i];
      s1 += a[i + 1] * b[i + 1];
      s2 += a[i + 2] * b[i + 2];
      s3 += a[i + 3] * b[i + 3];
    }
    float tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
#endif
  } else {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
#ifdef EQSAE_HAVE_AVX2
    axpy_f32(alpha, x, y, n);
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline T sum_sq_diff(const T* a, const T* b, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      const float d0 = a[i] - b[i];
      const float d1 = a[i + 1] - b[i + 1];
      const float d2 = a[i + 2] - b[i + 2];
      const float d3 = a[i + 3] - b[i + 3];
      s0 += d0 * d0;
      s1 += d1 * d1;
      s2 += d2 * d2;
      s3 += d3 * d3;
    }
    float tail = 0;
    for (; i < n; ++i) {
      const float d = a[i] - b[i];
      tail += d * d;
    }
    return ((s0 + s1) + (s2 + s3)) + tail;
  } else {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T d = a[i] - b[i];
      s += d * d;
    }
    return s;
  }
}

struct ConvGeom {
  std::size_t batch, c_in, h, w, c_out, kh, kw, oh, ow;
  int stride, pad;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad,
                       bool transpose, int out_pad) {
  if (x.dims().size() != 4) {
    throw ShapeError("conv input must be 4-d [batch, c, h, w], got " +
                     dims_to_string(x.dims()));
  }
  if (kernel.dims().size() != 4) {
    throw ShapeError("conv kernel must be 4-d, got " + dims_to_string(kernel.dims()));
  }
  if (stride < 1) throw ParamError("conv stride must be >= 1");
  if (pad < 0) throw ParamError("conv pad must be >= 0");
  ConvGeom g;
  g.batch = x.dim(0);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (!transpose) {
    g.c_out = kernel.dim(0);
    g.c_in = kernel.dim(1);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    if (x.dim(1) != g.c_in) {
      throw ShapeError("conv2d channel mismatch: input " + dims_to_string(x.dims()) +
                       " vs kernel " + dims_to_string(kernel.dims()));
    }
    const std::int64_t oh = (static_cast<std::int64_t>(g.h) + 2 * pad -
                             static_cast<std::int64_t>(g.kh)) / stride + 1;
    const std::int64_t ow = (static_cast<std::int64_t>(g.w) + 2 * pad -
                             static_cast<std::int64_t>(g.kw)) / stride + 1;
    if (oh < 1 || ow < 1) {
      throw ShapeError("conv2d output extent would be non-positive for input " +
                       dims_to_string(x.dims()) + " kernel " + dims_to_string(kernel.dims()));
    }
    g.oh = static_cast<std::size_t>(oh);
    g.ow = static_cast<std::size_t>(ow);
  } else {
    g.c_in = kernel.dim(0);
    g.c_out = kernel.dim(1);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    if (x.dim(1) != g.c_in) {
      throw ShapeError("conv_transpose2d channel mismatch: input " + dims_to_string(x.dims()) +
                       " vs kernel " + dims_to_string(kernel.dims()));
    }
    const std::int64_t oh = (static_cast<std::int64_t>(g.h) - 1) * stride - 2 * pad +
                            static_cast<std::int64_t>(g.kh) + out_pad;
    const std::int64_t ow = (static_cast<std::int64_t>(g.w) - 1) * stride - 2 * pad +
                            static_cast<std::int64_t>(g.kw) + out_pad;
    if (oh < 1 || ow < 1) {
      throw ShapeError("conv_transpose2d output extent would be non-positive");
    }
    g.oh = static_cast<std::size_t>(oh);
    g.ow = static_cast<std::size_t>(ow);
  }
  return g;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Dims dims) {
  const std::size_t n = element_count(dims);
  return Tensor(make_node<T>(std::move(dims), std::vector<T>(n, T(0))));
}

template <typename T>
Tensor<T> Tensor<T>::full(Dims dims, T value) {
  const std::size_t n = element_count(dims);
  return Tensor(make_node<T>(std::move(dims), std::vector<T>(n, value)));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Dims dims, std::vector<T> data) {
  if (element_count(dims) != data.size()) {
    throw ShapeError("from_data: " + dims_to_string(dims) + " needs " +
                     std::to_string(element_count(dims)) + " values, got " +
                     std::to_string(data.size()));
  }
  return Tensor(make_node<T>(std::move(dims), std::move(data)));
}

template <typename T>
Tensor<T> Tensor<T>::param(Dims dims, std::vector<T> data) {
  Tensor t = from_data(std::move(dims), std::move(data));
  t.node_->is_param = true;
  t.node_->needs_grad = true;
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->dims.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     dims_to_string(node_->dims));
  }
  return node_->dims[axis];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (node_->grad.empty()) throw GraphError("tensor has no gradient; run backward first");
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
T Tensor<T>::scalar() const {
  if (size() != 1) {
    throw ShapeError("scalar() on tensor of shape " + dims_to_string(node_->dims));
  }
  return node_->value[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T v : node_->value) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void Tensor<T>::check_finite(const std::string& what) const {
  if (!all_finite()) {
    throw std::runtime_error(what + ": non-finite value detected");
  }
}

template class Tensor<float>;
template class Tensor<double>;

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.dims().size() != 2 || w.dims().size() != 2 || b.dims().size() != 1) {
    throw ShapeError("apply_linear expects x[batch,in], w[out,in], b[out]; got x=" +
                     dims_to_string(x.dims()) + " w=" + dims_to_string(w.dims()) +
                     " b=" + dims_to_string(b.dims()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out) {
    throw ShapeError("apply_linear dimension mismatch: x=" + dims_to_string(x.dims()) +
                     " w=" + dims_to_string(w.dims()) + " b=" + dims_to_string(b.dims()));
  }

  std::vector<T> y(batch * out);
  {
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    const T* bv = b.values().data();
    T* yv = y.data();
    parallel_for(batch, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        const T* xr = xv + i * in;
        T* yr = yv + i * out;
        for (std::size_t j = 0; j < out; ++j) {
          yr[j] = row_dot(xr, wv + j * in, in) + bv[j];
        }
      }
    });
  }

  auto node = make_node<T>({batch, out}, std::move(y));
  node->parents = {x.node(), w.node(), b.node()};
  node->needs_grad = x.node()->needs_grad || w.node()->needs_grad || b.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [batch, in, out](Node<T>& self) {
      const T* dy = self.grad.data();
      Node<T>& xn = *self.parents[0];
      Node<T>& wn = *self.parents[1];
      Node<T>& bn = *self.parents[2];
      if (xn.needs_grad) {
        T* dx = xn.ensure_grad();
        const T* wv = wn.value.data();
        parallel_for(batch, [&](std::size_t i0, std::size_t i1) {
          for (std::size_t i = i0; i < i1; ++i) {
            const T* dyr = dy + i * out;
            T* dxr = dx + i * in;
            for (std::size_t j = 0; j < out; ++j) {
              const T g = dyr[j];
              if (g != T(0)) axpy(g, wv + j * in, dxr, in);
            }
          }
        });
      }
      if (wn.needs_grad) {
        T* dw = wn.ensure_grad();
        const T* xv = xn.value.data();
        // Partition over output rows so each dw row is owned by one worker;
        // zero entries of dy are skipped, which is what makes the TopK-sparse
        // backward cheap.
        parallel_for(out, [&](std::size_t j0, std::size_t j1) {
          for (std::size_t i = 0; i < batch; ++i) {
            const T* dyr = dy + i * out;
            const T* xr = xv + i * in;
            for (std::size_t j = j0; j < j1; ++j) {
              const T g = dyr[j];
              if (g != T(0)) axpy(g, xr, dw + j * in, in);
            }
          }
        });
      }
      if (bn.needs_grad) {
        T* db = bn.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          const T* dyr = dy + i * out;
          for (std::size_t j = 0; j < out; ++j) db[j] += dyr[j];
        }
      }
    };
  }
  return Tensor<T>(node);
}

namespace {

// Shared im2col: one patch row per output position, laid out to match the
// kernel's (c_in, kh, kw) order. Padding stays zero.
template <typename T>
void im2col_fill(const T* xb, const ConvGeom& g, T* patches) {
  const std::size_t x_cstride = g.h * g.w;
  const std::size_t k_cstride = g.kh * g.kw;
  const std::size_t patch_len = g.c_in * k_cstride;
  std::fill(patches, patches + g.oh * g.ow * patch_len, T(0));
  for (std::size_t oh = 0; oh < g.oh; ++oh) {
    const std::int64_t ihb = static_cast<std::int64_t>(oh) * g.stride - g.pad;
    const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ihb));
    const std::size_t kh1 = static_cast<std::size_t>(
        std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.h) - ihb));
    for (std::size_t ow = 0; ow < g.ow; ++ow) {
      const std::int64_t iwb = static_cast<std::int64_t>(ow) * g.stride - g.pad;
      const std::size_t kw0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -iwb));
      const std::size_t kw1 = static_cast<std::size_t>(
          std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.w) - iwb));
      T* prow = patches + (oh * g.ow + ow) * patch_len;
      if (kw0 >= kw1) continue;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T* xc = xb + ci * x_cstride;
        for (std::size_t kh = kh0; kh < kh1; ++kh) {
          std::copy_n(xc + (ihb + kh) * g.w + (iwb + kw0), kw1 - kw0,
                      prow + ci * k_cstride + kh * g.kw + kw0);
        }
      }
    }
  }
}

// Adjoint of im2col_fill: scatter-add patch rows back onto the image grid.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dxb) {
  const std::size_t x_cstride = g.h * g.w;
  const std::size_t k_cstride = g.kh * g.kw;
  const std::size_t patch_len = g.c_in * k_cstride;
  for (std::size_t oh = 0; oh < g.oh; ++oh) {
    const std::int64_t ihb = static_cast<std::int64_t>(oh) * g.stride - g.pad;
    const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ihb));
    const std::size_t kh1 = static_cast<std::size_t>(
        std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.h) - ihb));
    for (std::size_t ow = 0; ow < g.ow; ++ow) {
      const std::int64_t iwb = static_cast<std::int64_t>(ow) * g.stride - g.pad;
      const std::size_t kw0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -iwb));
      const std::size_t kw1 = static_cast<std::size_t>(
          std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.w) - iwb));
      if (kw0 >= kw1) continue;
      const T* prow = col + (oh * g.ow + ow) * patch_len;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        T* xc = dxb + ci * x_cstride;
        for (std::size_t kh = kh0; kh < kh1; ++kh) {
          const T* src = prow + ci * k_cstride + kh * g.kw + kw0;
          T* dst = xc + (ihb + kh) * g.w + (iwb + kw0);
          for (std::size_t k = 0; k < kw1 - kw0; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> apply_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad) {
  const ConvGeom g = conv_geometry(x, kernel, stride, pad, false, 0);

  std::vector<T> y(g.batch * g.c_out * g.oh * g.ow);
  const T* xv = x.values().data();
  const T* kv = kernel.values().data();
  const std::size_t x_cstride = g.h * g.w;
  const std::size_t k_cstride = g.kh * g.kw;
  const std::size_t k_ostride = g.c_in * k_cstride;
  const std::size_t n_pos = g.oh * g.ow;

  // Whole-kernel case (the paper-style 16x16 bottleneck conv) degenerates to
  // one contiguous dot per (batch, c_out).
  const bool full_cover = (pad == 0 && g.kh == g.h && g.kw == g.w && g.oh == 1 && g.ow == 1);

  if (full_cover) {
    parallel_for(g.batch * g.c_out, [&](std::size_t t0, std::size_t t1) {
      for (std::size_t t = t0; t < t1; ++t) {
        const std::size_t b = t / g.c_out;
        const std::size_t co = t % g.c_out;
        y[t] = row_dot(xv + b * g.c_in * x_cstride, kv + co * k_ostride, k_ostride);
      }
    });
  } else if constexpr (std::is_same_v<T, float>) {
    // im2col per batch element, then contiguous dots; much faster than the
    // direct loop for small kernels and still a fixed summation order.
    parallel_for(g.batch, [&](std::size_t b0, std::size_t b1) {
      std::vector<T> patches(n_pos * k_ostride);
      for (std::size_t b = b0; b < b1; ++b) {
        im2col_fill(xv + b * g.c_in * x_cstride, g, patches.data());
        for (std::size_t co = 0; co < g.c_out; ++co) {
          const T* kc = kv + co * k_ostride;
          T* yr = y.data() + (b * g.c_out + co) * n_pos;
          for (std::size_t pos = 0; pos < n_pos; ++pos) {
            yr[pos] = row_dot(patches.data() + pos * k_ostride, kc, k_ostride);
          }
        }
      }
    });
  } else {
    // Direct loop nest in (ci, kh, kw) order; this is the order the
    // double-precision oracle tests pin down.
    parallel_for(g.batch * g.c_out, [&](std::size_t t0, std::size_t t1) {
      for (std::size_t t = t0; t < t1; ++t) {
        const std::size_t b = t / g.c_out;
        const std::size_t co = t % g.c_out;
        const T* xb = xv + b * g.c_in * x_cstride;
        const T* kc = kv + co * k_ostride;
        T* yr = y.data() + t * n_pos;
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
          const std::int64_t ihb = static_cast<std::int64_t>(oh) * g.stride - g.pad;
          const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ihb));
          const std::size_t kh1 = static_cast<std::size_t>(
              std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.h) - ihb));
          for (std::size_t ow = 0; ow < g.ow; ++ow) {
            const std::int64_t iwb = static_cast<std::int64_t>(ow) * g.stride - g.pad;
            const std::size_t kw0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -iwb));
            const std::size_t kw1 = static_cast<std::size_t>(
                std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.w) - iwb));
            T acc = 0;
            for (std::size_t ci = 0; ci < g.c_in; ++ci) {
              const T* xc = xb + ci * x_cstride;
              const T* kk = kc + ci * k_cstride;
              for (std::size_t kh = kh0; kh < kh1; ++kh) {
                const T* xrow = xc + (ihb + kh) * g.w + (iwb + kw0);
                const T* krow = kk + kh * g.kw + kw0;
                for (std::size_t k = 0; k < kw1 - kw0; ++k) acc += xrow[k] * krow[k];
              }
            }
            yr[oh * g.ow + ow] = acc;
          }
        }
      }
    });
  }

  auto node = make_node<T>({g.batch, g.c_out, g.oh, g.ow}, std::move(y));
  node->parents = {x.node(), kernel.node()};
  node->needs_grad = x.node()->needs_grad || kernel.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [g](Node<T>& self) {
      const T* dy = self.grad.data();
      Node<T>& xn = *self.parents[0];
      Node<T>& kn = *self.parents[1];
      const std::size_t x_cstride = g.h * g.w;
      const std::size_t k_cstride = g.kh * g.kw;
      const std::size_t k_ostride = g.c_in * k_cstride;
      const std::size_t n_pos = g.oh * g.ow;
      const T* kv = kn.value.data();
      const T* xv = xn.value.data();
      T* dx = xn.needs_grad ? xn.ensure_grad() : nullptr;
      T* dk = kn.needs_grad ? kn.ensure_grad() : nullptr;

      if constexpr (std::is_same_v<T, float>) {
        std::vector<T> col(dx ? n_pos * k_ostride : 0);
        std::vector<T> patches(dk ? n_pos * k_ostride : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* dyb = dy + b * g.c_out * n_pos;
          if (dx) {
            // dcol[pos, :] = sum_co dy[b,co,pos] * kernel[co, :], then the
            // col2im adjoint scatters it back onto the image grid.
            std::fill(col.begin(), col.end(), T(0));
            parallel_for(n_pos, [&](std::size_t p0, std::size_t p1) {
              for (std::size_t pos = p0; pos < p1; ++pos) {
                T* crow = col.data() + pos * k_ostride;
                for (std::size_t co = 0; co < g.c_out; ++co) {
                  const T gval = dyb[co * n_pos + pos];
                  if (gval != T(0)) axpy(gval, kv + co * k_ostride, crow, k_ostride);
                }
              }
            });
            col2im_add(col.data(), g, dx + b * g.c_in * x_cstride);
          }
          if (dk) {
            im2col_fill(xv + b * g.c_in * x_cstride, g, patches.data());
            parallel_for(g.c_out, [&](std::size_t c0, std::size_t c1) {
              for (std::size_t co = c0; co < c1; ++co) {
                T* dkc = dk + co * k_ostride;
                const T* dyc = dyb + co * n_pos;
                for (std::size_t pos = 0; pos < n_pos; ++pos) {
                  const T gval = dyc[pos];
                  if (gval != T(0)) axpy(gval, patches.data() + pos * k_ostride, dkc, k_ostride);
                }
              }
            });
          }
        }
        return;
      }

      if (dx) {
        parallel_for(g.batch, [&](std::size_t b0, std::size_t b1) {
          for (std::size_t b = b0; b < b1; ++b) {
            T* dxb = dx + b * g.c_in * x_cstride;
            for (std::size_t co = 0; co < g.c_out; ++co) {
              const T* dyr = dy + (b * g.c_out + co) * n_pos;
              const T* kc = kv + co * k_ostride;
              for (std::size_t oh = 0; oh < g.oh; ++oh) {
                const std::int64_t ihb = static_cast<std::int64_t>(oh) * g.stride - g.pad;
                const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ihb));
                const std::size_t kh1 = static_cast<std::size_t>(
                    std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.h) - ihb));
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const T gval = dyr[oh * g.ow + ow];
                  if (gval == T(0)) continue;
                  const std::int64_t iwb = static_cast<std::int64_t>(ow) * g.stride - g.pad;
                  const std::size_t kw0 =
                      static_cast<std::size_t>(std::max<std::int64_t>(0, -iwb));
                  const std::size_t kw1 = static_cast<std::size_t>(
                      std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.w) - iwb));
                  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                    T* dxc = dxb + ci * x_cstride;
                    const T* kk = kc + ci * k_cstride;
                    for (std::size_t kh = kh0; kh < kh1; ++kh) {
                      axpy(gval, kk + kh * g.kw + kw0,
                           dxc + (ihb + kh) * g.w + (iwb + kw0), kw1 - kw0);
                    }
                  }
                }
              }
            }
          }
        });
      }
      if (dk) {
        parallel_for(g.c_out, [&](std::size_t co0, std::size_t co1) {
          for (std::size_t co = co0; co < co1; ++co) {
            T* dkc = dk + co * k_ostride;
            for (std::size_t b = 0; b < g.batch; ++b) {
              const T* xb = xv + b * g.c_in * x_cstride;
              const T* dyr = dy + (b * g.c_out + co) * n_pos;
              for (std::size_t oh = 0; oh < g.oh; ++oh) {
                const std::int64_t ihb = static_cast<std::int64_t>(oh) * g.stride - g.pad;
                const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ihb));
                const std::size_t kh1 = static_cast<std::size_t>(
                    std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.h) - ihb));
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const T gval = dyr[oh * g.ow + ow];
                  if (gval == T(0)) continue;
                  const std::int64_t iwb = static_cast<std::int64_t>(ow) * g.stride - g.pad;
                  const std::size_t kw0 =
                      static_cast<std::size_t>(std::max<std::int64_t>(0, -iwb));
                  const std::size_t kw1 = static_cast<std::size_t>(
                      std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.w) - iwb));
                  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                    const T* xc = xb + ci * x_cstride;
                    T* dkk = dkc + ci * k_cstride;
                    for (std::size_t kh = kh0; kh < kh1; ++kh) {
                      axpy(gval, xc + (ihb + kh) * g.w + (iwb + kw0),
                           dkk + kh * g.kw + kw0, kw1 - kw0);
                    }
                  }
                }
              }
            }
          }
        });
      }
    };
  }
  return Tensor<T>(node);
}

namespace {

// Geometry of the transpose op reinterpreted as a forward conv of the
// output-gradient grid: used by the conv_transpose backward input pass.
inline ConvGeom transpose_as_conv(const ConvGeom& g) {
  ConvGeom c = g;
  c.c_in = g.c_out;   // patches gather over the transpose output channels
  c.h = g.oh;
  c.w = g.ow;
  c.oh = g.h;
  c.ow = g.w;
  c.c_out = g.c_in;
  return c;
}

}  // namespace

template <typename T>
Tensor<T> apply_conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel,
                                 int stride, int pad, int out_pad) {
  // Same convention as the usual frameworks: output padding is strictly
  // smaller than the stride.
  if (out_pad < 0 || out_pad >= stride) {
    throw ParamError("conv_transpose2d out_pad must be in [0, stride)");
  }
  const ConvGeom g = conv_geometry(x, kernel, stride, pad, true, out_pad);

  std::vector<T> y(g.batch * g.c_out * g.oh * g.ow, T(0));
  const T* xv = x.values().data();
  const T* kv = kernel.values().data();
  const std::size_t x_cstride = g.h * g.w;
  const std::size_t k_cstride = g.kh * g.kw;
  const std::size_t k_istride = g.c_out * k_cstride;  // kernel: [c_in, c_out, kh, kw]

  // Scatter-accumulate: every input element stamps its scaled kernel window
  // into the output. Contributions to one output element arrive in a fixed
  // (c_in, ih, iw) order per batch element, so parallelism over the batch
  // stays bitwise deterministic.
  parallel_for(g.batch, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const T* xb = xv + b * g.c_in * x_cstride;
      T* yb = y.data() + b * g.c_out * g.oh * g.ow;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T* xc = xb + ci * x_cstride;
        const T* kci = kv + ci * k_istride;
        for (std::size_t ih = 0; ih < g.h; ++ih) {
          const std::int64_t ohb = static_cast<std::int64_t>(ih) * g.stride - g.pad;
          const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ohb));
          const std::size_t kh1 = static_cast<std::size_t>(
              std::min<std::int64_t>(g.kh, static_cast<std::int64_t>(g.oh) - ohb));
          for (std::size_t iw = 0; iw < g.w; ++iw) {
            const T xval = xc[ih * g.w + iw];
            if (xval == T(0)) continue;
            const std::int64_t owb = static_cast<std::int64_t>(iw) * g.stride - g.pad;
            const std::size_t kw0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -owb));
            const std::size_t kw1 = static_cast<std::size_t>(
                std::min<std::int64_t>(g.kw, static_cast<std::int64_t>(g.ow) - owb));
            if (kw0 >= kw1) continue;
            for (std::size_t co = 0; co < g.c_out; ++co) {
              const T* kc = kci + co * k_cstride;
              T* yc = yb + co * g.oh * g.ow;
              for (std::size_t kh = kh0; kh < kh1; ++kh) {
                axpy(xval, kc + kh * g.kw + kw0, yc + (ohb + kh) * g.ow + (owb + kw0),
                     kw1 - kw0);
              }
            }
          }
        }
      }
    }
  });

  auto node = make_node<T>({g.batch, g.c_out, g.oh, g.ow}, std::move(y));
  node->parents = {x.node(), kernel.node()};
  node->needs_grad = x.node()->needs_grad || kernel.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [g](Node<T>& self) {
      const T* dy = self.grad.data();
      Node<T>& xn = *self.parents[0];
      Node<T>& kn = *self.parents[1];
      const std::size_t x_cstride = g.h * g.w;
      const std::size_t k_cstride = g.kh * g.kw;
      const std::size_t k_istride = g.c_out * k_cstride;
      const T* kv = kn.value.data();
      const T* xv = xn.value.data();
      T* dx = xn.needs_grad ? xn.ensure_grad() : nullptr;
      T* dk = kn.needs_grad ? kn.ensure_grad() : nullptr;

      if (dx) {
        // dx is the forward convolution of dy with the same kernel; each
        // kernel row k[ci, :] is contiguous, so gather dy into patch rows
        // and take dots.
        const ConvGeom cg = transpose_as_conv(g);
        if constexpr (std::is_same_v<T, float>) {
          const std::size_t n_pos = g.h * g.w;
          parallel_for(g.batch, [&](std::size_t b0, std::size_t b1) {
            std::vector<T> patches(n_pos * k_istride);
            for (std::size_t b = b0; b < b1; ++b) {
              im2col_fill(dy + b * g.c_out * g.oh * g.ow, cg, patches.data());
              T* dxb = dx + b * g.c_in * x_cstride;
              for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                const T* kc = kv + ci * k_istride;
                for (std::size_t pos = 0; pos < n_pos; ++pos) {
                  dxb[ci * x_cstride + pos] +=
                      row_dot(patches.data() + pos * k_istride, kc, k_istride);
                }
              }
            }
          });
        } else {
          parallel_for(g.batch * g.c_in, [&](std::size_t t0, std::size_t t1) {
            for (std::size_t t = t0; t < t1; ++t) {
              const std::size_t b = t / g.c_in;
              const std::size_t ci = t % g.c_in;
              const T* dyb = dy + b * g.c_out * g.oh * g.ow;
              const T* kc = kv + ci * k_istride;
              T* dxc = dx + t * x_cstride;
              for (std::size_t ih = 0; ih < g.h; ++ih) {
                const std::int64_t ohb = static_cast<std::int64_t>(ih) * g.stride - g.pad;
                const std::size_t kh0 = static_cast<std::size_t>(std::max<std::int64_t>(0, -ohb));
                const std::size_t kh1 = static_cast<std::size_t>(std::min<std::int64_t>(
                    g.kh, static_cast<std::int64_t>(g.oh) - ohb));
                for (std::size_t iw = 0; iw < g.w; ++iw) {
                  const std::int64_t owb = static_cast<std::int64_t>(iw) * g.stride - g.pad;
                  const std::size_t kw0 =
                      static_cast<std::size_t>(std::max<std::int64_t>(0, -owb));
                  const std::size_t kw1 = static_cast<std::size_t>(std::min<std::int64_t>(
                      g.kw, static_cast<std::int64_t>(g.ow) - owb));
                  T acc = dxc[ih * g.w + iw];
                  for (std::size_t co = 0; co < g.c_out; ++co) {
                    const T* dyc = dyb + co * g.oh * g.ow;
                    const T* kk = kc + co * k_cstride;
                    for (std::size_t kh = kh0; kh < kh1; ++kh) {
                      const T* dyrow = dyc + (ohb + kh) * g.ow + (owb + kw0);
                      const T* krow = kk + kh * g.kw + kw0;
                      for (std::size_t k = 0; k < kw1 - kw0; ++k) acc += dyrow[k] * krow[k];
                    }
                  }
                  dxc[ih * g.w + iw] = acc;
                }
              }
            }
          });
        }
      }
      if (dk) {
        parallel_for(g.c_in, [&](std::size_t ci0, std::size_t ci1) {
          for (std::size_t ci = ci0; ci < ci1; ++ci) {
            T* dki = dk + ci * k_istride;
            for (std::size_t b = 0; b < g.batch; ++b) {
              const T* xc = xv + (b * g.c_in + ci) * x_cstride;
              const T* dyb = dy + b * g.c_out * g.oh * g.ow;
              for (std::size_t ih = 0; ih < g.h; ++ih) {
                const std::int64_t ohb = static_cast<std::int64_t>(ih) * g.stride - g.pad;
                const std::size_t kh0 =
                    static_cast<std::size_t>(std::max<std::int64_t>(0, -ohb));
                const std::size_t kh1 = static_cast<std::size_t>(std::min<std::int64_t>(
                    g.kh, static_cast<std::int64_t>(g.oh) - ohb));
                for (std::size_t iw = 0; iw < g.w; ++iw) {
                  const T xval = xc[ih * g.w + iw];
                  if (xval == T(0)) continue;
                  const std::int64_t owb = static_cast<std::int64_t>(iw) * g.stride - g.pad;
                  const std::size_t kw0 =
                      static_cast<std::size_t>(std::max<std::int64_t>(0, -owb));
                  const std::size_t kw1 = static_cast<std::size_t>(std::min<std::int64_t>(
                      g.kw, static_cast<std::int64_t>(g.ow) - owb));
                  for (std::size_t co = 0; co < g.c_out; ++co) {
                    const T* dyc = dyb + co * g.oh * g.ow;
                    T* dkk = dki + co * k_cstride;
                    for (std::size_t kh = kh0; kh < kh1; ++kh) {
                      axpy(xval, dyc + (ohb + kh) * g.ow + (owb + kw0),
                           dkk + kh * g.kw + kw0, kw1 - kw0);
                    }
                  }
                }
              }
            }
          }
        });
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.size());
  const T* xv = x.values().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto node = make_node<T>(x.dims(), std::move(y));
  node->parents = {x.node()};
  node->needs_grad = x.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [](Node<T>& self) {
      Node<T>& xn = *self.parents[0];
      if (!xn.needs_grad) return;
      T* dx = xn.ensure_grad();
      const T* dy = self.grad.data();
      const T* xv = xn.value.data();
      for (std::size_t i = 0; i < self.size(); ++i) {
        if (xv[i] > T(0)) dx[i] += dy[i];
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> topk(const Tensor<T>& x, int k) {
  if (x.dims().size() != 2) {
    throw ShapeError("topk expects [batch, n], got " + dims_to_string(x.dims()));
  }
  const std::size_t batch = x.dim(0), n = x.dim(1);
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ParamError("topk: k=" + std::to_string(k) + " out of range for row size " +
                     std::to_string(n));
  }
  const std::size_t ku = static_cast<std::size_t>(k);

  std::vector<T> y(batch * n, T(0));
  auto kept = std::make_shared<std::vector<std::uint32_t>>(batch * ku);
  const T* xv = x.values().data();
  parallel_for(batch, [&](std::size_t i0, std::size_t i1) {
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = i0; i < i1; ++i) {
      const T* row = xv + i * n;
      for (std::size_t j = 0; j < n; ++j) idx[j] = static_cast<std::uint32_t>(j);
      std::partial_sort(idx.begin(), idx.begin() + ku, idx.end(),
                        [row](std::uint32_t a, std::uint32_t b) {
                          if (row[a] != row[b]) return row[a] > row[b];
                          return a < b;
                        });
      std::uint32_t* krow = kept->data() + i * ku;
      T* yrow = y.data() + i * n;
      for (std::size_t j = 0; j < ku; ++j) {
        krow[j] = idx[j];
        yrow[idx[j]] = row[idx[j]];
      }
    }
  });

  auto node = make_node<T>({batch, n}, std::move(y));
  node->parents = {x.node()};
  node->needs_grad = x.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [batch, n, ku, kept](Node<T>& self) {
      Node<T>& xn = *self.parents[0];
      if (!xn.needs_grad) return;
      T* dx = xn.ensure_grad();
      const T* dy = self.grad.data();
      for (std::size_t i = 0; i < batch; ++i) {
        const std::uint32_t* krow = kept->data() + i * ku;
        for (std::size_t j = 0; j < ku; ++j) {
          const std::size_t col = krow[j];
          dx[i * n + col] += dy[i * n + col];
        }
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("mse shape mismatch: " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mse on empty tensors");
  const T total = sum_sq_diff(a.values().data(), b.values().data(), n);
  auto node = make_node<T>({1}, std::vector<T>{total / static_cast<T>(n)});
  node->parents = {a.node(), b.node()};
  node->needs_grad = a.node()->needs_grad || b.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [n](Node<T>& self) {
      const T g = self.grad[0];
      Node<T>& an = *self.parents[0];
      Node<T>& bn = *self.parents[1];
      const T scale = g * T(2) / static_cast<T>(n);
      const T* av = an.value.data();
      const T* bv = bn.value.data();
      if (an.needs_grad) {
        T* da = an.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) da[i] += scale * (av[i] - bv[i]);
      }
      if (bn.needs_grad) {
        T* db = bn.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) db[i] -= scale * (av[i] - bv[i]);
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Dims dims) {
  if (element_count(dims) != x.size()) {
    throw ShapeError("reshape: cannot view " + dims_to_string(x.dims()) + " as " +
                     dims_to_string(dims));
  }
  std::vector<T> y(x.values().begin(), x.values().end());
  auto node = make_node<T>(std::move(dims), std::move(y));
  node->parents = {x.node()};
  node->needs_grad = x.node()->needs_grad;
  if (node->needs_grad) {
    node->backprop = [](Node<T>& self) {
      Node<T>& xn = *self.parents[0];
      if (!xn.needs_grad) return;
      T* dx = xn.ensure_grad();
      const T* dy = self.grad.data();
      for (std::size_t i = 0; i < self.size(); ++i) dx[i] += dy[i];
    };
  }
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> sum_scalars(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw ShapeError("sum_scalars on empty list");
  T total = 0;
  bool needs = false;
  for (const auto& t : terms) {
    if (t.size() != 1) {
      throw ShapeError("sum_scalars expects scalar terms, got " + dims_to_string(t.dims()));
    }
    total += t.values()[0];
    needs = needs || t.node()->needs_grad;
  }
  auto node = make_node<T>({1}, std::vector<T>{total});
  node->parents.reserve(terms.size());
  for (const auto& t : terms) node->parents.push_back(t.node());
  node->needs_grad = needs;
  if (needs) {
    node->backprop = [](Node<T>& self) {
      const T g = self.grad[0];
      for (auto& parent : self.parents) {
        if (parent->needs_grad) parent->ensure_grad()[0] += g;
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.valid()) throw GraphError("backward on an empty tensor");
  if (loss.size() != 1) {
    throw GraphError("backward requires a scalar loss, got " + dims_to_string(loss.dims()));
  }
  Node<T>* root = loss.node().get();
  if (root->backward_done) {
    throw GraphError("backward already ran on this node; rebuild the graph first");
  }
  if (!root->needs_grad) {
    throw GraphError("loss is not connected to any parameter");
  }

  // Iterative post-order DFS; children appear after all their parents when
  // the order is reversed.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next].get();
      ++next;
      if (parent->needs_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
  root->backward_done = true;
}

template Tensor<float> apply_linear(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> apply_linear(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> apply_conv2d(const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> apply_conv2d(const Tensor<double>&, const Tensor<double>&, int, int);
template Tensor<float> apply_conv_transpose2d(const Tensor<float>&, const Tensor<float>&, int, int, int);
template Tensor<double> apply_conv_transpose2d(const Tensor<double>&, const Tensor<double>&, int, int, int);
template Tensor<float> relu(const Tensor<float>&);
template Tensor<double> relu(const Tensor<double>&);
template Tensor<float> topk(const Tensor<float>&, int);
template Tensor<double> topk(const Tensor<double>&, int);
template Tensor<float> mse(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> reshape(const Tensor<float>&, Dims);
template Tensor<double> reshape(const Tensor<double>&, Dims);
template Tensor<float> sum_scalars(const std::vector<Tensor<float>>&);
template Tensor<double> sum_scalars(const std::vector<Tensor<double>>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace eqsae::num
