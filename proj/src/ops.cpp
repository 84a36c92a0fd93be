#include "mtlfer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

namespace mtlfer {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace ops {
namespace {

std::string axis_error(const char* op, const char* axis, std::size_t got, std::size_t want) {
  return std::string(op) + ": " + axis + " is " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

void require_rank(const char* op, const char* name, std::size_t rank, std::size_t want) {
  if (rank != want) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(want) + ", got " + std::to_string(rank));
  }
}

template <typename T>
void require_same_shape(const char* op, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

// y += a * x
template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};
template <typename T>
using Vec64 = typename VecOf<T>::type;

template <typename T>
inline Vec64<T> load_vec(const T* p) {
  Vec64<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
inline void store_vec(T* p, const Vec64<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

// y[M×P] += a[M×K] · b[K×P]. A 4-row by one-vector tile of y stays in
// registers across the whole k loop.
template <typename T>
void gemm_rows(std::size_t M, std::size_t K, std::size_t P, const T* a, const T* b, T* y) {
  using V = Vec64<T>;
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    const T* a0 = a + m * K;
    const T* a1 = a0 + K;
    const T* a2 = a1 + K;
    const T* a3 = a2 + K;
    T* y0 = y + m * P;
    std::size_t p = 0;
    for (; p + L <= P; p += L) {
      V c0 = load_vec(y0 + p), c1 = load_vec(y0 + P + p), c2 = load_vec(y0 + 2 * P + p),
        c3 = load_vec(y0 + 3 * P + p);
      for (std::size_t k = 0; k < K; ++k) {
        const V v = load_vec(b + k * P + p);
        c0 += a0[k] * v;
        c1 += a1[k] * v;
        c2 += a2[k] * v;
        c3 += a3[k] * v;
      }
      store_vec(y0 + p, c0);
      store_vec(y0 + P + p, c1);
      store_vec(y0 + 2 * P + p, c2);
      store_vec(y0 + 3 * P + p, c3);
    }
    for (; p < P; ++p) {
      for (std::size_t r = 0; r < 4; ++r) {
        T acc = y0[r * P + p];
        for (std::size_t k = 0; k < K; ++k) acc += a[(m + r) * K + k] * b[k * P + p];
        y0[r * P + p] = acc;
      }
    }
  }
  for (; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) axpy(P, a[m * K + k], b + k * P, y + m * P);
  }
}

// y[K×P] += a[M×K]ᵀ · b[M×P], same register tiling as gemm_rows.
template <typename T>
void gemm_rows_transposed(std::size_t M, std::size_t K, std::size_t P, const T* a, const T* b, T* y) {
  using V = Vec64<T>;
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  std::size_t k = 0;
  for (; k + 4 <= K; k += 4) {
    T* y0 = y + k * P;
    std::size_t p = 0;
    for (; p + L <= P; p += L) {
      V c0 = load_vec(y0 + p), c1 = load_vec(y0 + P + p), c2 = load_vec(y0 + 2 * P + p),
        c3 = load_vec(y0 + 3 * P + p);
      for (std::size_t m = 0; m < M; ++m) {
        const V v = load_vec(b + m * P + p);
        const T* am = a + m * K + k;
        c0 += am[0] * v;
        c1 += am[1] * v;
        c2 += am[2] * v;
        c3 += am[3] * v;
      }
      store_vec(y0 + p, c0);
      store_vec(y0 + P + p, c1);
      store_vec(y0 + 2 * P + p, c2);
      store_vec(y0 + 3 * P + p, c3);
    }
    for (; p < P; ++p) {
      for (std::size_t r = 0; r < 4; ++r) {
        T acc = y0[r * P + p];
        for (std::size_t m = 0; m < M; ++m) acc += a[m * K + k + r] * b[m * P + p];
        y0[r * P + p] = acc;
      }
    }
  }
  for (; k < K; ++k) {
    for (std::size_t m = 0; m < M; ++m) axpy(P, a[m * K + k], b + m * P, y + k * P);
  }
}

template <typename T>
inline T hsum(const Vec64<T>& v) {
  T acc{0};
  for (std::size_t j = 0; j < sizeof(v) / sizeof(T); ++j) acc += v[j];
  return acc;
}

// y[M×N] += a[M×P] · b[N×P]ᵀ, as vectorized dot products over p.
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t P, const T* a, const T* b, T* y) {
  using V = Vec64<T>;
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  const std::size_t Pv = P - P % L;
  for (std::size_t m = 0; m < M; m += 2) {
    const bool two = m + 1 < M;
    const T* a0 = a + m * P;
    const T* a1 = two ? a0 + P : a0;
    for (std::size_t n = 0; n < N; n += 2) {
      const bool twon = n + 1 < N;
      const T* b0 = b + n * P;
      const T* b1 = twon ? b0 + P : b0;
      V c00{}, c01{}, c10{}, c11{};
      for (std::size_t p = 0; p < Pv; p += L) {
        const V x0 = load_vec(a0 + p), x1 = load_vec(a1 + p);
        const V z0 = load_vec(b0 + p), z1 = load_vec(b1 + p);
        c00 += x0 * z0;
        c01 += x0 * z1;
        c10 += x1 * z0;
        c11 += x1 * z1;
      }
      T s00 = hsum<T>(c00), s01 = hsum<T>(c01), s10 = hsum<T>(c10), s11 = hsum<T>(c11);
      for (std::size_t p = Pv; p < P; ++p) {
        s00 += a0[p] * b0[p];
        s01 += a0[p] * b1[p];
        s10 += a1[p] * b0[p];
        s11 += a1[p] * b1[p];
      }
      y[m * N + n] += s00;
      if (twon) y[m * N + n + 1] += s01;
      if (two) y[(m + 1) * N + n] += s10;
      if (two && twon) y[(m + 1) * N + n + 1] += s11;
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, ho, wo;
  int stride, pad;
  std::size_t patch() const { return c * k * k; }
  std::size_t positions() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kx is inside the image.
inline std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t kx) {
  const long s = g.stride, off = static_cast<long>(kx) - g.pad, w = static_cast<long>(g.w);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = w - off <= 0 ? 0 : (w - off + s - 1) / s;
  hi = std::min<long>(hi, static_cast<long>(g.wo));
  return {static_cast<std::size_t>(std::min(lo, hi)), static_cast<std::size_t>(hi)};
}

// col[(ci*k + ky)*k + kx][oy*wo + ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::size_t P = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((ci * g.k + ky) * g.k + kx) * P;
        const auto [lo, hi] = valid_cols(g, kx);
        const long off = static_cast<long>(kx) - g.pad;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + lo, T{0});
          if (g.stride == 1) {
            std::copy(src + (static_cast<long>(lo) + off), src + (static_cast<long>(hi) + off), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[static_cast<long>(ox) * g.stride + off];
          }
          std::fill(dst + hi, dst + g.wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* img) {
  const std::size_t P = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((ci * g.k + ky) * g.k + kx) * P;
        const auto [lo, hi] = valid_cols(g, kx);
        const long off = static_cast<long>(kx) - g.pad;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<long>(ox) * g.stride + off] += src[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, Tensor<T> input, Tensor<T> kernel,
                 Tensor<T> bias, int stride, int padding) {
  require_rank("conv2d", "input", input.rank(), 4);
  require_rank("conv2d", "kernel", kernel.rank(), 4);
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  if (input.dim(1) != kernel.dim(1)) {
    throw DimensionError(axis_error("conv2d", "input channel axis (1)", input.dim(1), kernel.dim(1)));
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError(axis_error("conv2d", "kernel width axis (3)", kernel.dim(3), kernel.dim(2)));
  }
  if (bias.numel() != kernel.dim(0)) {
    throw DimensionError(axis_error("conv2d", "bias length", bias.numel(), kernel.dim(0)));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  const auto span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.k);
  const auto span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.k);
  if (span_h < 0) throw DimensionError(axis_error("conv2d", "padded height (2)", g.h + 2 * padding, g.k));
  if (span_w < 0) throw DimensionError(axis_error("conv2d", "padded width (3)", g.w + 2 * padding, g.k));
  g.ho = static_cast<std::size_t>(span_h / stride + 1);
  g.wo = static_cast<std::size_t>(span_w / stride + 1);

  const std::size_t K = g.patch();
  const std::size_t P = g.positions();
  Tensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
  std::vector<T> col(K * P);
  const T* w = kernel.data();
  const T* b = bias.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, input.data() + n * g.c * g.h * g.w, col.data());
    T* y = out.data() + n * g.o * P;
    for (std::size_t o = 0; o < g.o; ++o) std::fill(y + o * P, y + (o + 1) * P, b[o]);
    gemm_rows(g.o, K, P, w, col.data(), y);
  }

  if (tape.tracks(input, kernel, bias)) {
    out.set_requires_grad(true);
    tape.record([g, input, kernel, bias, out]() mutable {
      if (!out.has_grad()) return;
      const std::size_t K = g.patch();
      const std::size_t P = g.positions();
      const T* dy = out.grad().data();
      if (bias.requires_grad()) {
        T* db = bias.grad().data();
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t o = 0; o < g.o; ++o) {
            const T* d = dy + (n * g.o + o) * P;
            T acc{0};
            for (std::size_t p = 0; p < P; ++p) acc += d[p];
            db[o] += acc;
          }
        }
      }
      if (kernel.requires_grad()) {
        T* dw = kernel.grad().data();
        std::vector<T> col(K * P);
        for (std::size_t n = 0; n < g.n; ++n) {
          im2col(g, input.data() + n * g.c * g.h * g.w, col.data());
          gemm_nt(g.o, K, P, dy + n * g.o * P, col.data(), dw);
        }
      }
      if (input.requires_grad()) {
        T* dx = input.grad().data();
        const T* w = kernel.data();
        std::vector<T> dcol(K * P);
        for (std::size_t n = 0; n < g.n; ++n) {
          std::fill(dcol.begin(), dcol.end(), T{0});
          const T* d = dy + n * g.o * P;
          gemm_rows_transposed(g.o, K, P, w, d, dcol.data());
          col2im_add(g, dcol.data(), dx + n * g.c * g.h * g.w);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, Tensor<T> input, Tensor<T> weight,
                 Tensor<T> bias) {
  require_rank("linear", "input", input.rank(), 2);
  require_rank("linear", "weight", weight.rank(), 2);
  if (input.dim(1) != weight.dim(0)) {
    throw DimensionError(axis_error("linear", "input feature axis (1)", input.dim(1), weight.dim(0)));
  }
  if (bias.numel() != weight.dim(1)) {
    throw DimensionError(axis_error("linear", "bias length", bias.numel(), weight.dim(1)));
  }
  const std::size_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
  Tensor<T> out(Shape{N, M});
  const T* x = input.data();
  const T* w = weight.data();
  for (std::size_t n = 0; n < N; ++n) {
    T* y = out.data() + n * M;
    std::copy(bias.data(), bias.data() + M, y);
    for (std::size_t d = 0; d < D; ++d) axpy(M, x[n * D + d], w + d * M, y);
  }
  if (tape.tracks(input, weight, bias)) {
    out.set_requires_grad(true);
    tape.record([=]() mutable {
      if (!out.has_grad()) return;
      const T* dy = out.grad().data();
      if (bias.requires_grad()) {
        T* db = bias.grad().data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t m = 0; m < M; ++m) db[m] += dy[n * M + m];
        }
      }
      if (weight.requires_grad()) {
        T* dw = weight.grad().data();
        const T* x = input.data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t d = 0; d < D; ++d) axpy(M, x[n * D + d], dy + n * M, dw + d * M);
        }
      }
      if (input.requires_grad()) {
        T* dx = input.grad().data();
        const T* w = weight.data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t d = 0; d < D; ++d) {
            T acc{0};
            for (std::size_t m = 0; m < M; ++m) acc += dy[n * M + m] * w[d * M + m];
            dx[n * D + d] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, Tensor<T> input) {
  Tensor<T> out(input.shape());
  auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      auto x = input.values();
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T{0}) dx[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, Tensor<T> input) {
  Tensor<T> out(input.shape());
  auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Branch on sign so exp never overflows.
    if (x[i] >= T{0}) {
      y[i] = T{1} / (T{1} + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T{1} + e);
    }
  }
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      auto y = out.values();
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, Tensor<T> input) {
  require_rank("softmax", "input", input.rank(), 2);
  const std::size_t N = input.dim(0), C = input.dim(1);
  Tensor<T> out(input.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* x = input.data() + n * C;
    T* y = out.data() + n * C;
    const T mx = *std::max_element(x, x + C);
    T total{0};
    for (std::size_t c = 0; c < C; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < C; ++c) y[c] /= total;
  }
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out, N, C]() mutable {
      if (!out.has_grad()) return;
      const T* y = out.data();
      const T* dy = out.grad().data();
      T* dx = input.grad().data();
      for (std::size_t n = 0; n < N; ++n) {
        T dot{0};
        for (std::size_t c = 0; c < C; ++c) dot += dy[n * C + c] * y[n * C + c];
        for (std::size_t c = 0; c < C; ++c) dx[n * C + c] += y[n * C + c] * (dy[n * C + c] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, Tensor<T> input) {
  require_rank("global_avg_pool", "input", input.rank(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1);
  const std::size_t HW = input.dim(2) * input.dim(3);
  Tensor<T> out(Shape{N, C});
  const T inv = T{1} / static_cast<T>(HW);
  for (std::size_t i = 0; i < N * C; ++i) {
    const T* x = input.data() + i * HW;
    T acc{0};
    for (std::size_t p = 0; p < HW; ++p) acc += x[p];
    out.data()[i] = acc * inv;
  }
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out, N, C, HW, inv]() mutable {
      if (!out.has_grad()) return;
      const T* dy = out.grad().data();
      T* dx = input.grad().data();
      for (std::size_t i = 0; i < N * C; ++i) {
        const T g = dy[i] * inv;
        for (std::size_t p = 0; p < HW; ++p) dx[i * HW + p] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_max_pool(Tape<T>& tape, Tensor<T> input) {
  require_rank("global_max_pool", "input", input.rank(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1);
  const std::size_t HW = input.dim(2) * input.dim(3);
  Tensor<T> out(Shape{N, C});
  std::vector<std::size_t> argmax(N * C);
  for (std::size_t i = 0; i < N * C; ++i) {
    const T* x = input.data() + i * HW;
    std::size_t best = 0;
    for (std::size_t p = 1; p < HW; ++p) {
      if (x[p] > x[best]) best = p;
    }
    out.data()[i] = x[best];
    argmax[i] = i * HW + best;
  }
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2x2(Tape<T>& tape, Tensor<T> input) {
  require_rank("max_pool2x2", "input", input.rank(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0) throw DimensionError("max_pool2x2: height axis (2) is odd: " + std::to_string(H));
  if (W % 2 != 0) throw DimensionError("max_pool2x2: width axis (3) is odd: " + std::to_string(W));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* x = input.data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        for (std::size_t idx : {best + 1, best + W, best + W + 1}) {
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t o = nc * Ho * Wo + oy * Wo + ox;
        out.data()[o] = x[best];
        argmax[o] = nc * H * W + best;
      }
    }
  }
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  require_rank("concat", "a", a.rank(), 2);
  require_rank("concat", "b", b.rank(), 2);
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError(axis_error("concat", "batch axis (0) of b", b.dim(0), a.dim(0)));
  }
  const std::size_t N = a.dim(0), Da = a.dim(1), Db = b.dim(1), D = Da + Db;
  Tensor<T> out(Shape{N, D});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Da, Da, out.data() + n * D);
    std::copy_n(b.data() + n * Db, Db, out.data() + n * D + Da);
  }
  if (tape.tracks(a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out, N, Da, Db, D]() mutable {
      if (!out.has_grad()) return;
      const T* dy = out.grad().data();
      if (a.requires_grad()) {
        T* da = a.grad().data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t i = 0; i < Da; ++i) da[n * Da + i] += dy[n * D + i];
        }
      }
      if (b.requires_grad()) {
        T* db = b.grad().data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t i = 0; i < Db; ++i) db[n * Db + i] += dy[n * D + Da + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, Tensor<T> input) {
  T acc{0};
  for (T v : input.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (T& d : input.grad()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape.tracks(a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape.tracks(a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        auto av = a.values();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, Tensor<T> input, T factor) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = input.data()[i] * factor;
  if (tape.tracks(input)) {
    out.set_requires_grad(true);
    tape.record([input, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = input.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_gate(Tape<T>& tape, Tensor<T> feat, Tensor<T> gates) {
  require_rank("channel_gate", "feat", feat.rank(), 4);
  require_rank("channel_gate", "gates", gates.rank(), 2);
  if (gates.dim(0) != feat.dim(0)) {
    throw DimensionError(axis_error("channel_gate", "gates batch axis (0)", gates.dim(0), feat.dim(0)));
  }
  if (gates.dim(1) != feat.dim(1)) {
    throw DimensionError(axis_error("channel_gate", "gates channel axis (1)", gates.dim(1), feat.dim(1)));
  }
  const std::size_t NC = feat.dim(0) * feat.dim(1);
  const std::size_t HW = feat.dim(2) * feat.dim(3);
  Tensor<T> out(feat.shape());
  for (std::size_t i = 0; i < NC; ++i) {
    const T g = gates.data()[i];
    for (std::size_t p = 0; p < HW; ++p) out.data()[i * HW + p] = feat.data()[i * HW + p] * g;
  }
  if (tape.tracks(feat, gates)) {
    out.set_requires_grad(true);
    tape.record([feat, gates, out, NC, HW]() mutable {
      if (!out.has_grad()) return;
      const T* dy = out.grad().data();
      if (feat.requires_grad()) {
        T* dx = feat.grad().data();
        for (std::size_t i = 0; i < NC; ++i) axpy(HW, gates.data()[i], dy + i * HW, dx + i * HW);
      }
      if (gates.requires_grad()) {
        T* dg = gates.grad().data();
        const T* x = feat.data();
        for (std::size_t i = 0; i < NC; ++i) {
          T acc{0};
          for (std::size_t p = 0; p < HW; ++p) acc += dy[i * HW + p] * x[i * HW + p];
          dg[i] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> spatial_gate(Tape<T>& tape, Tensor<T> feat, Tensor<T> map) {
  require_rank("spatial_gate", "feat", feat.rank(), 4);
  require_rank("spatial_gate", "map", map.rank(), 4);
  if (map.dim(0) != feat.dim(0)) {
    throw DimensionError(axis_error("spatial_gate", "map batch axis (0)", map.dim(0), feat.dim(0)));
  }
  if (map.dim(1) != 1) throw DimensionError(axis_error("spatial_gate", "map channel axis (1)", map.dim(1), 1));
  if (map.dim(2) != feat.dim(2)) {
    throw DimensionError(axis_error("spatial_gate", "map height axis (2)", map.dim(2), feat.dim(2)));
  }
  if (map.dim(3) != feat.dim(3)) {
    throw DimensionError(axis_error("spatial_gate", "map width axis (3)", map.dim(3), feat.dim(3)));
  }
  const std::size_t N = feat.dim(0), C = feat.dim(1);
  const std::size_t HW = feat.dim(2) * feat.dim(3);
  Tensor<T> out(feat.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* m = map.data() + n * HW;
    for (std::size_t c = 0; c < C; ++c) {
      const T* x = feat.data() + (n * C + c) * HW;
      T* y = out.data() + (n * C + c) * HW;
      for (std::size_t p = 0; p < HW; ++p) y[p] = x[p] * m[p];
    }
  }
  if (tape.tracks(feat, map)) {
    out.set_requires_grad(true);
    tape.record([feat, map, out, N, C, HW]() mutable {
      if (!out.has_grad()) return;
      const T* dy = out.grad().data();
      if (feat.requires_grad()) {
        T* dx = feat.grad().data();
        for (std::size_t n = 0; n < N; ++n) {
          const T* m = map.data() + n * HW;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t p = 0; p < HW; ++p) dx[off + p] += dy[off + p] * m[p];
          }
        }
      }
      if (map.requires_grad()) {
        T* dm = map.grad().data();
        const T* x = feat.data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t p = 0; p < HW; ++p) dm[n * HW + p] += dy[off + p] * x[off + p];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_of(Tape<T>& tape, std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw UsageError("mean_of: empty input list");
  for (std::size_t i = 1; i < inputs.size(); ++i) require_same_shape("mean_of", inputs[0], inputs[i]);
  const T inv = T{1} / static_cast<T>(inputs.size());
  Tensor<T> out(inputs[0].shape());
  auto y = out.values();
  for (const auto& t : inputs) {
    auto x = t.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  }
  for (T& v : y) v *= inv;
  bool track = false;
  for (const auto& t : inputs) track = track || tape.tracks(t);
  if (track) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> held(inputs.begin(), inputs.end());
    tape.record([held = std::move(held), out, inv]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      for (auto& t : held) {
        if (!t.requires_grad()) continue;
        auto dx = t.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * inv;
      }
    });
  }
  return out;
}

#define MTLFER_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> conv2d(Tape<T>&, Tensor<T>, Tensor<T>, Tensor<T>,   \
                            int, int);                                                        \
  template Tensor<T> linear(Tape<T>&, Tensor<T>, Tensor<T>, Tensor<T>);  \
  template Tensor<T> relu(Tape<T>&, Tensor<T>);                                        \
  template Tensor<T> sigmoid(Tape<T>&, Tensor<T>);                                     \
  template Tensor<T> softmax(Tape<T>&, Tensor<T>);                                     \
  template Tensor<T> global_avg_pool(Tape<T>&, Tensor<T>);                             \
  template Tensor<T> global_max_pool(Tape<T>&, Tensor<T>);                             \
  template Tensor<T> max_pool2x2(Tape<T>&, Tensor<T>);                                 \
  template Tensor<T> concat(Tape<T>&, Tensor<T>, Tensor<T>);                    \
  template Tensor<T> sum(Tape<T>&, Tensor<T>);                                         \
  template Tensor<T> add(Tape<T>&, Tensor<T>, Tensor<T>);                       \
  template Tensor<T> mul(Tape<T>&, Tensor<T>, Tensor<T>);                       \
  template Tensor<T> scale(Tape<T>&, Tensor<T>, T);                                    \
  template Tensor<T> channel_gate(Tape<T>&, Tensor<T>, Tensor<T>);              \
  template Tensor<T> spatial_gate(Tape<T>&, Tensor<T>, Tensor<T>);              \
  template Tensor<T> mean_of(Tape<T>&, std::span<const Tensor<T>>);

MTLFER_INSTANTIATE_OPS(float)
MTLFER_INSTANTIATE_OPS(double)

#undef MTLFER_INSTANTIATE_OPS

}  // namespace ops
}  // namespace mtlfer
