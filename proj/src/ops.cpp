#include "mecasa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <cblas.h>

namespace mecasa {

namespace {

thread_local bool g_count_enabled = false;
thread_local std::uint64_t g_count_total = 0;

std::string axis_name(std::size_t axis) {
  static const char* names[] = {"batch", "channel", "height", "width"};
  return axis < 4 ? std::string(names[axis]) + " axis (" + std::to_string(axis) + ")"
                  : "axis " + std::to_string(axis);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (!t.defined()) throw std::invalid_argument(std::string(what) + " is undefined");
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
}

struct ConvGeom {
  std::size_t batch, cin, h, w;
  std::size_t cout, cig, cog, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

/// Half-open range of output positions whose tap `k` lands inside [0, len).
std::pair<std::size_t, std::size_t> valid_range(std::size_t len, std::size_t k, std::size_t stride,
                                                std::size_t pad, std::size_t out_len) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  // need 0 <= o*s + off <= len-1
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t hi_incl = (static_cast<std::ptrdiff_t>(len) - 1 - off);
  if (hi_incl < 0) return {0, 0};
  std::ptrdiff_t hi = hi_incl / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_len));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void direct_conv_forward(const ConvGeom& g, const double* in, const double* wt, const double* bias, double* out) {
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t plane_in = g.h * g.w;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const std::size_t grp = co / g.cog;
      double* op = out + (b * g.cout + co) * plane_out;
      if (bias) std::fill(op, op + plane_out, bias[co]);
      for (std::size_t cl = 0; cl < g.cig; ++cl) {
        const std::size_t ci = grp * g.cig + cl;
        const double* ip = in + (b * g.cin + ci) * plane_in;
        const double* wp = wt + (co * g.cig + cl) * g.kh * g.kw;
        if (g.pointwise()) {
          const double wv = wp[0];
          for (std::size_t i = 0; i < plane_in; ++i) op[i] += wv * ip[i];
          continue;
        }
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = valid_range(g.h, ky, g.stride, g.pad, g.ho);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto [ox0, ox1] = valid_range(g.w, kx, g.stride, g.pad, g.wo);
            const double wv = wp[ky * g.kw + kx];
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              double* dst = op + oy * g.wo + ox0;
              const double* src = ip + iy * g.w + (ox0 * g.stride + kx - g.pad);
              const std::size_t cnt = ox1 - ox0;
              if (g.stride == 1) {
                for (std::size_t j = 0; j < cnt; ++j) dst[j] += wv * src[j];
              } else {
                for (std::size_t j = 0; j < cnt; ++j) dst[j] += wv * src[j * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

void direct_conv_backward(const ConvGeom& g, const double* in, const double* wt, const double* gout, double* gin,
                   double* gwt, double* gbias) {
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t plane_in = g.h * g.w;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const std::size_t grp = co / g.cog;
      const double* gp = gout + (b * g.cout + co) * plane_out;
      if (gbias) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane_out; ++i) s += gp[i];
        gbias[co] += s;
      }
      for (std::size_t cl = 0; cl < g.cig; ++cl) {
        const std::size_t ci = grp * g.cig + cl;
        const double* ip = in + (b * g.cin + ci) * plane_in;
        double* gip = gin ? gin + (b * g.cin + ci) * plane_in : nullptr;
        const double* wp = wt + (co * g.cig + cl) * g.kh * g.kw;
        double* gwp = gwt ? gwt + (co * g.cig + cl) * g.kh * g.kw : nullptr;
        if (g.pointwise()) {
          if (gip) {
            const double wv = wp[0];
            for (std::size_t i = 0; i < plane_in; ++i) gip[i] += wv * gp[i];
          }
          if (gwp) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane_in; ++i) s += gp[i] * ip[i];
            gwp[0] += s;
          }
          continue;
        }
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = valid_range(g.h, ky, g.stride, g.pad, g.ho);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto [ox0, ox1] = valid_range(g.w, kx, g.stride, g.pad, g.wo);
            const double wv = wp[ky * g.kw + kx];
            double acc = 0.0;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const double* grow = gp + oy * g.wo + ox0;
              const std::size_t ioff = iy * g.w + (ox0 * g.stride + kx - g.pad);
              const std::size_t cnt = ox1 - ox0;
              if (gip) {
                double* girow = gip + ioff;
                for (std::size_t j = 0; j < cnt; ++j) girow[j * g.stride] += wv * grow[j];
              }
              if (gwp) {
                const double* irow = ip + ioff;
                for (std::size_t j = 0; j < cnt; ++j) acc += grow[j] * irow[j * g.stride];
              }
            }
            if (gwp) gwp[ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}


// Row-major GEMM wrappers accumulating into C. OpenBLAS is pinned to one
// thread so results do not depend on the host's core count.
void pin_blas_threads() {
  static const bool pinned = (openblas_set_num_threads(1), true);
  (void)pinned;
}

// C[M,N] += A[M,K] B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(n), 1.0, c,
              int(n));
}

// C[M,N] += A[M,K] B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(k), 1.0, c,
              int(n));
}

// C[M,N] += A[K,M]^T B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(m), b, int(n), 1.0, c,
              int(n));
}

/// Unfolds the input channels of one group into col[cig*kh*kw, ho*wo].
void im2col(const ConvGeom& g, const double* in, double* col) {
  const std::size_t plane_out = g.ho * g.wo;
  std::fill(col, col + g.cig * g.kh * g.kw * plane_out, 0.0);
  for (std::size_t cl = 0; cl < g.cig; ++cl) {
    const double* ip = in + cl * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(g.h, ky, g.stride, g.pad, g.ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [ox0, ox1] = valid_range(g.w, kx, g.stride, g.pad, g.wo);
        double* row = col + ((cl * g.kh + ky) * g.kw + kx) * plane_out;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const double* src = ip + (oy * g.stride + ky - g.pad) * g.w + (ox0 * g.stride + kx - g.pad);
          double* dst = row + oy * g.wo + ox0;
          for (std::size_t j = 0; j < ox1 - ox0; ++j) dst[j] = src[j * g.stride];
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* gin) {
  const std::size_t plane_out = g.ho * g.wo;
  for (std::size_t cl = 0; cl < g.cig; ++cl) {
    double* gp = gin + cl * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(g.h, ky, g.stride, g.pad, g.ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [ox0, ox1] = valid_range(g.w, kx, g.stride, g.pad, g.wo);
        const double* row = col + ((cl * g.kh + ky) * g.kw + kx) * plane_out;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          double* dst = gp + (oy * g.stride + ky - g.pad) * g.w + (ox0 * g.stride + kx - g.pad);
          const double* src = row + oy * g.wo + ox0;
          for (std::size_t j = 0; j < ox1 - ox0; ++j) dst[j * g.stride] += src[j];
        }
      }
    }
  }
}

/// Multiply-accumulates that land inside the input (padding taps excluded).
std::uint64_t executed_taps(const ConvGeom& g) {
  std::uint64_t per_map = 0;
  for (std::size_t ky = 0; ky < g.kh; ++ky) {
    const auto [oy0, oy1] = valid_range(g.h, ky, g.stride, g.pad, g.ho);
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      const auto [ox0, ox1] = valid_range(g.w, kx, g.stride, g.pad, g.wo);
      per_map += (oy1 - oy0) * (ox1 - ox0);
    }
  }
  return per_map * g.batch * g.cout * g.cig;
}

bool depthwise(const ConvGeom& g) { return g.cig == 1 && g.cog == 1; }

/// Copies one plane into a zero border of width g.pad.
void pad_plane(const ConvGeom& g, const double* src, double* dst) {
  const std::size_t pw = g.w + 2 * g.pad;
  std::fill(dst, dst + (g.h + 2 * g.pad) * pw, 0.0);
  for (std::size_t y = 0; y < g.h; ++y) std::copy(src + y * g.w, src + (y + 1) * g.w, dst + (y + g.pad) * pw + g.pad);
}

// Stride-1 depthwise kernels over zero-padded planes.
void depthwise_forward(const ConvGeom& g, const double* in, const double* wt, const double* bias, double* out) {
  const std::size_t pw = g.w + 2 * g.pad;
  std::vector<double> padded((g.h + 2 * g.pad) * pw);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.cout; ++c) {
      pad_plane(g, in + (b * g.cin + c) * g.h * g.w, padded.data());
      double* op = out + (b * g.cout + c) * g.ho * g.wo;
      std::fill(op, op + g.ho * g.wo, bias ? bias[c] : 0.0);
      const double* wp = wt + c * g.kh * g.kw;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        double* row = op + oy * g.wo;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const double* src = padded.data() + (oy + ky) * pw;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const double wv = wp[ky * g.kw + kx];
            const double* s = src + kx;
            for (std::size_t j = 0; j < g.wo; ++j) row[j] += wv * s[j];
          }
        }
      }
    }
}

void depthwise_backward(const ConvGeom& g, const double* in, const double* wt, const double* gout, double* gin,
                        double* gwt, double* gbias) {
  const std::size_t pw = g.w + 2 * g.pad;
  const std::size_t ph = g.h + 2 * g.pad;
  std::vector<double> padded(ph * pw), gpad(ph * pw);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.cout; ++c) {
      const double* gp = gout + (b * g.cout + c) * g.ho * g.wo;
      const double* wp = wt + c * g.kh * g.kw;
      if (gbias) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) s += gp[i];
        gbias[c] += s;
      }
      if (gwt) {
        pad_plane(g, in + (b * g.cin + c) * g.h * g.w, padded.data());
        double* gwp = gwt + c * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky)
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            double acc = 0.0;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              const double* s = padded.data() + (oy + ky) * pw + kx;
              const double* gr = gp + oy * g.wo;
              for (std::size_t j = 0; j < g.wo; ++j) acc += gr[j] * s[j];
            }
            gwp[ky * g.kw + kx] += acc;
          }
      }
      if (gin) {
        std::fill(gpad.begin(), gpad.end(), 0.0);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const double* gr = gp + oy * g.wo;
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            double* d = gpad.data() + (oy + ky) * pw;
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const double wv = wp[ky * g.kw + kx];
              double* dk = d + kx;
              for (std::size_t j = 0; j < g.wo; ++j) dk[j] += wv * gr[j];
            }
          }
        }
        double* gi = gin + (b * g.cin + c) * g.h * g.w;
        for (std::size_t y = 0; y < g.h; ++y) {
          const double* src = gpad.data() + (y + g.pad) * pw + g.pad;
          for (std::size_t x = 0; x < g.w; ++x) gi[y * g.w + x] += src[x];
        }
      }
    }
}

void conv_forward(const ConvGeom& g, const double* in, const double* wt, const double* bias, double* out) {
  detail::count_ops(executed_taps(g) + (bias ? g.batch * g.cout * g.ho * g.wo : 0));
  if (depthwise(g) && g.stride == 1) return depthwise_forward(g, in, wt, bias, out);
  if (depthwise(g)) return direct_conv_forward(g, in, wt, bias, out);
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t kdim = g.cig * g.kh * g.kw;
  const std::size_t groups = g.cin / g.cig;
  std::vector<double> col(g.pointwise() ? 0 : kdim * plane_out);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const double* ib = in + (b * g.cin + grp * g.cig) * g.h * g.w;
      double* ob = out + (b * g.cout + grp * g.cog) * plane_out;
      if (bias)
        for (std::size_t co = 0; co < g.cog; ++co) std::fill(ob + co * plane_out, ob + (co + 1) * plane_out, bias[grp * g.cog + co]);
      const double* cp = ib;
      if (!g.pointwise()) {
        im2col(g, ib, col.data());
        cp = col.data();
      }
      gemm_nn(g.cog, plane_out, kdim, wt + grp * g.cog * kdim, cp, ob);
    }
}

void conv_backward(const ConvGeom& g, const double* in, const double* wt, const double* gout, double* gin,
                   double* gwt, double* gbias) {
  if (depthwise(g) && g.stride == 1) return depthwise_backward(g, in, wt, gout, gin, gwt, gbias);
  if (depthwise(g)) return direct_conv_backward(g, in, wt, gout, gin, gwt, gbias);
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t kdim = g.cig * g.kh * g.kw;
  const std::size_t groups = g.cin / g.cig;
  std::vector<double> col(g.pointwise() ? 0 : kdim * plane_out);
  std::vector<double> gcol(g.pointwise() || !gin ? 0 : kdim * plane_out);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const double* ib = in + (b * g.cin + grp * g.cig) * g.h * g.w;
      const double* gb = gout + (b * g.cout + grp * g.cog) * plane_out;
      const double* wg = wt + grp * g.cog * kdim;
      if (gbias)
        for (std::size_t co = 0; co < g.cog; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane_out; ++i) s += gb[co * plane_out + i];
          gbias[grp * g.cog + co] += s;
        }
      if (gwt) {
        const double* cp = ib;
        if (!g.pointwise()) {
          im2col(g, ib, col.data());
          cp = col.data();
        }
        gemm_nt(g.cog, kdim, plane_out, gb, cp, gwt + grp * g.cog * kdim);
      }
      if (gin) {
        double* gi = gin + (b * g.cin + grp * g.cig) * g.h * g.w;
        if (g.pointwise()) {
          gemm_tn(kdim, plane_out, g.cog, wg, gb, gi);
        } else {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          gemm_tn(kdim, plane_out, g.cog, wg, gb, gcol.data());
          col2im_add(g, gcol.data(), gi);
        }
      }
    }
}

/// Strides of `b` viewed as broadcast against `a` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  std::vector<std::size_t> strides(a.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = a.size(); i-- > 0;) {
    if (b[i] == a[i]) {
      strides[i] = b[i] == 1 ? 0 : s;
    } else if (b[i] != 1) {
      throw ShapeError(std::string(op) + ": " + axis_name(i) + " mismatch " + to_string(a) + " vs " +
                       to_string(b));
    }
    s *= b[i];
  }
  return strides;
}

/// Calls fn(out_index, b_index) for every element of `shape`.
template <class Fn>
void for_each_broadcast(const Shape& shape, const std::vector<std::size_t>& bstrides, Fn&& fn) {
  const std::size_t rank = shape.size();
  if (rank == 0) return;
  const std::size_t inner = shape[rank - 1];
  const std::size_t inner_stride = bstrides[rank - 1];
  const std::size_t total = numel(shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t boff = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(base + j, boff + j * inner_stride);
    // advance the odometer over all but the innermost axis
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < shape[ax]) {
        boff += bstrides[ax];
        break;
      }
      boff -= bstrides[ax] * (shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace

namespace detail {
void count_ops(std::uint64_t n) {
  if (g_count_enabled) g_count_total += n;
}
}  // namespace detail

OpCounter::OpCounter() : previous_enabled_(g_count_enabled), start_(g_count_total) { g_count_enabled = true; }
OpCounter::~OpCounter() { g_count_enabled = previous_enabled_; }
std::uint64_t OpCounter::count() const { return g_count_total - start_; }

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv stride must be >= 1");
  if (in + 2 * padding < kernel)
    throw ShapeError("padded extent " + std::to_string(in + 2 * padding) + " smaller than kernel " +
                     std::to_string(kernel));
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (opts.groups == 0) throw std::invalid_argument("conv2d groups must be >= 1");
  if (opts.stride == 0) throw std::invalid_argument("conv2d stride must be >= 1");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  ConvGeom g{};
  g.batch = is[0];
  g.cin = is[1];
  g.h = is[2];
  g.w = is[3];
  g.cout = ws[0];
  g.cig = ws[1];
  g.kh = ws[2];
  g.kw = ws[3];
  g.stride = opts.stride;
  g.pad = opts.padding;
  if (g.cin % opts.groups != 0)
    throw ShapeError("conv2d: input " + axis_name(1) + " extent " + std::to_string(g.cin) +
                     " not divisible by groups " + std::to_string(opts.groups));
  if (g.cout % opts.groups != 0)
    throw ShapeError("conv2d: weight output-channel axis (0) extent " + std::to_string(g.cout) +
                     " not divisible by groups " + std::to_string(opts.groups));
  if (g.cig != g.cin / opts.groups)
    throw ShapeError("conv2d: weight input-channel axis (1) is " + std::to_string(g.cig) + ", expected " +
                     std::to_string(g.cin / opts.groups));
  if (g.h + 2 * g.pad < g.kh)
    throw ShapeError("conv2d: input " + axis_name(2) + " extent " + std::to_string(g.h) +
                     " too small for kernel " + std::to_string(g.kh));
  if (g.w + 2 * g.pad < g.kw)
    throw ShapeError("conv2d: input " + axis_name(3) + " extent " + std::to_string(g.w) +
                     " too small for kernel " + std::to_string(g.kw));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " +
                     to_string(bias.shape()));
  g.cog = g.cout / opts.groups;
  g.ho = conv_out_extent(g.h, g.kh, g.stride, g.pad);
  g.wo = conv_out_extent(g.w, g.kw, g.stride, g.pad);

  std::vector<double> out(g.batch * g.cout * g.ho * g.wo, 0.0);
  conv_forward(g, input.data().data(), weight.data().data(), bias.defined() ? bias.data().data() : nullptr,
               out.data());
  Tensor result = detail::make_result({g.batch, g.cout, g.ho, g.wo}, std::move(out));
  detail::record("conv2d", {&input, &weight, &bias}, result, [input, weight, bias, g](const TapeNode& n) {
    double* gin = input.requires_grad() ? detail::grad_buffer(*input.impl()).data() : nullptr;
    double* gwt = weight.requires_grad() ? detail::grad_buffer(*weight.impl()).data() : nullptr;
    double* gb = bias.defined() && bias.requires_grad() ? detail::grad_buffer(*bias.impl()).data() : nullptr;
    conv_backward(g, input.data().data(), weight.data().data(), n.output->grad.data(), gin, gwt, gb);
  });
  return result;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din)
    throw ShapeError("linear: weight axis 1 is " + std::to_string(weight.dim(1)) + ", input feature axis is " +
                     std::to_string(din));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout))
    throw ShapeError("linear: bias must have shape [" + std::to_string(dout) + "], got " + to_string(bias.shape()));
  const double* x = input.data().data();
  const double* w = weight.data().data();
  std::vector<double> out(batch * dout);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < dout; ++o) {
      double s = bias.defined() ? bias[o] : 0.0;
      const double* wr = w + o * din;
      const double* xr = x + b * din;
      for (std::size_t i = 0; i < din; ++i) s += wr[i] * xr[i];
      out[b * dout + o] = s;
    }
  detail::count_ops(batch * dout * din + (bias.defined() ? batch * dout : 0));
  Tensor result = detail::make_result({batch, dout}, std::move(out));
  detail::record("linear", {&input, &weight, &bias}, result, [input, weight, bias, batch, din, dout](const TapeNode& n) {
    const double* gy = n.output->grad.data();
    const double* x = input.data().data();
    const double* w = weight.data().data();
    if (input.requires_grad()) {
      auto gx = detail::grad_buffer(*input.impl());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < dout; ++o) {
          const double gv = gy[b * dout + o];
          const double* wr = w + o * din;
          double* gxr = gx.data() + b * din;
          for (std::size_t i = 0; i < din; ++i) gxr[i] += gv * wr[i];
        }
    }
    if (weight.requires_grad()) {
      auto gw = detail::grad_buffer(*weight.impl());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < dout; ++o) {
          const double gv = gy[b * dout + o];
          const double* xr = x + b * din;
          double* gwr = gw.data() + o * din;
          for (std::size_t i = 0; i < din; ++i) gwr[i] += gv * xr[i];
        }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = detail::grad_buffer(*bias.impl());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < dout; ++o) gb[o] += gy[b * dout + o];
    }
  });
  return result;
}

Tensor relu(const Tensor& x) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  detail::count_ops(xs.size());
  Tensor result = detail::make_result(x.shape(), std::move(out));
  detail::record("relu", {&x}, result, [x](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    auto xs = x.data();
    const auto& gy = n.output->grad;
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += xs[i] > 0.0 ? gy[i] : 0.0;
  });
  return result;
}

Tensor sigmoid(const Tensor& x) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = xs[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  detail::count_ops(xs.size());
  Tensor result = detail::make_result(x.shape(), std::move(out));
  detail::record("sigmoid", {&x}, result, [x](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    const auto& y = n.output->data;
    const auto& gy = n.output->grad;
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
  });
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xs[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  detail::count_ops(3 * xs.size());
  Tensor result = detail::make_result(s, std::move(out));
  detail::record("softmax", {&x}, result, [x, outer, inner, n](const TapeNode& node) {
    auto gx = detail::grad_buffer(*x.impl());
    const auto& y = node.output->data;
    const auto& gy = node.output->grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] += y[k] * (gy[k] - dot);
        }
      }
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  const bool same = same_shape(a, b);
  std::vector<std::size_t> strides;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  } else {
    strides = broadcast_strides(a.shape(), b.shape(), "add");
    for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = ad[i] + bd[j]; });
  }
  detail::count_ops(out.size());
  Tensor result = detail::make_result(a.shape(), std::move(out));
  detail::record("add", {&a, &b}, result, [a, b, same, strides](const TapeNode& n) {
    const auto& gy = n.output->grad;
    if (a.requires_grad()) {
      auto ga = detail::grad_buffer(*a.impl());
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = detail::grad_buffer(*b.impl());
      if (same) {
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      } else {
        for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { gb[j] += gy[i]; });
      }
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  const bool same = same_shape(a, b);
  std::vector<std::size_t> strides;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  } else {
    strides = broadcast_strides(a.shape(), b.shape(), "mul");
    for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = ad[i] * bd[j]; });
  }
  detail::count_ops(out.size());
  Tensor result = detail::make_result(a.shape(), std::move(out));
  detail::record("mul", {&a, &b}, result, [a, b, same, strides](const TapeNode& n) {
    const auto& gy = n.output->grad;
    auto ad = a.data();
    auto bd = b.data();
    if (a.requires_grad()) {
      auto ga = detail::grad_buffer(*a.impl());
      if (same) {
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bd[i];
      } else {
        for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { ga[i] += gy[i] * bd[j]; });
      }
    }
    if (b.requires_grad()) {
      auto gb = detail::grad_buffer(*b.impl());
      if (same) {
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * ad[i];
      } else {
        for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { gb[j] += gy[i] * ad[i]; });
      }
    }
  });
  return result;
}

Tensor scale(const Tensor& x, double factor) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * factor;
  detail::count_ops(xs.size());
  Tensor result = detail::make_result(x.shape(), std::move(out));
  detail::record("scale", {&x}, result, [x, factor](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    const auto& gy = n.output->grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
  return result;
}

Tensor sum(const Tensor& x) {
  auto xs = x.data();
  const double s = std::accumulate(xs.begin(), xs.end(), 0.0);
  detail::count_ops(xs.size());
  Tensor result = detail::make_result({1}, {s});
  detail::record("sum", {&x}, result, [x](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    const double g = n.output->grad[0];
    for (auto& v : gx) v += g;
  });
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool input");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto xs = x.data();
  std::vector<double> out(batch * ch);
  for (std::size_t i = 0; i < batch * ch; ++i) {
    double s = 0.0;
    const double* p = xs.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    out[i] = s / static_cast<double>(plane);
  }
  detail::count_ops(xs.size());
  Tensor result = detail::make_result({batch, ch}, std::move(out));
  detail::record("global_avg_pool", {&x}, result, [x, plane](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    const auto& gy = n.output->grad;
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double g = gy[i] * inv;
      double* p = gx.data() + i * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += g;
    }
  });
  return result;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != bs.size())
    throw ShapeError("concat: rank mismatch " + to_string(as) + " vs " + to_string(bs));
  if (axis >= as.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis && as[i] != bs[i])
      throw ShapeError("concat: " + axis_name(i) + " mismatch " + to_string(as) + " vs " + to_string(bs));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
  for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
  const std::size_t na = as[axis] * inner, nb = bs[axis] * inner;
  Shape os = as;
  os[axis] = as[axis] + bs[axis];
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(outer * (na + nb));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.data() + o * na, na, out.data() + o * (na + nb));
    std::copy_n(bd.data() + o * nb, nb, out.data() + o * (na + nb) + na);
  }
  Tensor result = detail::make_result(std::move(os), std::move(out));
  detail::record("concat", {&a, &b}, result, [a, b, outer, na, nb](const TapeNode& n) {
    const auto& gy = n.output->grad;
    if (a.requires_grad()) {
      auto ga = detail::grad_buffer(*a.impl());
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < na; ++j) ga[o * na + j] += gy[o * (na + nb) + j];
    }
    if (b.requires_grad()) {
      auto gb = detail::grad_buffer(*b.impl());
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < nb; ++j) gb[o * nb + j] += gy[o * (na + nb) + na + j];
    }
  });
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  auto xs = x.data();
  Tensor result = detail::make_result(std::move(shape), std::vector<double>(xs.begin(), xs.end()));
  detail::record("reshape", {&x}, result, [x](const TapeNode& n) {
    auto gx = detail::grad_buffer(*x.impl());
    const auto& gy = n.output->grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
  return result;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_loss logits");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch)
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch axis (0) of " +
                     std::to_string(batch));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw std::out_of_range("cross_entropy_loss: label " + std::to_string(l) + " outside [0," +
                              std::to_string(k) + ")");
  auto z = logits.data();
  std::vector<double> probs(batch * k);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= static_cast<double>(batch);
  Tensor result = detail::make_result({1}, {loss});
  std::vector<int> lab(labels.begin(), labels.end());
  detail::record("cross_entropy_loss", {&logits}, result,
                 [logits, probs = std::move(probs), lab = std::move(lab), batch, k](const TapeNode& n) {
                   auto gz = detail::grad_buffer(*logits.impl());
                   const double g = n.output->grad[0] / static_cast<double>(batch);
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t j = 0; j < k; ++j) {
                       const double target = static_cast<std::size_t>(lab[b]) == j ? 1.0 : 0.0;
                       gz[b * k + j] += g * (probs[b * k + j] - target);
                     }
                 });
  return result;
}

}  // namespace mecasa
