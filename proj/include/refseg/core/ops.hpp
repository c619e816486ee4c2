#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "refseg/core/tape.hpp"

// Differentiable tensor ops. Each op computes its value eagerly and pushes
// a backward closure that accumulates into the parents' gradients. Heavy
// ops (matmul, batched matmul, conv im2col) go through Eigen GEMM.

namespace refseg::ops {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return MatMap<T>(t.data(), rows, cols);
}

template <typename T>
CMatMap<T> as_cmat(const Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return CMatMap<T>(t.data(), rows, cols);
}

// rows = product of all dims but the last
template <typename T>
std::int64_t lead_rows(const Tensor<T>& t) {
  return t.size() / t.dim(t.rank() - 1);
}

}  // namespace detail

// ---------------------------------------------------------------- basics

template <typename T>
int add(Tape<T>& tape, int a, int b) {
  detail::require(tape.value(a).same_shape(tape.value(b)), "add: shape mismatch");
  Tensor<T> out = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return tape.push(std::move(out), [a, b](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& ga = tp.grad(a);
    Tensor<T>& gb = tp.grad(b);
    for (std::int64_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
int add_n(Tape<T>& tape, std::vector<int> ids) {
  detail::require(!ids.empty(), "add_n: empty");
  Tensor<T> out = tape.value(ids[0]);
  for (std::size_t j = 1; j < ids.size(); ++j) {
    const Tensor<T>& v = tape.value(ids[j]);
    detail::require(v.same_shape(out), "add_n: shape mismatch");
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return tape.push(std::move(out), [ids = std::move(ids)](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    for (int id : ids) {
      Tensor<T>& gi = tp.grad(id);
      for (std::int64_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
int scale(Tape<T>& tape, int a, T c) {
  Tensor<T> out = tape.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  return tape.push(std::move(out), [a, c](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

template <typename T>
int mul(Tape<T>& tape, int a, int b) {
  detail::require(tape.value(a).same_shape(tape.value(b)), "mul: shape mismatch");
  Tensor<T> out = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return tape.push(std::move(out), [a, b](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& va = tp.value(a);
    const Tensor<T>& vb2 = tp.value(b);
    Tensor<T>& ga = tp.grad(a);
    Tensor<T>& gb = tp.grad(b);
    for (std::int64_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb2[i];
      gb[i] += g[i] * va[i];
    }
  });
}

template <typename T>
int sum_all(Tape<T>& tape, int a) {
  T s = 0;
  const Tensor<T>& v = tape.value(a);
  for (std::int64_t i = 0; i < v.size(); ++i) s += v[i];
  return tape.push(Tensor<T>::scalar(s), [a](Tape<T>& tp, int self) {
    const T g = tp.grad(self)[0];
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename T>
int relu(Tape<T>& tape, int a) {
  Tensor<T> out = tape.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
  return tape.push(std::move(out), [a](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& x = tp.value(a);
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) ga[i] += g[i];
  });
}

template <typename T>
int sigmoid(Tape<T>& tape, int a) {
  Tensor<T> out = tape.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const T x = out[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  return tape.push(std::move(out), [a](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& y = tp.value(self);
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
int reshape(Tape<T>& tape, int a, std::vector<int> shape) {
  Tensor<T> out = tape.value(a).reshaped(std::move(shape));
  return tape.push(std::move(out), [a](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------- matmul

template <typename T>
int matmul(Tape<T>& tape, int a, int b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  detail::require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), "matmul: bad shapes");
  const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor<T> out({m, n});
  detail::as_mat(out, m, n).noalias() = detail::as_cmat(va, m, k) * detail::as_cmat(vb, k, n);
  return tape.push(std::move(out), [a, b, m, k, n](Tape<T>& tp, int self) {
    CMatMap<T> g(tp.grad(self).data(), m, n);
    CMatMap<T> A(tp.value(a).data(), m, k);
    CMatMap<T> B(tp.value(b).data(), k, n);
    MatMap<T>(tp.grad(a).data(), m, k).noalias() += g * B.transpose();
    MatMap<T>(tp.grad(b).data(), k, n).noalias() += A.transpose() * g;
  });
}

// y = x.W + b on the trailing dim; leading dims preserved.
template <typename T>
int linear(Tape<T>& tape, int x, int w, int b) {
  const Tensor<T>& vx = tape.value(x);
  const Tensor<T>& vw = tape.value(w);
  const Tensor<T>& vb = tape.value(b);
  const int k = vx.dim(vx.rank() - 1);
  detail::require(vw.rank() == 2 && vw.dim(0) == k, "linear: weight shape");
  const int n = vw.dim(1);
  detail::require(vb.rank() == 1 && vb.dim(0) == n, "linear: bias shape");
  const std::int64_t rows = detail::lead_rows(vx);

  std::vector<int> out_shape = vx.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  detail::as_mat(out, rows, n).noalias() = detail::as_cmat(vx, rows, k) * detail::as_cmat(vw, k, n);
  {
    MatMap<T> om = detail::as_mat(out, rows, n);
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c) om(r, c) += vb[c];
  }
  return tape.push(std::move(out), [x, w, b, rows, k, n](Tape<T>& tp, int self) {
    CMatMap<T> g(tp.grad(self).data(), rows, n);
    CMatMap<T> X(tp.value(x).data(), rows, k);
    CMatMap<T> W(tp.value(w).data(), k, n);
    MatMap<T>(tp.grad(x).data(), rows, k).noalias() += g * W.transpose();
    MatMap<T>(tp.grad(w).data(), k, n).noalias() += X.transpose() * g;
    Tensor<T>& gb = tp.grad(b);
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c) gb[c] += g(r, c);
  });
}

template <typename T>
int bmm(Tape<T>& tape, int a, int b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  detail::require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(1),
                  "bmm: bad shapes");
  const int B = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(2);
  Tensor<T> out({B, m, n});
  for (int i = 0; i < B; ++i) {
    MatMap<T>(out.data() + static_cast<std::int64_t>(i) * m * n, m, n).noalias() =
        CMatMap<T>(va.data() + static_cast<std::int64_t>(i) * m * k, m, k) *
        CMatMap<T>(vb.data() + static_cast<std::int64_t>(i) * k * n, k, n);
  }
  return tape.push(std::move(out), [a, b, B, m, k, n](Tape<T>& tp, int self) {
    for (int i = 0; i < B; ++i) {
      CMatMap<T> g(tp.grad(self).data() + static_cast<std::int64_t>(i) * m * n, m, n);
      CMatMap<T> A(tp.value(a).data() + static_cast<std::int64_t>(i) * m * k, m, k);
      CMatMap<T> Bm(tp.value(b).data() + static_cast<std::int64_t>(i) * k * n, k, n);
      MatMap<T>(tp.grad(a).data() + static_cast<std::int64_t>(i) * m * k, m, k).noalias() +=
          g * Bm.transpose();
      MatMap<T>(tp.grad(b).data() + static_cast<std::int64_t>(i) * k * n, k, n).noalias() +=
          A.transpose() * g;
    }
  });
}

// a[B,m,k] x b[B,n,k]^T -> [B,m,n]
template <typename T>
int bmm_nt(Tape<T>& tape, int a, int b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  detail::require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
                  "bmm_nt: bad shapes");
  const int B = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(1);
  Tensor<T> out({B, m, n});
  for (int i = 0; i < B; ++i) {
    MatMap<T>(out.data() + static_cast<std::int64_t>(i) * m * n, m, n).noalias() =
        CMatMap<T>(va.data() + static_cast<std::int64_t>(i) * m * k, m, k) *
        CMatMap<T>(vb.data() + static_cast<std::int64_t>(i) * n * k, n, k).transpose();
  }
  return tape.push(std::move(out), [a, b, B, m, k, n](Tape<T>& tp, int self) {
    for (int i = 0; i < B; ++i) {
      CMatMap<T> g(tp.grad(self).data() + static_cast<std::int64_t>(i) * m * n, m, n);
      CMatMap<T> A(tp.value(a).data() + static_cast<std::int64_t>(i) * m * k, m, k);
      CMatMap<T> Bm(tp.value(b).data() + static_cast<std::int64_t>(i) * n * k, n, k);
      MatMap<T>(tp.grad(a).data() + static_cast<std::int64_t>(i) * m * k, m, k).noalias() += g * Bm;
      MatMap<T>(tp.grad(b).data() + static_cast<std::int64_t>(i) * n * k, n, k).noalias() +=
          g.transpose() * A;
    }
  });
}

// ------------------------------------------------------------- softmax

// Softmax over the trailing dim. When valid >= 0 only the first `valid`
// entries participate; the rest get probability 0 and no gradient.
template <typename T>
int softmax_lastdim(Tape<T>& tape, int a, int valid = -1) {
  const Tensor<T>& va = tape.value(a);
  const int n = va.dim(va.rank() - 1);
  const int v = valid < 0 ? n : valid;
  detail::require(v >= 1 && v <= n, "softmax: bad valid count");
  const std::int64_t rows = detail::lead_rows(va);
  Tensor<T> out(va.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = va.data() + r * n;
    T* yr = out.data() + r * n;
    T mx = xr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
    T denom = 0;
    for (int j = 0; j < v; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      denom += yr[j];
    }
    for (int j = 0; j < v; ++j) yr[j] /= denom;
    for (int j = v; j < n; ++j) yr[j] = T(0);
  }
  return tape.push(std::move(out), [a, rows, n, v](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& y = tp.value(self);
    Tensor<T>& ga = tp.grad(a);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * n;
      const T* yr = y.data() + r * n;
      T* gar = ga.data() + r * n;
      T dot = 0;
      for (int j = 0; j < v; ++j) dot += gr[j] * yr[j];
      for (int j = 0; j < v; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

// ------------------------------------------------------------- norms

template <typename T>
int layernorm(Tape<T>& tape, int x, int gamma, int beta, T eps = T(1e-5)) {
  const Tensor<T>& vx = tape.value(x);
  const int n = vx.dim(vx.rank() - 1);
  const Tensor<T>& vg = tape.value(gamma);
  const Tensor<T>& vbt = tape.value(beta);
  detail::require(vg.size() == n && vbt.size() == n, "layernorm: affine shape");
  const std::int64_t rows = detail::lead_rows(vx);
  Tensor<T> out(vx.shape());
  Tensor<T> inv_sigma({static_cast<int>(rows)});
  Tensor<T> mean({static_cast<int>(rows)});
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = vx.data() + r * n;
    T mu = 0;
    for (int j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    T var = 0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    const T is = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_sigma[r] = is;
    T* yr = out.data() + r * n;
    for (int j = 0; j < n; ++j) yr[j] = vg[j] * (xr[j] - mu) * is + vbt[j];
  }
  auto saved_mu = std::make_shared<Tensor<T>>(std::move(mean));
  auto saved_is = std::make_shared<Tensor<T>>(std::move(inv_sigma));
  return tape.push(std::move(out), [x, gamma, beta, rows, n, saved_mu, saved_is](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& vx2 = tp.value(x);
    const Tensor<T>& vg2 = tp.value(gamma);
    Tensor<T>& gx = tp.grad(x);
    Tensor<T>& gg = tp.grad(gamma);
    Tensor<T>& gb = tp.grad(beta);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = vx2.data() + r * n;
      const T* gr = g.data() + r * n;
      T* gxr = gx.data() + r * n;
      const T mu = (*saved_mu)[r], is = (*saved_is)[r];
      T m1 = 0, m2 = 0;
      for (int j = 0; j < n; ++j) {
        const T xh = (xr[j] - mu) * is;
        const T dxh = gr[j] * vg2[j];
        m1 += dxh;
        m2 += dxh * xh;
        gg[j] += gr[j] * xh;
        gb[j] += gr[j];
      }
      m1 /= n;
      m2 /= n;
      for (int j = 0; j < n; ++j) {
        const T xh = (xr[j] - mu) * is;
        const T dxh = gr[j] * vg2[j];
        gxr[j] += is * (dxh - m1 - xh * m2);
      }
    }
  });
}

// x[N,C,H,W], normalization over each (sample, group) block; affine per channel.
template <typename T>
int groupnorm(Tape<T>& tape, int x, int gamma, int beta, int groups, T eps = T(1e-5)) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 4, "groupnorm: rank-4 input expected");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  detail::require(C % groups == 0, "groupnorm: channels not divisible by groups");
  const int cg = C / groups;
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t gsize = cg * hw;
  Tensor<T> out(vx.shape());
  Tensor<T> mean({N, groups});
  Tensor<T> inv_sigma({N, groups});
  const Tensor<T>& vg = tape.value(gamma);
  const Tensor<T>& vb = tape.value(beta);
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* base = vx.data() + (static_cast<std::int64_t>(n) * C + g * cg) * hw;
      T mu = 0;
      for (std::int64_t i = 0; i < gsize; ++i) mu += base[i];
      mu /= gsize;
      T var = 0;
      for (std::int64_t i = 0; i < gsize; ++i) var += (base[i] - mu) * (base[i] - mu);
      var /= gsize;
      const T is = T(1) / std::sqrt(var + eps);
      mean.at(n, g) = mu;
      inv_sigma.at(n, g) = is;
      T* ob = out.data() + (static_cast<std::int64_t>(n) * C + g * cg) * hw;
      for (int c = 0; c < cg; ++c) {
        const T gc = vg[g * cg + c], bc = vb[g * cg + c];
        for (std::int64_t i = 0; i < hw; ++i)
          ob[c * hw + i] = gc * (base[c * hw + i] - mu) * is + bc;
      }
    }
  }
  auto saved_mu = std::make_shared<Tensor<T>>(std::move(mean));
  auto saved_is = std::make_shared<Tensor<T>>(std::move(inv_sigma));
  return tape.push(std::move(out),
                   [x, gamma, beta, N, C, groups, cg, hw, gsize, saved_mu, saved_is](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& vx2 = tp.value(x);
    const Tensor<T>& vg2 = tp.value(gamma);
    Tensor<T>& gx = tp.grad(x);
    Tensor<T>& gg = tp.grad(gamma);
    Tensor<T>& gb = tp.grad(beta);
    for (int n = 0; n < N; ++n) {
      for (int grp = 0; grp < groups; ++grp) {
        const std::int64_t off = (static_cast<std::int64_t>(n) * C + grp * cg) * hw;
        const T* xb = vx2.data() + off;
        const T* grb = g.data() + off;
        T* gxb = gx.data() + off;
        const T mu = saved_mu->at(n, grp), is = saved_is->at(n, grp);
        T m1 = 0, m2 = 0;
        for (int c = 0; c < cg; ++c) {
          const T gc = vg2[grp * cg + c];
          for (std::int64_t i = 0; i < hw; ++i) {
            const T xh = (xb[c * hw + i] - mu) * is;
            const T dxh = grb[c * hw + i] * gc;
            m1 += dxh;
            m2 += dxh * xh;
            gg[grp * cg + c] += grb[c * hw + i] * xh;
            gb[grp * cg + c] += grb[c * hw + i];
          }
        }
        m1 /= gsize;
        m2 /= gsize;
        for (int c = 0; c < cg; ++c) {
          const T gc = vg2[grp * cg + c];
          for (std::int64_t i = 0; i < hw; ++i) {
            const T xh = (xb[c * hw + i] - mu) * is;
            const T dxh = grb[c * hw + i] * gc;
            gxb[c * hw + i] += is * (dxh - m1 - xh * m2);
          }
        }
      }
    }
  });
}

// ------------------------------------------------------------- conv

namespace detail {

// col is [Ci*kh*kw, OH*OW] for one sample.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int oh, int ow,
            T* col) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * (static_cast<std::int64_t>(oh) * ow);
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + ky - pad;
          for (int xo = 0; xo < ow; ++xo) {
            const int sx = xo * stride + kx - pad;
            dst[y * ow + xo] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                   ? x[(static_cast<std::int64_t>(c) * H + sy) * W + sx]
                                   : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int oh,
                int ow, T* x) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * (static_cast<std::int64_t>(oh) * ow);
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int xo = 0; xo < ow; ++xo) {
            const int sx = xo * stride + kx - pad;
            if (sx < 0 || sx >= W) continue;
            x[(static_cast<std::int64_t>(c) * H + sy) * W + sx] += src[y * ow + xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x[N,Ci,H,W] * w[Co,Ci,kh,kw] + b[Co] -> [N,Co,OH,OW]
template <typename T>
int conv2d(Tape<T>& tape, int x, int w, int b, int stride, int pad) {
  const Tensor<T>& vx = tape.value(x);
  const Tensor<T>& vw = tape.value(w);
  const Tensor<T>& vb = tape.value(b);
  detail::require(vx.rank() == 4 && vw.rank() == 4 && vx.dim(1) == vw.dim(1), "conv2d: bad shapes");
  const int N = vx.dim(0), Ci = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int Co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  detail::require(oh >= 1 && ow >= 1, "conv2d: empty output");
  const std::int64_t kdim = static_cast<std::int64_t>(Ci) * kh * kw;
  const std::int64_t opix = static_cast<std::int64_t>(oh) * ow;

  Tensor<T> out({N, Co, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(kdim * opix));
  for (int n = 0; n < N; ++n) {
    detail::im2col(vx.data() + static_cast<std::int64_t>(n) * Ci * H * W, Ci, H, W, kh, kw, stride,
                   pad, oh, ow, col.data());
    MatMap<T> om(out.data() + static_cast<std::int64_t>(n) * Co * opix, Co, opix);
    om.noalias() = CMatMap<T>(vw.data(), Co, kdim) * CMatMap<T>(col.data(), kdim, opix);
    for (int c = 0; c < Co; ++c) om.row(c).array() += vb[c];
  }
  return tape.push(std::move(out),
                   [x, w, b, N, Ci, H, W, Co, kh, kw, stride, pad, oh, ow, kdim, opix](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& vx2 = tp.value(x);
    const Tensor<T>& vw2 = tp.value(w);
    Tensor<T>& gx = tp.grad(x);
    Tensor<T>& gw = tp.grad(w);
    Tensor<T>& gb = tp.grad(b);
    std::vector<T> col(static_cast<std::size_t>(kdim * opix));
    std::vector<T> dcol(static_cast<std::size_t>(kdim * opix));
    for (int n = 0; n < N; ++n) {
      CMatMap<T> gm(g.data() + static_cast<std::int64_t>(n) * Co * opix, Co, opix);
      // recompute the column buffer instead of keeping it on the tape
      detail::im2col(vx2.data() + static_cast<std::int64_t>(n) * Ci * H * W, Ci, H, W, kh, kw,
                     stride, pad, oh, ow, col.data());
      MatMap<T>(gw.data(), Co, kdim).noalias() += gm * CMatMap<T>(col.data(), kdim, opix).transpose();
      MatMap<T>(dcol.data(), kdim, opix).noalias() = CMatMap<T>(vw2.data(), Co, kdim).transpose() * gm;
      detail::col2im_add(dcol.data(), Ci, H, W, kh, kw, stride, pad, oh, ow,
                         gx.data() + static_cast<std::int64_t>(n) * Ci * H * W);
      for (int c = 0; c < Co; ++c) gb[c] += gm.row(c).sum();
    }
  });
}

// Depthwise convolution along the leading (time) axis with zero padding.
// x[T,C,H,W], w[C,k] with odd k.
template <typename T>
int temporal_depthwise(Tape<T>& tape, int x, int w) {
  const Tensor<T>& vx = tape.value(x);
  const Tensor<T>& vw = tape.value(w);
  detail::require(vx.rank() == 4 && vw.rank() == 2 && vw.dim(0) == vx.dim(1) && vw.dim(1) % 2 == 1,
                  "temporal_depthwise: bad shapes");
  const int Tn = vx.dim(0), C = vx.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(vx.dim(2)) * vx.dim(3);
  const int k = vw.dim(1), half = k / 2;
  Tensor<T> out(vx.shape());
  for (int t = 0; t < Tn; ++t) {
    for (int c = 0; c < C; ++c) {
      T* o = out.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
      for (int j = 0; j < k; ++j) {
        const int ts = t + j - half;
        if (ts < 0 || ts >= Tn) continue;
        const T wv = vw.at(c, j);
        const T* src = vx.data() + (static_cast<std::int64_t>(ts) * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) o[i] += wv * src[i];
      }
    }
  }
  return tape.push(std::move(out), [x, w, Tn, C, hw, k, half](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& vx2 = tp.value(x);
    const Tensor<T>& vw2 = tp.value(w);
    Tensor<T>& gx = tp.grad(x);
    Tensor<T>& gw = tp.grad(w);
    for (int t = 0; t < Tn; ++t) {
      for (int c = 0; c < C; ++c) {
        const T* go = g.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
        for (int j = 0; j < k; ++j) {
          const int ts = t + j - half;
          if (ts < 0 || ts >= Tn) continue;
          const T wv = vw2.at(c, j);
          T* gxs = gx.data() + (static_cast<std::int64_t>(ts) * C + c) * hw;
          const T* xs = vx2.data() + (static_cast<std::int64_t>(ts) * C + c) * hw;
          T acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) {
            gxs[i] += wv * go[i];
            acc += go[i] * xs[i];
          }
          gw.at(c, j) += acc;
        }
      }
    }
  });
}

// ------------------------------------------------------------- resampling

// Nearest-neighbor resize of x[N,C,h,w] to (th, tw); src index = floor(i*h/th).
template <typename T>
int nearest_resize(Tape<T>& tape, int x, int th, int tw) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 4, "nearest_resize: rank-4 input expected");
  const int N = vx.dim(0), C = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  Tensor<T> out({N, C, th, tw});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = vx.data() + (static_cast<std::int64_t>(n) * C + c) * h * w;
      T* dst = out.data() + (static_cast<std::int64_t>(n) * C + c) * th * tw;
      for (int y = 0; y < th; ++y) {
        const int sy = static_cast<int>(static_cast<std::int64_t>(y) * h / th);
        for (int xo = 0; xo < tw; ++xo) {
          const int sx = static_cast<int>(static_cast<std::int64_t>(xo) * w / tw);
          dst[y * tw + xo] = src[sy * w + sx];
        }
      }
    }
  return tape.push(std::move(out), [x, N, C, h, w, th, tw](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* gsrc = gx.data() + (static_cast<std::int64_t>(n) * C + c) * h * w;
        const T* gdst = g.data() + (static_cast<std::int64_t>(n) * C + c) * th * tw;
        for (int y = 0; y < th; ++y) {
          const int sy = static_cast<int>(static_cast<std::int64_t>(y) * h / th);
          for (int xo = 0; xo < tw; ++xo) {
            const int sx = static_cast<int>(static_cast<std::int64_t>(xo) * w / tw);
            gsrc[sy * w + sx] += gdst[y * tw + xo];
          }
        }
      }
  });
}

namespace detail {

// Half-pixel-centers sampling grid for an integer upscale factor.
struct LinearGrid {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

inline LinearGrid linear_grid(int src, int factor) {
  LinearGrid gshape;
  const int dst = src * factor;
  gshape.i0.resize(dst);
  gshape.i1.resize(dst);
  gshape.w1.resize(dst);
  for (int o = 0; o < dst; ++o) {
    const double s = (o + 0.5) / factor - 0.5;
    const int lo = static_cast<int>(std::floor(s));
    const double f = s - lo;
    gshape.i0[o] = std::min(std::max(lo, 0), src - 1);
    gshape.i1[o] = std::min(std::max(lo + 1, 0), src - 1);
    gshape.w1[o] = f;
  }
  return gshape;
}

}  // namespace detail

// Bilinear upsampling by an integer factor with half-pixel centers.
// x[N,C,h,w] -> [N,C,h*factor,w*factor]
template <typename T>
int bilinear_upsample(Tape<T>& tape, int x, int factor) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 4, "bilinear_upsample: rank-4 input expected");
  const int N = vx.dim(0), C = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const int th = h * factor, tw = w * factor;
  auto gy = std::make_shared<detail::LinearGrid>(detail::linear_grid(h, factor));
  auto gx_ = std::make_shared<detail::LinearGrid>(detail::linear_grid(w, factor));
  Tensor<T> out({N, C, th, tw});
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
    const T* src = vx.data() + p * h * w;
    T* dst = out.data() + p * th * tw;
    for (int y = 0; y < th; ++y) {
      const int y0 = gy->i0[y], y1 = gy->i1[y];
      const T fy = static_cast<T>(gy->w1[y]);
      for (int xo = 0; xo < tw; ++xo) {
        const int x0 = gx_->i0[xo], x1 = gx_->i1[xo];
        const T fx = static_cast<T>(gx_->w1[xo]);
        dst[y * tw + xo] = src[y0 * w + x0] * (T(1) - fy) * (T(1) - fx) +
                           src[y0 * w + x1] * (T(1) - fy) * fx +
                           src[y1 * w + x0] * fy * (T(1) - fx) + src[y1 * w + x1] * fy * fx;
      }
    }
  }
  return tape.push(std::move(out), [x, N, C, h, w, th, tw, gy, gx_](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gxt = tp.grad(x);
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
      T* gsrc = gxt.data() + p * h * w;
      const T* gdst = g.data() + p * th * tw;
      for (int y = 0; y < th; ++y) {
        const int y0 = gy->i0[y], y1 = gy->i1[y];
        const T fy = static_cast<T>(gy->w1[y]);
        for (int xo = 0; xo < tw; ++xo) {
          const int x0 = gx_->i0[xo], x1 = gx_->i1[xo];
          const T fx = static_cast<T>(gx_->w1[xo]);
          const T gv = gdst[y * tw + xo];
          gsrc[y0 * w + x0] += gv * (T(1) - fy) * (T(1) - fx);
          gsrc[y0 * w + x1] += gv * (T(1) - fy) * fx;
          gsrc[y1 * w + x0] += gv * fy * (T(1) - fx);
          gsrc[y1 * w + x1] += gv * fy * fx;
        }
      }
    }
  });
}

// ------------------------------------------------------------- layout

// Selects frames [T,...] -> [K,...] by index list.
template <typename T>
int select_frames(Tape<T>& tape, int x, std::vector<int> idx) {
  const Tensor<T>& vx = tape.value(x);
  const int Tn = vx.dim(0);
  const std::int64_t stride = vx.size() / Tn;
  for (int i : idx) detail::require(i >= 0 && i < Tn, "select_frames: frame index out of range");
  std::vector<int> shape = vx.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor<T> out(shape);
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy(vx.data() + idx[j] * stride, vx.data() + (idx[j] + 1) * stride,
              out.data() + static_cast<std::int64_t>(j) * stride);
  return tape.push(std::move(out), [x, idx = std::move(idx), stride](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const T* src = g.data() + static_cast<std::int64_t>(j) * stride;
      T* dst = gx.data() + idx[j] * stride;
      for (std::int64_t i = 0; i < stride; ++i) dst[i] += src[i];
    }
  });
}

// Concatenates per-frame tokens [F,S1,D] with a shared token block [S2,D]
// broadcast across frames -> [F,S1+S2,D].
template <typename T>
int concat_shared_tokens(Tape<T>& tape, int vis, int txt) {
  const Tensor<T>& vv = tape.value(vis);
  const Tensor<T>& vt = tape.value(txt);
  detail::require(vv.rank() == 3 && vt.rank() == 2 && vv.dim(2) == vt.dim(1),
                  "concat_shared_tokens: bad shapes");
  const int F = vv.dim(0), S1 = vv.dim(1), S2 = vt.dim(0), D = vv.dim(2);
  Tensor<T> out({F, S1 + S2, D});
  for (int f = 0; f < F; ++f) {
    std::copy(vv.data() + static_cast<std::int64_t>(f) * S1 * D,
              vv.data() + static_cast<std::int64_t>(f + 1) * S1 * D,
              out.data() + static_cast<std::int64_t>(f) * (S1 + S2) * D);
    std::copy(vt.data(), vt.data() + static_cast<std::int64_t>(S2) * D,
              out.data() + (static_cast<std::int64_t>(f) * (S1 + S2) + S1) * D);
  }
  return tape.push(std::move(out), [vis, txt, F, S1, S2, D](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gv = tp.grad(vis);
    Tensor<T>& gt = tp.grad(txt);
    for (int f = 0; f < F; ++f) {
      const T* gse = g.data() + static_cast<std::int64_t>(f) * (S1 + S2) * D;
      T* gvf = gv.data() + static_cast<std::int64_t>(f) * S1 * D;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(S1) * D; ++i) gvf[i] += gse[i];
      const T* gst = gse + static_cast<std::int64_t>(S1) * D;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(S2) * D; ++i) gt[i] += gst[i];
    }
  });
}

// x[F,S,D] -> [F,hi-lo,D]
template <typename T>
int slice_tokens(Tape<T>& tape, int x, int lo, int hi) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 3 && lo >= 0 && hi <= vx.dim(1) && lo < hi, "slice_tokens: bad range");
  const int F = vx.dim(0), S = vx.dim(1), D = vx.dim(2), K = hi - lo;
  Tensor<T> out({F, K, D});
  for (int f = 0; f < F; ++f)
    std::copy(vx.data() + (static_cast<std::int64_t>(f) * S + lo) * D,
              vx.data() + (static_cast<std::int64_t>(f) * S + hi) * D,
              out.data() + static_cast<std::int64_t>(f) * K * D);
  return tape.push(std::move(out), [x, F, S, D, lo, K](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int f = 0; f < F; ++f) {
      const T* src = g.data() + static_cast<std::int64_t>(f) * K * D;
      T* dst = gx.data() + (static_cast<std::int64_t>(f) * S + lo) * D;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(K) * D; ++i) dst[i] += src[i];
    }
  });
}

// q[R,D] -> [F,R,D] (same block repeated per frame)
template <typename T>
int broadcast_rows(Tape<T>& tape, int q, int F) {
  const Tensor<T>& vq = tape.value(q);
  detail::require(vq.rank() == 2, "broadcast_rows: rank-2 input expected");
  const int R = vq.dim(0), D = vq.dim(1);
  Tensor<T> out({F, R, D});
  for (int f = 0; f < F; ++f)
    std::copy(vq.data(), vq.data() + static_cast<std::int64_t>(R) * D,
              out.data() + static_cast<std::int64_t>(f) * R * D);
  return tape.push(std::move(out), [q, F, R, D](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gq = tp.grad(q);
    for (int f = 0; f < F; ++f) {
      const T* src = g.data() + static_cast<std::int64_t>(f) * R * D;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(R) * D; ++i) gq[i] += src[i];
    }
  });
}

// Adds a constant (non-learned) block [S,D] to every frame of x[F,S,D].
template <typename T>
int add_const_tokens(Tape<T>& tape, int x, std::shared_ptr<Tensor<T>> c) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 3 && c->rank() == 2 && vx.dim(1) == c->dim(0) && vx.dim(2) == c->dim(1),
                  "add_const_tokens: bad shapes");
  const int F = vx.dim(0);
  const std::int64_t sd = static_cast<std::int64_t>(vx.dim(1)) * vx.dim(2);
  Tensor<T> out = vx;
  for (int f = 0; f < F; ++f) {
    T* o = out.data() + f * sd;
    for (std::int64_t i = 0; i < sd; ++i) o[i] += (*c)[i];
  }
  return tape.push(std::move(out), [x](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// [F,S,D] -> [F*H, S, D/H]
template <typename T>
int split_heads(Tape<T>& tape, int x, int heads) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 3 && vx.dim(2) % heads == 0, "split_heads: bad shapes");
  const int F = vx.dim(0), S = vx.dim(1), D = vx.dim(2), dk = D / heads;
  Tensor<T> out({F * heads, S, dk});
  for (int f = 0; f < F; ++f)
    for (int s = 0; s < S; ++s)
      for (int h = 0; h < heads; ++h)
        std::copy(vx.data() + (static_cast<std::int64_t>(f) * S + s) * D + h * dk,
                  vx.data() + (static_cast<std::int64_t>(f) * S + s) * D + (h + 1) * dk,
                  out.data() + ((static_cast<std::int64_t>(f) * heads + h) * S + s) * dk);
  return tape.push(std::move(out), [x, F, S, D, heads, dk](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int f = 0; f < F; ++f)
      for (int s = 0; s < S; ++s)
        for (int h = 0; h < heads; ++h) {
          const T* src = g.data() + ((static_cast<std::int64_t>(f) * heads + h) * S + s) * dk;
          T* dst = gx.data() + (static_cast<std::int64_t>(f) * S + s) * D + h * dk;
          for (int i = 0; i < dk; ++i) dst[i] += src[i];
        }
  });
}

// [F*H, S, dk] -> [F,S,H*dk]
template <typename T>
int merge_heads(Tape<T>& tape, int x, int heads) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 3 && vx.dim(0) % heads == 0, "merge_heads: bad shapes");
  const int F = vx.dim(0) / heads, S = vx.dim(1), dk = vx.dim(2), D = heads * dk;
  Tensor<T> out({F, S, D});
  for (int f = 0; f < F; ++f)
    for (int h = 0; h < heads; ++h)
      for (int s = 0; s < S; ++s)
        std::copy(vx.data() + ((static_cast<std::int64_t>(f) * heads + h) * S + s) * dk,
                  vx.data() + ((static_cast<std::int64_t>(f) * heads + h) * S + s + 1) * dk,
                  out.data() + (static_cast<std::int64_t>(f) * S + s) * D + h * dk);
  return tape.push(std::move(out), [x, F, S, dk, heads, D](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int f = 0; f < F; ++f)
      for (int h = 0; h < heads; ++h)
        for (int s = 0; s < S; ++s) {
          const T* src = g.data() + (static_cast<std::int64_t>(f) * S + s) * D + h * dk;
          T* dst = gx.data() + ((static_cast<std::int64_t>(f) * heads + h) * S + s) * dk;
          for (int i = 0; i < dk; ++i) dst[i] += src[i];
        }
  });
}

// [F,H*W,C] -> [F,C,H,W]
template <typename T>
int tokens_to_chw(Tape<T>& tape, int x, int H, int W) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 3 && vx.dim(1) == H * W, "tokens_to_chw: bad shapes");
  const int F = vx.dim(0), C = vx.dim(2);
  Tensor<T> out({F, C, H, W});
  for (int f = 0; f < F; ++f)
    for (int p = 0; p < H * W; ++p)
      for (int c = 0; c < C; ++c)
        out[((static_cast<std::int64_t>(f) * C + c) * H * W) + p] =
            vx[(static_cast<std::int64_t>(f) * H * W + p) * C + c];
  return tape.push(std::move(out), [x, F, C, H, W](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int f = 0; f < F; ++f)
      for (int p = 0; p < H * W; ++p)
        for (int c = 0; c < C; ++c)
          gx[(static_cast<std::int64_t>(f) * H * W + p) * C + c] +=
              g[((static_cast<std::int64_t>(f) * C + c) * H * W) + p];
  });
}

// [F,C,H,W] -> [F,H*W,C]
template <typename T>
int chw_to_tokens(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.value(x);
  detail::require(vx.rank() == 4, "chw_to_tokens: rank-4 input expected");
  const int F = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  Tensor<T> out({F, H * W, C});
  for (int f = 0; f < F; ++f)
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < H * W; ++p)
        out[(static_cast<std::int64_t>(f) * H * W + p) * C + c] =
            vx[(static_cast<std::int64_t>(f) * C + c) * H * W + p];
  return tape.push(std::move(out), [x, F, C, H, W](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int f = 0; f < F; ++f)
      for (int c = 0; c < C; ++c)
        for (int p = 0; p < H * W; ++p)
          gx[(static_cast<std::int64_t>(f) * C + c) * H * W + p] +=
              g[(static_cast<std::int64_t>(f) * H * W + p) * C + c];
  });
}

// table[V,D] gathered by ids -> [L,D]
template <typename T>
int embedding(Tape<T>& tape, int table, const std::vector<int>& ids) {
  const Tensor<T>& vt = tape.value(table);
  detail::require(vt.rank() == 2, "embedding: rank-2 table expected");
  const int V = vt.dim(0), D = vt.dim(1);
  for (int id : ids) detail::require(id >= 0 && id < V, "embedding: id out of vocabulary");
  Tensor<T> out({static_cast<int>(ids.size()), D});
  for (std::size_t l = 0; l < ids.size(); ++l)
    std::copy(vt.data() + static_cast<std::int64_t>(ids[l]) * D,
              vt.data() + static_cast<std::int64_t>(ids[l] + 1) * D,
              out.data() + static_cast<std::int64_t>(l) * D);
  return tape.push(std::move(out), [table, ids, D](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gt = tp.grad(table);
    for (std::size_t l = 0; l < ids.size(); ++l) {
      const T* src = g.data() + static_cast<std::int64_t>(l) * D;
      T* dst = gt.data() + static_cast<std::int64_t>(ids[l]) * D;
      for (int i = 0; i < D; ++i) dst[i] += src[i];
    }
  });
}

}  // namespace refseg::ops
