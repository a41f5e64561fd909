#pragma once
// Reference implementations used only by tests. They are written as plain
// loops and never call into the library's kernels.

#include <cmath>
#include <vector>

#include "mcnn/tensor.hpp"

namespace oracle {

using mcnn::Index;

inline mcnn::Tensord matmul(const mcnn::Tensord& a, const mcnn::Tensord& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  mcnn::Tensord c({m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0;
      for (Index t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Cross-correlation of x [N,C,H,W] with w [O,C,K,K] plus bias [O].
inline mcnn::Tensord conv(const mcnn::Tensord& x, const mcnn::Tensord& w, const mcnn::Tensord& b,
                          Index stride, Index pad) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index o = w.dim(0), k = w.dim(2);
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  mcnn::Tensord y({n, o, ho, wo});
  for (Index in = 0; in < n; ++in)
    for (Index oc = 0; oc < o; ++oc)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          double s = b.empty() ? 0.0 : b[oc];
          for (Index ic = 0; ic < c; ++ic)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                s += x[((in * c + ic) * h + iy) * wd + ix] * w[((oc * c + ic) * k + ky) * k + kx];
              }
          y[((in * o + oc) * ho + oy) * wo + ox] = s;
        }
  return y;
}

inline mcnn::Tensord maxpool(const mcnn::Tensord& x, Index k, Index stride) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  mcnn::Tensord y({n, c, ho, wo});
  for (Index p = 0; p < n * c; ++p)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        double best = -INFINITY;
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx)
            best = std::max(best, x[(p * h + oy * stride + ky) * w + ox * stride + kx]);
        y[(p * ho + oy) * wo + ox] = best;
      }
  return y;
}

// Per-element sigmoid cross-entropy written from the textbook definition.
// log(sigmoid(s)) = -log(1 + e^-s) and log(1 - sigmoid(s)) = -log(1 + e^s).
inline double sigmoid_ce(double s, double y) {
  const double log_p = -std::log1p(std::exp(-s));
  const double log_not_p = -std::log1p(std::exp(s));
  return -(y * log_p + (1.0 - y) * log_not_p);
}

}  // namespace oracle
