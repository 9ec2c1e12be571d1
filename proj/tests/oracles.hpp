#pragma once

// Brute-force loop references for the connector forward passes. They share no
// code with the library beyond reading parameter values.

#include "vlconn/connectors.hpp"

#include <cmath>
#include <vector>

namespace oracle {

using vlconn::ConnectorParams;
using vlconn::Index;
using vlconn::Matrix;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Matrix affine(const Matrix& x, const ConnectorParams& p, const std::string& prefix) {
  const Matrix& w = p.at(prefix + ".weight").value();
  const bool has_bias = p.contains(prefix + ".bias");
  Matrix y(x.rows(), w.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index o = 0; o < w.cols(); ++o) {
      double acc = has_bias ? p.at(prefix + ".bias").value()(0, o) : 0.0;
      for (Index i = 0; i < x.cols(); ++i) acc += x(r, i) * w(i, o);
      y(r, o) = acc;
    }
  }
  return y;
}

inline Matrix mlp(const Matrix& x, const ConnectorParams& p) {
  Matrix h = affine(x, p, "mlp.fc1");
  for (Index i = 0; i < h.rows(); ++i)
    for (Index j = 0; j < h.cols(); ++j) h(i, j) = gelu(h(i, j));
  return affine(h, p, "mlp.fc2");
}

// Window `i` of `q` over `n` cells spans [floor(i*n/q), floor((i+1)*n/q)).
inline Matrix pool(const Matrix& f, int height, int width, int side) {
  Matrix out = Matrix::Zero(static_cast<Index>(side) * side, f.cols());
  for (int wy = 0; wy < side; ++wy) {
    const int y0 = wy * height / side, y1 = (wy + 1) * height / side;
    for (int wx = 0; wx < side; ++wx) {
      const int x0 = wx * width / side, x1 = (wx + 1) * width / side;
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (Index c = 0; c < f.cols(); ++c) out(wy * side + wx, c) += f(y * width + x, c) / n;
    }
  }
  return out;
}

inline Matrix avgpool(const Matrix& f, int height, int width, int side, const ConnectorParams& p) {
  return mlp(pool(f, height, width, side), p);
}

inline Matrix attnpool(const Matrix& f, const ConnectorParams& p) {
  const Matrix& queries = p.at("attn.queries").value();
  const Matrix keys = affine(f, p, "attn.key");
  const Matrix values = affine(f, p, "attn.value");
  const Index q = queries.rows(), n = f.rows(), dc = queries.cols();
  Matrix pooled = Matrix::Zero(q, dc);
  for (Index i = 0; i < q; ++i) {
    std::vector<double> s(static_cast<std::size_t>(n));
    double top = -INFINITY;
    for (Index j = 0; j < n; ++j) {
      double dot = 0.0;
      for (Index c = 0; c < dc; ++c) dot += queries(i, c) * keys(j, c);
      s[j] = dot / std::sqrt(static_cast<double>(dc));
      top = std::max(top, s[j]);
    }
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - top));
    for (Index j = 0; j < n; ++j)
      for (Index c = 0; c < dc; ++c) pooled(i, c) += s[j] / z * values(j, c);
  }
  return mlp(pooled, p);
}

// Direct zero-padded k x k convolution; weight row (dy * k + dx) * c_in + ci.
inline Matrix conv(const Matrix& f, int height, int width, int k, const ConnectorParams& p,
                   const std::string& prefix) {
  const Matrix& w = p.at(prefix + ".weight").value();
  const Matrix& b = p.at(prefix + ".bias").value();
  const Index cin = f.cols(), cout = w.cols();
  const int r = k / 2;
  Matrix out(static_cast<Index>(height) * width, cout);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (Index o = 0; o < cout; ++o) {
        double acc = b(0, o);
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const int sy = y + dy - r, sx = x + dx - r;
            if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
            for (Index ci = 0; ci < cin; ++ci) {
              acc += w((dy * k + dx) * cin + ci, o) * f(sy * width + sx, ci);
            }
          }
        }
        out(y * width + x, o) = acc;
      }
    }
  }
  return out;
}

inline Matrix convmap(const Matrix& f, int height, int width, int side, int k, const ConnectorParams& p) {
  const Matrix local = conv(f, height, width, k, p, "conv_pre");
  const Matrix pooled = pool(local, height, width, side);
  const Matrix mapped = conv(pooled, side, side, k, p, "conv_post");
  return affine(mapped, p, "proj");
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double m = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

}  // namespace oracle
