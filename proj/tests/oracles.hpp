// Test-only reference implementations, written as plain nested loops with no
// dependency on the library's graph machinery. These are the independent
// oracles the op tests compare against.

#ifndef PETKIT_TESTS_ORACLES_HPP
#define PETKIT_TESTS_ORACLES_HPP

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

using Vec = std::vector<double>;

// Sliding dot product, valid convolution. x: [ci][L], w: [co][ci][K], out: [co][lo].
inline Vec conv1d(const Vec& x, int ci, int L, const Vec& w, int co, int K, const Vec& bias,
                  int stride) {
  const int lo = (L - K) / stride + 1;
  Vec out(static_cast<std::size_t>(co) * lo, 0.0);
  for (int c = 0; c < co; ++c)
    for (int t = 0; t < lo; ++t) {
      double acc = bias.empty() ? 0.0 : bias[c];
      for (int i = 0; i < ci; ++i)
        for (int k = 0; k < K; ++k)
          acc += w[(static_cast<std::size_t>(c) * ci + i) * K + k] *
                 x[static_cast<std::size_t>(i) * L + t * stride + k];
      out[static_cast<std::size_t>(c) * lo + t] = acc;
    }
  return out;
}

// Two-pass mean/variance normalization over the last axis of an [R, C] array.
inline Vec layer_norm(const Vec& x, int R, int C, const Vec& gain, const Vec& shift,
                      double eps) {
  Vec out(x.size());
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x[static_cast<std::size_t>(r) * C + c];
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = x[static_cast<std::size_t>(r) * C + c] - mean;
      var += d * d;
    }
    var /= C;
    for (int c = 0; c < C; ++c)
      out[static_cast<std::size_t>(r) * C + c] =
          (x[static_cast<std::size_t>(r) * C + c] - mean) / std::sqrt(var + eps) * gain[c] +
          shift[c];
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Triple-loop affine map: x [T][di] * w [di][dout] + b.
inline Vec linear(const Vec& x, int T, int di, const Vec& w, int dout, const Vec& b) {
  Vec out(static_cast<std::size_t>(T) * dout, 0.0);
  for (int t = 0; t < T; ++t)
    for (int o = 0; o < dout; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (int i = 0; i < di; ++i)
        acc += x[static_cast<std::size_t>(t) * di + i] * w[static_cast<std::size_t>(i) * dout + o];
      out[static_cast<std::size_t>(t) * dout + o] = acc;
    }
  return out;
}

inline Vec matmul(const Vec& a, int m, int k, const Vec& b, int n) {
  Vec out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
      out[static_cast<std::size_t>(i) * n + j] = acc;
    }
  return out;
}

inline Vec softmax(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  Vec out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// Single-head scaled dot-product self-attention with output projection,
// computed entry by entry. x: [T][H].
inline Vec attention_single_head(const Vec& x, int T, int H, const Vec& wq, const Vec& bq,
                                 const Vec& wk, const Vec& bk, const Vec& wv, const Vec& bv,
                                 const Vec& wo, const Vec& bo) {
  const Vec q = linear(x, T, H, wq, H, bq);
  const Vec k = linear(x, T, H, wk, H, bk);
  const Vec v = linear(x, T, H, wv, H, bv);
  Vec ctx(static_cast<std::size_t>(T) * H, 0.0);
  for (int t = 0; t < T; ++t) {
    Vec scores(T, 0.0);
    for (int u = 0; u < T; ++u) {
      double acc = 0.0;
      for (int h = 0; h < H; ++h)
        acc += q[static_cast<std::size_t>(t) * H + h] * k[static_cast<std::size_t>(u) * H + h];
      scores[u] = acc / std::sqrt(static_cast<double>(H));
    }
    const Vec att = softmax(scores);
    for (int u = 0; u < T; ++u)
      for (int h = 0; h < H; ++h)
        ctx[static_cast<std::size_t>(t) * H + h] +=
            att[u] * v[static_cast<std::size_t>(u) * H + h];
  }
  return linear(ctx, T, H, wo, H, bo);
}

// Chained valid-conv output length; 0 once any stage underflows.
inline long chained_length(const std::vector<std::pair<int, int>>& kernel_stride, long L) {
  for (auto [k, s] : kernel_stride) {
    if (L < k) return 0;
    L = (L - k) / s + 1;
  }
  return L;
}

// Magnitude of the discrete Fourier transform at `bins` evenly spaced
// frequencies, by direct summation.
inline Vec dft_magnitude(const Vec& x, int bins) {
  const double n = static_cast<double>(x.size());
  Vec mag(bins, 0.0);
  for (int b = 0; b < bins; ++b) {
    const double w = 2.0 * 3.14159265358979323846 * (b + 1) / (2.0 * bins);
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      re += x[t] * std::cos(w * static_cast<double>(t));
      im -= x[t] * std::sin(w * static_cast<double>(t));
    }
    mag[b] = std::sqrt(re * re + im * im) / n;
  }
  return mag;
}

}  // namespace oracles

#endif  // PETKIT_TESTS_ORACLES_HPP
