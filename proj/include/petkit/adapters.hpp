// petkit/adapters.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_ADAPTERS_HPP
#define PETKIT_ADAPTERS_HPP

#include <string>
#include <vector>

#include "petkit/graph.hpp"
#include "petkit/tensor.hpp"

namespace petkit {

inline constexpr double kLayerNormEps = 1e-5;

// Residual conv branch attached to one feature-extractor block. The branch
// sees the block's input and its output is added to the block's output, so
// kernel/stride must match the host block (the constructor-resolved defaults)
// for the lengths to align without padding.
struct CnnAdapterSpec {
  int host_block_index = 0;
  int compression_n = 1;  // output channels divided by n, restored by tiling
  int kernel = 0;         // 0: host block's kernel
  int stride = 0;         // 0: host block's stride
  double alpha = 1.0;     // residual scale applied to the branch
};

template <typename Real>
struct CnnAdapter {
  CnnAdapterSpec spec;   // kernel/stride resolved, never 0
  int in_channels = 0;   // host block input channels
  int out_channels = 0;  // host block output channels (pre-compression)
  Tensor<Real> conv_w;   // [out/n, in, kernel]
  Tensor<Real> conv_b;   // [out/n]
  Tensor<Real> ln_gain;  // [out/n]
  Tensor<Real> ln_shift;

  int narrow_channels() const { return out_channels / spec.compression_n; }
};

// Bottleneck adapter inserted in a transformer feed-forward residual.
enum class HoulsbyPlacement { AfterSecondFF, AfterAttentionAndFF };

struct HoulsbySpec {
  int bottleneck = 32;
  HoulsbyPlacement placement = HoulsbyPlacement::AfterSecondFF;
};

template <typename Real>
struct HoulsbyAdapter {
  Tensor<Real> down_w;  // [hidden, bottleneck]
  Tensor<Real> down_b;  // [bottleneck]
  Tensor<Real> up_w;    // [bottleneck, hidden]
  Tensor<Real> up_b;    // [hidden]
};

// Learned softmax combination over tapped layer outputs.
template <typename Real>
struct WeightedSumParams {
  Tensor<Real> weights;  // [n_taps]
};

// ---- construction / init --------------------------------------------------

template <typename Real>
CnnAdapter<Real> make_cnn_adapter(CnnAdapterSpec spec, int host_in, int host_out,
                                  int host_kernel, int host_stride,
                                  const std::string& name_prefix) {
  if (spec.compression_n < 1) throw ConfigError("cnn adapter: compression must be >= 1");
  if (host_out % spec.compression_n != 0)
    throw ConfigError("cnn adapter: compression " + std::to_string(spec.compression_n) +
                      " does not divide host out_channels " + std::to_string(host_out));
  if (spec.kernel == 0) spec.kernel = host_kernel;
  if (spec.stride == 0) spec.stride = host_stride;
  CnnAdapter<Real> a;
  a.spec = spec;
  a.in_channels = host_in;
  a.out_channels = host_out;
  const int narrow = a.narrow_channels();
  a.conv_w = Tensor<Real>::zeros({narrow, host_in, spec.kernel}, name_prefix + ".conv_w");
  a.conv_b = Tensor<Real>::zeros({narrow}, name_prefix + ".conv_b");
  a.ln_gain = Tensor<Real>::full({narrow}, Real(1), name_prefix + ".ln_gain");
  a.ln_shift = Tensor<Real>::zeros({narrow}, name_prefix + ".ln_shift");
  for (Tensor<Real>* t : {&a.conv_w, &a.conv_b, &a.ln_gain, &a.ln_shift}) t->trainable = true;
  return a;
}

template <typename Real>
HoulsbyAdapter<Real> make_houlsby_adapter(int hidden, int bottleneck,
                                          const std::string& name_prefix) {
  if (bottleneck < 1) throw ConfigError("houlsby adapter: bottleneck must be >= 1");
  HoulsbyAdapter<Real> a;
  a.down_w = Tensor<Real>::zeros({hidden, bottleneck}, name_prefix + ".down_w");
  a.down_b = Tensor<Real>::zeros({bottleneck}, name_prefix + ".down_b");
  a.up_w = Tensor<Real>::zeros({bottleneck, hidden}, name_prefix + ".up_w");
  a.up_b = Tensor<Real>::zeros({hidden}, name_prefix + ".up_b");
  for (Tensor<Real>* t : {&a.down_w, &a.down_b, &a.up_w, &a.up_b}) t->trainable = true;
  return a;
}

// Near-identity init: the conv branch is exactly zero (zero conv into a
// zero-vector LayerNorm into GELU stays zero), and the Houlsby up-projection
// is exactly zero while the down-projection gets a small random draw. The
// injected forward therefore equals the base forward bit for bit.
template <typename Real>
void init_near_identity(CnnAdapter<Real>& a, Rng& /*rng*/) {
  a.conv_w.data.assign(a.conv_w.size(), Real(0));
  a.conv_b.data.assign(a.conv_b.size(), Real(0));
  a.ln_gain.data.assign(a.ln_gain.size(), Real(1));
  a.ln_shift.data.assign(a.ln_shift.size(), Real(0));
}

template <typename Real>
void init_near_identity(HoulsbyAdapter<Real>& a, Rng& rng) {
  for (Real& v : a.down_w.data) v = static_cast<Real>(rng.gaussian() * 1e-2);
  a.down_b.data.assign(a.down_b.size(), Real(0));
  a.up_w.data.assign(a.up_w.size(), Real(0));
  a.up_b.data.assign(a.up_b.size(), Real(0));
}

// ---- forward passes --------------------------------------------------------

// Tiles the narrow output back to the host channel count. Channel c of the
// result is row (c mod C/n) of the input; n = 1 is the identity.
template <typename Real>
Tensor<Real> compress_concat(const Tensor<Real>& narrow, int n) {
  if (n < 1) throw ConfigError("compress_concat: n must be >= 1");
  if (narrow.shape.size() != 2) throw ShapeError("compress_concat expects [C/n, L]");
  if (n == 1) return narrow;
  const int c = narrow.shape[0], L = narrow.shape[1];
  Tensor<Real> out({c * n, L});
  for (int copy = 0; copy < n; ++copy)
    for (std::size_t i = 0; i < narrow.data.size(); ++i)
      out.data[static_cast<std::size_t>(copy) * narrow.data.size() + i] = narrow.data[i];
  return out;
}

// GELU(LN(conv1d(x))) tiled up to the host channel count. x: [C_in, L_in],
// result: [C_out, L_branch]. The caller scales by alpha and adds to the host
// block output; it is a bug for the lengths to disagree under default
// kernel/stride, so the mismatch check lives with the caller.
template <typename Real>
int cnn_adapter_forward(Graph<Real>& g, int x, CnnAdapter<Real>& a) {
  const int conv = g.conv1d(x, g.param(a.conv_w), g.param(a.conv_b), a.spec.stride);
  const int pre = g.transpose2d(conv);  // [L, C/n]: normalize over channels
  const int ln = g.layer_norm(pre, g.param(a.ln_gain), g.param(a.ln_shift),
                              static_cast<Real>(kLayerNormEps));
  const int act = g.transpose2d(g.gelu(ln));  // back to [C/n, L]
  return g.tile_rows(act, a.spec.compression_n);
}

// h + up(GELU(down(h))), positionwise over [T, hidden].
template <typename Real>
int houlsby_forward(Graph<Real>& g, int h, HoulsbyAdapter<Real>& a) {
  const int down = g.linear(h, g.param(a.down_w), g.param(a.down_b));
  const int up = g.linear(g.gelu(down), g.param(a.up_w), g.param(a.up_b));
  return g.add(h, up);
}

// softmax(w)-weighted sum of equally shaped layer outputs.
template <typename Real>
int weighted_sum(Graph<Real>& g, const std::vector<int>& layer_outputs,
                 WeightedSumParams<Real>& p) {
  if (layer_outputs.empty()) throw ConfigError("weighted_sum: no layer outputs");
  if (p.weights.size() != layer_outputs.size())
    throw ConfigError("weighted_sum: " + std::to_string(p.weights.size()) + " weights for " +
                      std::to_string(layer_outputs.size()) + " layers");
  const int coeffs = g.softmax_rows(g.param(p.weights));
  return g.linear_combination(layer_outputs, coeffs);
}

}  // namespace petkit

#endif  // PETKIT_ADAPTERS_HPP
