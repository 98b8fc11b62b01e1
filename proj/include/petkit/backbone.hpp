// petkit/backbone.hpp
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

#ifndef PETKIT_BACKBONE_HPP
#define PETKIT_BACKBONE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "petkit/adapters.hpp"
#include "petkit/graph.hpp"
#include "petkit/tensor.hpp"

namespace petkit {

struct ConvBlockSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 0;
  bool has_norm = true;
};

struct BackboneConfig {
  std::vector<ConvBlockSpec> conv_blocks;
  int n_layers = 0;
  int hidden = 0;
  int n_heads = 0;
  int ff_dim = 0;

  void validate() const {
    if (conv_blocks.empty()) throw ConfigError("backbone: no conv blocks");
    for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
      const auto& b = conv_blocks[i];
      if (b.in_channels <= 0 || b.out_channels <= 0 || b.kernel <= 0 || b.stride <= 0)
        throw ConfigError("backbone: conv block " + std::to_string(i) +
                          " has a non-positive dimension");
      if (i > 0 && conv_blocks[i - 1].out_channels != b.in_channels)
        throw ConfigError("backbone: conv block " + std::to_string(i) + " expects " +
                          std::to_string(b.in_channels) + " input channels but block " +
                          std::to_string(i - 1) + " outputs " +
                          std::to_string(conv_blocks[i - 1].out_channels));
    }
    if (n_layers <= 0 || hidden <= 0 || n_heads <= 0 || ff_dim <= 0)
      throw ConfigError("backbone: encoder dimensions must be positive");
    if (hidden % n_heads != 0)
      throw ConfigError("backbone: hidden " + std::to_string(hidden) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }

  // Named presets. hubert-base-shape mirrors the base-size speech encoder
  // family: 7 conv blocks at 512 channels with strides 5,2,2,2,2,2,2
  // (total downsampling 320), 12 layers, hidden 768, 12 heads, ff 3072.
  static BackboneConfig preset(const std::string& name) {
    BackboneConfig c;
    if (name == "hubert-base-shape") {
      c.conv_blocks.push_back({1, 512, 10, 5, true});
      for (int i = 0; i < 4; ++i) c.conv_blocks.push_back({512, 512, 3, 2, true});
      for (int i = 0; i < 2; ++i) c.conv_blocks.push_back({512, 512, 2, 2, true});
      c.n_layers = 12;
      c.hidden = 768;
      c.n_heads = 12;
      c.ff_dim = 3072;
    } else if (name == "mini") {
      c.conv_blocks.push_back({1, 16, 10, 5, true});
      c.conv_blocks.push_back({16, 16, 3, 2, true});
      c.conv_blocks.push_back({16, 16, 2, 2, true});
      c.n_layers = 2;
      c.hidden = 32;
      c.n_heads = 4;
      c.ff_dim = 64;
    } else {
      throw ConfigError("unknown backbone preset '" + name + "'");
    }
    return c;
  }
};

// Chained valid-conv output length; 0 once any stage underflows.
inline long output_length(const std::vector<ConvBlockSpec>& blocks, long length) {
  for (const auto& b : blocks) {
    if (length < b.kernel) return 0;
    length = (length - b.kernel) / b.stride + 1;
  }
  return length;
}

template <typename Real>
struct ConvBlock {
  ConvBlockSpec spec;
  Tensor<Real> w;  // [out, in, kernel]
  Tensor<Real> b;  // [out]
  Tensor<Real> ln_gain, ln_shift;  // [out], present iff has_norm
};

template <typename Real>
struct EncoderLayer {
  Tensor<Real> ln1_gain, ln1_shift;
  AttentionParams<Real> attn;
  Tensor<Real> ln2_gain, ln2_shift;
  Tensor<Real> ff1_w, ff1_b;  // [hidden, ff], [ff]
  Tensor<Real> ff2_w, ff2_b;  // [ff, hidden], [hidden]
};

// Frozen-by-default feature extractor + pre-LN transformer encoder. Taps are
// exposed after each conv block (via feature_extract) and after each encoder
// layer (via encode). Immutable once built unless a strategy unfreezes it.
template <typename Real>
struct Backbone {
  BackboneConfig config;
  std::vector<ConvBlock<Real>> blocks;
  Tensor<Real> proj_ln_gain, proj_ln_shift;  // over last conv channels
  Tensor<Real> proj_w, proj_b;               // [C_last, hidden]
  std::vector<EncoderLayer<Real>> layers;

  void for_each_param(const std::function<void(Tensor<Real>&)>& fn) {
    for (auto& blk : blocks) {
      fn(blk.w);
      fn(blk.b);
      if (blk.spec.has_norm) {
        fn(blk.ln_gain);
        fn(blk.ln_shift);
      }
    }
    fn(proj_ln_gain);
    fn(proj_ln_shift);
    fn(proj_w);
    fn(proj_b);
    for (auto& layer : layers) {
      fn(layer.ln1_gain);
      fn(layer.ln1_shift);
      for (Tensor<Real>* t : {&layer.attn.wq, &layer.attn.bq, &layer.attn.wk, &layer.attn.bk,
                              &layer.attn.wv, &layer.attn.bv, &layer.attn.wo, &layer.attn.bo})
        fn(*t);
      fn(layer.ln2_gain);
      fn(layer.ln2_shift);
      fn(layer.ff1_w);
      fn(layer.ff1_b);
      fn(layer.ff2_w);
      fn(layer.ff2_b);
    }
  }

  std::vector<Tensor<Real>*> params() {
    std::vector<Tensor<Real>*> out;
    for_each_param([&](Tensor<Real>& t) { out.push_back(&t); });
    return out;
  }

  long long param_total() {
    long long n = 0;
    for_each_param([&](Tensor<Real>& t) { n += static_cast<long long>(t.size()); });
    return n;
  }
};

// All parameters frozen; weights get fan-in-scaled gaussian draws, biases
// zero, norms identity. Identical seeds give identical bytes.
template <typename Real>
Backbone<Real> build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Backbone<Real> bb;
  bb.config = config;
  Rng rng(mix_seed(seed, 0x6262));  // one stream for the whole backbone

  int index = 0;
  for (const auto& spec : config.conv_blocks) {
    ConvBlock<Real> blk;
    blk.spec = spec;
    const std::string prefix = "backbone.conv" + std::to_string(index++);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.in_channels * spec.kernel));
    blk.w = Tensor<Real>::gaussian({spec.out_channels, spec.in_channels, spec.kernel}, rng,
                                   stddev, prefix + ".w");
    blk.b = Tensor<Real>::zeros({spec.out_channels}, prefix + ".b");
    if (spec.has_norm) {
      blk.ln_gain = Tensor<Real>::full({spec.out_channels}, Real(1), prefix + ".ln_gain");
      blk.ln_shift = Tensor<Real>::zeros({spec.out_channels}, prefix + ".ln_shift");
    }
    bb.blocks.push_back(std::move(blk));
  }

  const int c_last = config.conv_blocks.back().out_channels;
  bb.proj_ln_gain = Tensor<Real>::full({c_last}, Real(1), "backbone.proj.ln_gain");
  bb.proj_ln_shift = Tensor<Real>::zeros({c_last}, "backbone.proj.ln_shift");
  bb.proj_w = Tensor<Real>::gaussian({c_last, config.hidden}, rng,
                                     1.0 / std::sqrt(static_cast<double>(c_last)),
                                     "backbone.proj.w");
  bb.proj_b = Tensor<Real>::zeros({config.hidden}, "backbone.proj.b");

  const int h = config.hidden;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(h));
  for (int l = 0; l < config.n_layers; ++l) {
    EncoderLayer<Real> layer;
    const std::string prefix = "backbone.layer" + std::to_string(l);
    layer.ln1_gain = Tensor<Real>::full({h}, Real(1), prefix + ".ln1_gain");
    layer.ln1_shift = Tensor<Real>::zeros({h}, prefix + ".ln1_shift");
    layer.attn.wq = Tensor<Real>::gaussian({h, h}, rng, attn_std, prefix + ".attn.wq");
    layer.attn.bq = Tensor<Real>::zeros({h}, prefix + ".attn.bq");
    layer.attn.wk = Tensor<Real>::gaussian({h, h}, rng, attn_std, prefix + ".attn.wk");
    layer.attn.bk = Tensor<Real>::zeros({h}, prefix + ".attn.bk");
    layer.attn.wv = Tensor<Real>::gaussian({h, h}, rng, attn_std, prefix + ".attn.wv");
    layer.attn.bv = Tensor<Real>::zeros({h}, prefix + ".attn.bv");
    layer.attn.wo = Tensor<Real>::gaussian({h, h}, rng, attn_std, prefix + ".attn.wo");
    layer.attn.bo = Tensor<Real>::zeros({h}, prefix + ".attn.bo");
    layer.ln2_gain = Tensor<Real>::full({h}, Real(1), prefix + ".ln2_gain");
    layer.ln2_shift = Tensor<Real>::zeros({h}, prefix + ".ln2_shift");
    layer.ff1_w = Tensor<Real>::gaussian({h, config.ff_dim}, rng, attn_std, prefix + ".ff1_w");
    layer.ff1_b = Tensor<Real>::zeros({config.ff_dim}, prefix + ".ff1_b");
    layer.ff2_w = Tensor<Real>::gaussian({config.ff_dim, h}, rng,
                                         1.0 / std::sqrt(static_cast<double>(config.ff_dim)),
                                         prefix + ".ff2_w");
    layer.ff2_b = Tensor<Real>::zeros({h}, prefix + ".ff2_b");
    bb.layers.push_back(std::move(layer));
  }
  return bb;
}

// conv -> LayerNorm over channels -> GELU. x: [C_in, L] -> [C_out, L'].
template <typename Real>
int conv_block_forward(Graph<Real>& g, int x, ConvBlock<Real>& blk) {
  int y = g.conv1d(x, g.param(blk.w), g.param(blk.b), blk.spec.stride);
  if (blk.spec.has_norm) {
    const int yt = g.transpose2d(y);
    const int ln = g.layer_norm(yt, g.param(blk.ln_gain), g.param(blk.ln_shift),
                                static_cast<Real>(kLayerNormEps));
    y = g.transpose2d(ln);
  }
  return g.gelu(y);
}

// Per-block optional parallel adapter branches: nullptr entries (or an empty
// vector) mean no attachment. Block i outputs
//   ConvBlock_i(x) + alpha_i * adapter_i(x).
template <typename Real>
int feature_extract_graph(Graph<Real>& g, Backbone<Real>& bb, int wave,
                          const std::vector<CnnAdapter<Real>*>& adapters = {}) {
  if (!adapters.empty() && adapters.size() != bb.blocks.size())
    throw ConfigError("feature_extract: adapter slots must match conv block count");
  int x = wave;
  for (std::size_t i = 0; i < bb.blocks.size(); ++i) {
    ConvBlock<Real>& blk = bb.blocks[i];
    const int length = g.shape(x).back();
    if (length < blk.spec.kernel)
      throw ShapeError("feature_extract: input of length " + std::to_string(length) +
                       " too short for conv block " + std::to_string(i) + " (kernel " +
                       std::to_string(blk.spec.kernel) + "), output would be empty");
    const int host = conv_block_forward(g, x, blk);
    int out = host;
    if (!adapters.empty() && adapters[i] != nullptr) {
      const int branch = cnn_adapter_forward(g, x, *adapters[i]);
      if (g.shape(branch) != g.shape(host))
        throw ShapeError("cnn adapter branch shape " + shape_str(g.shape(branch)) +
                         " does not align with host block output " +
                         shape_str(g.shape(host)) + " at block " + std::to_string(i));
      out = g.add(host, g.scale(branch, static_cast<Real>(adapters[i]->spec.alpha)));
    }
    x = out;
  }
  return x;  // [C_last, T]
}

// Houlsby attachment points for one encoder layer.
template <typename Real>
struct LayerAdapters {
  HoulsbyAdapter<Real>* after_attention = nullptr;
  HoulsbyAdapter<Real>* after_ff = nullptr;
};

struct EncodeResult {
  int projected = -1;      // frames after LN + feature projection, [T, hidden]
  std::vector<int> taps;   // residual stream after each layer, [T, hidden]
};

// Projects frames to the hidden size and runs the pre-LN encoder stack,
// returning one tap per layer (the residual stream each layer hands to the
// next). frames: [C_last, T].
template <typename Real>
EncodeResult encode_graph(Graph<Real>& g, Backbone<Real>& bb, int frames,
                          const std::vector<LayerAdapters<Real>>& adapters = {}) {
  if (!adapters.empty() && adapters.size() != bb.layers.size())
    throw ConfigError("encode: adapter slots must match layer count");
  int x = g.transpose2d(frames);  // [T, C]
  x = g.layer_norm(x, g.param(bb.proj_ln_gain), g.param(bb.proj_ln_shift),
                   static_cast<Real>(kLayerNormEps));
  x = g.linear(x, g.param(bb.proj_w), g.param(bb.proj_b));  // [T, hidden]

  EncodeResult result;
  result.projected = x;
  result.taps.reserve(bb.layers.size());
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    EncoderLayer<Real>& layer = bb.layers[l];
    const int attn_in = g.layer_norm(x, g.param(layer.ln1_gain), g.param(layer.ln1_shift),
                                     static_cast<Real>(kLayerNormEps));
    int attn_out = mhsa_forward(g, attn_in, layer.attn, bb.config.n_heads);
    if (!adapters.empty() && adapters[l].after_attention != nullptr)
      attn_out = houlsby_forward(g, attn_out, *adapters[l].after_attention);
    x = g.add(x, attn_out);

    const int ff_in = g.layer_norm(x, g.param(layer.ln2_gain), g.param(layer.ln2_shift),
                                   static_cast<Real>(kLayerNormEps));
    int ff_out = g.linear(g.gelu(g.linear(ff_in, g.param(layer.ff1_w), g.param(layer.ff1_b))),
                          g.param(layer.ff2_w), g.param(layer.ff2_b));
    if (!adapters.empty() && adapters[l].after_ff != nullptr)
      ff_out = houlsby_forward(g, ff_out, *adapters[l].after_ff);
    x = g.add(x, ff_out);
    result.taps.push_back(x);
  }
  return result;
}

// Eager wrappers for callers that just want values.

template <typename Real>
Tensor<Real> feature_extract(Backbone<Real>& bb, const Tensor<Real>& wave,
                             const std::vector<CnnAdapter<Real>*>& adapters = {}) {
  Graph<Real> g;
  const int out = feature_extract_graph(g, bb, g.input(wave), adapters);
  Tensor<Real> t(g.shape(out));
  t.data = g.value(out);
  return t;
}

template <typename Real>
std::vector<Tensor<Real>> encode(Backbone<Real>& bb, const Tensor<Real>& frames,
                                 const std::vector<LayerAdapters<Real>>& adapters = {}) {
  Graph<Real> g;
  const auto result = encode_graph(g, bb, g.input(frames), adapters);
  std::vector<Tensor<Real>> out;
  out.reserve(result.taps.size());
  for (int tap : result.taps) {
    Tensor<Real> t(g.shape(tap));
    t.data = g.value(tap);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace petkit

#endif  // PETKIT_BACKBONE_HPP
