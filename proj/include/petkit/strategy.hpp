// petkit/strategy.hpp
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

#ifndef PETKIT_STRATEGY_HPP
#define PETKIT_STRATEGY_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "petkit/backbone.hpp"

namespace petkit {

enum class StrategyKind { FineTune, Frozen, WeightedSum, Houlsby, CnnAdapter, Chapter };

inline std::string strategy_kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::FineTune: return "fine_tune";
    case StrategyKind::Frozen: return "frozen";
    case StrategyKind::WeightedSum: return "weighted_sum";
    case StrategyKind::Houlsby: return "houlsby";
    case StrategyKind::CnnAdapter: return "cnn_adapter";
    case StrategyKind::Chapter: return "chapter";
  }
  return "?";
}

struct CnnAdapterOptions {
  int top_n = -1;       // -1: every conv block; otherwise the last top_n blocks
  int compression = 1;  // channel compression factor n
  double alpha = 1.0;
};

// Declarative description of which adapters go where. FineTune unfreezes the
// whole backbone; Frozen trains the downstream head only.
struct PetStrategy {
  StrategyKind kind = StrategyKind::Frozen;
  CnnAdapterOptions cnn;
  HoulsbySpec houlsby;
  bool weighted_sum_include_conv_tap = false;

  std::string name() const { return strategy_kind_name(kind); }

  bool has_cnn() const { return kind == StrategyKind::CnnAdapter || kind == StrategyKind::Chapter; }
  bool has_houlsby() const { return kind == StrategyKind::Houlsby || kind == StrategyKind::Chapter; }

  static PetStrategy fine_tune() { return {StrategyKind::FineTune, {}, {}, false}; }
  static PetStrategy frozen() { return {StrategyKind::Frozen, {}, {}, false}; }
  static PetStrategy weighted_sum(bool include_conv_tap = false) {
    return {StrategyKind::WeightedSum, {}, {}, include_conv_tap};
  }
  static PetStrategy houlsby_only(HoulsbySpec spec = {}) {
    return {StrategyKind::Houlsby, {}, spec, false};
  }
  static PetStrategy cnn_only(CnnAdapterOptions opts = {}) {
    return {StrategyKind::CnnAdapter, opts, {}, false};
  }
  static PetStrategy chapter(CnnAdapterOptions cnn_opts = {}, HoulsbySpec houlsby_spec = {}) {
    return {StrategyKind::Chapter, cnn_opts, houlsby_spec, false};
  }
};

// 0-based indices of the conv blocks that receive adapters: the last
// (deepest) top_n blocks, i.e. the ones closest to the transformer.
inline std::vector<int> cnn_adapter_block_indices(const BackboneConfig& config,
                                                  const CnnAdapterOptions& opts) {
  const int n_blocks = static_cast<int>(config.conv_blocks.size());
  int top_n = opts.top_n;
  if (top_n < 0) top_n = n_blocks;
  if (top_n < 1 || top_n > n_blocks)
    throw ConfigError("cnn adapter: top_n " + std::to_string(top_n) + " outside [1, " +
                      std::to_string(n_blocks) + "]");
  std::vector<int> out;
  for (int i = n_blocks - top_n; i < n_blocks; ++i) out.push_back(i);
  return out;
}

// One row per parameter tensor: the shared vocabulary between the
// materialized model registry and the dry counting path.
struct ParamInfo {
  std::string name;
  std::string component;  // "backbone" | "cnn_adapter.block#" | "houlsby.layer#" |
                          // "weighted_sum" | "head"
  long long count = 0;
  bool trainable = false;
  bool weight_matrix = false;  // conv/linear weight, as opposed to bias/norm/scalars
  bool upstream = true;        // false only for the downstream head
};

namespace detail {

inline void plan_backbone(const BackboneConfig& config, bool trainable,
                          std::vector<ParamInfo>& out) {
  int index = 0;
  for (const auto& b : config.conv_blocks) {
    const std::string p = "backbone.conv" + std::to_string(index++);
    out.push_back({p + ".w", "backbone",
                   static_cast<long long>(b.out_channels) * b.in_channels * b.kernel, trainable,
                   true, true});
    out.push_back({p + ".b", "backbone", b.out_channels, trainable, false, true});
    if (b.has_norm) {
      out.push_back({p + ".ln_gain", "backbone", b.out_channels, trainable, false, true});
      out.push_back({p + ".ln_shift", "backbone", b.out_channels, trainable, false, true});
    }
  }
  const int c_last = config.conv_blocks.back().out_channels;
  out.push_back({"backbone.proj.ln_gain", "backbone", c_last, trainable, false, true});
  out.push_back({"backbone.proj.ln_shift", "backbone", c_last, trainable, false, true});
  out.push_back({"backbone.proj.w", "backbone",
                 static_cast<long long>(c_last) * config.hidden, trainable, true, true});
  out.push_back({"backbone.proj.b", "backbone", config.hidden, trainable, false, true});
  const long long h = config.hidden;
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "backbone.layer" + std::to_string(l);
    out.push_back({p + ".ln1_gain", "backbone", h, trainable, false, true});
    out.push_back({p + ".ln1_shift", "backbone", h, trainable, false, true});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      out.push_back({p + "." + w, "backbone", h * h, trainable, true, true});
      const std::string bias = std::string(w).replace(5, 1, "b");  // attn.w? -> attn.b?
      out.push_back({p + "." + bias, "backbone", h, trainable, false, true});
    }
    out.push_back({p + ".ln2_gain", "backbone", h, trainable, false, true});
    out.push_back({p + ".ln2_shift", "backbone", h, trainable, false, true});
    out.push_back({p + ".ff1_w", "backbone", h * config.ff_dim, trainable, true, true});
    out.push_back({p + ".ff1_b", "backbone", config.ff_dim, trainable, false, true});
    out.push_back({p + ".ff2_w", "backbone", static_cast<long long>(config.ff_dim) * h,
                   trainable, true, true});
    out.push_back({p + ".ff2_b", "backbone", h, trainable, false, true});
  }
}

inline void plan_cnn_adapter(const BackboneConfig& config, const CnnAdapterOptions& opts,
                             int block, std::vector<ParamInfo>& out) {
  const auto& b = config.conv_blocks[block];
  if (b.out_channels % opts.compression != 0)
    throw ConfigError("cnn adapter: compression " + std::to_string(opts.compression) +
                      " does not divide out_channels " + std::to_string(b.out_channels) +
                      " of block " + std::to_string(block));
  const long long narrow = b.out_channels / opts.compression;
  const std::string comp = "cnn_adapter.block" + std::to_string(block);
  const std::string p = comp;
  out.push_back({p + ".conv_w", comp, narrow * b.in_channels * b.kernel, true, true, true});
  out.push_back({p + ".conv_b", comp, narrow, true, false, true});
  out.push_back({p + ".ln_gain", comp, narrow, true, false, true});
  out.push_back({p + ".ln_shift", comp, narrow, true, false, true});
}

inline void plan_houlsby(const BackboneConfig& config, const HoulsbySpec& spec, int layer,
                         const char* where, std::vector<ParamInfo>& out) {
  const long long h = config.hidden;
  const long long b = spec.bottleneck;
  const std::string comp = "houlsby.layer" + std::to_string(layer);
  const std::string p = comp + "." + where;
  out.push_back({p + ".down_w", comp, h * b, true, true, true});
  out.push_back({p + ".down_b", comp, b, true, false, true});
  out.push_back({p + ".up_w", comp, b * h, true, true, true});
  out.push_back({p + ".up_b", comp, h, true, false, true});
}

}  // namespace detail

// Enumerates every parameter tensor of (backbone config, strategy) with its
// trainability, without materializing data. n_classes > 0 appends the
// mean-pool linear head. apply_strategy() constructs exactly this list;
// parameter accounting consumes it.
inline std::vector<ParamInfo> strategy_param_plan(const BackboneConfig& config,
                                                  const PetStrategy& strategy,
                                                  int n_classes = 0) {
  config.validate();
  if (strategy.houlsby.bottleneck < 1)
    throw ConfigError("houlsby: bottleneck must be >= 1");
  std::vector<ParamInfo> plan;
  detail::plan_backbone(config, strategy.kind == StrategyKind::FineTune, plan);
  if (strategy.has_cnn())
    for (int block : cnn_adapter_block_indices(config, strategy.cnn))
      detail::plan_cnn_adapter(config, strategy.cnn, block, plan);
  if (strategy.has_houlsby())
    for (int l = 0; l < config.n_layers; ++l) {
      if (strategy.houlsby.placement == HoulsbyPlacement::AfterAttentionAndFF)
        detail::plan_houlsby(config, strategy.houlsby, l, "attn", plan);
      detail::plan_houlsby(config, strategy.houlsby, l, "ff", plan);
    }
  if (strategy.kind == StrategyKind::WeightedSum) {
    const long long taps = config.n_layers + (strategy.weighted_sum_include_conv_tap ? 1 : 0);
    plan.push_back({"weighted_sum.weights", "weighted_sum", taps, true, false, true});
  }
  if (n_classes > 0) {
    plan.push_back({"head.w", "head", static_cast<long long>(config.hidden) * n_classes, true,
                    true, false});
    plan.push_back({"head.b", "head", n_classes, true, false, false});
  }
  return plan;
}

// Per-tensor trainability assignments, in registry order.
struct FreezeMask {
  std::vector<std::pair<std::string, bool>> entries;

  bool trainable(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw ConfigError("freeze mask: unknown parameter '" + name + "'");
  }
};

template <typename Real>
struct NamedParam {
  std::string component;
  Tensor<Real>* tensor = nullptr;
  bool weight_matrix = false;
  bool upstream = true;
};

// A backbone plus the adapter state a strategy hangs off it. Thread-confined;
// distinct instances may train on distinct threads.
template <typename Real>
struct InjectedModel {
  Backbone<Real> backbone;
  PetStrategy strategy;
  std::vector<int> cnn_block_indices;
  std::vector<CnnAdapter<Real>> cnn_adapters;           // aligned with cnn_block_indices
  std::vector<HoulsbyAdapter<Real>> houlsby_after_ff;   // per layer
  std::vector<HoulsbyAdapter<Real>> houlsby_after_attn; // per layer, dual placement only
  WeightedSumParams<Real> wsum;

  // Registry in plan order: backbone, cnn adapters, houlsby (attn before ff
  // within a layer), weighted-sum.
  std::vector<NamedParam<Real>> registry() {
    std::vector<NamedParam<Real>> out;
    backbone.for_each_param([&](Tensor<Real>& t) {
      const bool wm = t.shape.size() >= 2;  // conv/linear weights are the only >=2-d tensors
      out.push_back({"backbone", &t, wm, true});
    });
    for (std::size_t i = 0; i < cnn_adapters.size(); ++i) {
      const std::string comp = "cnn_adapter.block" + std::to_string(cnn_block_indices[i]);
      auto& a = cnn_adapters[i];
      out.push_back({comp, &a.conv_w, true, true});
      out.push_back({comp, &a.conv_b, false, true});
      out.push_back({comp, &a.ln_gain, false, true});
      out.push_back({comp, &a.ln_shift, false, true});
    }
    for (std::size_t l = 0; l < houlsby_after_ff.size(); ++l) {
      const std::string comp = "houlsby.layer" + std::to_string(l);
      if (!houlsby_after_attn.empty()) {
        auto& a = houlsby_after_attn[l];
        out.push_back({comp, &a.down_w, true, true});
        out.push_back({comp, &a.down_b, false, true});
        out.push_back({comp, &a.up_w, true, true});
        out.push_back({comp, &a.up_b, false, true});
      }
      auto& a = houlsby_after_ff[l];
      out.push_back({comp, &a.down_w, true, true});
      out.push_back({comp, &a.down_b, false, true});
      out.push_back({comp, &a.up_w, true, true});
      out.push_back({comp, &a.up_b, false, true});
    }
    if (wsum.weights.size() > 0)
      out.push_back({"weighted_sum", &wsum.weights, false, true});
    return out;
  }

  std::vector<Tensor<Real>*> trainable_params() {
    std::vector<Tensor<Real>*> out;
    for (auto& np : registry())
      if (np.tensor->trainable) out.push_back(np.tensor);
    return out;
  }

  // Adapter attachment views consumed by the forward functions.
  std::vector<CnnAdapter<Real>*> cnn_attachments() {
    std::vector<CnnAdapter<Real>*> slots;
    if (cnn_adapters.empty()) return slots;
    slots.assign(backbone.blocks.size(), nullptr);
    for (std::size_t i = 0; i < cnn_adapters.size(); ++i)
      slots[cnn_block_indices[i]] = &cnn_adapters[i];
    return slots;
  }

  std::vector<LayerAdapters<Real>> houlsby_attachments() {
    std::vector<LayerAdapters<Real>> slots;
    if (houlsby_after_ff.empty()) return slots;
    slots.resize(backbone.layers.size());
    for (std::size_t l = 0; l < houlsby_after_ff.size(); ++l) {
      slots[l].after_ff = &houlsby_after_ff[l];
      if (!houlsby_after_attn.empty()) slots[l].after_attention = &houlsby_after_attn[l];
    }
    return slots;
  }

  // Full forward to the encoder taps.
  EncodeResult forward_taps(Graph<Real>& g, int wave) {
    const int frames = feature_extract_graph(g, backbone, wave, cnn_attachments());
    return encode_graph(g, backbone, frames, houlsby_attachments());
  }

  // Representation the downstream head consumes: the weighted-sum mix for the
  // WeightedSum strategy, the last layer's output otherwise.
  int forward_representation(Graph<Real>& g, int wave) {
    EncodeResult t = forward_taps(g, wave);
    if (strategy.kind == StrategyKind::WeightedSum) {
      std::vector<int> taps = t.taps;
      if (strategy.weighted_sum_include_conv_tap) taps.insert(taps.begin(), t.projected);
      return weighted_sum(g, taps, wsum);
    }
    return t.taps.back();
  }
};

// Builds adapters (near-identity init), sets trainability flags, and returns
// the model plus its freeze mask. The plan in strategy_param_plan() is the
// contract for what exists and what is trainable.
template <typename Real>
std::pair<InjectedModel<Real>, FreezeMask> apply_strategy(Backbone<Real> backbone,
                                                          const PetStrategy& strategy,
                                                          std::uint64_t seed) {
  // Validates strategy/backbone fit before any construction.
  strategy_param_plan(backbone.config, strategy);

  InjectedModel<Real> model;
  model.backbone = std::move(backbone);
  model.strategy = strategy;

  const bool backbone_trainable = strategy.kind == StrategyKind::FineTune;
  model.backbone.for_each_param(
      [&](Tensor<Real>& t) { t.trainable = backbone_trainable; });

  Rng rng(mix_seed(seed, 0xADA7));
  if (strategy.has_cnn()) {
    model.cnn_block_indices = cnn_adapter_block_indices(model.backbone.config, strategy.cnn);
    for (int block : model.cnn_block_indices) {
      const auto& spec = model.backbone.config.conv_blocks[block];
      CnnAdapterSpec aspec;
      aspec.host_block_index = block;
      aspec.compression_n = strategy.cnn.compression;
      aspec.alpha = strategy.cnn.alpha;
      auto adapter = make_cnn_adapter<Real>(aspec, spec.in_channels, spec.out_channels,
                                            spec.kernel, spec.stride,
                                            "cnn_adapter.block" + std::to_string(block));
      init_near_identity(adapter, rng);
      model.cnn_adapters.push_back(std::move(adapter));
    }
  }
  if (strategy.has_houlsby()) {
    const bool dual = strategy.houlsby.placement == HoulsbyPlacement::AfterAttentionAndFF;
    for (int l = 0; l < model.backbone.config.n_layers; ++l) {
      const std::string prefix = "houlsby.layer" + std::to_string(l);
      if (dual) {
        auto a = make_houlsby_adapter<Real>(model.backbone.config.hidden,
                                            strategy.houlsby.bottleneck, prefix + ".attn");
        init_near_identity(a, rng);
        model.houlsby_after_attn.push_back(std::move(a));
      }
      auto a = make_houlsby_adapter<Real>(model.backbone.config.hidden,
                                          strategy.houlsby.bottleneck, prefix + ".ff");
      init_near_identity(a, rng);
      model.houlsby_after_ff.push_back(std::move(a));
    }
  }
  if (strategy.kind == StrategyKind::WeightedSum) {
    const int taps =
        model.backbone.config.n_layers + (strategy.weighted_sum_include_conv_tap ? 1 : 0);
    model.wsum.weights = Tensor<Real>::zeros({taps}, "weighted_sum.weights");
    model.wsum.weights.trainable = true;
  }

  FreezeMask mask;
  for (auto& np : model.registry())
    mask.entries.emplace_back(np.tensor->name, np.tensor->trainable);
  return {std::move(model), std::move(mask)};
}

}  // namespace petkit

#endif  // PETKIT_STRATEGY_HPP
