// petkit/config.hpp
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

#ifndef PETKIT_CONFIG_HPP
#define PETKIT_CONFIG_HPP

#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "petkit/train.hpp"

namespace petkit {

enum class Mode { Verify64, Train32 };

// Parsed run configuration. Sections: [backbone], [strategy], [task],
// [train], [sweep]; unknown sections or keys are errors.
struct RunConfigFile {
  Mode mode = Mode::Train32;
  std::string out_dir = "runs";
  ExperimentSpec spec;
  std::vector<std::string> sweep_strategies = {"fine_tune", "chapter"};
  std::vector<double> sweep_fractions = {1.0, 0.5, 0.25, 0.1};
  std::vector<std::uint64_t> sweep_seeds = {1, 2, 3};
};

namespace cfg_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

[[noreturn]] inline void fail(int line, const std::string& message) {
  throw ConfigError("config line " + std::to_string(line) + ": " + message);
}

inline long long parse_int(const std::string& v, int line) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    fail(line, "expected an integer, got '" + v + "'");
  }
  if (used != v.size()) fail(line, "trailing characters in integer '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v, int line) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + v + "'");
  }
  if (used != v.size()) fail(line, "trailing characters in number '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(line, "expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_real_list(const std::string& v, int line) {
  std::vector<double> out;
  for (const auto& item : split(v, ','))
    if (!item.empty()) out.push_back(parse_real(item, line));
  if (out.empty()) fail(line, "expected a non-empty list");
  return out;
}

inline std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& v, int line) {
  std::vector<ConvBlockSpec> out;
  for (const auto& item : split(v, ',')) {
    if (item.empty()) continue;
    const auto parts = split(item, ':');
    if (parts.size() != 4)
      fail(line, "conv block '" + item + "' must be in:out:kernel:stride");
    ConvBlockSpec b;
    b.in_channels = static_cast<int>(parse_int(parts[0], line));
    b.out_channels = static_cast<int>(parse_int(parts[1], line));
    b.kernel = static_cast<int>(parse_int(parts[2], line));
    b.stride = static_cast<int>(parse_int(parts[3], line));
    out.push_back(b);
  }
  if (out.empty()) fail(line, "expected at least one conv block");
  return out;
}

inline StrategyKind strategy_kind_from_name(const std::string& v, int line) {
  for (StrategyKind k : {StrategyKind::FineTune, StrategyKind::Frozen, StrategyKind::WeightedSum,
                         StrategyKind::Houlsby, StrategyKind::CnnAdapter, StrategyKind::Chapter})
    if (strategy_kind_name(k) == v) return k;
  fail(line, "unknown strategy kind '" + v + "'");
}

}  // namespace cfg_detail

inline RunConfigFile parse_run_config_text(const std::string& text) {
  using namespace cfg_detail;
  RunConfigFile out;
  bool backbone_inline = false;
  std::string backbone_preset = "mini";
  BackboneConfig inline_backbone;

  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "backbone" && section != "strategy" && section != "task" &&
          section != "train" && section != "sweep")
        fail(line, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail(line, "empty key");
    if (value.empty()) fail(line, "empty value for '" + key + "'");

    if (section.empty()) {
      if (key == "mode") {
        if (value == "verify-64bit")
          out.mode = Mode::Verify64;
        else if (value == "train-32bit")
          out.mode = Mode::Train32;
        else
          fail(line, "mode must be verify-64bit or train-32bit");
      } else if (key == "out_dir") {
        out.out_dir = value;
      } else {
        fail(line, "unknown top-level key '" + key + "'");
      }
    } else if (section == "backbone") {
      if (key == "preset") {
        backbone_preset = value;
      } else if (key == "conv_blocks") {
        inline_backbone.conv_blocks = parse_conv_blocks(value, line);
        backbone_inline = true;
      } else if (key == "n_layers") {
        inline_backbone.n_layers = static_cast<int>(parse_int(value, line));
        backbone_inline = true;
      } else if (key == "hidden") {
        inline_backbone.hidden = static_cast<int>(parse_int(value, line));
        backbone_inline = true;
      } else if (key == "n_heads") {
        inline_backbone.n_heads = static_cast<int>(parse_int(value, line));
        backbone_inline = true;
      } else if (key == "ff_dim") {
        inline_backbone.ff_dim = static_cast<int>(parse_int(value, line));
        backbone_inline = true;
      } else if (key == "seed") {
        out.spec.backbone_seed = static_cast<std::uint64_t>(parse_int(value, line));
      } else {
        fail(line, "unknown [backbone] key '" + key + "'");
      }
    } else if (section == "strategy") {
      if (key == "kind") {
        out.spec.strategy.kind = strategy_kind_from_name(value, line);
      } else if (key == "cnn.top_n") {
        out.spec.strategy.cnn.top_n = static_cast<int>(parse_int(value, line));
      } else if (key == "cnn.compression") {
        out.spec.strategy.cnn.compression = static_cast<int>(parse_int(value, line));
      } else if (key == "cnn.alpha") {
        out.spec.strategy.cnn.alpha = parse_real(value, line);
      } else if (key == "houlsby.bottleneck") {
        out.spec.strategy.houlsby.bottleneck = static_cast<int>(parse_int(value, line));
      } else if (key == "houlsby.placement") {
        if (value == "after-second-ff")
          out.spec.strategy.houlsby.placement = HoulsbyPlacement::AfterSecondFF;
        else if (value == "after-attention-and-ff")
          out.spec.strategy.houlsby.placement = HoulsbyPlacement::AfterAttentionAndFF;
        else
          fail(line, "houlsby.placement must be after-second-ff or after-attention-and-ff");
      } else if (key == "weighted_sum.include_conv_tap") {
        out.spec.strategy.weighted_sum_include_conv_tap = parse_bool(value, line);
      } else if (key == "seed") {
        out.spec.adapter_seed = static_cast<std::uint64_t>(parse_int(value, line));
      } else {
        fail(line, "unknown [strategy] key '" + key + "'");
      }
    } else if (section == "task") {
      if (key == "n_classes") {
        out.spec.task.n_classes = static_cast<int>(parse_int(value, line));
      } else if (key == "samples_per_class") {
        out.spec.task.samples_per_class = static_cast<int>(parse_int(value, line));
      } else if (key == "wave_length") {
        out.spec.task.wave_length = static_cast<int>(parse_int(value, line));
      } else if (key == "snr_db") {
        out.spec.task.snr_db = parse_real(value, line);
      } else if (key == "seed") {
        out.spec.task.seed = static_cast<std::uint64_t>(parse_int(value, line));
      } else {
        fail(line, "unknown [task] key '" + key + "'");
      }
    } else if (section == "train") {
      if (key == "lr_grid") {
        out.spec.train.lr_grid = parse_real_list(value, line);
      } else if (key == "epochs") {
        out.spec.train.epochs = static_cast<int>(parse_int(value, line));
      } else if (key == "batch_size") {
        out.spec.train.batch_size = static_cast<int>(parse_int(value, line));
      } else if (key == "optimizer") {
        out.spec.train.optimizer = optimizer_from_name(value);
      } else if (key == "seed") {
        out.spec.train.seed = static_cast<std::uint64_t>(parse_int(value, line));
      } else if (key == "subset_fraction") {
        out.spec.train.subset_fraction = parse_real(value, line);
      } else if (key == "head_seed") {
        out.spec.head_seed = static_cast<std::uint64_t>(parse_int(value, line));
      } else {
        fail(line, "unknown [train] key '" + key + "'");
      }
    } else if (section == "sweep") {
      if (key == "strategies") {
        out.sweep_strategies.clear();
        for (const auto& name : split(value, ','))
          if (!name.empty()) {
            strategy_kind_from_name(name, line);  // validate
            out.sweep_strategies.push_back(name);
          }
        if (out.sweep_strategies.empty()) fail(line, "expected at least one strategy");
      } else if (key == "fractions") {
        out.sweep_fractions = parse_real_list(value, line);
      } else if (key == "seeds") {
        out.sweep_seeds.clear();
        for (const auto& item : split(value, ','))
          if (!item.empty())
            out.sweep_seeds.push_back(static_cast<std::uint64_t>(parse_int(item, line)));
        if (out.sweep_seeds.empty()) fail(line, "expected at least one seed");
      } else {
        fail(line, "unknown [sweep] key '" + key + "'");
      }
    }
  }

  if (backbone_inline) {
    if (inline_backbone.conv_blocks.empty())
      throw ConfigError("inline backbone needs conv_blocks");
    out.spec.backbone = inline_backbone;
  } else {
    out.spec.backbone = BackboneConfig::preset(backbone_preset);
  }
  out.spec.backbone.validate();
  return out;
}

inline RunConfigFile parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config_text(buffer.str());
}

// The strategy a sweep row refers to: the configured cnn/houlsby options with
// the row's kind.
inline PetStrategy sweep_strategy_from_name(const RunConfigFile& config,
                                            const std::string& name) {
  PetStrategy s = config.spec.strategy;
  s.kind = cfg_detail::strategy_kind_from_name(name, 0);
  return s;
}

}  // namespace petkit

#endif  // PETKIT_CONFIG_HPP
