// petkit/accounting.hpp
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

#ifndef PETKIT_ACCOUNTING_HPP
#define PETKIT_ACCOUNTING_HPP

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "petkit/strategy.hpp"

namespace petkit {

// weights-only counts conv/linear weight matrices and skips biases, norm
// affines and scalar weights; all-params counts every trainable entry. The
// two exist because the published budget tables match weights-only
// arithmetic while module descriptions include biases and norms.
enum class Convention { WeightsOnly, AllParams };

inline std::string convention_name(Convention c) {
  return c == Convention::WeightsOnly ? "weights-only" : "all-params";
}

inline Convention convention_from_name(const std::string& s) {
  if (s == "weights-only") return Convention::WeightsOnly;
  if (s == "all-params" || s == "all") return Convention::AllParams;
  throw ConfigError("unknown counting convention '" + s + "'");
}

struct ComponentCount {
  std::string component;
  long long count = 0;
  bool upstream = true;
};

// Exact integer budget of one strategy under one convention. trainable_total
// covers upstream trainable components only; the head is reported separately
// (the budget-table convention where the frozen baseline shows 0).
struct ParamReport {
  Convention convention = Convention::AllParams;
  std::string strategy;
  std::vector<ComponentCount> components;  // trainable components, plan order
  long long trainable_total = 0;
  long long head_total = 0;
  long long frozen_total = 0;    // every non-trainable entry, all-params
  long long backbone_total = 0;  // full backbone size, all-params
};

inline long long counted_size(const ParamInfo& info, Convention convention) {
  if (convention == Convention::WeightsOnly && !info.weight_matrix) return 0;
  return info.count;
}

inline ParamReport count_params(const std::vector<ParamInfo>& plan, Convention convention,
                                const std::string& strategy_name = {}) {
  ParamReport report;
  report.convention = convention;
  report.strategy = strategy_name;
  std::vector<std::string> order;
  std::map<std::string, ComponentCount> by_component;
  for (const auto& info : plan) {
    if (info.component == "backbone") report.backbone_total += info.count;
    if (!info.trainable) {
      report.frozen_total += info.count;
      continue;
    }
    if (!info.upstream) {
      report.head_total += counted_size(info, convention);
      continue;
    }
    auto [it, inserted] = by_component.try_emplace(info.component);
    if (inserted) {
      it->second.component = info.component;
      order.push_back(info.component);
    }
    it->second.count += counted_size(info, convention);
  }
  for (const auto& name : order) {
    report.components.push_back(by_component[name]);
    report.trainable_total += by_component[name].count;
  }
  return report;
}

inline ParamReport count_params(const BackboneConfig& config, const PetStrategy& strategy,
                                Convention convention, int n_classes = 0) {
  return count_params(strategy_param_plan(config, strategy, n_classes), convention,
                      strategy.name());
}

// Counts a materialized model through the same report shape; used to check
// that built models agree with their plan.
template <typename Real>
ParamReport count_params(InjectedModel<Real>& model, Convention convention,
                         long long head_params = 0) {
  std::vector<ParamInfo> plan;
  for (auto& np : model.registry()) {
    ParamInfo info;
    info.name = np.tensor->name;
    info.component = np.component;
    info.count = static_cast<long long>(np.tensor->size());
    info.trainable = np.tensor->trainable;
    info.weight_matrix = np.weight_matrix;
    info.upstream = np.upstream;
    plan.push_back(std::move(info));
  }
  if (head_params > 0)
    plan.push_back({"head", "head", head_params, true, true, false});
  return count_params(plan, convention, model.strategy.name());
}

// trainable_total / backbone_total. FineTune gives 1.0 under all-params;
// Frozen gives 0 (the head is outside the upstream total).
inline double trainable_ratio(const ParamReport& report, long long backbone_total) {
  if (backbone_total <= 0) throw ConfigError("trainable_ratio: backbone total must be > 0");
  return static_cast<double>(report.trainable_total) / static_cast<double>(backbone_total);
}

struct ReportDelta {
  std::vector<ComponentCount> components;  // a minus b, by component name
  long long trainable_total = 0;
  long long head_total = 0;
};

inline ReportDelta diff_reports(const ParamReport& a, const ParamReport& b) {
  if (a.convention != b.convention)
    throw ConfigError("diff_reports: convention mismatch (" + convention_name(a.convention) +
                      " vs " + convention_name(b.convention) + ")");
  std::map<std::string, long long> merged;
  std::vector<std::string> order;
  for (const auto& c : a.components) {
    if (!merged.count(c.component)) order.push_back(c.component);
    merged[c.component] += c.count;
  }
  for (const auto& c : b.components) {
    if (!merged.count(c.component)) order.push_back(c.component);
    merged[c.component] -= c.count;
  }
  ReportDelta delta;
  for (const auto& name : order) delta.components.push_back({name, merged[name], true});
  delta.trainable_total = a.trainable_total - b.trainable_total;
  delta.head_total = a.head_total - b.head_total;
  return delta;
}

inline std::string format_millions(long long count) {
  std::ostringstream os;
  os << std::setprecision(3) << static_cast<double>(count) / 1e6 << "M";
  return os.str();
}

inline std::string render_report_table(const ParamReport& report) {
  std::ostringstream os;
  os << "strategy: " << report.strategy << "\n"
     << "convention: " << convention_name(report.convention) << "\n";
  for (const auto& c : report.components)
    os << "  " << std::left << std::setw(28) << c.component << std::right << std::setw(12)
       << c.count << "  (" << format_millions(c.count) << ")\n";
  os << "  " << std::left << std::setw(28) << "trainable_total" << std::right << std::setw(12)
     << report.trainable_total << "  (" << format_millions(report.trainable_total) << ")\n";
  os << "  " << std::left << std::setw(28) << "head (excluded)" << std::right << std::setw(12)
     << report.head_total << "\n";
  os << "  " << std::left << std::setw(28) << "frozen" << std::right << std::setw(12)
     << report.frozen_total << "\n";
  os << "  " << std::left << std::setw(28) << "backbone_total" << std::right << std::setw(12)
     << report.backbone_total << "\n";
  os << "  " << std::left << std::setw(28) << "trainable_ratio" << std::right << std::setw(12)
     << std::setprecision(6) << trainable_ratio(report, report.backbone_total) << "\n";
  return os.str();
}

// One CSV row per component plus the totals, machine-diffable.
inline std::string render_report_csv(const ParamReport& report) {
  std::ostringstream os;
  os << "strategy,convention,component,count\n";
  for (const auto& c : report.components)
    os << report.strategy << "," << convention_name(report.convention) << "," << c.component
       << "," << c.count << "\n";
  os << report.strategy << "," << convention_name(report.convention) << ",trainable_total,"
     << report.trainable_total << "\n";
  os << report.strategy << "," << convention_name(report.convention) << ",head,"
     << report.head_total << "\n";
  os << report.strategy << "," << convention_name(report.convention) << ",frozen,"
     << report.frozen_total << "\n";
  os << report.strategy << "," << convention_name(report.convention) << ",backbone_total,"
     << report.backbone_total << "\n";
  return os.str();
}

}  // namespace petkit

#endif  // PETKIT_ACCOUNTING_HPP
