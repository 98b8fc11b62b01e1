// petkit/gradcheck.hpp
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

#ifndef PETKIT_GRADCHECK_HPP
#define PETKIT_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "petkit/graph.hpp"
#include "petkit/tensor.hpp"

namespace petkit {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;  // "tensor_name[flat_index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of reverse-mode gradients. `build` records the
// computation on a fresh graph and returns the scalar loss node; it must be
// deterministic and must bind every tensor in `params` via Graph::param.
// Runs in 64-bit only. Error metric per entry:
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckResult grad_check(const std::function<int(Graph<double>&)>& build,
                                  const std::vector<Tensor<double>*>& params,
                                  double eps = 1e-5) {
  for (Tensor<double>* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  {
    Graph<double> g;
    const int loss = build(g);
    if (g.value(loss).size() != 1) throw ShapeError("grad_check: loss must be scalar");
    g.backward(loss);
  }

  auto eval_loss = [&]() {
    Graph<double> g;
    return g.value(build(g))[0];
  };

  GradCheckResult result;
  for (Tensor<double>* p : params) {
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double analytic = p->grad[i];
      if (!std::isfinite(analytic))
        throw NumericError("grad_check: non-finite gradient at " + p->name + "[" +
                           std::to_string(i) + "]");
      const double saved = p->data[i];
      p->data[i] = saved + eps;
      const double up = eval_loss();
      p->data[i] = saved - eps;
      const double down = eval_loss();
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric))
        throw NumericError("grad_check: non-finite numeric difference at " + p->name + "[" +
                           std::to_string(i) + "]");
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p->name + "[" + std::to_string(i) + "]";
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace petkit

#endif  // PETKIT_GRADCHECK_HPP
