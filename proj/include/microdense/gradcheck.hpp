/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MICRODENSE_GRADCHECK_HPP_
#define MICRODENSE_GRADCHECK_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include "microdense/autograd.hpp"

namespace microdense {

struct GradcheckReport {
  double max_rel_error = 0;
  std::string worst_tensor;
  bool pass = false;
  double tolerance = 1e-4;
};

/// Compares analytic parameter gradients against central differences for a
/// scalar loss already built on `graph`. An element passes when the relative
/// error is below the tolerance, or the absolute error is below abs_near_zero
/// for gradients near zero; the two clauses combine into one normalized
/// error with denominator floor abs_near_zero / tolerance. Expects 64-bit
/// scalars; the loss is re-evaluated by re-running the tape with perturbed
/// parameter values.
inline GradcheckReport gradcheck_parameters(
    Graph<double>& graph, Value loss,
    const std::vector<Parameter<double>*>& params, double tolerance = 1e-4,
    double step = 1e-5, double abs_near_zero = 1e-6) {
  GradcheckReport report;
  report.tolerance = tolerance;
  const double floor = abs_near_zero / tolerance;
  for (Parameter<double>* p : params) {
    auto f = [&](const Tensord& t) {
      Tensord saved = p->value;
      p->value = t;
      graph.forward();
      const double v = graph.out(loss)[0];
      p->value = saved;
      return v;
    };
    const Tensord fd = finite_diff_grad<double>(f, p->value, step);
    for (std::int64_t i = 0; i < fd.size(); ++i) {
      const double a = p->grad[i], b = fd[i];
      const double denom = std::max({std::abs(a), std::abs(b), floor});
      const double rel = std::abs(a - b) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = p->name;
      }
    }
  }
  graph.forward();  // leave the tape consistent with the restored values
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace microdense

#endif  // MICRODENSE_GRADCHECK_HPP_
