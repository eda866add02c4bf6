#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fnl/tensor.hpp"

// Central-finite-difference verification harness. A subject exposes the
// tensors to differentiate (parameters and inputs), a scalar loss recomputed
// from their current values, and the analytic gradient fill. The harness
// perturbs every element by +/- eps and reports the worst relative error and
// the offending element by name. Double precision only.

namespace fnl {

struct GradCheckItem {
  std::string name;
  Tensor<double>* value;
  Tensor<double>* grad;
};

struct GradCheckSubject {
  std::string name;
  std::vector<GradCheckItem> tensors;
  std::function<double()> loss;           // forward pass from current values
  std::function<void()> compute_grads;    // zero grads, forward, backward
  std::shared_ptr<void> state;            // keeps closure-captured tensors alive
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckReport grad_check(GradCheckSubject& subject, double eps = 1e-3) {
  if (!subject.loss || !subject.compute_grads)
    throw ArgumentError("grad_check: subject '" + subject.name + "' lacks a backward path");
  subject.compute_grads();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(subject.tensors.size());
  for (const auto& item : subject.tensors) analytic.push_back(item.grad->data);

  GradCheckReport rep;
  for (size_t ti = 0; ti < subject.tensors.size(); ++ti) {
    auto& item = subject.tensors[ti];
    for (int64_t i = 0; i < item.value->numel(); ++i) {
      const double orig = (*item.value)[i];
      (*item.value)[i] = orig + eps;
      const double lp = subject.loss();
      (*item.value)[i] = orig - eps;
      const double lm = subject.loss();
      (*item.value)[i] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic_v = analytic[ti][i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic_v), 1e-6});
      const double rel = std::abs(numeric - analytic_v) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = item.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

/// Names of the shipped verification subjects: every kernel-backed layer,
/// both recurrent cells at sequence lengths 1-4, and the tiny end-to-end model.
std::vector<std::string> gradcheck_subject_names();

/// Build one shipped subject by name (fixed seeds, kink-safe inputs).
GradCheckSubject make_gradcheck_subject(const std::string& name);

/// Run the named subjects (all when empty) and return per-subject reports.
std::vector<std::pair<std::string, GradCheckReport>> run_gradcheck_suite(
    const std::vector<std::string>& names = {}, double eps = 1e-3);

}  // namespace fnl
