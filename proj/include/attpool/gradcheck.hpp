#ifndef ATTPOOL_GRADCHECK_HPP
#define ATTPOOL_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attpool/tensor.hpp"

namespace attpool {

// One tensor under test: `values` is perturbed in place while re-evaluating
// the loss, `analytic` holds the hand-derived gradient of the same shape.
struct GradCheckParam {
  std::string name;
  Tensor<double>* values = nullptr;
  const Tensor<double>* analytic = nullptr;
};

struct GradCheckWorst {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_err = 0;
  std::size_t probes = 0;
  std::size_t failures = 0;
  GradCheckWorst worst;
  std::vector<std::string> notes;

  std::string to_string() const;
};

// Central-difference comparison (f(x+h) - f(x-h)) / 2h against the analytic
// gradient. Tensors larger than max_probes are subsampled deterministically.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
GradCheckReport gradcheck(const std::function<double()>& f,
                          const std::vector<GradCheckParam>& params,
                          double step = 1e-5, double tol_rel = 1e-6,
                          std::size_t max_probes = 200,
                          std::uint64_t subsample_seed = 17);

// Named gradient batteries, one per module, assembled in gradcheck_suites.cpp.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(double tol)> run;
};

std::vector<GradCheckCase> gradcheck_suite(const std::string& module);

}  // namespace attpool

#endif
