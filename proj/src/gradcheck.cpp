#include "attpool/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attpool/rng.hpp"

namespace attpool {

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << "  probes=" << probes
     << "  max_rel_err=" << max_rel_err;
  if (!worst.param.empty())
    os << "  worst=" << worst.param << "[" << worst.index
       << "] analytic=" << worst.analytic << " numeric=" << worst.numeric;
  for (const auto& n : notes) os << "\n  note: " << n;
  return os.str();
}

GradCheckReport gradcheck(const std::function<double()>& f,
                          const std::vector<GradCheckParam>& params,
                          double step, double tol_rel, std::size_t max_probes,
                          std::uint64_t subsample_seed) {
  GradCheckReport rep;
  Rng rng = Rng::substream(subsample_seed, "gradcheck");

  for (const auto& p : params) {
    if (!p.values || !p.analytic)
      throw ValueError("gradcheck: parameter '" + p.name + "' not wired");
    if (p.values->shape() != p.analytic->shape())
      throw ShapeError("gradcheck: analytic gradient shape " +
                       p.analytic->shape_string() + " != value shape " +
                       p.values->shape_string() + " for '" + p.name + "'");

    std::vector<std::size_t> idx;
    const std::size_t n = p.values->numel();
    if (n <= max_probes) {
      idx.resize(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    } else {
      idx = rng.sample_without_replacement(n, max_probes);
    }

    for (std::size_t i : idx) {
      const double saved = (*p.values)[i];
      (*p.values)[i] = saved + step;
      const double fp = f();
      (*p.values)[i] = saved - step;
      const double fm = f();
      (*p.values)[i] = saved;

      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = (*p.analytic)[i];
      ++rep.probes;

      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic)) {
        rep.passed = false;
        ++rep.failures;
        rep.notes.push_back("non-finite value probing " + p.name + "[" +
                            std::to_string(i) + "]");
        continue;
      }

      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = {p.name, i, analytic, numeric, rel};
      }
      if (rel > tol_rel) {
        rep.passed = false;
        ++rep.failures;
      }
    }
  }
  return rep;
}

}  // namespace attpool
