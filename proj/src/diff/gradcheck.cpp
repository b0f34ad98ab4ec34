#include "mvr/diff/gradcheck.hpp"

#include <cmath>

namespace mvr::diff {

GradCheckReport grad_check(ParamStore& store, const std::function<Var(Tape&)>& build_loss,
                           double tol, double step, std::size_t max_elements_per_param) {
  GradCheckReport report;
  report.tol = tol;

  store.zero_grad();
  {
    Tape tape(&store);
    Var loss = build_loss(tape);
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape tape(&store);
    return tape.scalar(build_loss(tape));
  };

  bool ok = true;
  for (int pi = 0; pi < store.size(); ++pi) {
    Param& p = store.item(pi);
    GradCheckEntry entry;
    entry.name = p.name;
    const std::size_t n = p.value.numel();
    std::size_t probes = n;
    if (max_elements_per_param > 0) probes = std::min(n, max_elements_per_param);
    // deterministic stride so probes spread across the tensor
    const std::size_t stride = std::max<std::size_t>(1, n / probes);
    for (std::size_t j = 0; j < n; j += stride) {
      const double analytic = p.grad[j];
      if (!std::isfinite(analytic)) {
        entry.finite = false;
        entry.max_rel_err = std::numeric_limits<double>::infinity();
        break;
      }
      const double saved = p.value[j];
      p.value[j] = saved + step;
      const double lp = eval();
      p.value[j] = saved - step;
      const double lm = eval();
      p.value[j] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    if (!entry.finite || entry.max_rel_err > tol) ok = false;
    report.entries.push_back(std::move(entry));
  }
  report.pass = ok;
  return report;
}

}  // namespace mvr::diff
