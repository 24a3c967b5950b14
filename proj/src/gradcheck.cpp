#include <algorithm>
#include <cmath>

#include "dacpol/errors.hpp"
#include "dacpol/nnet.hpp"

namespace dacpol::nnet {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradient(std::span<double* const> params, std::span<const double> analytic,
                               const std::function<Probe()>& evaluate, double h) {
  if (params.size() != analytic.size()) throw ShapeError("parameter and gradient counts differ");
  GradCheckReport report;
  const Probe base = evaluate();
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& p = *params[i];
    const double saved = p;
    p = saved + h;
    const Probe plus = evaluate();
    p = saved - h;
    const Probe minus = evaluate();
    p = saved;
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric);
    ++report.checked;
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace dacpol::nnet
