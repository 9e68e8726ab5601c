#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

using LossAndGrad =
    std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)>;

// Compares analytic gradient coordinates against central finite differences
// on `probes` seeded random coordinates and returns the worst relative error,
// with relative error |a-b| / max(|a|, |b|, 1e-8).
inline double grad_check(const LossAndGrad& loss_and_grad,
                         const std::vector<double>& params, double step,
                         int probes, std::uint64_t seed) {
  if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
  if (probes < 1) throw ConfigError("grad_check: probes must be >= 1");
  if (params.empty()) throw ConfigError("grad_check: empty parameter vector");

  const auto [loss, analytic] = loss_and_grad(params);
  if (!std::isfinite(loss)) throw NumericError("grad_check: non-finite loss");

  Rng rng(seed);
  const int n = static_cast<int>(params.size());
  std::vector<int> coords;
  if (probes >= n) {
    coords.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  } else {
    coords = rng.sample_without_replacement(n, probes);
  }

  double max_rel = 0.0;
  std::vector<double> p = params;
  for (int c : coords) {
    const auto ci = static_cast<std::size_t>(c);
    const double orig = p[ci];
    p[ci] = orig + step;
    const double fp = loss_and_grad(p).first;
    p[ci] = orig - step;
    const double fm = loss_and_grad(p).first;
    p[ci] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite loss at probe");
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[ci];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace fedrep
