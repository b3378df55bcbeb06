#pragma once

#include <vector>

#include "airfl/bound.hpp"
#include "airfl/recovery.hpp"

namespace airfl {

struct SweepRow {
  double m_over_d = 0.0;
  BoundBreakdown breakdown;
  double rescaled = 0.0;
};

/// Bound versus M/d: v^(t) comes from the estimator's offline prediction at
/// each compression ratio, everything else from `tmpl`.
inline std::vector<SweepRow> bound_sweep_md(const BoundInputs& tmpl, const std::vector<double>& md_grid,
                                            const EstimatorConfig& est, double sigma2) {
  std::vector<SweepRow> rows;
  rows.reserve(md_grid.size());
  for (double md : md_grid) {
    require(md > 0.0 && md <= 1.0, "bound_sweep_md: grid values must be in (0, 1]");
    BoundInputs in = tmpl;
    in.vseq = vseq_for_bound(in.T, sigma2, md, est);
    rows.push_back({md, eval_bound(in), rescaled_bound(in)});
  }
  return rows;
}

}  // namespace airfl
