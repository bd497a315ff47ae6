#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "twostage/errors.hpp"
#include "twostage/kernel.hpp"
#include "twostage/parallel.hpp"

namespace twostage {
namespace {

std::vector<bool> low_signal(const Eigen::VectorXd& x, double threshold) {
  const double cutoff = threshold * x.cwiseAbs().maxCoeff();
  std::vector<bool> low(static_cast<std::size_t>(x.size()));
  for (Eigen::Index k = 0; k < x.size(); ++k) low[static_cast<std::size_t>(k)] = std::abs(x[k]) <= cutoff;
  return low;
}

// Pearson correlation of a[k] against b[k + lag] over jointly kept points.
double lagged_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::vector<bool>& keep,
                          int lag) {
  const Eigen::Index size = a.size();
  const Eigen::Index begin = std::max<Eigen::Index>(0, -lag);
  const Eigen::Index end = std::min<Eigen::Index>(size, size - lag);
  auto kept = [&](Eigen::Index k) {
    return keep[static_cast<std::size_t>(k)] && keep[static_cast<std::size_t>(k + lag)];
  };

  double sum_a = 0.0, sum_b = 0.0;
  std::size_t count = 0;
  for (Eigen::Index k = begin; k < end; ++k) {
    if (!kept(k)) continue;
    sum_a += a[k];
    sum_b += b[k + lag];
    ++count;
  }
  if (count < 2) throw NumericError("too few informative points at lag " + std::to_string(lag));
  const double mean_a = sum_a / static_cast<double>(count);
  const double mean_b = sum_b / static_cast<double>(count);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (Eigen::Index k = begin; k < end; ++k) {
    if (!kept(k)) continue;
    const double da = a[k] - mean_a;
    const double db = b[k + lag] - mean_b;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw NumericError("zero-variance masked segment at lag " + std::to_string(lag) + "; correlation undefined");
  }
  return sab / std::sqrt(saa * sbb);
}

double ordered_score(const Spectrum& x, const Spectrum& y, const KernelSpec& spec) {
  const std::vector<bool> keep = informative_mask(x, y, spec.mask);
  const auto kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  const auto needed = static_cast<std::size_t>(2 * spec.lag_max + 2);
  if (kept < needed) {
    throw NumericError("degenerate mask: " + std::to_string(kept) + " informative points, need " +
                       std::to_string(needed));
  }

  double score = 0.0;
  if (spec.w_corr > 0.0) {
    double best = -1.0;
    for (int lag = spec.lag_min; lag <= spec.lag_max; ++lag) {
      best = std::max(best, lagged_correlation(x.values, y.values, keep, lag));
    }
    score += spec.w_corr * std::max(0.0, 1.0 - best);
  }
  if (spec.w_norm > 0.0) {
    double squared = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      if (!keep[static_cast<std::size_t>(k)]) continue;
      const double d = x.values[k] - y.values[k];
      squared += d * d;
    }
    score += spec.w_norm * std::sqrt(squared / static_cast<double>(kept));
  }
  return score;
}

}  // namespace

void validate(const KernelSpec& spec) {
  if (spec.lag_max < 0 || spec.lag_min != -spec.lag_max) throw InputError("lag range must be symmetric about 0");
  if (!(spec.w_corr >= 0.0) || !(spec.w_norm >= 0.0)) throw InputError("kernel weights must be nonnegative");
  if (!(spec.w_corr > 0.0) && !(spec.w_norm > 0.0)) throw InputError("kernel weights cannot both be zero");
  if (spec.mask.kind == MaskPolicy::Kind::kLowSignal && !(spec.mask.threshold >= 0.0 && spec.mask.threshold < 1.0)) {
    throw InputError("mask threshold must be in [0, 1)");
  }
}

std::vector<bool> informative_mask(const Spectrum& x, const Spectrum& y, const MaskPolicy& policy) {
  if (!same_grid(x.grid, y.grid)) throw InputError("spectra do not share a grid");
  const auto size = static_cast<std::size_t>(x.size());
  std::vector<bool> keep(size, true);
  if (policy.kind == MaskPolicy::Kind::kNone) return keep;

  const auto low_x = low_signal(x.values, policy.threshold);
  const auto low_y = low_signal(y.values, policy.threshold);
  std::size_t k = 0;
  while (k < size) {
    if (!(low_x[k] && low_y[k])) {
      ++k;
      continue;
    }
    std::size_t end = k;
    while (end < size && low_x[end] && low_y[end]) ++end;
    if (end - k > policy.min_run) std::fill(keep.begin() + static_cast<std::ptrdiff_t>(k),
                                            keep.begin() + static_cast<std::ptrdiff_t>(end), false);
    k = end;
  }
  return keep;
}

double kernel_score(const Spectrum& x, const Spectrum& y, const KernelSpec& spec) {
  if (!same_grid(x.grid, y.grid)) throw InputError("spectra do not share a grid");
  // Evaluate in a canonical argument order so the result is bitwise symmetric.
  const bool swap = std::lexicographical_compare(y.values.begin(), y.values.end(), x.values.begin(), x.values.end());
  return swap ? ordered_score(y, x, spec) : ordered_score(x, y, spec);
}

const char* to_string(ObjectRole role) { return role == ObjectRole::kControl ? "control" : "trace"; }

ScorePartition pairwise_scores(const std::vector<Spectrum>& trace, const std::vector<Spectrum>& control,
                               const KernelSpec& spec, unsigned threads) {
  validate(spec);
  if (control.size() < 3) throw InputError("need at least 3 control objects");
  if (trace.empty()) throw InputError("need at least 1 trace object");

  ScorePartition out;
  out.n_control = control.size();
  out.n_trace = trace.size();
  out.pairs_m = trace_pairs(out.n_control, out.n_trace);
  out.pairs_n = control_pairs(out.n_control);
  out.s_m.resize(static_cast<Eigen::Index>(out.pairs_m.size()));
  out.s_n.resize(static_cast<Eigen::Index>(out.pairs_n.size()));

  auto object = [&](std::size_t index) -> const Spectrum& {
    return index < out.n_control ? control[index] : trace[index - out.n_control];
  };
  const std::size_t m = out.pairs_m.size();
  parallel_for(m + out.pairs_n.size(), threads, [&](std::size_t k) {
    const ObjectPair p = k < m ? out.pairs_m[k] : out.pairs_n[k - m];
    double score = 0.0;
    try {
      score = kernel_score(object(p.i), object(p.j), spec);
    } catch (const std::exception& e) {
      throw NumericError("scoring pair (" + std::to_string(p.i) + ", " + std::to_string(p.j) + ") [" +
                         object(p.i).source_id + ":" + object(p.i).replicate_id + " vs " +
                         object(p.j).source_id + ":" + object(p.j).replicate_id + "]: " + e.what());
    }
    if (k < m) {
      out.s_m[static_cast<Eigen::Index>(k)] = score;
    } else {
      out.s_n[static_cast<Eigen::Index>(k - m)] = score;
    }
  });
  return out;
}

void write_scores_csv(std::ostream& out, const ScorePartition& partition) {
  const auto old_precision = out.precision();
  out << std::setprecision(17) << "i,j,role_i,role_j,block,score\n";
  auto row = [&](const ObjectPair& p, const char* block, double score) {
    out << p.i << ',' << p.j << ',' << to_string(partition.role(p.i)) << ',' << to_string(partition.role(p.j))
        << ',' << block << ',' << score << '\n';
  };
  for (std::size_t k = 0; k < partition.pairs_m.size(); ++k) row(partition.pairs_m[k], "s_m", partition.s_m[static_cast<Eigen::Index>(k)]);
  for (std::size_t k = 0; k < partition.pairs_n.size(); ++k) row(partition.pairs_n[k], "s_n", partition.s_n[static_cast<Eigen::Index>(k)]);
  out.precision(old_precision);
}

}  // namespace twostage
