#include <algorithm>
#include <cmath>

#include "twostage/calibration.hpp"
#include "twostage/errors.hpp"
#include "twostage/parallel.hpp"

namespace twostage {
namespace {

TestOptions serial(const TestOptions& test) {
  TestOptions out = test;
  out.threads = 1;
  return out;
}

}  // namespace

TestOutcome test_objects(const std::vector<Spectrum>& trace, const std::vector<Spectrum>& control,
                         std::size_t K_inner, std::uint64_t seed, const KernelSpec& kernel,
                         const TestOptions& test) {
  const auto scores = pairwise_scores(trace, control, kernel);
  return test_statistic(scores.s_m, scores.s_n, control.size(), trace.size(), K_inner, seed, test);
}

std::vector<SameSourceCase> simulate_same_source(const ObjectSupply& supply, std::size_t n_control,
                                                 std::size_t n_trace, std::size_t K_outer, std::size_t K_inner,
                                                 std::uint64_t seed, const SimulationOptions& options) {
  std::vector<std::size_t> eligible;
  for (std::size_t s = 0; s < supply.library().size(); ++s) {
    if (supply.can_supply(s, n_control + n_trace)) eligible.push_back(s);
  }
  if (eligible.empty()) {
    throw InputError("no source can furnish " + std::to_string(n_control + n_trace) + " objects");
  }
  const TestOptions inner = serial(options.test);
  std::vector<SameSourceCase> out(K_outer);
  parallel_for(K_outer, options.threads, [&](std::size_t k) {
    RandomStream selection(derive_seed(seed, StreamTag::kSelection, k));
    const std::size_t source = eligible[selection.below(eligible.size())];
    auto [control, trace] = supply.draw_disjoint(source, n_control, n_trace, derive_seed(seed, StreamTag::kObjects, k));
    const auto outcome =
        test_objects(trace, control, K_inner, derive_seed(seed, StreamTag::kTest, k), options.kernel, inner);
    out[k] = {source, outcome.h};
  });
  return out;
}

double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("quantile level must be in [0, 1]");
  const double position = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(position));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = position - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double CalibrationTable::c_alpha(double alpha) const {
  for (std::size_t i = 0; i < alpha_levels.size(); ++i) {
    if (std::abs(alpha_levels[i] - alpha) < 1e-12) return c_values[i];
  }
  throw MissingPrerequisite("calibration has no entry for alpha = " + std::to_string(alpha));
}

CalibrationTable calibrate_c_alpha(const SourceLibrary& library, std::size_t n_control, std::size_t n_trace,
                                   const std::vector<double>& alpha_levels, std::size_t K_outer,
                                   std::size_t K_inner, std::uint64_t seed, const SimulationOptions& options) {
  if (K_outer < 500) throw InputError("calibration needs K_outer >= 500");
  if (alpha_levels.empty()) throw InputError("no alpha levels requested");
  for (double a : alpha_levels) {
    if (!(a > 0.0 && a < 1.0)) throw InputError("alpha levels must lie in (0, 1)");
  }
  const ObjectSupply supply(library, options.supply);
  const auto cases = simulate_same_source(supply, n_control, n_trace, K_outer, K_inner, seed, options);

  CalibrationTable table;
  table.alpha_levels = alpha_levels;
  table.K_outer = K_outer;
  table.K_inner = K_inner;
  table.n_control = n_control;
  table.n_trace = n_trace;
  table.seed = seed;
  for (const auto& c : cases) {
    table.h_samples.push_back(c.h);
    table.sources.push_back(c.source);
  }
  std::vector<double> sorted = table.h_samples;
  std::sort(sorted.begin(), sorted.end());
  for (double a : alpha_levels) table.c_values.push_back(empirical_quantile(sorted, a));
  return table;
}

std::vector<PowerPoint> PowerCurve::sorted_by_dissimilarity() const {
  std::vector<PowerPoint> out = points;
  std::stable_sort(out.begin(), out.end(),
                   [](const PowerPoint& a, const PowerPoint& b) { return a.dissimilarity < b.dissimilarity; });
  return out;
}

PowerCurve power_curve(const SourceLibrary& library, std::size_t n_control, std::size_t n_trace, double c_alpha,
                       std::size_t K, std::size_t K_inner, std::uint64_t seed, const SimulationOptions& options) {
  if (library.size() < 2) throw InputError("power curve needs at least 2 sources");
  if (!(c_alpha >= 0.0 && c_alpha <= 1.0)) throw InputError("c_alpha must lie in [0, 1]");
  const ObjectSupply supply(library, options.supply);
  for (std::size_t s = 0; s < library.size(); ++s) {
    if (!supply.can_supply(s, n_control + n_trace)) {
      throw InputError("source " + library.sources()[s].id + " cannot furnish " +
                       std::to_string(n_control + n_trace) + " objects");
    }
  }

  const TestOptions inner = serial(options.test);
  PowerCurve curve;
  curve.c_alpha = c_alpha;
  curve.n_control = n_control;
  curve.n_trace = n_trace;
  curve.seed = seed;
  curve.points.resize(K);
  parallel_for(K, options.threads, [&](std::size_t k) {
    RandomStream selection(derive_seed(seed, StreamTag::kSelection, k));
    const std::size_t trace_source = selection.below(library.size());
    const std::size_t control_source = selection.below(library.size());
    const std::uint64_t objects_seed = derive_seed(seed, StreamTag::kObjects, k);

    std::vector<Spectrum> trace, control;
    if (trace_source == control_source) {
      std::tie(control, trace) = supply.draw_disjoint(trace_source, n_control, n_trace, objects_seed);
    } else {
      // Pseudo-spectra are smoother than measured ones, so both sides are
      // resampled whenever either side has to be.
      const auto& sources = library.sources();
      const bool resample = sources[trace_source].replicates.size() < n_trace ||
                            sources[control_source].replicates.size() < n_control;
      trace = supply.draw(trace_source, n_trace, derive_seed(objects_seed, 0), resample);
      control = supply.draw(control_source, n_control, derive_seed(objects_seed, 1), resample);
    }
    const double dissimilarity = trace_source == control_source
                                     ? 0.0
                                     : kernel_score(supply.mean(trace_source), supply.mean(control_source),
                                                    options.kernel);
    const auto outcome =
        test_objects(trace, control, K_inner, derive_seed(seed, StreamTag::kTest, k), options.kernel, inner);
    curve.points[k] = {k, trace_source, control_source, dissimilarity, outcome.h,
                       decide(outcome.h, c_alpha) == Decision::kRejectH1};
  });
  return curve;
}

std::vector<PowerBin> bin_power(const PowerCurve& curve, const std::vector<double>& edges) {
  if (edges.size() < 2) throw InputError("need at least two bin edges");
  std::vector<PowerBin> bins;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) bins.push_back({edges[b], edges[b + 1], 0, 0.0});
  std::vector<std::size_t> rejected(bins.size(), 0);
  for (const auto& p : curve.points) {
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const bool last = b + 1 == bins.size();
      if (p.dissimilarity >= bins[b].lower && (p.dissimilarity < bins[b].upper || (last && p.dissimilarity <= bins[b].upper))) {
        ++bins[b].count;
        rejected[b] += p.rejected ? 1 : 0;
        break;
      }
    }
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].rejection_rate = bins[b].count ? static_cast<double>(rejected[b]) / static_cast<double>(bins[b].count) : 0.0;
  }
  return bins;
}

std::vector<double> quantile_edges(const std::vector<double>& values, std::size_t bins) {
  if (bins == 0) throw InputError("need at least one bin");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  for (std::size_t b = 0; b <= bins; ++b) {
    edges.push_back(empirical_quantile(sorted, static_cast<double>(b) / static_cast<double>(bins)));
  }
  return edges;
}

RmpEstimate estimate_rmp(const std::vector<Spectrum>& trace, const SourceLibrary& library,
                         const std::string& excluded_source, std::size_t n_control, double c_alpha,
                         std::size_t K_inner, std::uint64_t seed, bool resample_controls,
                         const SimulationOptions& options) {
  const ObjectSupply supply(library, options.supply);
  return estimate_rmp(trace, supply, excluded_source, n_control, c_alpha, K_inner, seed, resample_controls, options);
}

RmpEstimate estimate_rmp(const std::vector<Spectrum>& trace, const ObjectSupply& supply,
                         const std::string& excluded_source, std::size_t n_control, double c_alpha,
                         std::size_t K_inner, std::uint64_t seed, bool resample_controls,
                         const SimulationOptions& options) {
  if (trace.empty()) throw InputError("need at least one trace object");
  if (!(c_alpha >= 0.0 && c_alpha <= 1.0)) throw InputError("c_alpha must lie in [0, 1]");
  const SourceLibrary& library = supply.library();
  std::vector<std::size_t> population;
  for (std::size_t s = 0; s < library.size(); ++s) {
    if (library.sources()[s].id == excluded_source) continue;
    const std::size_t have = library.sources()[s].replicates.size();
    const bool ok = resample_controls ? have >= 2 : supply.can_supply(s, n_control);
    if (!ok) {
      throw InputError("source " + library.sources()[s].id + " cannot furnish " + std::to_string(n_control) +
                       " control objects");
    }
    population.push_back(s);
  }
  if (population.empty()) throw InputError("no sources left to compare against");

  const TestOptions inner = serial(options.test);
  RmpEstimate out;
  out.per_source.resize(population.size());
  parallel_for(population.size(), options.threads, [&](std::size_t a) {
    const std::size_t s = population[a];
    const auto control = supply.draw(s, n_control, derive_seed(seed, StreamTag::kObjects, s), resample_controls);
    const auto outcome =
        test_objects(trace, control, K_inner, derive_seed(seed, StreamTag::kTest, s), options.kernel, inner);
    out.per_source[a] = {library.sources()[s].id, outcome.h, outcome.h > c_alpha};
  });
  for (const auto& r : out.per_source) out.indistinguishable += r.indistinguishable ? 1 : 0;
  out.compared = population.size();
  out.rmp = static_cast<double>(out.indistinguishable) / static_cast<double>(out.compared);
  out.trace_source_id = excluded_source;
  out.n_control = n_control;
  out.n_trace = trace.size();
  out.c_alpha = c_alpha;
  out.seed = seed;
  return out;
}

}  // namespace twostage
