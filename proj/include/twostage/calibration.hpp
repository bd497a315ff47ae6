#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "twostage/inference.hpp"
#include "twostage/kernel.hpp"
#include "twostage/spectra.hpp"

namespace twostage {

// How the simulations obtain objects from a source.
struct SupplyOptions {
  // Permit pseudo-spectra from a fitted spline model when a source has too
  // few replicates.
  bool allow_resampling = true;
  int spline_bases = 300;
  int spline_order = 4;
};

// Draws trace/control objects from library sources. Spline models are fitted
// lazily per source and cached; the object is safe to share across threads.
class ObjectSupply {
 public:
  ObjectSupply(const SourceLibrary& library, SupplyOptions options);

  const SourceLibrary& library() const { return library_; }
  const SupplyOptions& options() const { return options_; }

  // Whether `count` objects can be furnished from source `source`.
  bool can_supply(std::size_t source, std::size_t count) const;

  // `count` objects: distinct real replicates when the source has enough,
  // otherwise pseudo-spectra (if allowed). `force_resample` always uses the
  // spline model.
  std::vector<Spectrum> draw(std::size_t source, std::size_t count, std::uint64_t seed,
                             bool force_resample = false) const;

  // Disjoint (control, trace) sets from one source.
  std::pair<std::vector<Spectrum>, std::vector<Spectrum>> draw_disjoint(std::size_t source, std::size_t n_control,
                                                                        std::size_t n_trace,
                                                                        std::uint64_t seed) const;

  const SplineSourceModel& spline_model(std::size_t source) const;
  const Spectrum& mean(std::size_t source) const { return means_[source]; }

 private:
  const SourceLibrary& library_;
  SupplyOptions options_;
  std::vector<Spectrum> means_;
  mutable std::mutex mutex_;
  mutable std::map<std::size_t, std::shared_ptr<const SplineSourceModel>> models_;
};

struct SimulationOptions {
  KernelSpec kernel;
  // Same-source simulation produces occasional s_n with SS_a far below SS_e
  // purely by chance; those draws are sampled exactly instead of aborting.
  TestOptions test = [] {
    TestOptions t;
    t.posterior.on_low_acceptance = LowAcceptance::kExact;
    return t;
  }();
  SupplyOptions supply;
  // Threads across outer iterations; inner test loops then run serially.
  unsigned threads = 1;
};

// Scores trace vs control objects and runs the test statistic.
TestOutcome test_objects(const std::vector<Spectrum>& trace, const std::vector<Spectrum>& control,
                         std::size_t K_inner, std::uint64_t seed, const KernelSpec& kernel,
                         const TestOptions& test);

struct SameSourceCase {
  std::size_t source;
  double h;
};

// K_outer same-source tests: sample a source uniformly with replacement
// among eligible sources, draw disjoint controls and traces from it, run the
// test. Iteration k depends only on (seed, k).
std::vector<SameSourceCase> simulate_same_source(const ObjectSupply& supply, std::size_t n_control,
                                                 std::size_t n_trace, std::size_t K_outer, std::size_t K_inner,
                                                 std::uint64_t seed, const SimulationOptions& options);

// Linear-interpolation (R type 7) quantile of an ascending-sorted sample.
double empirical_quantile(const std::vector<double>& sorted, double p);

struct CalibrationTable {
  std::vector<double> alpha_levels;
  std::vector<double> c_values;
  std::size_t K_outer = 0;
  std::size_t K_inner = 0;
  std::size_t n_control = 0;
  std::size_t n_trace = 0;
  std::uint64_t seed = 0;
  std::vector<double> h_samples;  // iteration order
  std::vector<std::size_t> sources;

  double c_alpha(double alpha) const;
};

// c(alpha) = alpha-quantile of same-source h values across the library.
CalibrationTable calibrate_c_alpha(const SourceLibrary& library, std::size_t n_control, std::size_t n_trace,
                                   const std::vector<double>& alpha_levels, std::size_t K_outer,
                                   std::size_t K_inner, std::uint64_t seed, const SimulationOptions& options);

struct PowerPoint {
  std::size_t iteration;
  std::size_t trace_source;
  std::size_t control_source;
  double dissimilarity;  // kernel score between the two source mean spectra
  double h;
  bool rejected;
};

struct PowerCurve {
  std::vector<PowerPoint> points;  // iteration order
  double c_alpha = 0.0;
  std::size_t n_control = 0;
  std::size_t n_trace = 0;
  std::uint64_t seed = 0;

  std::vector<PowerPoint> sorted_by_dissimilarity() const;
};

// Trace and control sources are drawn independently and uniformly (equal
// sources allowed). The (trace, control) source pairs depend only on
// (seed, k), so runs at different N see identical pairs. If either source
// is short of replicates, both sides are drawn as pseudo-spectra.
PowerCurve power_curve(const SourceLibrary& library, std::size_t n_control, std::size_t n_trace, double c_alpha,
                       std::size_t K, std::size_t K_inner, std::uint64_t seed, const SimulationOptions& options);

struct PowerBin {
  double lower;
  double upper;
  std::size_t count;
  double rejection_rate;
};

// Rejection rate within bins [edges[b], edges[b+1]); the last bin is closed.
std::vector<PowerBin> bin_power(const PowerCurve& curve, const std::vector<double>& edges);

// Equal-count bin edges over the dissimilarities (quantile edges).
std::vector<double> quantile_edges(const std::vector<double>& values, std::size_t bins);

struct RmpSourceResult {
  std::string source_id;
  double h;
  bool indistinguishable;  // h > c_alpha
};

struct RmpEstimate {
  double rmp = 0.0;
  std::size_t indistinguishable = 0;
  std::size_t compared = 0;
  std::vector<RmpSourceResult> per_source;
  std::string trace_source_id;
  std::size_t n_control = 0;
  std::size_t n_trace = 0;
  double c_alpha = 0.0;
  std::uint64_t seed = 0;
};

// Tests the fixed trace set against N controls from every source except
// `excluded_source`; rmp = (# with h > c_alpha) / (# compared).
RmpEstimate estimate_rmp(const std::vector<Spectrum>& trace, const SourceLibrary& library,
                         const std::string& excluded_source, std::size_t n_control, double c_alpha,
                         std::size_t K_inner, std::uint64_t seed, bool resample_controls,
                         const SimulationOptions& options);

// Same, reusing the spline models cached in `supply` (options.supply is
// ignored in favour of the supply's own settings).
RmpEstimate estimate_rmp(const std::vector<Spectrum>& trace, const ObjectSupply& supply,
                         const std::string& excluded_source, std::size_t n_control, double c_alpha,
                         std::size_t K_inner, std::uint64_t seed, bool resample_controls,
                         const SimulationOptions& options);

// ---------------------------------------------------------------------------
// Normality diagnostics of within-source score vectors

struct AxisDiagnostics {
  double variance;
  double skewness;
  double excess_kurtosis;
  double jarque_bera;
  double p_value;      // chi-square(2) tail of the Jarque-Bera statistic
  bool zero_variance;  // statistics above are 0 and meaningless
};

struct AxisPairDiagnostics {
  std::size_t axis_i;
  std::size_t axis_j;
  double correlation;
  double squared_correlation;  // correlation of the squared coordinates
};

struct NormalityReport {
  std::size_t vectors = 0;
  std::size_t dimension = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
  std::vector<AxisDiagnostics> original_axes;
  std::vector<AxisDiagnostics> eigen_axes;
  std::vector<AxisPairDiagnostics> eigen_pairs;
};

// Rows of `vectors` are score vectors.
NormalityReport normality_from_scores(const Eigen::MatrixXd& vectors);

// Two disjoint groups of `group_size` replicates per source (replicates
// [0, g) and [g, 2g)), each reduced to its C(g, 2) within-group scores.
NormalityReport normality_diagnostics(const SourceLibrary& library, const KernelSpec& kernel,
                                      std::size_t group_size = 3);

}  // namespace twostage
