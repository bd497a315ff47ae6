#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "twostage/calibration.hpp"
#include "twostage/errors.hpp"

using namespace twostage;

namespace {

SourceLibrary library(std::size_t sources, std::size_t replicates, double separation, std::uint64_t seed,
                      std::vector<double> scales = {}) {
  SyntheticConfig config;
  config.n_sources = sources;
  config.n_replicates = replicates;
  config.grid_size = 200;
  config.separation = separation;
  config.source_scales = std::move(scales);
  return generate_synthetic_library(config, seed);
}

SimulationOptions fast_options() {
  SimulationOptions options;
  options.supply.spline_bases = 40;
  return options;
}

}  // namespace

TEST(Quantile, MatchesLinearInterpolationDefinition) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(empirical_quantile(x, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(x, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(x, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(empirical_quantile(x, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(empirical_quantile({7.0}, 0.3), 7.0);
  EXPECT_THROW(empirical_quantile({}, 0.5), InputError);
  EXPECT_THROW(empirical_quantile(x, 1.5), InputError);
}

TEST(ObjectSupply, RealReplicatesAreDisjoint) {
  const auto lib = library(3, 10, 1.0, 1);
  ObjectSupply supply(lib, fast_options().supply);
  const auto [control, trace] = supply.draw_disjoint(1, 5, 3, 42);
  ASSERT_EQ(control.size(), 5u);
  ASSERT_EQ(trace.size(), 3u);
  std::set<std::string> ids;
  for (const auto& s : control) ids.insert(s.replicate_id);
  for (const auto& s : trace) ids.insert(s.replicate_id);
  EXPECT_EQ(ids.size(), 8u);
  for (const auto& s : control) EXPECT_EQ(s.source_id, lib.sources()[1].id);
}

TEST(ObjectSupply, ResamplesWhenShort) {
  const auto lib = library(2, 4, 1.0, 2);
  ObjectSupply supply(lib, fast_options().supply);
  EXPECT_TRUE(supply.can_supply(0, 8));
  const auto objects = supply.draw(0, 8, 5);
  ASSERT_EQ(objects.size(), 8u);
  EXPECT_EQ(objects[0].replicate_id.rfind("pseudo", 0), 0u);
  EXPECT_EQ(supply.draw(0, 8, 5)[3].values, objects[3].values);

  SupplyOptions purist = fast_options().supply;
  purist.allow_resampling = false;
  ObjectSupply strict(lib, purist);
  EXPECT_FALSE(strict.can_supply(0, 8));
  EXPECT_THROW(strict.draw(0, 8, 5), InputError);
}

TEST(SameSource, DeterministicAcrossThreadCounts) {
  const auto lib = library(4, 9, 1.0, 3);
  auto options = fast_options();
  ObjectSupply supply(lib, options.supply);
  const auto a = simulate_same_source(supply, 5, 3, 12, 100, 9, options);
  options.threads = 3;
  const auto b = simulate_same_source(supply, 5, 3, 12, 100, 9, options);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].source, b[k].source);
    EXPECT_EQ(a[k].h, b[k].h);
    EXPECT_LT(a[k].source, 4u);
  }
}

TEST(Calibration, TableInvariantsAndReproducibility) {
  const auto lib = library(5, 8, 1.0, 4);
  const std::vector<double> alphas{0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95};
  const auto table = calibrate_c_alpha(lib, 5, 3, alphas, 500, 100, 17, fast_options());
  ASSERT_EQ(table.c_values.size(), alphas.size());
  ASSERT_EQ(table.h_samples.size(), 500u);
  EXPECT_TRUE(std::is_sorted(table.c_values.begin(), table.c_values.end()));
  for (double c : table.c_values) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
  std::vector<double> sorted = table.h_samples;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(table.c_alpha(0.25), empirical_quantile(sorted, 0.25));
  EXPECT_THROW(table.c_alpha(0.01), MissingPrerequisite);

  const auto again = calibrate_c_alpha(lib, 5, 3, alphas, 500, 100, 17, fast_options());
  EXPECT_EQ(again.c_values, table.c_values);
  EXPECT_EQ(again.h_samples, table.h_samples);
}

TEST(Calibration, Preconditions) {
  const auto lib = library(3, 8, 1.0, 5);
  EXPECT_THROW(calibrate_c_alpha(lib, 5, 3, {0.05}, 499, 100, 1, fast_options()), InputError);
  EXPECT_THROW(calibrate_c_alpha(lib, 5, 3, {1.5}, 500, 100, 1, fast_options()), InputError);
  auto purist = fast_options();
  purist.supply.allow_resampling = false;
  EXPECT_THROW(calibrate_c_alpha(library(3, 4, 1.0, 5), 5, 3, {0.05}, 500, 100, 1, purist), InputError);
}

TEST(Power, CurveContract) {
  const auto lib = library(6, 9, 2.0, 6);
  const double c = 0.05;
  const auto curve = power_curve(lib, 5, 3, c, 40, 100, 8, fast_options());
  ASSERT_EQ(curve.points.size(), 40u);
  bool saw_same = false;
  for (const auto& p : curve.points) {
    EXPECT_EQ(p.rejected, p.h <= c);
    EXPECT_GE(p.dissimilarity, 0.0);
    if (p.trace_source == p.control_source) {
      saw_same = true;
      EXPECT_EQ(p.dissimilarity, 0.0);
    }
  }
  EXPECT_TRUE(saw_same);
  const auto sorted = curve.sorted_by_dissimilarity();
  EXPECT_TRUE(std::is_sorted(sorted.begin(), sorted.end(),
                             [](const PowerPoint& a, const PowerPoint& b) { return a.dissimilarity < b.dissimilarity; }));

  // Source pairs depend only on (seed, iteration), not on N.
  const auto other = power_curve(lib, 7, 3, c, 40, 100, 8, fast_options());
  for (std::size_t k = 0; k < 40; ++k) {
    EXPECT_EQ(other.points[k].trace_source, curve.points[k].trace_source);
    EXPECT_EQ(other.points[k].control_source, curve.points[k].control_source);
  }
}

TEST(Power, Binning) {
  PowerCurve curve;
  for (std::size_t k = 0; k < 10; ++k) curve.points.push_back({k, 0, 1, static_cast<double>(k), 0.0, k >= 5});
  const auto edges = quantile_edges({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 2);
  ASSERT_EQ(edges.size(), 3u);
  const auto bins = bin_power(curve, edges);
  ASSERT_EQ(bins.size(), 2u);
  EXPECT_EQ(bins[0].count + bins[1].count, 10u);
  EXPECT_EQ(bins[0].rejection_rate, 0.0);
  EXPECT_EQ(bins[1].rejection_rate, 1.0);
}

TEST(Rmp, RationalEstimateAndExclusion) {
  const auto lib = library(6, 9, 1.0, 7);
  ObjectSupply supply(lib, fast_options().supply);
  const auto trace = supply.draw(2, 3, 99);
  const auto est = estimate_rmp(trace, lib, lib.sources()[2].id, 5, 0.05, 100, 3, false, fast_options());
  EXPECT_EQ(est.compared, 5u);
  EXPECT_EQ(est.per_source.size(), 5u);
  EXPECT_EQ(est.rmp, static_cast<double>(est.indistinguishable) / 5.0);
  std::size_t count = 0;
  for (const auto& r : est.per_source) {
    EXPECT_NE(r.source_id, lib.sources()[2].id);
    EXPECT_EQ(r.indistinguishable, r.h > 0.05);
    count += r.indistinguishable;
  }
  EXPECT_EQ(count, est.indistinguishable);
  EXPECT_EQ(est.trace_source_id, lib.sources()[2].id);
}

TEST(Rmp, IdenticalSourcesGiveOneMinusAlpha) {
  // Every comparison is a same-source test, so each passes with probability
  // about 1 - alpha.
  const auto lib = library(20, 8, 0.0, 8);
  const auto options = fast_options();
  const auto table = calibrate_c_alpha(lib, 5, 3, {0.05}, 500, 200, 10, options);
  ObjectSupply supply(lib, options.supply);
  double total = 0.0;
  const int traces = 5;
  for (int t = 0; t < traces; ++t) {
    const auto trace = supply.draw(static_cast<std::size_t>(t), 3, 1000 + static_cast<std::uint64_t>(t));
    total += estimate_rmp(trace, lib, lib.sources()[static_cast<std::size_t>(t)].id, 5, table.c_alpha(0.05), 200,
                          static_cast<std::uint64_t>(t), false, options)
                 .rmp;
  }
  EXPECT_NEAR(total / traces, 0.95, 0.07);
}

TEST(Rmp, IsolatedSourceIsRarelyMatched) {
  std::vector<double> scales(12, 0.3);
  scales[0] = 8.0;
  const auto lib = library(12, 8, 1.0, 9, scales);
  const auto options = fast_options();
  ObjectSupply supply(lib, options.supply);
  const auto trace = supply.draw(0, 3, 5);
  const auto est = estimate_rmp(trace, lib, lib.sources()[0].id, 5, 0.05, 200, 4, false, options);
  EXPECT_LE(est.rmp, 1.0 / 11.0 + 0.02);
}

TEST(Normality, ModelScoresLookNormal) {
  std::mt19937_64 rng(10);
  const int vectors = 400;
  Eigen::MatrixXd rows(vectors, 3);
  for (int r = 0; r < vectors; ++r) rows.row(r) = oracle::simulate_scores(3, 1.0, 0.3, 0.2, rng).transpose();
  const auto report = normality_from_scores(rows);
  EXPECT_EQ(report.dimension, 3u);
  EXPECT_EQ(report.vectors, 400u);
  EXPECT_TRUE(std::is_sorted(report.eigenvalues.data(), report.eigenvalues.data() + 3, std::greater<>()));
  int rejections = 0;
  for (const auto& axes : {report.original_axes, report.eigen_axes})
    for (const auto& a : axes) rejections += a.p_value < 0.05;
  // Six tests at level 0.05: two or more rejections happens about 3% of the time.
  EXPECT_LE(rejections, 2);
  EXPECT_EQ(report.eigen_pairs.size(), 3u);
}

TEST(Normality, TripletCountAndZeroVariance) {
  const auto lib = library(5, 7, 1.0, 11);
  const auto report = normality_diagnostics(lib, KernelSpec{}, 3);
  EXPECT_EQ(report.vectors, 10u);
  EXPECT_EQ(report.dimension, 3u);
  EXPECT_THROW(normality_diagnostics(library(3, 5, 1.0, 12), KernelSpec{}, 3), InputError);

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(6, 3, 2.0);
  const auto flat = normality_from_scores(constant);
  for (const auto& a : flat.original_axes) {
    EXPECT_TRUE(a.zero_variance);
    EXPECT_TRUE(std::isfinite(a.skewness));
    EXPECT_TRUE(std::isfinite(a.p_value));
  }
}
