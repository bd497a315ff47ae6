#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "twostage/errors.hpp"
#include "twostage/kernel.hpp"

using namespace twostage;

namespace {

Grid index_grid(Eigen::Index size) {
  return std::make_shared<const Eigen::VectorXd>(Eigen::VectorXd::LinSpaced(size, 0.0, static_cast<double>(size - 1)));
}

Spectrum spectrum(const Grid& grid, Eigen::VectorXd values, std::string id = "x") {
  return {grid, std::move(values), std::move(id), "r1"};
}

Eigen::VectorXd gaussian_peak(Eigen::Index size, double center, double width, double height) {
  Eigen::VectorXd v(size);
  for (Eigen::Index k = 0; k < size; ++k) {
    const double d = (static_cast<double>(k) - center) / width;
    v[k] = height * std::exp(-0.5 * d * d);
  }
  return v;
}

std::vector<Spectrum> synthetic_objects(std::size_t count, std::uint64_t seed) {
  SyntheticConfig config;
  config.n_sources = count;
  config.n_replicates = 1;
  config.grid_size = 200;
  const auto lib = generate_synthetic_library(config, seed);
  std::vector<Spectrum> out;
  for (const auto& s : lib.sources()) out.push_back(s.replicates[0]);
  return out;
}

}  // namespace

TEST(KernelSpec, Validation) {
  KernelSpec spec;
  EXPECT_NO_THROW(validate(spec));
  spec.lag_min = -3;
  EXPECT_THROW(validate(spec), InputError);
  spec = {};
  spec.w_corr = 0.0;
  spec.w_norm = 0.0;
  EXPECT_THROW(validate(spec), InputError);
  spec = {};
  spec.w_norm = -1.0;
  EXPECT_THROW(validate(spec), InputError);
}

TEST(Mask, PolicyNoneKeepsEverything) {
  const auto grid = index_grid(50);
  const auto x = spectrum(grid, Eigen::VectorXd::Zero(50));
  const auto mask = informative_mask(x, x, {MaskPolicy::Kind::kNone, 0.02, 25});
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 50);
}

TEST(Mask, FlatZeroSpectraAreDegenerate) {
  const auto grid = index_grid(100);
  const auto x = spectrum(grid, Eigen::VectorXd::Zero(100));
  const auto mask = informative_mask(x, x, MaskPolicy{});
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 0);
  EXPECT_THROW(kernel_score(x, x, KernelSpec{}), NumericError);
}

TEST(Mask, SharedPeakWithFlatTails) {
  const Eigen::Index size = 1000;
  const auto grid = index_grid(size);
  const double center = 500.0, width = 30.0;
  const auto x = spectrum(grid, gaussian_peak(size, center, width, 1.0));
  const auto y = spectrum(grid, gaussian_peak(size, center, width, 0.6));
  MaskPolicy policy;
  const auto mask = informative_mask(x, y, policy);

  // Low where exp(-d^2 / 2w^2) <= threshold.
  const double half = width * std::sqrt(-2.0 * std::log(policy.threshold));
  const double tail_fraction = 1.0 - 2.0 * half / static_cast<double>(size);
  const double masked_fraction =
      static_cast<double>(std::count(mask.begin(), mask.end(), false)) / static_cast<double>(size);
  EXPECT_NEAR(masked_fraction, tail_fraction, static_cast<double>(policy.min_run) / static_cast<double>(size));
  // The peak itself is kept.
  EXPECT_TRUE(mask[500]);
}

TEST(Mask, ShortLowRunsAreKept) {
  const Eigen::Index size = 200;
  const auto grid = index_grid(size);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(size);
  v.segment(50, 10).setZero();   // run of 10 <= min_run: kept
  v.segment(100, 40).setZero();  // run of 40 > min_run: masked
  const auto x = spectrum(grid, v);
  const auto mask = informative_mask(x, x, MaskPolicy{});
  EXPECT_TRUE(mask[55]);
  EXPECT_FALSE(mask[120]);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), false), 40);
}

TEST(Mask, MaskingNeedsBothSpectraLow) {
  const Eigen::Index size = 200;
  const auto grid = index_grid(size);
  Eigen::VectorXd a = Eigen::VectorXd::Ones(size);
  a.segment(100, 60).setZero();
  const auto mask = informative_mask(spectrum(grid, a), spectrum(grid, Eigen::VectorXd::Ones(size)), MaskPolicy{});
  EXPECT_EQ(std::count(mask.begin(), mask.end(), false), 0);
}

TEST(KernelScore, SelfScoreIsZero) {
  for (const auto& x : synthetic_objects(5, 3)) EXPECT_NEAR(kernel_score(x, x, KernelSpec{}), 0.0, 1e-12);
}

TEST(KernelScore, SymmetricAndNonnegative) {
  const auto objects = synthetic_objects(15, 4);
  int checked = 0;
  for (std::size_t a = 0; a < objects.size() && checked < 100; ++a) {
    for (std::size_t b = a + 1; b < objects.size() && checked < 100; ++b, ++checked) {
      const double ab = kernel_score(objects[a], objects[b], KernelSpec{});
      const double ba = kernel_score(objects[b], objects[a], KernelSpec{});
      EXPECT_EQ(ab, ba);
      EXPECT_GE(ab, 0.0);
    }
  }
  EXPECT_EQ(checked, 100);
}

TEST(KernelScore, ShiftWithinLagRange) {
  const Eigen::Index size = 300;
  const auto grid = index_grid(size);
  Eigen::VectorXd base(size);
  for (Eigen::Index k = 0; k < size; ++k) base[k] = 1.0 + std::sin(0.07 * k) + 0.5 * std::cos(0.023 * k * k / 30.0);
  Eigen::VectorXd shifted(size);
  for (Eigen::Index k = 0; k < size; ++k) shifted[k] = base[std::max<Eigen::Index>(0, k - 5)];
  const auto x = spectrum(grid, base);
  const auto y = spectrum(grid, shifted);

  KernelSpec corr_only;
  corr_only.mask.kind = MaskPolicy::Kind::kNone;
  corr_only.w_norm = 0.0;
  EXPECT_NEAR(kernel_score(x, y, corr_only), 0.0, 1e-9);

  KernelSpec norm_only = corr_only;
  norm_only.w_corr = 0.0;
  norm_only.w_norm = 1.0;
  const double direct = std::sqrt((base - shifted).squaredNorm() / static_cast<double>(size));
  EXPECT_NEAR(kernel_score(x, y, norm_only), direct, 1e-12);

  KernelSpec both = corr_only;
  both.w_norm = 1.0;
  EXPECT_NEAR(kernel_score(x, y, both), direct, 1e-9);
}

TEST(KernelScore, ShiftOutsideLagRangeIsPenalized) {
  const Eigen::Index size = 300;
  const auto grid = index_grid(size);
  const auto x = spectrum(grid, gaussian_peak(size, 150.0, 4.0, 1.0));
  const auto y = spectrum(grid, gaussian_peak(size, 180.0, 4.0, 1.0));
  KernelSpec spec;
  spec.mask.kind = MaskPolicy::Kind::kNone;
  spec.w_norm = 0.0;
  EXPECT_GT(kernel_score(x, y, spec), 0.5);
}

TEST(KernelScore, ZeroVarianceSegment) {
  const auto grid = index_grid(100);
  KernelSpec spec;
  spec.mask.kind = MaskPolicy::Kind::kNone;
  EXPECT_THROW(kernel_score(spectrum(grid, Eigen::VectorXd::Constant(100, 2.0)),
                            spectrum(grid, Eigen::VectorXd::LinSpaced(100, 0.0, 1.0)), spec),
               NumericError);
}

TEST(KernelScore, GridMismatch) {
  const auto a = spectrum(index_grid(50), Eigen::VectorXd::LinSpaced(50, 0.0, 1.0));
  const auto b = spectrum(std::make_shared<const Eigen::VectorXd>(Eigen::VectorXd::LinSpaced(50, 1.0, 2.0)),
                          Eigen::VectorXd::LinSpaced(50, 0.0, 1.0));
  EXPECT_THROW(kernel_score(a, b, KernelSpec{}), InputError);
}

TEST(PairwiseScores, Sizes) {
  const auto objects = synthetic_objects(8, 5);
  const std::vector<Spectrum> control3(objects.begin(), objects.begin() + 3);
  const std::vector<Spectrum> trace1(objects.begin() + 3, objects.begin() + 4);
  auto p = pairwise_scores(trace1, control3, KernelSpec{});
  EXPECT_EQ(p.s_n.size(), 3);
  EXPECT_EQ(p.s_m.size(), 3);

  const std::vector<Spectrum> control5(objects.begin(), objects.begin() + 5);
  const std::vector<Spectrum> trace3(objects.begin() + 5, objects.end());
  p = pairwise_scores(trace3, control5, KernelSpec{});
  EXPECT_EQ(p.s_n.size(), 10);
  EXPECT_EQ(p.s_m.size(), 18);
}

TEST(PairwiseScores, MatchesBruteForceLoop) {
  const auto objects = synthetic_objects(9, 6);
  const std::vector<Spectrum> control(objects.begin(), objects.begin() + 6);
  const std::vector<Spectrum> trace(objects.begin() + 6, objects.end());
  const KernelSpec spec;
  for (unsigned threads : {1u, 3u}) {
    const auto p = pairwise_scores(trace, control, spec, threads);
    std::vector<double> m, n;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i < objects.size(); ++i) {
      for (std::size_t j = i + 1; j < objects.size(); ++j) {
        const double s = kernel_score(objects[i], objects[j], spec);
        (j >= control.size() ? m : n).push_back(s);
      }
    }
    ASSERT_EQ(static_cast<std::size_t>(p.s_m.size()), m.size());
    ASSERT_EQ(static_cast<std::size_t>(p.s_n.size()), n.size());
    for (std::size_t k = 0; k < m.size(); ++k) EXPECT_EQ(p.s_m[static_cast<Eigen::Index>(k)], m[k]);
    for (std::size_t k = 0; k < n.size(); ++k) EXPECT_EQ(p.s_n[static_cast<Eigen::Index>(k)], n[k]);

    for (const auto& pair : p.pairs_m) {
      EXPECT_TRUE(seen.insert({pair.i, pair.j}).second);
      EXPECT_EQ(p.role(pair.j), ObjectRole::kTrace);
    }
    for (const auto& pair : p.pairs_n) {
      EXPECT_TRUE(seen.insert({pair.i, pair.j}).second);
      EXPECT_EQ(p.role(pair.i), ObjectRole::kControl);
      EXPECT_EQ(p.role(pair.j), ObjectRole::kControl);
    }
    EXPECT_EQ(seen.size(), pair_count(objects.size()));
  }
}

TEST(PairwiseScores, PreconditionsAndErrorContext) {
  const auto objects = synthetic_objects(4, 8);
  EXPECT_THROW(pairwise_scores({objects[0]}, {objects[1], objects[2]}, KernelSpec{}), InputError);
  EXPECT_THROW(pairwise_scores({}, {objects[0], objects[1], objects[2]}, KernelSpec{}), InputError);

  auto flat = objects[3];
  flat.values.setZero();
  flat.source_id = "FLAT";
  try {
    pairwise_scores({flat}, {objects[0], objects[1], objects[2]}, KernelSpec{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("(0, 3)"), std::string::npos) << what;
    EXPECT_NE(what.find("FLAT"), std::string::npos) << what;
  }
}

TEST(PairwiseScores, CsvExport) {
  const auto objects = synthetic_objects(4, 9);
  const auto p = pairwise_scores({objects[3]}, {objects[0], objects[1], objects[2]}, KernelSpec{});
  std::stringstream out;
  write_scores_csv(out, p);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, "i,j,role_i,role_j,block,score");
  std::getline(out, line);
  EXPECT_EQ(line.rfind("0,3,control,trace,s_m,", 0), 0u) << line;
  int rows = 1;
  while (std::getline(out, line)) ++rows;
  EXPECT_EQ(rows, 6);
}
