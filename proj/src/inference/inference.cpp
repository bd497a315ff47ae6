#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "twostage/errors.hpp"
#include "twostage/inference.hpp"
#include "twostage/layout.hpp"
#include "twostage/parallel.hpp"

namespace twostage {
namespace {

double shared_objects(const ObjectPair& a, const ObjectPair& b) {
  return static_cast<double>((a.i == b.i) + (a.i == b.j) + (a.j == b.i) + (a.j == b.j));
}

void require_length(const Eigen::VectorXd& v, Eigen::Index expected, const char* what) {
  if (v.size() != expected) {
    throw InputError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                     std::to_string(expected));
  }
}

}  // namespace

ConditionalStructure::ConditionalStructure(std::size_t n_control, std::size_t n_trace)
    : n_control_(n_control), n_trace_(n_trace) {
  if (n_control < 3) throw InputError("need at least 3 control objects");
  if (n_trace < 1) throw InputError("need at least 1 trace object");
  const auto rows_m = trace_pairs(n_control, n_trace);
  const auto rows_n = control_pairs(n_control);
  const auto m = static_cast<Eigen::Index>(rows_m.size());
  const auto n = static_cast<Eigen::Index>(rows_n.size());

  a_.resize(m, m);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < m; ++c) a_(r, c) = shared_objects(rows_m[static_cast<std::size_t>(r)], rows_m[static_cast<std::size_t>(c)]);
  b_.resize(m, n);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < n; ++c) b_(r, c) = shared_objects(rows_m[static_cast<std::size_t>(r)], rows_n[static_cast<std::size_t>(c)]);
  b_one_ = b_.rowwise().sum();

  const auto proj = projectors_for(n_control);
  for (auto& bp : b_pi_) bp.resize(m, n);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::VectorXd row = b_.row(r).transpose();
    const Eigen::VectorXd mean = proj->apply_mean(row);
    const Eigen::VectorXd object = proj->apply_object(row);
    b_pi_[0].row(r) = mean.transpose();
    b_pi_[1].row(r) = object.transpose();
    b_pi_[2].row(r) = (row - mean - object).transpose();
  }
  for (std::size_t k = 0; k < 3; ++k) {
    Eigen::MatrixXd g = b_pi_[k] * b_.transpose();
    g_[k] = 0.5 * (g + g.transpose());
  }
}

std::shared_ptr<const ConditionalStructure> conditional_structure_for(std::size_t n_control, std::size_t n_trace) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const ConditionalStructure>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{n_control, n_trace}];
  if (!slot) slot = std::make_shared<const ConditionalStructure>(n_control, n_trace);
  return slot;
}

ConditionalScoreModel::ConditionalScoreModel(const Eigen::VectorXd& s_n, std::size_t n_control, std::size_t n_trace)
    : structure_(conditional_structure_for(n_control, n_trace)) {
  require_length(s_n, structure_->n(), "s_n");
  for (int k = 0; k < 3; ++k) projected_scores_[static_cast<std::size_t>(k)] = structure_->projected_cross(k) * s_n;
}

ConditionalMoments ConditionalScoreModel::moments(const ModelParams& params) const {
  const auto ev = eigenvalues(params, structure_->n_control());
  if (!(ev.lambda1 > 0.0) || !(ev.lambda2 > 0.0) || !(ev.lambda3 > 0.0)) {
    throw NumericError("covariance eigenvalues must be positive");
  }
  const double sa = params.sigma2_a;
  const Eigen::Index m = structure_->m();

  // Sigma_nn^{-1} (s_n - theta 1) only touches the mean eigenspace through theta.
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(m, params.theta);
  if (sa > 0.0) {
    mean += sa * ((projected_scores_[0] - params.theta * structure_->cross_row_sums()) / ev.lambda1 +
                  projected_scores_[1] / ev.lambda2 + projected_scores_[2] / ev.lambda3);
  }

  Eigen::MatrixXd cov = sa * structure_->shared_trace();
  cov.diagonal().array() += params.sigma2_e;
  if (sa > 0.0) {
    cov -= (sa * sa) * (structure_->gram(0) / ev.lambda1 + structure_->gram(1) / ev.lambda2 +
                        structure_->gram(2) / ev.lambda3);
  }
  return factor_moments(std::move(mean), std::move(cov));
}

ConditionalMoments conditional_moments(const Eigen::VectorXd& s_n, const ModelParams& params, std::size_t n_control,
                                       std::size_t n_trace) {
  validate(params);
  return ConditionalScoreModel(s_n, n_control, n_trace).moments(params);
}

ConditionalMoments factor_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  const Eigen::Index m = cov.rows();
  Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  const double base_jitter = 1e-12 * sym.trace() / static_cast<double>(m);
  double jitter = 0.0;
  for (int attempt = 0; attempt <= 4; ++attempt) {
    if (attempt > 0) {
      const double next = base_jitter * std::pow(10.0, attempt - 1);
      sym.diagonal().array() += next - jitter;
      jitter = next;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sym);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd factor = llt.matrixL();
    if (!(factor.diagonal().array() > 0.0).all()) continue;
    const double log_det = 2.0 * factor.diagonal().array().log().sum();
    return {std::move(mean), std::move(sym), std::move(factor), log_det};
  }
  sym.diagonal().array() -= jitter;
  const double smallest = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues()[0];
  throw NumericError("conditional covariance is not positive definite (smallest eigenvalue " +
                     std::to_string(smallest) + ")");
}

Eigen::VectorXd sample_sm_star(const ConditionalMoments& moments, RandomStream& rng) {
  const Eigen::VectorXd z = rng.normal_vector(moments.mean.size());
  return moments.mean + moments.factor.triangularView<Eigen::Lower>() * z;
}

double conditional_log_likelihood(const Eigen::VectorXd& s_m, const ConditionalMoments& moments) {
  require_length(s_m, moments.mean.size(), "s_m");
  if (!std::isfinite(moments.log_det)) throw NumericError("degenerate conditional covariance factor");
  const Eigen::VectorXd y = moments.factor.triangularView<Eigen::Lower>().solve(s_m - moments.mean);
  const double m = static_cast<double>(s_m.size());
  return -0.5 * (m * std::log(2.0 * std::numbers::pi) + moments.log_det + y.squaredNorm());
}

const char* to_string(Decision decision) {
  return decision == Decision::kRejectH1 ? "reject_H1" : "fail_to_reject_H1";
}

namespace {

template <typename ParamsAt>
TestOutcome run_statistic(const Eigen::VectorXd& s_m, const Eigen::VectorXd& s_n, std::size_t n_control,
                          std::size_t n_trace, std::size_t K, std::uint64_t seed, unsigned threads,
                          ParamsAt&& params_at) {
  const ConditionalScoreModel model(s_n, n_control, n_trace);
  require_length(s_m, model.m(), "s_m");
  std::vector<unsigned char> hit(K, 0);
  parallel_for(K, threads, [&](std::size_t k) {
    const ConditionalMoments mom = model.moments(params_at(k));
    RandomStream rng(derive_seed(seed, StreamTag::kConditional, k));
    const Eigen::VectorXd star = sample_sm_star(mom, rng);
    hit[k] = conditional_log_likelihood(s_m, mom) >= conditional_log_likelihood(star, mom) ? 1 : 0;
  });
  std::size_t count = 0;
  for (unsigned char c : hit) count += c;

  TestOutcome out;
  out.K = K;
  out.h = static_cast<double>(count) / static_cast<double>(K);
  out.mc_std_err = std::sqrt(out.h * (1.0 - out.h) / static_cast<double>(K));
  out.seed = seed;
  out.n_control = n_control;
  out.n_trace = n_trace;
  return out;
}

}  // namespace

TestOutcome test_statistic(const Eigen::VectorXd& s_m, const Eigen::VectorXd& s_n, std::size_t n_control,
                           std::size_t n_trace, std::size_t K, std::uint64_t seed, const TestOptions& options) {
  if (K < 100) throw InputError("test statistic needs K >= 100 iterations");
  const auto draws = sample_posterior(s_n, n_control, options.prior, K, seed, options.posterior);
  return run_statistic(s_m, s_n, n_control, n_trace, K, seed, options.threads,
                       [&](std::size_t k) { return draws[k].params(); });
}

TestOutcome test_statistic_known_params(const Eigen::VectorXd& s_m, const Eigen::VectorXd& s_n,
                                        std::size_t n_control, std::size_t n_trace, const ModelParams& params,
                                        std::size_t K, std::uint64_t seed, unsigned threads) {
  if (K < 100) throw InputError("test statistic needs K >= 100 iterations");
  validate(params);
  return run_statistic(s_m, s_n, n_control, n_trace, K, seed, threads, [&](std::size_t) { return params; });
}

Decision decide(double h, double c_alpha) {
  if (!(h >= 0.0 && h <= 1.0) || !(c_alpha >= 0.0 && c_alpha <= 1.0)) {
    throw InputError("h and c_alpha must lie in [0, 1]");
  }
  return h <= c_alpha ? Decision::kRejectH1 : Decision::kFailToRejectH1;
}

}  // namespace twostage
