#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "twostage/errors.hpp"
#include "twostage/score_model.hpp"

namespace twostage {
namespace {

void require_objects(std::size_t n_objects) {
  if (n_objects < 3) throw InputError("score model needs N >= 3 objects (got " + std::to_string(n_objects) + ")");
}

void require_length(const Eigen::VectorXd& v, std::size_t n) {
  if (static_cast<std::size_t>(v.size()) != n) {
    throw InputError("score vector has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

void require_positive(const Eigenvalues& ev) {
  if (!(ev.lambda1 > 0.0) || !(ev.lambda2 > 0.0) || !(ev.lambda3 > 0.0)) {
    throw NumericError("covariance eigenvalues must be positive (lambda = " + std::to_string(ev.lambda1) + ", " +
                       std::to_string(ev.lambda2) + ", " + std::to_string(ev.lambda3) + ")");
  }
}

}  // namespace

void validate(const ModelParams& params) {
  if (!std::isfinite(params.theta)) throw InputError("theta must be finite");
  if (!(params.sigma2_a >= 0.0) || !std::isfinite(params.sigma2_a)) throw InputError("sigma2_a must be >= 0");
  if (!(params.sigma2_e > 0.0) || !std::isfinite(params.sigma2_e)) throw InputError("sigma2_e must be > 0");
}

Eigen::MatrixXd DesignMatrix::dense() const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(objects));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].i)) = 1.0;
    p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].j)) = 1.0;
  }
  return p;
}

DesignMatrix design_matrix(std::size_t n_objects) {
  require_objects(n_objects);
  return DesignMatrix{n_objects, control_pairs(n_objects)};
}

Eigenvalues eigenvalues(const ModelParams& params, std::size_t n_objects) {
  const double big_n = static_cast<double>(n_objects);
  return {2.0 * (big_n - 1.0) * params.sigma2_a + params.sigma2_e, (big_n - 2.0) * params.sigma2_a + params.sigma2_e,
          params.sigma2_e};
}

Projectors::Projectors(std::size_t n_objects) : objects_(n_objects), pairs_(control_pairs(n_objects)) {
  require_objects(n_objects);
}

Eigen::VectorXd Projectors::apply_mean(const Eigen::VectorXd& v) const {
  require_length(v, pairs());
  return Eigen::VectorXd::Constant(v.size(), v.mean());
}

Eigen::VectorXd Projectors::object_means(const Eigen::VectorXd& v) const {
  require_length(v, pairs());
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(objects_));
  for (std::size_t r = 0; r < pairs_.size(); ++r) {
    const double x = v[static_cast<Eigen::Index>(r)];
    sums[static_cast<Eigen::Index>(pairs_[r].i)] += x;
    sums[static_cast<Eigen::Index>(pairs_[r].j)] += x;
  }
  return sums / static_cast<double>(objects_ - 1);
}

Eigen::VectorXd Projectors::apply_object(const Eigen::VectorXd& v) const {
  // c X X' v with X = P/(N-1) - 1_n 1_N'/n and c = (N-1)^2/(N-2). X' v is the
  // vector of per-object mean deviations d, whose entries sum to zero, so
  // X d = P d / (N-1).
  const Eigen::VectorXd d = object_means(v).array() - v.mean();
  const double scale = static_cast<double>(objects_ - 1) / static_cast<double>(objects_ - 2);
  Eigen::VectorXd out(v.size());
  for (std::size_t r = 0; r < pairs_.size(); ++r) {
    out[static_cast<Eigen::Index>(r)] =
        scale * (d[static_cast<Eigen::Index>(pairs_[r].i)] + d[static_cast<Eigen::Index>(pairs_[r].j)]);
  }
  return out;
}

Eigen::VectorXd Projectors::apply_residual(const Eigen::VectorXd& v) const {
  return v - apply_mean(v) - apply_object(v);
}

std::shared_ptr<const Projectors> projectors_for(std::size_t n_objects) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const Projectors>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n_objects];
  if (!slot) slot = std::make_shared<const Projectors>(n_objects);
  return slot;
}

EigenStructure eigen_structure(const ModelParams& params, std::size_t n_objects) {
  require_objects(n_objects);
  const auto ev = eigenvalues(params, n_objects);
  const auto n = static_cast<Eigen::Index>(pair_count(n_objects));
  const double big_n = static_cast<double>(n_objects);

  EigenStructure out;
  out.lambda1 = ev.lambda1;
  out.lambda2 = ev.lambda2;
  out.lambda3 = ev.lambda3;
  out.multiplicity = {1, n_objects - 1, static_cast<std::size_t>(n) - n_objects};
  out.projector_v1 = Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));

  const Eigen::MatrixXd p = design_matrix(n_objects).dense();
  const Eigen::MatrixXd x =
      p / (big_n - 1.0) - Eigen::MatrixXd::Constant(n, static_cast<Eigen::Index>(n_objects), 1.0 / static_cast<double>(n));
  out.projector_2 = (big_n - 1.0) * (big_n - 1.0) / (big_n - 2.0) * x * x.transpose();
  out.projector_3 = Eigen::MatrixXd::Identity(n, n) - out.projector_v1 - out.projector_2;
  return out;
}

double log_det_sigma(const ModelParams& params, std::size_t n_objects) {
  require_objects(n_objects);
  const auto ev = eigenvalues(params, n_objects);
  require_positive(ev);
  const double big_n = static_cast<double>(n_objects);
  const double n = static_cast<double>(pair_count(n_objects));
  return std::log(ev.lambda1) + (big_n - 1.0) * std::log(ev.lambda2) + (n - big_n) * std::log(ev.lambda3);
}

Eigen::VectorXd apply_sigma_inverse(const ModelParams& params, std::size_t n_objects, const Eigen::VectorXd& v) {
  const auto proj = projectors_for(n_objects);
  require_length(v, proj->pairs());
  const auto ev = eigenvalues(params, n_objects);
  require_positive(ev);
  const Eigen::VectorXd mean = proj->apply_mean(v);
  const Eigen::VectorXd object = proj->apply_object(v);
  return mean / ev.lambda1 + object / ev.lambda2 + (v - mean - object) / ev.lambda3;
}

SumsOfSquares sums_of_squares(const Eigen::VectorXd& s_n, std::size_t n_objects) {
  const auto proj = projectors_for(n_objects);
  require_length(s_n, proj->pairs());
  const double big_n = static_cast<double>(n_objects);

  SumsOfSquares out;
  out.s_bar = s_n.mean();
  out.s_bar_by_object = proj->object_means(s_n);
  const double spread = (out.s_bar_by_object.array() - out.s_bar).square().sum();
  out.ss_a = (big_n - 1.0) * (big_n - 1.0) / (big_n - 2.0) * spread;
  const double centered = (s_n.array() - out.s_bar).square().sum();
  // Both are quadratic forms in orthogonal projectors; clip rounding below 0.
  out.ss_e = std::max(0.0, centered - out.ss_a);
  out.ss_a = std::max(0.0, out.ss_a);
  return out;
}

double log_likelihood(const SumsOfSquares& ss, std::size_t pairs, const ModelParams& params,
                      std::size_t n_objects) {
  const double log_det = log_det_sigma(params, n_objects);
  const auto ev = eigenvalues(params, n_objects);
  const double n = static_cast<double>(pairs);
  const double dev = ss.s_bar - params.theta;
  const double minus_two = log_det + n * std::log(2.0 * std::numbers::pi) + n * dev * dev / ev.lambda1 +
                           ss.ss_a / ev.lambda2 + ss.ss_e / ev.lambda3;
  return -0.5 * minus_two;
}

double log_likelihood(const Eigen::VectorXd& s_n, const ModelParams& params, std::size_t n_objects) {
  return log_likelihood(sums_of_squares(s_n, n_objects), static_cast<std::size_t>(s_n.size()), params, n_objects);
}

AnovaEstimate anova_estimates(const Eigen::VectorXd& s_n, std::size_t n_objects) {
  const auto ss = sums_of_squares(s_n, n_objects);
  const double big_n = static_cast<double>(n_objects);
  const double n = static_cast<double>(s_n.size());
  AnovaEstimate out;
  out.ms_a = ss.ss_a / (big_n - 1.0);
  out.ms_e = ss.ss_e / (n - big_n);
  const double sigma2_a = (out.ms_a - out.ms_e) / (big_n - 2.0);
  out.clipped = sigma2_a < 0.0;
  out.params = {ss.s_bar, std::max(0.0, sigma2_a), out.ms_e};
  return out;
}

}  // namespace twostage
