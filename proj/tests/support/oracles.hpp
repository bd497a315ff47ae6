#pragma once

// Independent reference implementations for tests. Everything here works on
// dense matrices or textbook recursions and never calls the projector,
// closed-form eigenvalue or conditional-structure code it is used to check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Design matrix over `objects`, rows for every pair (i < j), lexicographic,
// optionally keeping only rows whose second object is >= first_trace.
inline Eigen::MatrixXd design(std::size_t objects, std::size_t first_trace = 0) {
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (std::size_t i = 0; i < objects; ++i)
    for (std::size_t j = i + 1; j < objects; ++j)
      if (j >= first_trace) rows.emplace_back(i, j);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(objects));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].first)) = 1.0;
    q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].second)) = 1.0;
  }
  return q;
}

inline Eigen::MatrixXd sigma(std::size_t n_objects, double sigma2_a, double sigma2_e) {
  const Eigen::MatrixXd p = design(n_objects);
  Eigen::MatrixXd s = p * p.transpose() * sigma2_a;
  s.diagonal().array() += sigma2_e;
  return s;
}

inline double log_det(const Eigen::MatrixXd& a) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd u = lu.matrixLU().triangularView<Eigen::Upper>();
  return u.diagonal().array().abs().log().sum();
}

inline double mvn_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd r = x - mean;
  const Eigen::VectorXd solved = cov.partialPivLu().solve(r);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det(cov) + r.dot(solved));
}

// Joint covariance of (s_m, s_n) for N controls and M traces, s_m first.
struct JointBlocks {
  Eigen::MatrixXd mm, mn, nn;
};

inline JointBlocks joint_blocks(std::size_t n_control, std::size_t n_trace, double sigma2_a, double sigma2_e) {
  const std::size_t total = n_control + n_trace;
  const Eigen::MatrixXd q_m = design(total, n_control);
  Eigen::MatrixXd q_n = Eigen::MatrixXd::Zero(0, static_cast<Eigen::Index>(total));
  {
    const Eigen::MatrixXd p = design(n_control);
    q_n = Eigen::MatrixXd::Zero(p.rows(), static_cast<Eigen::Index>(total));
    q_n.leftCols(static_cast<Eigen::Index>(n_control)) = p;
  }
  Eigen::MatrixXd q(q_m.rows() + q_n.rows(), q_m.cols());
  q << q_m, q_n;
  Eigen::MatrixXd full = q * q.transpose() * sigma2_a;
  full.diagonal().array() += sigma2_e;
  const Eigen::Index m = q_m.rows();
  const Eigen::Index n = q_n.rows();
  return {full.topLeftCorner(m, m), full.topRightCorner(m, n), full.bottomRightCorner(n, n)};
}

struct Conditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Textbook Gaussian conditioning with dense solves.
inline Conditional condition(const JointBlocks& b, double theta, const Eigen::VectorXd& s_n) {
  const auto lu = b.nn.partialPivLu();
  const Eigen::VectorXd shift = lu.solve(s_n - Eigen::VectorXd::Constant(s_n.size(), theta));
  Conditional out;
  out.mean = Eigen::VectorXd::Constant(b.mm.rows(), theta) + b.mn * shift;
  out.cov = b.mm - b.mn * lu.solve(Eigen::MatrixXd(b.mn.transpose()));
  return out;
}

// Scores straight from s_ij = theta + a_i + a_j + e_ij over `objects`
// objects; pairs in lexicographic order.
inline Eigen::VectorXd simulate_scores(std::size_t objects, double theta, double sigma2_a, double sigma2_e,
                                       std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> a(objects);
  for (auto& x : a) x = std::sqrt(sigma2_a) * z(rng);
  Eigen::VectorXd s(static_cast<Eigen::Index>(objects * (objects - 1) / 2));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < objects; ++i)
    for (std::size_t j = i + 1; j < objects; ++j) s[r++] = theta + a[i] + a[j] + std::sqrt(sigma2_e) * z(rng);
  return s;
}

// Split scores over N + M objects (lexicographic over all pairs) into
// (s_m, s_n) with controls 0..N-1.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> split_scores(const Eigen::VectorXd& all, std::size_t n_control,
                                                                 std::size_t n_trace) {
  std::vector<double> m, n;
  Eigen::Index r = 0;
  const std::size_t total = n_control + n_trace;
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = i + 1; j < total; ++j) (j >= n_control ? m : n).push_back(all[r++]);
  return {Eigen::Map<Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size())),
          Eigen::Map<Eigen::VectorXd>(n.data(), static_cast<Eigen::Index>(n.size()))};
}

// Cox-de Boor recursion for basis function i of order k (degree k-1).
// Right end of the domain is taken as closed for the last basis function.
inline double cox_de_boor(const std::vector<double>& t, int i, int k, double x) {
  if (k == 1) {
    const double lo = t[static_cast<std::size_t>(i)];
    const double hi = t[static_cast<std::size_t>(i + 1)];
    if (lo <= x && x < hi) return 1.0;
    // Closed right end: x at the last knot belongs to the last nonempty span.
    if (x == t.back() && hi == t.back() && lo < hi) return 1.0;
    return 0.0;
  }
  double out = 0.0;
  const double d1 = t[static_cast<std::size_t>(i + k - 1)] - t[static_cast<std::size_t>(i)];
  const double d2 = t[static_cast<std::size_t>(i + k)] - t[static_cast<std::size_t>(i + 1)];
  if (d1 > 0.0) out += (x - t[static_cast<std::size_t>(i)]) / d1 * cox_de_boor(t, i, k - 1, x);
  if (d2 > 0.0) out += (t[static_cast<std::size_t>(i + k)] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x);
  return out;
}

// Kolmogorov distance of a sample from Uniform(0, 1).
inline double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - u, u - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace oracle
