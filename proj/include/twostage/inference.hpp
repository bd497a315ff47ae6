#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "twostage/posterior.hpp"
#include "twostage/random.hpp"
#include "twostage/score_model.hpp"

namespace twostage {

// Distribution of s_m given s_n and Psi under a common source.
struct ConditionalMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd factor;  // lower triangular, cov = factor * factor'
  double log_det;          // log |cov| from the factor diagonal
};

// Parameter-free pieces of the joint (s_m, s_n) covariance for fixed (N, M).
// With B = Q_m P' (shared-object counts between trace pairs and control
// pairs) and projectors Pi_k of Sigma_nn:
//   Sigma_mm = sigma2_a A + sigma2_e I,   Sigma_mn = sigma2_a B,
//   Sigma_mn Sigma_nn^{-1} Sigma_nm = sigma2_a^2 sum_k G_k / lambda_k,
// where A = Q_m Q_m' and G_k = B Pi_k B'. Only the eigenvalues change per draw.
class ConditionalStructure {
 public:
  ConditionalStructure(std::size_t n_control, std::size_t n_trace);

  std::size_t n_control() const { return n_control_; }
  std::size_t n_trace() const { return n_trace_; }
  Eigen::Index m() const { return a_.rows(); }
  Eigen::Index n() const { return b_.cols(); }

  const Eigen::MatrixXd& shared_trace() const { return a_; }    // A
  const Eigen::MatrixXd& shared_cross() const { return b_; }    // B
  const Eigen::MatrixXd& projected_cross(int k) const { return b_pi_[static_cast<std::size_t>(k)]; }  // B Pi_k
  const Eigen::MatrixXd& gram(int k) const { return g_[static_cast<std::size_t>(k)]; }                 // G_k
  const Eigen::VectorXd& cross_row_sums() const { return b_one_; }  // B 1_n

 private:
  std::size_t n_control_;
  std::size_t n_trace_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd b_;
  std::array<Eigen::MatrixXd, 3> b_pi_;
  std::array<Eigen::MatrixXd, 3> g_;
  Eigen::VectorXd b_one_;
};

std::shared_ptr<const ConditionalStructure> conditional_structure_for(std::size_t n_control, std::size_t n_trace);

// ConditionalStructure bound to one observed s_n.
class ConditionalScoreModel {
 public:
  ConditionalScoreModel(const Eigen::VectorXd& s_n, std::size_t n_control, std::size_t n_trace);

  ConditionalMoments moments(const ModelParams& params) const;

  Eigen::Index m() const { return structure_->m(); }

 private:
  std::shared_ptr<const ConditionalStructure> structure_;
  std::array<Eigen::VectorXd, 3> projected_scores_;  // B Pi_k s_n
};

ConditionalMoments conditional_moments(const Eigen::VectorXd& s_n, const ModelParams& params, std::size_t n_control,
                                       std::size_t n_trace);

// Symmetrizes `cov` and factors it, adding a diagonal jitter ladder
// (1e-12 * trace / m, x10 up to three times) if needed. Throws NumericError
// naming the smallest eigenvalue when the matrix is not positive definite.
ConditionalMoments factor_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov);

Eigen::VectorXd sample_sm_star(const ConditionalMoments& moments, RandomStream& rng);

double conditional_log_likelihood(const Eigen::VectorXd& s_m, const ConditionalMoments& moments);

enum class Decision { kRejectH1, kFailToRejectH1 };

const char* to_string(Decision decision);

struct TestOutcome {
  double h = 0.0;
  double mc_std_err = 0.0;
  std::size_t K = 0;
  std::optional<Decision> decision;
  std::optional<double> c_alpha_used;
  std::uint64_t seed = 0;
  std::size_t n_control = 0;
  std::size_t n_trace = 0;
};

struct TestOptions {
  PriorConfig prior;
  PosteriorOptions posterior;
  unsigned threads = 1;
};

// Monte Carlo estimate of the posterior-averaged tail probability
//   h = (1/K) sum_k I( L(s_m | s_n, Psi_k) >= L(s*_m,k | s_n, Psi_k) ),
// with Psi_k from sample_posterior(seed) and s*_m,k drawn from stream
// (seed, k). Requires K >= 100.
TestOutcome test_statistic(const Eigen::VectorXd& s_m, const Eigen::VectorXd& s_n, std::size_t n_control,
                           std::size_t n_trace, std::size_t K, std::uint64_t seed, const TestOptions& options = {});

// Same estimator with Psi fixed instead of drawn from the posterior.
TestOutcome test_statistic_known_params(const Eigen::VectorXd& s_m, const Eigen::VectorXd& s_n,
                                        std::size_t n_control, std::size_t n_trace, const ModelParams& params,
                                        std::size_t K, std::uint64_t seed, unsigned threads = 1);

// Reject the common-source hypothesis iff h <= c_alpha.
Decision decide(double h, double c_alpha);

}  // namespace twostage
