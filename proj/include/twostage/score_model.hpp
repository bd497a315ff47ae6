#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "twostage/layout.hpp"

namespace twostage {

// Within-source score model s_ij = theta + a_i + a_j + e_ij.
struct ModelParams {
  double theta = 0.0;
  double sigma2_a = 0.0;  // object random effect variance, >= 0
  double sigma2_e = 1.0;  // lack-of-fit variance, > 0
};

void validate(const ModelParams& params);

// n x N incidence of object pairs: row (i, j) has ones in columns i and j.
struct DesignMatrix {
  std::size_t objects = 0;
  std::vector<ObjectPair> rows;

  std::size_t pairs() const { return rows.size(); }
  Eigen::MatrixXd dense() const;
};

DesignMatrix design_matrix(std::size_t n_objects);

// The three distinct eigenvalues of Sigma = P P' sigma2_a + I sigma2_e.
struct Eigenvalues {
  double lambda1;  // multiplicity 1, eigenvector 1_n / sqrt(n)
  double lambda2;  // multiplicity N - 1
  double lambda3;  // multiplicity n - N
};

Eigenvalues eigenvalues(const ModelParams& params, std::size_t n_objects);

// Parameter-free orthogonal projectors onto the three eigenspaces of Sigma
// for a fixed N. Applications cost O(n); nothing n x n is formed.
class Projectors {
 public:
  explicit Projectors(std::size_t n_objects);

  std::size_t objects() const { return objects_; }
  std::size_t pairs() const { return pairs_.size(); }
  const std::vector<ObjectPair>& pair_rows() const { return pairs_; }

  // Projection onto span(1_n).
  Eigen::VectorXd apply_mean(const Eigen::VectorXd& v) const;
  // Projection onto the (N-1)-dimensional object-effect space.
  Eigen::VectorXd apply_object(const Eigen::VectorXd& v) const;
  // Projection onto the (n-N)-dimensional residual space.
  Eigen::VectorXd apply_residual(const Eigen::VectorXd& v) const;

  // Per-object means of v (average over the N-1 pairs touching each object).
  Eigen::VectorXd object_means(const Eigen::VectorXd& v) const;

 private:
  std::size_t objects_;
  std::vector<ObjectPair> pairs_;
};

// Shared, cached per N.
std::shared_ptr<const Projectors> projectors_for(std::size_t n_objects);

struct EigenStructure {
  double lambda1;
  double lambda2;
  double lambda3;
  std::array<std::size_t, 3> multiplicity;
  Eigen::MatrixXd projector_v1;
  Eigen::MatrixXd projector_2;
  Eigen::MatrixXd projector_3;

  Eigen::MatrixXd reconstruct() const {
    return lambda1 * projector_v1 + lambda2 * projector_2 + lambda3 * projector_3;
  }
};

// Dense form, for inspection and diagnostics. Hot paths use Projectors.
EigenStructure eigen_structure(const ModelParams& params, std::size_t n_objects);

double log_det_sigma(const ModelParams& params, std::size_t n_objects);

// Sigma^{-1} v as sum_k P_k v / lambda_k.
Eigen::VectorXd apply_sigma_inverse(const ModelParams& params, std::size_t n_objects, const Eigen::VectorXd& v);

struct SumsOfSquares {
  double ss_a;
  double ss_e;
  double s_bar;
  Eigen::VectorXd s_bar_by_object;
};

SumsOfSquares sums_of_squares(const Eigen::VectorXd& s_n, std::size_t n_objects);

// log density of s_n ~ MVN(theta 1, Sigma), evaluated through the three
// independent sums of squares.
double log_likelihood(const Eigen::VectorXd& s_n, const ModelParams& params, std::size_t n_objects);
double log_likelihood(const SumsOfSquares& ss, std::size_t pairs, const ModelParams& params,
                      std::size_t n_objects);

struct AnovaEstimate {
  ModelParams params;
  double ms_a;
  double ms_e;
  bool clipped;  // sigma2_a estimate was negative and set to 0
};

AnovaEstimate anova_estimates(const Eigen::VectorXd& s_n, std::size_t n_objects);

}  // namespace twostage
