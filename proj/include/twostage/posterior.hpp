#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/random.hpp"
#include "twostage/score_model.hpp"

namespace twostage {

// Inverse-Gamma(shape, scale) priors on eta_a = (N-2) sigma2_a + sigma2_e
// and eta_e = sigma2_e; Normal(mu0, lambda2) prior on theta. Unset fields
// are filled from the data by resolve(): beta = 0.001 * var(s_n),
// mu0 = mean(s_n), lambda2 = 10 * var(s_n). Data-scaled defaults keep the
// test invariant to the units of the kernel score.
struct PriorConfig {
  double alpha_a = 0.001;
  std::optional<double> beta_a;
  double alpha_e = 0.001;
  std::optional<double> beta_e;
  std::optional<double> mu0;
  std::optional<double> lambda2;
};

struct ResolvedPrior {
  double alpha_a;
  double beta_a;
  double alpha_e;
  double beta_e;
  double mu0;
  double lambda2;
};

void validate(const PriorConfig& prior);
ResolvedPrior resolve(const PriorConfig& prior, const Eigen::VectorXd& s_n);

struct PosteriorDraw {
  double theta;
  double sigma2_a;
  double sigma2_e;
  double eta_a;
  double eta_e;
  std::size_t rejected_count;  // eta pairs discarded because sigma2_a < 0

  ModelParams params() const { return {theta, sigma2_a, sigma2_e}; }
};

struct EtaDraw {
  double eta_a;
  double eta_e;
};

EtaDraw sample_eta(double ss_a, double ss_e, std::size_t n_objects, std::size_t pairs, const ResolvedPrior& prior,
                   RandomStream& rng);

struct VarianceComponents {
  double sigma2_a;
  double sigma2_e;
};

// Inverts eta = [[N-2, 1], [0, 1]] sigma. nullopt when sigma2_a < 0.
std::optional<VarianceComponents> eta_to_sigma(double eta_a, double eta_e, std::size_t n_objects);

struct NormalMoments {
  double mean;
  double variance;
};

// Posterior of theta given the variances. Only 1' Sigma^{-1} 1 = n / lambda1
// and 1' Sigma^{-1} s_n = n s_bar / lambda1 enter, since 1_n is an eigenvector.
NormalMoments theta_posterior(double s_bar, std::size_t pairs, double sigma2_a, double sigma2_e,
                              std::size_t n_objects, const ResolvedPrior& prior);

double sample_theta(double s_bar, std::size_t pairs, double sigma2_a, double sigma2_e, std::size_t n_objects,
                    const ResolvedPrior& prior, RandomStream& rng);

// What to do when the sigma2_a >= 0 constraint rejects most proposals.
enum class LowAcceptance {
  kAbort,  // throw NumericError (model misfit diagnostic)
  kExact,  // sample the truncated posterior directly, without rejection
};

struct PosteriorOptions {
  // A single draw giving up after this many consecutive rejections aborts.
  std::size_t max_attempts_per_draw = 10000;
  // Abort when, over at least this many eta proposals, acceptance < 1%.
  std::size_t rejection_window = 1000;
  double min_acceptance = 0.01;
  // kExact switches to direct sampling whenever the exact acceptance
  // probability is below min_acceptance; otherwise draws are identical,
  // except that a low running acceptance rate no longer aborts.
  LowAcceptance on_low_acceptance = LowAcceptance::kAbort;
};

LowAcceptance parse_low_acceptance(const std::string& name);
std::string to_string(LowAcceptance policy);

// Probability that an unconstrained eta proposal satisfies eta_a >= eta_e.
double acceptance_probability(const SumsOfSquares& ss, std::size_t pairs, std::size_t n_objects,
                              const ResolvedPrior& prior);

// Exact draw of (eta_a, eta_e) conditioned on eta_a >= eta_e. With
// Ga, Ge the two Gamma variates, B = Ga / (Ga + Ge) is Beta and independent
// of Ga + Ge, and the constraint only involves B.
EtaDraw sample_eta_truncated(double ss_a, double ss_e, std::size_t n_objects, std::size_t pairs,
                             const ResolvedPrior& prior, RandomStream& rng);

// One accepted draw of (theta, sigma2_a, sigma2_e) from its own stream.
PosteriorDraw draw_posterior(const SumsOfSquares& ss, std::size_t pairs, std::size_t n_objects,
                             const ResolvedPrior& prior, RandomStream& rng, const PosteriorOptions& options = {});

// K i.i.d. draws; draw k depends only on (seed, k). Throws NumericError when
// the sigma2_a >= 0 constraint rejects too many proposals.
std::vector<PosteriorDraw> sample_posterior(const Eigen::VectorXd& s_n, std::size_t n_objects,
                                            const PriorConfig& prior, std::size_t draws, std::uint64_t seed,
                                            const PosteriorOptions& options = {});

void write_draws_csv(std::ostream& out, const std::vector<PosteriorDraw>& draws);

}  // namespace twostage
