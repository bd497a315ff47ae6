#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include <boost/math/special_functions/beta.hpp>

#include "twostage/errors.hpp"
#include "twostage/posterior.hpp"

namespace twostage {

void validate(const PriorConfig& p) {
  if (!(p.alpha_a > 0.0) || !(p.alpha_e > 0.0)) throw InputError("Inverse-Gamma prior shapes must be > 0");
  if ((p.beta_a && !(*p.beta_a > 0.0)) || (p.beta_e && !(*p.beta_e > 0.0))) {
    throw InputError("Inverse-Gamma prior scales must be > 0");
  }
  if (p.mu0 && !std::isfinite(*p.mu0)) throw InputError("prior mu0 must be finite");
  if (p.lambda2 && !(*p.lambda2 > 0.0)) throw InputError("prior lambda2 must be > 0");
}

ResolvedPrior resolve(const PriorConfig& prior, const Eigen::VectorXd& s_n) {
  validate(prior);
  const double mean = s_n.size() > 0 ? s_n.mean() : 0.0;
  double var = 0.0;
  if (s_n.size() > 1) var = (s_n.array() - mean).square().sum() / static_cast<double>(s_n.size() - 1);
  // Constant scores carry no scale; fall back to the unscaled defaults.
  const bool scaled = var > 0.0;

  ResolvedPrior out;
  out.alpha_a = prior.alpha_a;
  out.alpha_e = prior.alpha_e;
  out.beta_a = prior.beta_a.value_or(scaled ? 0.001 * var : 0.001);
  out.beta_e = prior.beta_e.value_or(scaled ? 0.001 * var : 0.001);
  out.mu0 = prior.mu0.value_or(mean);
  out.lambda2 = prior.lambda2.value_or(scaled ? 10.0 * var : 1.0);
  return out;
}

namespace {

struct EtaShapes {
  double shape_a, scale_a, shape_e, scale_e;
};

EtaShapes eta_shapes(double ss_a, double ss_e, std::size_t n_objects, std::size_t pairs, const ResolvedPrior& prior) {
  if (!(ss_a >= 0.0) || !(ss_e >= 0.0)) throw InputError("sums of squares must be >= 0");
  const double big_n = static_cast<double>(n_objects);
  const double n = static_cast<double>(pairs);
  return {prior.alpha_a + (big_n - 1.0) / 2.0, ss_a / 2.0 + prior.beta_a, prior.alpha_e + (n - big_n) / 2.0,
          ss_e / 2.0 + prior.beta_e};
}

// eta_a >= eta_e  <=>  B <= scale_a / (scale_a + scale_e).
double beta_cutoff(const EtaShapes& s) { return s.scale_a / (s.scale_a + s.scale_e); }

}  // namespace

LowAcceptance parse_low_acceptance(const std::string& name) {
  if (name == "abort") return LowAcceptance::kAbort;
  if (name == "exact") return LowAcceptance::kExact;
  throw InputError("unknown low-acceptance policy '" + name + "' (expected abort or exact)");
}

std::string to_string(LowAcceptance policy) { return policy == LowAcceptance::kAbort ? "abort" : "exact"; }

double acceptance_probability(const SumsOfSquares& ss, std::size_t pairs, std::size_t n_objects,
                              const ResolvedPrior& prior) {
  const auto s = eta_shapes(ss.ss_a, ss.ss_e, n_objects, pairs, prior);
  return boost::math::ibeta(s.shape_a, s.shape_e, beta_cutoff(s));
}

EtaDraw sample_eta_truncated(double ss_a, double ss_e, std::size_t n_objects, std::size_t pairs,
                             const ResolvedPrior& prior, RandomStream& rng) {
  const auto s = eta_shapes(ss_a, ss_e, n_objects, pairs, prior);
  const double mass = boost::math::ibeta(s.shape_a, s.shape_e, beta_cutoff(s));
  if (!(mass > 0.0)) throw NumericError("truncated posterior has no mass; the score model does not fit s_n");
  // Inverse CDF restricted to [0, cutoff]; u in (0, mass].
  const double u = mass * (1.0 - rng.uniform());
  const double b = std::min(boost::math::ibeta_inv(s.shape_a, s.shape_e, u), beta_cutoff(s));
  const double total = rng.gamma(s.shape_a + s.shape_e);
  return {s.scale_a / (b * total), s.scale_e / ((1.0 - b) * total)};
}

EtaDraw sample_eta(double ss_a, double ss_e, std::size_t n_objects, std::size_t pairs, const ResolvedPrior& prior,
                   RandomStream& rng) {
  const auto s = eta_shapes(ss_a, ss_e, n_objects, pairs, prior);
  // IG(shape, scale) = scale / Gamma(shape, 1).
  const double eta_a = s.scale_a / rng.gamma(s.shape_a);
  const double eta_e = s.scale_e / rng.gamma(s.shape_e);
  return {eta_a, eta_e};
}

std::optional<VarianceComponents> eta_to_sigma(double eta_a, double eta_e, std::size_t n_objects) {
  const double sigma2_a = (eta_a - eta_e) / static_cast<double>(n_objects - 2);
  if (sigma2_a < 0.0) return std::nullopt;
  return VarianceComponents{sigma2_a, eta_e};
}

NormalMoments theta_posterior(double s_bar, std::size_t pairs, double sigma2_a, double sigma2_e,
                              std::size_t n_objects, const ResolvedPrior& prior) {
  const double lambda1 = eigenvalues({0.0, sigma2_a, sigma2_e}, n_objects).lambda1;
  const double n = static_cast<double>(pairs);
  const double one_inv_one = n / lambda1;
  const double one_inv_s = n * s_bar / lambda1;
  const double denom = one_inv_one * prior.lambda2 + 1.0;
  return {(one_inv_s * prior.lambda2 + prior.mu0) / denom, prior.lambda2 / denom};
}

double sample_theta(double s_bar, std::size_t pairs, double sigma2_a, double sigma2_e, std::size_t n_objects,
                    const ResolvedPrior& prior, RandomStream& rng) {
  const auto moments = theta_posterior(s_bar, pairs, sigma2_a, sigma2_e, n_objects, prior);
  return moments.mean + std::sqrt(moments.variance) * rng.normal();
}

PosteriorDraw draw_posterior(const SumsOfSquares& ss, std::size_t pairs, std::size_t n_objects,
                             const ResolvedPrior& prior, RandomStream& rng, const PosteriorOptions& options) {
  std::size_t rejected = 0;
  for (;;) {
    const auto eta = sample_eta(ss.ss_a, ss.ss_e, n_objects, pairs, prior, rng);
    if (auto sigma = eta_to_sigma(eta.eta_a, eta.eta_e, n_objects)) {
      const double theta = sample_theta(ss.s_bar, pairs, sigma->sigma2_a, sigma->sigma2_e, n_objects, prior, rng);
      return {theta, sigma->sigma2_a, sigma->sigma2_e, eta.eta_a, eta.eta_e, rejected};
    }
    if (++rejected >= options.max_attempts_per_draw) {
      throw NumericError("posterior sampler rejected " + std::to_string(rejected) +
                         " consecutive proposals with sigma2_a < 0; the score model does not fit s_n");
    }
  }
}

std::vector<PosteriorDraw> sample_posterior(const Eigen::VectorXd& s_n, std::size_t n_objects,
                                            const PriorConfig& prior, std::size_t draws, std::uint64_t seed,
                                            const PosteriorOptions& options) {
  if (draws == 0) throw InputError("need at least one posterior draw");
  const auto ss = sums_of_squares(s_n, n_objects);
  const auto resolved = resolve(prior, s_n);
  const auto pairs = static_cast<std::size_t>(s_n.size());

  std::vector<PosteriorDraw> out;
  out.reserve(draws);
  const bool exact = options.on_low_acceptance == LowAcceptance::kExact;
  if (exact && acceptance_probability(ss, pairs, n_objects, resolved) < options.min_acceptance) {
    for (std::size_t k = 0; k < draws; ++k) {
      RandomStream rng(derive_seed(seed, StreamTag::kPosterior, k));
      const auto eta = sample_eta_truncated(ss.ss_a, ss.ss_e, n_objects, pairs, resolved, rng);
      const double sigma2_a = std::max(0.0, (eta.eta_a - eta.eta_e) / static_cast<double>(n_objects - 2));
      const double theta = sample_theta(ss.s_bar, pairs, sigma2_a, eta.eta_e, n_objects, resolved, rng);
      out.push_back({theta, sigma2_a, eta.eta_e, eta.eta_a, eta.eta_e, 0});
    }
    return out;
  }
  std::size_t proposals = 0;
  for (std::size_t k = 0; k < draws; ++k) {
    RandomStream rng(derive_seed(seed, StreamTag::kPosterior, k));
    out.push_back(draw_posterior(ss, pairs, n_objects, resolved, rng, options));
    proposals += out.back().rejected_count + 1;
    // Acceptance is known to be adequate here; a low running rate is chance.
    if (!exact && proposals >= options.rejection_window &&
        static_cast<double>(k + 1) < options.min_acceptance * static_cast<double>(proposals)) {
      throw NumericError("posterior acceptance rate " + std::to_string(static_cast<double>(k + 1) / proposals) +
                         " below " + std::to_string(options.min_acceptance) + "; the score model does not fit s_n");
    }
  }
  return out;
}

void write_draws_csv(std::ostream& out, const std::vector<PosteriorDraw>& draws) {
  const auto old_precision = out.precision();
  out << std::setprecision(17) << "draw,theta,sigma2_a,sigma2_e,eta_a,eta_e,rejected_count\n";
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const auto& d = draws[k];
    out << k << ',' << d.theta << ',' << d.sigma2_a << ',' << d.sigma2_e << ',' << d.eta_a << ',' << d.eta_e << ','
        << d.rejected_count << '\n';
  }
  out.precision(old_precision);
}

}  // namespace twostage
