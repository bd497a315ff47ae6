#include "twostage/errors.hpp"
#include "twostage/random.hpp"
#include "twostage/spectra.hpp"

namespace twostage {

Eigen::MatrixXd project_coefficients(const Eigen::MatrixXd& basis_matrix, const std::vector<Spectrum>& spectra) {
  Eigen::MatrixXd y(basis_matrix.rows(), static_cast<Eigen::Index>(spectra.size()));
  for (std::size_t c = 0; c < spectra.size(); ++c) {
    if (spectra[c].size() != basis_matrix.rows()) throw InputError("spectrum length does not match basis matrix");
    y.col(static_cast<Eigen::Index>(c)) = spectra[c].values;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis_matrix);
  if (qr.rank() < basis_matrix.cols()) {
    throw NumericError("basis matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                       std::to_string(basis_matrix.cols()) + " bases); too many bases for the grid");
  }
  return qr.solve(y);
}

SplineSourceModel fit_spline_model(const std::vector<Spectrum>& spectra, const BSplineBasis& basis) {
  if (spectra.size() < 2) throw InputError("fitting a spline model needs at least 2 replicates");
  for (const auto& s : spectra) {
    validate(s);
    if (!same_grid(s.grid, spectra.front().grid)) throw InputError("replicates do not share a grid");
  }
  SplineSourceModel model{spectra.front().source_id, spectra.front().grid, basis, basis.evaluate(*spectra.front().grid),
                          {}, {}, {}, {}};
  model.replicate_coeffs = project_coefficients(model.basis_matrix, spectra);

  const auto& c = model.replicate_coeffs;
  const double r = static_cast<double>(c.cols());
  model.mean_coeffs = c.rowwise().mean();
  Eigen::MatrixXd centered = c.colwise() - model.mean_coeffs;
  Eigen::MatrixXd cov = centered * centered.transpose() / (r - 1.0);
  model.coeff_cov = 0.5 * (cov + cov.transpose());

  // Few replicates against many coefficients leave coeff_cov rank deficient;
  // negative eigenvalues are rounding and get clipped before taking the root.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(model.coeff_cov);
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  model.coeff_factor = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
  return model;
}

std::vector<Spectrum> resample_spectra(const SplineSourceModel& model, std::size_t count, std::uint64_t seed) {
  std::vector<Spectrum> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    RandomStream rng(derive_seed(seed, StreamTag::kResample, k));
    Eigen::VectorXd z = rng.normal_vector(model.mean_coeffs.size());
    Spectrum s;
    s.grid = model.grid;
    s.values = model.basis_matrix * (model.mean_coeffs + model.coeff_factor * z);
    s.source_id = model.source_id;
    s.replicate_id = "pseudo" + std::to_string(k);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace twostage
