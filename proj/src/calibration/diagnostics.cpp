#include <cmath>

#include "twostage/calibration.hpp"
#include "twostage/errors.hpp"

namespace twostage {
namespace {

AxisDiagnostics describe(const Eigen::VectorXd& x, double zero_threshold) {
  const double count = static_cast<double>(x.size());
  const Eigen::ArrayXd centered = x.array() - x.mean();
  const double m2 = centered.square().mean();
  AxisDiagnostics out{};
  out.variance = centered.square().sum() / (count - 1.0);
  if (m2 <= zero_threshold) {
    out.zero_variance = true;
    out.p_value = 1.0;
    return out;
  }
  const double m3 = centered.cube().mean();
  const double m4 = centered.square().square().mean();
  out.skewness = m3 / std::pow(m2, 1.5);
  out.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  out.jarque_bera = count / 6.0 * (out.skewness * out.skewness + 0.25 * out.excess_kurtosis * out.excess_kurtosis);
  out.p_value = std::exp(-0.5 * out.jarque_bera);
  return out;
}

double correlation(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const Eigen::ArrayXd da = a - a.mean();
  const Eigen::ArrayXd db = b - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

}  // namespace

NormalityReport normality_from_scores(const Eigen::MatrixXd& vectors) {
  if (vectors.rows() < 3) throw InputError("normality diagnostics need at least 3 score vectors");
  if (vectors.cols() < 1) throw InputError("score vectors are empty");
  NormalityReport report;
  report.vectors = static_cast<std::size_t>(vectors.rows());
  report.dimension = static_cast<std::size_t>(vectors.cols());
  report.mean = vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = vectors.rowwise() - report.mean.transpose();
  report.covariance = centered.transpose() * centered / static_cast<double>(vectors.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(report.covariance);
  report.eigenvalues = eig.eigenvalues().reverse();
  report.eigenvectors = eig.eigenvectors().rowwise().reverse();
  const Eigen::MatrixXd projected = centered * report.eigenvectors;

  const double scale = report.covariance.trace() / static_cast<double>(vectors.cols());
  const double zero_threshold = 1e-12 * std::max(scale, 0.0);
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    report.original_axes.push_back(describe(vectors.col(c), zero_threshold));
    report.eigen_axes.push_back(describe(projected.col(c), zero_threshold));
  }
  for (Eigen::Index i = 0; i < projected.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < projected.cols(); ++j) {
      const Eigen::ArrayXd a = projected.col(i).array();
      const Eigen::ArrayXd b = projected.col(j).array();
      report.eigen_pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), correlation(a, b),
                                    correlation(a.square(), b.square())});
    }
  }
  return report;
}

NormalityReport normality_diagnostics(const SourceLibrary& library, const KernelSpec& kernel,
                                      std::size_t group_size) {
  validate(kernel);
  if (group_size < 2) throw InputError("group size must be at least 2");
  const auto pairs = control_pairs(group_size);
  std::vector<Eigen::VectorXd> rows;
  for (const auto& source : library.sources()) {
    if (source.replicates.size() < 2 * group_size) {
      throw InputError("source " + source.id + " has " + std::to_string(source.replicates.size()) +
                       " replicates; need " + std::to_string(2 * group_size) + " for two disjoint groups");
    }
    for (std::size_t group = 0; group < 2; ++group) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(pairs.size()));
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        v[static_cast<Eigen::Index>(p)] = kernel_score(source.replicates[group * group_size + pairs[p].i],
                                                       source.replicates[group * group_size + pairs[p].j], kernel);
      }
      rows.push_back(std::move(v));
    }
  }
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) vectors.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  return normality_from_scores(vectors);
}

}  // namespace twostage
