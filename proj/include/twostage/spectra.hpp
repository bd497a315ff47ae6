#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace twostage {

// Wavenumber axis shared by every spectrum of a library.
using Grid = std::shared_ptr<const Eigen::VectorXd>;

bool same_grid(const Grid& a, const Grid& b);

struct Spectrum {
  Grid grid;
  Eigen::VectorXd values;
  std::string source_id;
  std::string replicate_id;

  Eigen::Index size() const { return values.size(); }
};

// Throws InputError unless the grid is strictly increasing, values are
// finite and both have the same length >= 2.
void validate(const Spectrum& spectrum);

struct Source {
  std::string id;
  std::vector<Spectrum> replicates;
};

// Sources keep their first-appearance order; indices into sources() are
// stable and are what the simulation code samples over.
class SourceLibrary {
 public:
  SourceLibrary() = default;
  explicit SourceLibrary(Grid grid) : grid_(std::move(grid)) {}

  const Grid& grid() const { return grid_; }
  const std::vector<Source>& sources() const { return sources_; }
  std::size_t size() const { return sources_.size(); }
  std::size_t spectrum_count() const;

  std::optional<std::size_t> find(const std::string& source_id) const;

  // Appends a replicate, creating the source on first use. Rejects grid
  // mismatches and duplicate (source, replicate) pairs.
  void add(Spectrum spectrum);

 private:
  Grid grid_;
  std::vector<Source> sources_;
};

enum class CsvFormat { kLong, kWide };

CsvFormat parse_csv_format(const std::string& name);
std::string to_string(CsvFormat format);

// long-csv:  source_id,replicate_id,wavenumber,absorbance  (one row per point)
// wide-csv:  wavenumber,<source:replicate>,...            (one row per grid point)
SourceLibrary read_library(std::istream& in, CsvFormat format);
SourceLibrary load_library(const std::string& path, CsvFormat format);

// Numbers are written with 17 significant digits so that a reload is exact.
void write_library(std::ostream& out, const SourceLibrary& library, CsvFormat format);
void save_library(const std::string& path, const SourceLibrary& library, CsvFormat format);

// Pointwise mean of a source's replicates.
Spectrum mean_spectrum(const Source& source);

// ---------------------------------------------------------------------------
// B-spline basis

class BSplineBasis {
 public:
  // `order` is degree + 1 (4 = cubic). Knots must be nondecreasing and
  // number count() + order.
  BSplineBasis(int order, std::vector<double> knots);

  // Clamped basis with `count` functions and uniform interior knots on [lo, hi].
  static BSplineBasis clamped_uniform(double lo, double hi, int count, int order = 4);

  int order() const { return order_; }
  int count() const { return static_cast<int>(knots_.size()) - order_; }
  const std::vector<double>& knots() const { return knots_; }
  double domain_min() const { return knots_[order_ - 1]; }
  double domain_max() const { return knots_[count()]; }

  // Row i holds every basis function evaluated at grid[i]. Throws
  // InputError for points outside [domain_min, domain_max].
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& grid) const;

 private:
  int span_index(double x) const;

  int order_;
  std::vector<double> knots_;
};

// Gaussian model on B-spline coefficients of one source.
struct SplineSourceModel {
  std::string source_id;
  Grid grid;
  BSplineBasis basis;
  Eigen::MatrixXd basis_matrix;  // |grid| x B
  Eigen::VectorXd mean_coeffs;
  Eigen::MatrixXd coeff_cov;
  // Symmetric square root of coeff_cov with negative eigenvalues clipped at 0.
  Eigen::MatrixXd coeff_factor;
  // Per-replicate least-squares coefficients, one column each.
  Eigen::MatrixXd replicate_coeffs;

  Eigen::VectorXd reconstruct(const Eigen::VectorXd& coeffs) const { return basis_matrix * coeffs; }
};

// Least-squares coefficients of each spectrum (one column per spectrum)
// against the basis, via column-pivoted QR. Throws NumericError if the
// basis matrix is rank deficient on this grid.
Eigen::MatrixXd project_coefficients(const Eigen::MatrixXd& basis_matrix,
                                     const std::vector<Spectrum>& spectra);

SplineSourceModel fit_spline_model(const std::vector<Spectrum>& spectra, const BSplineBasis& basis);

// Pseudo-spectra: basis * (mean + factor * z). Draw k uses its own stream
// derived from (seed, k).
std::vector<Spectrum> resample_spectra(const SplineSourceModel& model, std::size_t count,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic libraries

struct SyntheticConfig {
  std::size_t n_sources = 20;
  std::size_t n_replicates = 7;
  std::size_t grid_size = 600;
  double grid_min = 550.0;
  double grid_max = 4000.0;
  std::size_t n_peaks = 12;
  // Scales how far each source template moves away from the shared base.
  double separation = 1.0;
  // Scales all within-source perturbations.
  double within_noise = 1.0;
  // Optional per-source multipliers on `separation` (length n_sources).
  std::vector<double> source_scales;
};

void validate(const SyntheticConfig& config);

// Each source is the shared base template (a sum of Gaussian peaks) with
// peak positions and heights perturbed in proportion to its separation;
// replicates add amplitude, baseline and white-noise perturbations.
SourceLibrary generate_synthetic_library(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace twostage
