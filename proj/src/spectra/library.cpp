#include <cmath>

#include "twostage/errors.hpp"
#include "twostage/spectra.hpp"

namespace twostage {

bool same_grid(const Grid& a, const Grid& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return a->size() == b->size() && *a == *b;
}

void validate(const Spectrum& spectrum) {
  if (!spectrum.grid) throw InputError("spectrum has no grid");
  const auto& grid = *spectrum.grid;
  if (grid.size() != spectrum.values.size()) throw InputError("grid and values differ in length");
  if (grid.size() < 2) throw InputError("spectrum needs at least 2 points");
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) throw InputError("non-finite wavenumber");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw InputError("wavenumbers not strictly increasing");
    if (!std::isfinite(spectrum.values[i])) throw InputError("non-finite absorbance");
  }
}

std::size_t SourceLibrary::spectrum_count() const {
  std::size_t total = 0;
  for (const auto& s : sources_) total += s.replicates.size();
  return total;
}

std::optional<std::size_t> SourceLibrary::find(const std::string& source_id) const {
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    if (sources_[i].id == source_id) return i;
  }
  return std::nullopt;
}

void SourceLibrary::add(Spectrum spectrum) {
  validate(spectrum);
  if (!grid_) grid_ = spectrum.grid;
  if (!same_grid(grid_, spectrum.grid)) {
    throw InputError("grid mismatch for " + spectrum.source_id + ":" + spectrum.replicate_id);
  }
  spectrum.grid = grid_;
  auto index = find(spectrum.source_id);
  if (!index) {
    sources_.push_back(Source{spectrum.source_id, {}});
    index = sources_.size() - 1;
  }
  auto& replicates = sources_[*index].replicates;
  for (const auto& r : replicates) {
    if (r.replicate_id == spectrum.replicate_id) {
      throw InputError("duplicate spectrum " + spectrum.source_id + ":" + spectrum.replicate_id);
    }
  }
  replicates.push_back(std::move(spectrum));
}

Spectrum mean_spectrum(const Source& source) {
  if (source.replicates.empty()) throw InputError("source " + source.id + " has no replicates");
  Spectrum mean;
  mean.grid = source.replicates.front().grid;
  mean.values = Eigen::VectorXd::Zero(source.replicates.front().size());
  for (const auto& r : source.replicates) mean.values += r.values;
  mean.values /= static_cast<double>(source.replicates.size());
  mean.source_id = source.id;
  mean.replicate_id = "mean";
  return mean;
}

}  // namespace twostage
