#include "twostage/calibration.hpp"
#include "twostage/errors.hpp"

namespace twostage {

ObjectSupply::ObjectSupply(const SourceLibrary& library, SupplyOptions options)
    : library_(library), options_(options) {
  if (library.size() == 0) throw InputError("library has no sources");
  means_.reserve(library.size());
  for (const auto& source : library.sources()) means_.push_back(mean_spectrum(source));
}

bool ObjectSupply::can_supply(std::size_t source, std::size_t count) const {
  const std::size_t have = library_.sources().at(source).replicates.size();
  return have >= count || (options_.allow_resampling && have >= 2);
}

const SplineSourceModel& ObjectSupply::spline_model(std::size_t source) const {
  std::lock_guard lock(mutex_);
  auto& slot = models_[source];
  if (!slot) {
    const auto& grid = *library_.grid();
    const auto basis =
        BSplineBasis::clamped_uniform(grid[0], grid[grid.size() - 1], options_.spline_bases, options_.spline_order);
    slot = std::make_shared<const SplineSourceModel>(
        fit_spline_model(library_.sources().at(source).replicates, basis));
  }
  return *slot;
}

std::vector<Spectrum> ObjectSupply::draw(std::size_t source, std::size_t count, std::uint64_t seed,
                                         bool force_resample) const {
  const auto& replicates = library_.sources().at(source).replicates;
  if (!force_resample && replicates.size() >= count) {
    RandomStream rng(seed);
    std::vector<Spectrum> out;
    out.reserve(count);
    for (std::size_t index : rng.choose(replicates.size(), count)) out.push_back(replicates[index]);
    return out;
  }
  if (!force_resample && !options_.allow_resampling) {
    throw InputError("source " + library_.sources()[source].id + " has " + std::to_string(replicates.size()) +
                     " replicates, need " + std::to_string(count) + " and resampling is disabled");
  }
  return resample_spectra(spline_model(source), count, seed);
}

std::pair<std::vector<Spectrum>, std::vector<Spectrum>> ObjectSupply::draw_disjoint(std::size_t source,
                                                                                    std::size_t n_control,
                                                                                    std::size_t n_trace,
                                                                                    std::uint64_t seed) const {
  auto objects = draw(source, n_control + n_trace, seed);
  std::vector<Spectrum> trace(std::make_move_iterator(objects.begin() + static_cast<std::ptrdiff_t>(n_control)),
                              std::make_move_iterator(objects.end()));
  objects.resize(n_control);
  return {std::move(objects), std::move(trace)};
}

}  // namespace twostage
