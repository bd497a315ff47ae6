#include <cmath>

#include "twostage/errors.hpp"
#include "twostage/random.hpp"
#include "twostage/spectra.hpp"

namespace twostage {
namespace {

struct Peak {
  double center;
  double width;
  double height;
};

// Noise levels at within_noise = 1, in absorbance units.
constexpr double kAmplitudeJitter = 0.005;
constexpr double kBaselineJitter = 0.002;
constexpr double kWhiteNoise = 0.004;

Eigen::VectorXd render(const std::vector<Peak>& peaks, const Eigen::VectorXd& grid) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.size());
  for (const auto& p : peaks) {
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      const double u = (grid[i] - p.center) / p.width;
      out[i] += p.height * std::exp(-0.5 * u * u);
    }
  }
  return out;
}

}  // namespace

void validate(const SyntheticConfig& c) {
  if (c.n_sources == 0 || c.n_replicates == 0 || c.n_peaks == 0) throw InputError("synthetic counts must be positive");
  if (c.grid_size < 2) throw InputError("synthetic grid needs at least 2 points");
  if (!(c.grid_max > c.grid_min)) throw InputError("synthetic grid_min must be below grid_max");
  if (!(c.separation >= 0.0) || !(c.within_noise >= 0.0)) throw InputError("separation and noise must be >= 0");
  if (!c.source_scales.empty() && c.source_scales.size() != c.n_sources) {
    throw InputError("source_scales must have one entry per source");
  }
  for (double s : c.source_scales) {
    if (!(s >= 0.0)) throw InputError("source_scales must be >= 0");
  }
}

SourceLibrary generate_synthetic_library(const SyntheticConfig& config, std::uint64_t seed) {
  validate(config);
  Eigen::VectorXd axis = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(config.grid_size), config.grid_min,
                                                    config.grid_max);
  auto grid = std::make_shared<const Eigen::VectorXd>(std::move(axis));
  const double range = config.grid_max - config.grid_min;

  RandomStream base_rng(derive_seed(seed, StreamTag::kSynthetic, 0));
  std::vector<Peak> base(config.n_peaks);
  for (auto& p : base) {
    p.center = config.grid_min + range * (0.05 + 0.9 * base_rng.uniform());
    p.width = range * (0.004 + 0.011 * base_rng.uniform());
    p.height = 0.2 + 0.8 * base_rng.uniform();
  }

  SourceLibrary library(grid);
  for (std::size_t s = 0; s < config.n_sources; ++s) {
    const std::uint64_t source_seed = derive_seed(seed, StreamTag::kSynthetic, s + 1);
    RandomStream rng(source_seed);
    const double scale =
        config.separation * (config.source_scales.empty() ? 1.0 : config.source_scales[s]);
    std::vector<Peak> peaks = base;
    for (auto& p : peaks) {
      p.center += scale * 0.5 * p.width * rng.normal();
      p.height *= std::exp(scale * 0.25 * rng.normal());
    }
    const Eigen::VectorXd template_values = render(peaks, *grid);
    const std::string source_id = "S" + std::to_string(s + 1);

    for (std::size_t r = 0; r < config.n_replicates; ++r) {
      RandomStream noise(derive_seed(source_seed, r));
      const double amplitude = 1.0 + config.within_noise * kAmplitudeJitter * noise.normal();
      const double baseline = config.within_noise * kBaselineJitter * noise.normal();
      Spectrum spectrum;
      spectrum.grid = grid;
      spectrum.values = amplitude * template_values;
      spectrum.values.array() += baseline;
      for (Eigen::Index i = 0; i < spectrum.values.size(); ++i) {
        spectrum.values[i] += config.within_noise * kWhiteNoise * noise.normal();
      }
      spectrum.source_id = source_id;
      spectrum.replicate_id = "R" + std::to_string(r + 1);
      library.add(std::move(spectrum));
    }
  }
  return library;
}

}  // namespace twostage
