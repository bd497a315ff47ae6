#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "twostage/layout.hpp"
#include "twostage/spectra.hpp"

namespace twostage {

struct MaskPolicy {
  enum class Kind { kNone, kLowSignal };
  Kind kind = Kind::kLowSignal;
  // A point is low-signal for a spectrum when |x| <= threshold * max|x|.
  double threshold = 0.02;
  // Jointly low runs strictly longer than this are masked out.
  std::size_t min_run = 25;
};

struct KernelSpec {
  int lag_min = -10;
  int lag_max = 10;
  MaskPolicy mask;
  double w_corr = 1.0;
  double w_norm = 1.0;
};

void validate(const KernelSpec& spec);

// true = informative (kept).
std::vector<bool> informative_mask(const Spectrum& x, const Spectrum& y, const MaskPolicy& policy);

// Dissimilarity score: w_corr * (1 - max-lag Pearson correlation) +
// w_norm * RMS of the masked difference. Exactly symmetric in (x, y).
// Throws NumericError on a degenerate mask or a zero-variance segment.
double kernel_score(const Spectrum& x, const Spectrum& y, const KernelSpec& spec);

enum class ObjectRole { kControl, kTrace };

const char* to_string(ObjectRole role);

// Scores of N control and M trace objects. s_m holds the pairs touching a
// trace object, s_n the control-only pairs, each in layout.hpp order.
struct ScorePartition {
  std::size_t n_control = 0;
  std::size_t n_trace = 0;
  Eigen::VectorXd s_m;
  Eigen::VectorXd s_n;
  std::vector<ObjectPair> pairs_m;
  std::vector<ObjectPair> pairs_n;

  ObjectRole role(std::size_t object) const {
    return object < n_control ? ObjectRole::kControl : ObjectRole::kTrace;
  }
};

ScorePartition pairwise_scores(const std::vector<Spectrum>& trace, const std::vector<Spectrum>& control,
                               const KernelSpec& spec, unsigned threads = 1);

// Columns i,j,role_i,role_j,block,score; s_m rows first.
void write_scores_csv(std::ostream& out, const ScorePartition& partition);

}  // namespace twostage
