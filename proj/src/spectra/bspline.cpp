#include <algorithm>

#include "twostage/errors.hpp"
#include "twostage/spectra.hpp"

namespace twostage {

BSplineBasis::BSplineBasis(int order, std::vector<double> knots) : order_(order), knots_(std::move(knots)) {
  if (order_ < 1) throw InputError("B-spline order must be >= 1");
  if (static_cast<int>(knots_.size()) < 2 * order_) throw InputError("too few knots for B-spline order");
  if (!std::is_sorted(knots_.begin(), knots_.end())) throw InputError("knots must be nondecreasing");
  if (!(domain_max() > domain_min())) throw InputError("empty B-spline domain");
}

BSplineBasis BSplineBasis::clamped_uniform(double lo, double hi, int count, int order) {
  if (count < order) throw InputError("basis count must be at least the order");
  if (!(hi > lo)) throw InputError("basis domain must satisfy lo < hi");
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(count + order));
  for (int i = 0; i < order - 1; ++i) knots.push_back(lo);
  const int segments = count - order + 1;
  for (int j = 0; j <= segments; ++j) {
    knots.push_back(j == segments ? hi : lo + (hi - lo) * j / segments);
  }
  for (int i = 0; i < order - 1; ++i) knots.push_back(hi);
  return BSplineBasis(order, std::move(knots));
}

int BSplineBasis::span_index(double x) const {
  const int last = count() - 1;
  if (x >= domain_max()) {
    // Closed right end: use the last nonempty span.
    int s = last;
    while (s > order_ - 1 && !(knots_[s] < knots_[s + 1])) --s;
    return s;
  }
  auto it = std::upper_bound(knots_.begin() + order_ - 1, knots_.begin() + last + 2, x);
  return static_cast<int>(it - knots_.begin()) - 1;
}

Eigen::MatrixXd BSplineBasis::evaluate(const Eigen::VectorXd& grid) const {
  const int p = order_ - 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(grid.size(), count());
  std::vector<double> left(order_), right(order_), values(order_);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double x = grid[i];
    if (x < domain_min() || x > domain_max()) {
      throw InputError("grid point " + std::to_string(x) + " outside the knot span");
    }
    const int s = span_index(x);
    values[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots_[s + 1 - j];
      right[j] = knots_[s + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = values[r] / (right[r + 1] + left[j - r]);
        values[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      values[j] = saved;
    }
    for (int r = 0; r <= p; ++r) out(i, s - p + r) = values[r];
  }
  return out;
}

}  // namespace twostage
