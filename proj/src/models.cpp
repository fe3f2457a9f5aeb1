#include "cbs/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbs {

std::size_t Classifier::predict_label(const ClassifierInput& input) const {
  const Vector probs = predict(input);
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double log_sum_exp(std::span<const double> row) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : row) peak = std::max(peak, v);
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

}  // namespace cbs
