#include "itct/numerics.hpp"

#include <cmath>

namespace itct::nn {

GradCheckResult finite_diff_check(const LossAndGrad& loss, ParamStore<double>& params,
                                  double epsilon) {
  params.zero_grad();
  loss(params);
  std::vector<std::vector<double>> analytic;
  for (const auto& e : params.entries()) analytic.push_back(e.grad);

  GradCheckResult result;
  std::size_t k = 0;
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + epsilon;
      const double up = loss(params);
      e.value[i] = saved - epsilon;
      const double down = loss(params);
      e.value[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (!(rel <= result.max_rel_error)) {
        result.max_rel_error = rel;
        result.worst_entry = e.name;
        result.worst_index = i;
      }
    }
    ++k;
  }
  params.zero_grad();
  return result;
}

}  // namespace itct::nn
