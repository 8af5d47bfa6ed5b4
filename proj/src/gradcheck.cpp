#include "mfb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mfb {

void GradCheckResult::merge(const GradCheckResult& other) {
  if (other.worst_rel_error > worst_rel_error) {
    worst_rel_error = other.worst_rel_error;
    worst_location = other.worst_location;
  }
  worst_abs_error = std::max(worst_abs_error, other.worst_abs_error);
  checked += other.checked;
  failures += other.failures;
}

namespace {

double evaluate(const LossBuilder& build) {
  Graph g;
  return build(g).value()[0];
}

}  // namespace

GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& build,
                                const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    Var root = build(g);
    g.backward(root);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = evaluate(build);
      value[i] = saved - h;
      const double down = evaluate(build);
      value[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric);
      const double magnitude = std::max(std::abs(a), std::abs(numeric));
      ++result.checked;
      bool ok;
      if (magnitude < options.small) {
        ok = err <= options.abs_tol;
        result.worst_abs_error = std::max(result.worst_abs_error, err);
      } else {
        const double rel = err / magnitude;
        ok = rel <= options.rel_tol;
        if (rel > result.worst_rel_error) {
          result.worst_rel_error = rel;
          result.worst_location = "param " + std::to_string(pi) + "[" + std::to_string(i) + "]";
        }
      }
      if (!ok || !std::isfinite(numeric) || !std::isfinite(a)) ++result.failures;
    }
  }
  return result;
}

}  // namespace mfb
