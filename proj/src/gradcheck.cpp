#include "gaze/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gaze/errors.hpp"

namespace gaze {

std::string GradcheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " elements=" << elements_checked
     << " max_rel_error=" << max_rel_error;
  for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 5); ++i) {
    const auto& v = violations[i];
    os << "\n  input " << v.input << "[" << v.element << "]: analytic=" << v.analytic
       << " numeric=" << v.numeric << " rel=" << v.rel_error;
  }
  if (violations.size() > 5) os << "\n  ... " << violations.size() - 5 << " more";
  return os.str();
}

GradcheckReport gradcheck(const ScalarFn64& f, const std::vector<Tensor64>& inputs, double step,
                          double tol) {
  std::vector<Tensor64> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(cast<double>(in, true));

  Tensor64 loss = f(leaves);
  if (loss.numel() != 1) throw ValidationError("gradcheck: function must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
  }

  GradcheckReport report;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto values = leaves[i].mutable_data();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double saved = values[e];
      values[e] = saved + step;
      const double up = f(leaves).item();
      values[e] = saved - step;
      const double down = f(leaves).item();
      values[e] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[i][e];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.elements_checked;
      if (!(rel < tol)) {
        report.passed = false;
        report.violations.push_back({i, e, a, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace gaze
