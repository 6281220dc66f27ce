// SPDX-License-Identifier: Apache-2.0
#include "ssar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace ssar {
namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor out = f();
  if (out.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  return out.item();
}

void poke(Tensor& t, std::int64_t index, double value) {
  visit_dtype(t.dtype(), [&]<class T>() {
    t.mutable_values<T>()[static_cast<std::size_t>(index)] = static_cast<T>(value);
  });
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::vector<Tensor> params,
                                  const GradCheckOptions& options) {
  if (options.eps <= 0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  GradCheckReport report;

  for (auto& p : params) p.zero_grad();
  {
    const Tensor loss = f();
    if (loss.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    backward(loss);
  }

  std::mt19937_64 rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    ParamReport pr;
    pr.param_index = pi;
    const std::vector<double> analytic =
        p.has_grad() ? p.grad().to_vector() : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);

    std::vector<std::int64_t> elements(static_cast<std::size_t>(p.numel()));
    std::iota(elements.begin(), elements.end(), 0);
    if (options.max_elements > 0 && elements.size() > options.max_elements) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(options.max_elements);
      std::sort(elements.begin(), elements.end());
    }

    for (const auto e : elements) {
      const double original = p.flat(e);
      poke(p, e, original + options.eps);
      const double plus = eval_scalar(f);
      poke(p, e, original - options.eps);
      const double minus = eval_scalar(f);
      poke(p, e, original);

      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[static_cast<std::size_t>(e)];
      std::ostringstream where;
      where << "param " << pi << " element " << e;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.passed = false;
        if (report.failure.empty())
          report.failure = "non-finite value at " + where.str();
        pr.max_rel_error = std::numeric_limits<double>::infinity();
        pr.worst_element = e;
        continue;
      }
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      double rel = scale > 0 ? diff / scale : 0.0;
      if (scale < options.abs_floor && diff < options.abs_floor) rel = 0.0;
      if (rel > pr.max_rel_error || pr.worst_element < 0) {
        pr.max_rel_error = std::max(pr.max_rel_error, rel);
        if (rel >= pr.max_rel_error) {
          pr.worst_element = e;
          pr.analytic = a;
          pr.numeric = numeric;
        }
      }
      if (rel >= options.tol) {
        report.passed = false;
        if (report.failure.empty()) {
          std::ostringstream msg;
          msg << "gradient mismatch at " << where.str() << ": analytic " << a
              << " vs numeric " << numeric << " (rel " << rel << ")";
          report.failure = msg.str();
        }
      }
    }
    report.params.push_back(pr);
  }
  for (auto& p : params) p.zero_grad();
  return report;
}

}  // namespace ssar
