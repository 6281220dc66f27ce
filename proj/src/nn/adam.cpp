// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "ssar/kernels.hpp"
#include "ssar/nn.hpp"

namespace ssar::nn {

void Adam::step(std::map<std::string, Tensor>& params, double lr) {
  for (const auto& [path, p] : params) {
    if (!p.has_grad()) continue;
    const bool finite = std::visit(
        [](const auto& v) {
          for (auto x : v)
            if (!std::isfinite(x)) return false;
          return true;
        },
        *p.grad_buffer());
    if (!finite) throw std::runtime_error("adam: non-finite gradient in parameter '" + path + "'");
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (auto& [path, p] : params) {
    if (!p.has_grad()) continue;
    auto it = moments_.find(path);
    if (it == moments_.end())
      it = moments_.emplace(path, Moments{Tensor::zeros(p.shape(), p.dtype()),
                                          Tensor::zeros(p.shape(), p.dtype())}).first;
    auto& mom = it->second;
    if (mom.m.shape() != p.shape() || mom.m.dtype() != p.dtype())
      throw ShapeError("adam: optimizer state for '" + path + "' does not match parameter");
    visit_dtype(p.dtype(), [&]<class T>() {
      const kernels::AdamParams<T> ap{static_cast<T>(lr), static_cast<T>(options_.beta1),
                                      static_cast<T>(options_.beta2),
                                      static_cast<T>(options_.eps), static_cast<T>(bc1),
                                      static_cast<T>(bc2)};
      auto values = p.mutable_values<T>();
      kernels::active<T>().adam_update(ap, buffer_as<T>(*p.grad_buffer()).data(),
                                       values.data(), mom.m.template mutable_values<T>().data(),
                                       mom.v.template mutable_values<T>().data(), values.size());
    });
  }
}

}  // namespace ssar::nn
