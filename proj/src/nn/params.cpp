// SPDX-License-Identifier: Apache-2.0
#include "ssar/nn.hpp"

namespace ssar::nn {

Tensor& ParamStore::add_param(const std::string& path, Tensor value) {
  if (params_.count(path) || buffers_.count(path))
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  value.set_requires_grad(true);
  return params_.emplace(path, std::move(value)).first->second;
}

Tensor& ParamStore::add_buffer(const std::string& path, Tensor value) {
  if (params_.count(path) || buffers_.count(path))
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  return buffers_.emplace(path, std::move(value)).first->second;
}

Tensor& ParamStore::param(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + path + "'");
  return it->second;
}

const Tensor& ParamStore::param(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + path + "'");
  return it->second;
}

Tensor& ParamStore::buffer(const std::string& path) {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + path + "'");
  return it->second;
}

const Tensor& ParamStore::buffer(const std::string& path) const {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + path + "'");
  return it->second;
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

std::vector<std::string> ParamStore::paths_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [path, _] : params_)
    if (path.rfind(prefix, 0) == 0) out.push_back(path);
  return out;
}

}  // namespace ssar::nn
