#include "jarvis/numerics/tensor.hpp"

#include "jarvis/numerics/errors.hpp"

#include <cstring>

namespace jarvis {

std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

std::size_t ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) {
    throw DimensionError("parameter '" + name + "' needs positive dimensions");
  }
  if (index_.count(name) != 0) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor::Zero(rows, cols);
  p.grad = Tensor::Zero(rows, cols);
  params_.push_back(std::move(p));
  return idx;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterSet::set_frozen(bool frozen) {
  for (auto& p : params_) p.frozen = frozen;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::uint64_t hash_values(const ParameterSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    feed(p.name.data(), p.name.size());
    feed(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  return h;
}

}  // namespace jarvis
