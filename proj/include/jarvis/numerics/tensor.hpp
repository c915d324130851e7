#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace jarvis {

/// Dense row-major matrix. Every array in the pipeline is rank <= 2:
/// vectors are n x 1, scalars 1 x 1, token sequences D x (tokens).
template <typename Scalar>
using TensorT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Tensor = TensorT<double>;

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Vector = VectorT<double>;

std::string shape_string(const Tensor& t);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

/// A named trainable tensor with its gradient buffer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Frozen parameters enter the tape as constants and reject optimizer updates.
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Ordered registry of parameters with unique names. Indices are stable.
class ParameterSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  /// Index of a named parameter; throws ContractError if absent.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  void set_frozen(bool frozen);
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// FNV-1a over the raw bytes of every parameter value, in registry order.
std::uint64_t hash_values(const ParameterSet& params);

}  // namespace jarvis
