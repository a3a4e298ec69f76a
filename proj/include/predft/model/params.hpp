#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>

#include "predft/error.hpp"
#include "predft/numkit/ops.hpp"
#include "predft/numkit/tape.hpp"
#include "predft/numkit/tensor.hpp"
#include "predft/numkit/tensor_io.hpp"

namespace predft::model {

using numkit::Shape;
using numkit::Tape;
using numkit::Tensor;
using numkit::TensorMap;
using numkit::Var;

/// Named weight tensors, iterated in name order.
class ParamStore {
 public:
  /// Uniform in ±1/√fan_in.
  void add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.storage()) v = u(rng);
    insert(name, std::move(t));
  }

  void add_constant(const std::string& name, Shape shape, double value) {
    insert(name, Tensor(std::move(shape), value));
  }

  void insert(const std::string& name, Tensor t) {
    if (!values_.emplace(name, std::move(t)).second) {
      throw ValidationError("duplicate parameter '" + name + "'");
    }
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  const TensorMap& tensors() const { return values_; }
  TensorMap& tensors() { return values_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : values_) n += v.size();
    return n;
  }

  /// Replaces every tensor; names and shapes must match exactly.
  void assign(const TensorMap& loaded) {
    if (loaded.size() != values_.size()) throw ValidationError("checkpoint parameter count differs");
    for (auto& [name, t] : values_) {
      auto it = loaded.find(name);
      if (it == loaded.end()) throw ValidationError("checkpoint is missing parameter '" + name + "'");
      if (it->second.shape() != t.shape()) {
        throw ValidationError("checkpoint parameter '" + name + "' has shape " +
                              numkit::shape_string(it->second.shape()) + ", expected " +
                              numkit::shape_string(t.shape()));
      }
      t = it->second;
    }
  }

 private:
  TensorMap values_;
};

/// Parameters placed on a tape on first use.
class Bound {
 public:
  Bound(Tape& tape, const ParamStore& params) : tape_(tape), params_(params) {}

  Tape& tape() { return tape_; }

  /// Inverted dropout at `rate` drawing from `rng`; inactive until enabled.
  void enable_dropout(double rate, std::mt19937_64& rng) {
    dropout_rate_ = rate;
    dropout_rng_ = &rng;
  }

  Var dropout(Var x) {
    if (!dropout_rng_ || dropout_rate_ <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - dropout_rate_);
    Tensor m(x.value().shape());
    const double s = 1.0 / (1.0 - dropout_rate_);
    for (double& v : m.storage()) v = keep(*dropout_rng_) ? s : 0.0;
    return numkit::multiply_const(x, m);
  }

  Var operator[](const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = tape_.leaf(params_.at(name), true);
    vars_.emplace(name, v);
    return v;
  }

  /// Uses `v` wherever `name` is read; for gradient checks against one tensor.
  void substitute(const std::string& name, Var v) {
    if (vars_.count(name)) throw ValidationError("parameter '" + name + "' is already bound");
    params_.at(name);
    vars_.emplace(name, v);
  }

  /// Gradient per parameter that took part in the recorded computation.
  std::map<std::string, Tensor> gradients(Var root) {
    const auto grads = tape_.backward(root);
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : vars_) out.emplace(name, grads.at(v.id));
    return out;
  }

  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  Tape& tape_;
  const ParamStore& params_;
  std::map<std::string, Var> vars_;
  double dropout_rate_ = 0.0;
  std::mt19937_64* dropout_rng_ = nullptr;
};

}  // namespace predft::model
