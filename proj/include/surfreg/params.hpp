#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "surfreg/tensor.hpp"

namespace surfreg {

/// Ordered, named trainable tensors. Order is the serialization order.
template <typename Real>
class ParamSet {
public:
  struct Entry {
    std::string name;
    ad::Tensor<Real> value;
  };

  ad::Tensor<Real> add(const std::string& name, ad::Shape shape, std::vector<Real> data) {
    if (find_index(name) >= 0) throw std::invalid_argument("duplicate parameter " + name);
    entries_.push_back({name, ad::Tensor<Real>::from(std::move(shape), std::move(data), true)});
    return entries_.back().value;
  }

  /// Uniform in [-limit, limit].
  ad::Tensor<Real> add_uniform(const std::string& name, ad::Shape shape, double limit,
                               std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<Real> d(ad::numel(shape));
    for (auto& v : d) v = static_cast<Real>(u(rng));
    return add(name, std::move(shape), std::move(d));
  }

  ad::Tensor<Real> add_constant(const std::string& name, ad::Shape shape, double v) {
    std::vector<Real> d(ad::numel(shape), static_cast<Real>(v));
    return add(name, std::move(shape), std::move(d));
  }

  const ad::Tensor<Real>& at(const std::string& name) const {
    const long i = find_index(name);
    if (i < 0) throw std::out_of_range("no parameter named " + name);
    return entries_[static_cast<std::size_t>(i)].value;
  }

  long find_index(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return static_cast<long>(i);
    return -1;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<ad::Tensor<Real>> tensors() const {
    std::vector<ad::Tensor<Real>> out;
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }
  /// Copy values from another set with the same names and shapes.
  void assign(const ParamSet& other) {
    if (other.entries_.size() != entries_.size())
      throw std::invalid_argument("ParamSet::assign: parameter count differs");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries_[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.value.shape() != dst.value.shape())
        throw std::invalid_argument("ParamSet::assign: mismatch at " + dst.name);
      auto d = dst.value.mutable_data();
      std::copy(src.value.data().begin(), src.value.data().end(), d.begin());
    }
  }
  void fill(Real v) {
    for (auto& e : entries_) {
      auto d = e.value.mutable_data();
      std::fill(d.begin(), d.end(), v);
    }
  }

private:
  std::vector<Entry> entries_;
};

}  // namespace surfreg
