#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lowlight/autograd.hpp"

namespace lowlight {

struct NamedParam {
  std::string name;
  ag::Var var;
};

/// Ordered collection of named trainable tensors. Order is the insertion
/// order and is what checkpoints and the optimizer iterate over.
class ParamSet {
 public:
  /// Adds a tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  ag::Var add_uniform(const std::string& name, std::vector<int> shape, int fan_in, std::mt19937_64& rng);
  ag::Var add(const std::string& name, Tensor value);

  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedParam>& entries() noexcept { return entries_; }
  const std::vector<NamedParam>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const;
  void zero_grad();
  /// Frozen parameters record no gradient.
  void set_trainable(bool trainable);
  bool trainable() const;
  bool all_finite() const;
  /// Deep copy: the result shares no storage with this set.
  ParamSet clone() const;
  /// Copies values (not gradients) from another set with identical names/shapes.
  void assign_values(const ParamSet& other);

 private:
  std::vector<NamedParam> entries_;
};

}  // namespace lowlight
