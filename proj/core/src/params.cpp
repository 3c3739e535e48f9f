#include "lowlight/params.hpp"

#include <algorithm>
#include <cmath>

#include "lowlight/error.hpp"

namespace lowlight {

ag::Var ParamSet::add_uniform(const std::string& name, std::vector<int> shape, int fan_in,
                              std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(std::max(fan_in, 1)));
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return add(name, std::move(t));
}

ag::Var ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  auto var = ag::leaf(std::move(value));
  entries_.push_back({name, var});
  return var;
}

const ag::Var& ParamSet::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.var;
  throw ArgumentError("unknown parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedParam& e) { return e.name == name; });
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.var->grad = Tensor();
}

void ParamSet::set_trainable(bool trainable) {
  for (auto& e : entries_) {
    e.var->requires_grad = trainable;
    if (!trainable) e.var->grad = Tensor();
  }
}

bool ParamSet::trainable() const {
  return std::any_of(entries_.begin(), entries_.end(), [](const NamedParam& e) { return e.var->requires_grad; });
}

bool ParamSet::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const NamedParam& e) { return e.var->value.all_finite(); });
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& e : entries_) {
    auto v = out.add(e.name, e.var->value);
    v->requires_grad = e.var->requires_grad;
  }
  return out;
}

void ParamSet::assign_values(const ParamSet& other) {
  if (other.size() != size()) throw ArgumentError("parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || !src.var->value.same_shape(dst.var->value)) {
      throw ArgumentError("parameter layout mismatch at '" + dst.name + "'");
    }
    dst.var->value = src.var->value;
  }
}

}  // namespace lowlight
