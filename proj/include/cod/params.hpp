#pragma once

#include "cod/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace cod {

// Ordered, named tensor collection; order is the serialization order.
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  int add(const std::string& name, Tensor<T> v) {
    if (index_.count(name))
      throw std::invalid_argument("param set: duplicate name " + name);
    index_[name] = static_cast<int>(names.size());
    names.push_back(name);
    values.push_back(std::move(v));
    return static_cast<int>(names.size()) - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param set: unknown name " + name);
    return it->second;
  }

  Tensor<T>& operator[](const std::string& name) {
    return values[static_cast<std::size_t>(index_of(name))];
  }
  const Tensor<T>& operator[](const std::string& name) const {
    return values[static_cast<std::size_t>(index_of(name))];
  }

  std::size_t size() const { return names.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& v : values) n += v.numel();
    return n;
  }

  template <typename To>
  ParamSet<To> cast_to() const {
    ParamSet<To> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.add(names[i], cast<To>(values[i]));
    return out;
  }

 private:
  std::unordered_map<std::string, int> index_;
};

}  // namespace cod
