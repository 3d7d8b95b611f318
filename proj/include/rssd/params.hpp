#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "rssd/error.hpp"
#include "rssd/tensor.hpp"

namespace rssd {

// A named tensor owned by a model. Biases and per-channel vectors are stored
// as (1, c, 1, 1). Non-trainable entries hold batch-norm running statistics.
template <typename T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  bool trainable = true;
};

// Insertion-ordered parameter collection with stable element addresses.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Tensor4<T> value, bool trainable = true) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), trainable});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Number of trainable scalars.
  std::size_t trainable_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) {
      if (p.trainable) total += p.value.size();
    }
    return total;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rssd
