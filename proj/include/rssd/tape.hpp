#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "rssd/error.hpp"
#include "rssd/params.hpp"
#include "rssd/tensor.hpp"

namespace rssd {

struct TensorId {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t index = kInvalid;

  bool valid() const { return index != kInvalid; }
  bool operator==(const TensorId&) const = default;
};

template <typename T>
class GradTape;

// Lazily allocated gradient buffers used during a backward sweep. `grad`
// returns null for tensors that do not require a gradient, so kernels can
// skip that work.
template <typename T>
class GradAccumulator {
 public:
  explicit GradAccumulator(const GradTape<T>& tape) : tape_(tape), grads_(tape.size()) {}

  Tensor4<T>* grad(TensorId id) {
    if (!id.valid() || !tape_.requires_grad(id)) return nullptr;
    auto& slot = grads_[id.index];
    if (!slot) slot.emplace(tape_.value(id).shape());
    return &*slot;
  }

  const std::optional<Tensor4<T>>& peek(std::size_t index) const { return grads_[index]; }
  std::optional<Tensor4<T>>& take(std::size_t index) { return grads_[index]; }

 private:
  const GradTape<T>& tape_;
  std::vector<std::optional<Tensor4<T>>> grads_;
};

// Result of a backward sweep: d(loss)/d(tensor) for every tensor on the tape
// that requires a gradient.
template <typename T>
class GradientSet {
 public:
  GradientSet(const GradTape<T>& tape, GradAccumulator<T>&& acc) : tape_(&tape) {
    for (std::size_t i = 0; i < tape.size(); ++i) {
      auto& g = acc.take(i);
      if (g) grads_.emplace(i, std::move(*g));
    }
  }

  // Zero when the tensor is on the tape but no gradient reached it.
  const Tensor4<T>& of(TensorId id) const {
    if (!id.valid() || id.index >= tape_->size()) {
      throw LookupError("gradient requested for a tensor that is not on the tape");
    }
    auto it = grads_.find(id.index);
    if (it != grads_.end()) return it->second;
    auto z = zeros_.find(id.index);
    if (z == zeros_.end()) z = zeros_.emplace(id.index, Tensor4<T>(tape_->value(id).shape())).first;
    return z->second;
  }

  // Gradient of a parameter leaf, or null if the parameter was never used.
  const Tensor4<T>* of(const Parameter<T>& p) const {
    const TensorId id = tape_->find_parameter(p);
    if (!id.valid()) return nullptr;
    return &of(id);
  }

 private:
  const GradTape<T>* tape_;
  std::unordered_map<std::size_t, Tensor4<T>> grads_;
  mutable std::unordered_map<std::size_t, Tensor4<T>> zeros_;
};

// Records a forward pass over the kernel set so it can be differentiated in
// reverse and replayed. Single-writer; values are immutable once recorded.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void(const Tensor4<T>& grad_out, GradAccumulator<T>& acc)>;
  using ReplayFn = std::function<Tensor4<T>()>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  TensorId input(Tensor4<T> value, bool requires_grad = false) {
    owned_.push_back(std::move(value));
    return push(&owned_.back(), requires_grad, {}, {});
  }

  // Leaf that aliases a model parameter. Using one parameter several times
  // yields one leaf, so shared weights accumulate one gradient.
  TensorId parameter(const Parameter<T>& p) {
    if (auto it = param_leaves_.find(&p); it != param_leaves_.end()) return it->second;
    const TensorId id = push(&p.value, p.trainable, {}, {});
    param_leaves_.emplace(&p, id);
    return id;
  }

  TensorId find_parameter(const Parameter<T>& p) const {
    auto it = param_leaves_.find(&p);
    return it == param_leaves_.end() ? TensorId{} : it->second;
  }

  TensorId record(Tensor4<T> value, std::initializer_list<TensorId> inputs, BackwardFn backward,
                  ReplayFn replay) {
    return record(std::move(value), std::vector<TensorId>(inputs), std::move(backward),
                  std::move(replay));
  }

  TensorId record(Tensor4<T> value, const std::vector<TensorId>& inputs, BackwardFn backward,
                  ReplayFn replay) {
    bool needs = false;
    for (TensorId in : inputs) {
      if (in.valid()) needs = needs || requires_grad(in);
    }
    owned_.push_back(std::move(value));
    return push(&owned_.back(), needs, std::move(backward), std::move(replay));
  }

  const Tensor4<T>& value(TensorId id) const { return *nodes_.at(checked(id)).value; }
  bool requires_grad(TensorId id) const { return nodes_.at(checked(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from `output` seeded with `loss_grad` (same shape).
  GradientSet<T> backward(TensorId output, const Tensor4<T>& loss_grad) const {
    if (loss_grad.shape() != value(output).shape()) {
      throw DimensionError("grad", "seed " + loss_grad.shape().str() + " != output " +
                                       value(output).shape().str());
    }
    GradAccumulator<T> acc(*this);
    if (Tensor4<T>* seed = acc.grad(output)) *seed += loss_grad;
    for (std::size_t i = output.index + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.backward || !acc.peek(i)) continue;
      node.backward(*acc.peek(i), acc);
    }
    return GradientSet<T>(*this, std::move(acc));
  }

  // Recomputes every recorded op from its recorded inputs and reports
  // whether all outputs are bit-identical to the recorded ones.
  bool replay_matches() const {
    for (const Node& node : nodes_) {
      if (!node.replay) continue;
      if (!(node.replay() == *node.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    const Tensor4<T>* value;
    bool requires_grad;
    BackwardFn backward;
    ReplayFn replay;
  };

  std::size_t checked(TensorId id) const {
    if (!id.valid() || id.index >= nodes_.size()) {
      throw LookupError("tensor id is not on this tape");
    }
    return id.index;
  }

  TensorId push(const Tensor4<T>* value, bool requires_grad, BackwardFn backward,
                ReplayFn replay) {
    nodes_.push_back({value, requires_grad, std::move(backward), std::move(replay)});
    return TensorId{nodes_.size() - 1};
  }

  std::deque<Tensor4<T>> owned_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, TensorId> param_leaves_;
};

template <typename T>
GradientSet<T> backward(const GradTape<T>& tape, TensorId output, const Tensor4<T>& loss_grad) {
  return tape.backward(output, loss_grad);
}

}  // namespace rssd
