#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "catnet/errors.hpp"

namespace catnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// N-dimensional real array, row-major. Copies share storage; values are
// written only at creation time and through values_mut() (parameter updates
// between steps). Gradient accumulation is the one sanctioned mutation while
// a graph is alive.
template <class S>
class Tensor {
 public:
  using scalar_type = S;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, /*fill=*/S(0));
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, value);
  }

  static Tensor from_values(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw_error(ErrorKind::dimension, "tensor shape ", shape_str(shape), " expects ",
                  shape_size(shape), " values, got ", values.size());
    }
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }
  std::size_t size() const { return d_->values.size(); }

  std::span<const S> values() const { return d_->values; }
  // const like the gradient accessors below: a Tensor is a handle, and
  // optimizers mutate parameter values through const views of the registry.
  std::span<S> values_mut() const { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return !d_->grad.empty(); }

  // Empty span when no gradient has accumulated yet.
  std::span<const S> grad() const { return d_->grad; }

  // Allocates a zero gradient on first use. Tensor is a handle: gradient
  // accumulation mutates the shared storage, so a const handle (for example
  // a by-value lambda capture in a backward closure) may still accumulate.
  std::span<S> grad_mut() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
    return d_->grad;
  }

  void zero_grad() const {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
  }

  // Deallocates the gradient entirely. Backward uses this to consume
  // intermediate gradients so that only leaves accumulate across calls.
  void release_grad() const { d_->grad.clear(); }

  S item() const {
    if (size() != 1) {
      throw_error(ErrorKind::contract, "item() on non-scalar tensor of shape ",
                  shape_str(d_->shape));
    }
    return d_->values[0];
  }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  Tensor(Shape shape, std::vector<S>, bool requires_grad, S fill) {
    d_ = std::make_shared<Data>();
    d_->shape = std::move(shape);
    d_->values.assign(shape_size(d_->shape), fill);
    d_->requires_grad = requires_grad;
  }

  std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Operations append themselves in execution order, which
// is a topological order by construction; backward replays the tape in
// reverse. Recording and backward are single-threaded per instance; distinct
// graphs share no state.
template <class S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  // Returns true when the op about to run should be recorded: the graph is
  // recording and at least one input participates in differentiation.
  template <class... Tensors>
  bool track(const Tensors&... inputs) const {
    return recording_ && (... || inputs.requires_grad());
  }

  void record(std::vector<Tensor<S>> inputs, Tensor<S> output, std::function<void()> backward_fn) {
    output.set_requires_grad(true);
    tape_.push_back(Node{std::move(inputs), std::move(output), std::move(backward_fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Each op
  // output's gradient is consumed once its rule has run, so intermediate
  // tensors carry no gradient between calls and repeated backward adds one
  // full pass into the leaves each time.
  void backward(Tensor<S> loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw_error(ErrorKind::contract, "backward expects a scalar loss tensor");
    }
    loss.grad_mut()[0] += S(1);
    replay_reversed();
  }

  // Replays the tape with gradients the caller already seeded on one or more
  // outputs. This is how tests apply an op's transpose to an arbitrary
  // cotangent.
  void backward_from_seeded() { replay_reversed(); }

  // Zeroes every gradient the tape touched, leaves values intact: after
  // backward + zero_grad the graph is reusable and a second backward
  // reproduces the same gradients.
  void zero_grad() {
    for (auto& node : tape_) {
      for (auto& in : node.inputs) in.zero_grad();
      node.output.zero_grad();
    }
  }

  void clear() { tape_.clear(); }
  std::size_t op_count() const { return tape_.size(); }

 private:
  void replay_reversed() {
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      if (it->output.has_grad()) {
        it->backward_fn();
        it->output.release_grad();
      }
    }
  }

  struct Node {
    std::vector<Tensor<S>> inputs;
    Tensor<S> output;
    std::function<void()> backward_fn;
  };

  std::vector<Node> tape_;
  bool recording_ = true;
};

}  // namespace catnet
