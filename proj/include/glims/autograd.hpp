#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

/// Ordered record of executed differentiable ops.
///
/// Execution order is a topological order of the graph, so replaying the
/// entries in reverse visits every consumer before its producers. Each thread
/// has its own current tape.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  /// accumulate into existing buffers. The tape is cleared afterwards.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

Tape& current_tape();

bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Backward pass over the current thread's tape.
void backward(const Tensor& loss);

/// Returns the gradient buffer of t, allocating zeros on first use.
template <class T>
T* grad_buffer(const Tensor& t) {
  TensorImpl* impl = t.impl();
  if (!impl->grad) impl->grad = std::make_shared<Buffer>(impl->dtype, impl->data->size());
  return impl->grad->as<T>();
}

}  // namespace glims
