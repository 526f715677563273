#pragma once

// Reverse-mode differentiation over 5-D tensors.
//
// A Tape owns every tensor produced while building an expression. Ops append
// a node and, when the tape is recording, a closure that propagates the
// node's gradient to its inputs. Tape::backward replays the closures in
// reverse order. All kernels are single-threaded and run in a fixed order,
// so forward values, gradients and optimizer trajectories are bitwise
// reproducible for a given build.

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "usbrain/tensor.hpp"

namespace usbrain {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Var leaf(Tensor<T> value, bool requires_grad = false);

  Tensor<T>& operator[](Var v) { return nodes_.at(v.id).tensor; }
  const Tensor<T>& operator[](Var v) const { return nodes_.at(v.id).tensor; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1; `out` must hold a single element.
  void backward(Var out);
  void backward(Var out, const std::vector<T>& seed);

  // Appends an op result. `back` is dropped unless recording and at least
  // one input needs a gradient.
  Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back);

  // Grad buffer of v, allocated on first use.
  std::vector<T>& grad(Var v) { return nodes_.at(v.id).tensor.ensure_grad(); }

 private:
  struct Node {
    Tensor<T> tensor;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

enum class BnMode { Train, Eval };

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  explicit RunningStats(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kDiceEps = 1e-6;

// "Same" zero-padded 3-D convolution, stride 1. Weights are shaped
// (out, in, k, k, k) with k odd; bias is (1, out, 1, 1, 1).
template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weights, Var bias);

// 2x2x2 max pooling, stride 2. Gradient goes to the first maximum of each
// window in linear-index order.
template <typename T>
Var maxpool3d(Tape<T>& tape, Var input);

// Nearest-neighbour 2x upsampling along every spatial axis.
template <typename T>
Var upsample_nearest(Tape<T>& tape, Var input);

// Per-channel normalisation over (batch, d, h, w). In Train mode batch
// statistics are used and `stats` (if given) is updated as
// running = momentum * running + (1 - momentum) * batch, with the unbiased
// batch variance. Eval mode normalises with `stats`.
template <typename T>
Var batchnorm3d(Tape<T>& tape, Var input, Var gamma, Var beta, BnMode mode,
                RunningStats<T>* stats);

template <typename T>
Var relu(Tape<T>& tape, Var input);

template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

// Channel stacking [a; b].
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps), summed over the batch.
template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var pred, Var target);

// sum_i x_i * weights_i; used to reduce a tensor op to a scalar.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const std::vector<T>& weights);

}  // namespace usbrain
