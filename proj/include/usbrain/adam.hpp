#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace usbrain {

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 1e-3)
      : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

// One bias-corrected Adam update in place. Moments are kept in double for
// both parameter precisions. Throws LengthMismatch.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state);
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace usbrain
