#include "usbrain/adam.hpp"

#include <cmath>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

template <typename T>
void step_impl(std::span<T> params, std::span<const T> grads, AdamState& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw Error(Errc::LengthMismatch, "adam_step: params, grads and moments differ in length");
  s.step_count += 1;
  const double t = double(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params[i] = T(double(params[i]) - s.lr * mhat / (std::sqrt(vhat) + s.eps));
  }
}

}  // namespace

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state) {
  step_impl<float>(params, grads, state);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  step_impl<double>(params, grads, state);
}

}  // namespace usbrain
