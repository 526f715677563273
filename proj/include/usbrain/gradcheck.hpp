#pragma once

// Finite-difference validation of the tape's analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "usbrain/autodiff.hpp"

namespace usbrain {

struct DiffOp {
  std::string name;
  std::function<Var(Tape<double>&, const std::vector<Var>&)> apply;
  // Inputs to differentiate; others (e.g. a Dice target) are held fixed.
  std::vector<bool> check_input;
  // True when a central difference of half-width `step` would straddle a
  // kink (relu at 0, a near-tie inside a pooling window).
  std::function<bool(const std::vector<Tensor<double>>&, double step)> near_kink;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

inline constexpr double kGradCheckStep = 1e-5;
// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
// vanishing gradients from turning round-off into large ratios.
inline constexpr double kGradCheckFloor = 1e-3;

// Non-scalar outputs are reduced with a seeded random projection so every
// output element contributes. Throws NonDifferentiablePoint.
GradCheckReport grad_check(const DiffOp& op, const std::vector<Tensor<double>>& point,
                           double tolerance, std::uint64_t seed = 0,
                           double step = kGradCheckStep);

DiffOp conv3d_op();
DiffOp maxpool3d_op();
DiffOp upsample_op();
DiffOp batchnorm3d_op(BnMode mode);
DiffOp relu_op();
DiffOp sigmoid_op();
DiffOp concat_op();
DiffOp soft_dice_op();

}  // namespace usbrain
