#include "usbrain/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "usbrain/error.hpp"

namespace usbrain {

namespace {

double evaluate(const DiffOp& op, const std::vector<Tensor<double>>& point,
                std::vector<double>& projection, std::uint64_t seed,
                std::vector<std::vector<double>>* grads) {
  Tape<double> tape(grads != nullptr);
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const bool rg = i < op.check_input.size() && op.check_input[i];
    vars.push_back(tape.leaf(point[i], rg));
  }
  Var out = op.apply(tape, vars);
  if (tape[out].numel() != 1) {
    if (projection.size() != tape[out].numel()) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.5, 1.5);
      projection.resize(tape[out].numel());
      for (auto& w : projection) w = u(rng);
    }
    out = weighted_sum(tape, out, projection);
  }
  const double value = tape[out].values[0];
  if (grads) {
    tape.backward(out);
    grads->clear();
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const auto& t = tape[vars[i]];
      grads->push_back(t.has_grad() ? t.grad : std::vector<double>(t.numel(), 0.0));
    }
  }
  return value;
}

}  // namespace

GradCheckReport grad_check(const DiffOp& op, const std::vector<Tensor<double>>& point,
                           double tolerance, std::uint64_t seed, double step) {
  if (op.near_kink && op.near_kink(point, step))
    throw Error(Errc::NonDifferentiablePoint, op.name + " probed at a kink");

  std::vector<double> projection;
  std::vector<std::vector<double>> analytic;
  evaluate(op, point, projection, seed, &analytic);

  GradCheckReport report;
  std::vector<Tensor<double>> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (i >= op.check_input.size() || !op.check_input[i]) continue;
    for (std::size_t j = 0; j < point[i].numel(); ++j) {
      const double x0 = point[i].values[j];
      probe[i].values[j] = x0 + step;
      const double fp = evaluate(op, probe, projection, seed, nullptr);
      probe[i].values[j] = x0 - step;
      const double fm = evaluate(op, probe, projection, seed, nullptr);
      probe[i].values[j] = x0;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel > report.max_rel_err || report.checked == 0) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
        report.worst_input = i;
        report.worst_index = j;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

DiffOp conv3d_op() {
  return {"conv3d",
          [](Tape<double>& t, const std::vector<Var>& v) { return conv3d(t, v[0], v[1], v[2]); },
          {true, true, true},
          {}};
}

DiffOp maxpool3d_op() {
  return {"maxpool3d", [](Tape<double>& t, const std::vector<Var>& v) { return maxpool3d(t, v[0]); },
          {true},
          [](const std::vector<Tensor<double>>& p, double step) {
            const auto& x = p[0];
            const Shape s = x.shape;
            for (std::size_t bc = 0; bc < s.n * s.c; ++bc)
              for (std::size_t z = 0; z + 1 < s.d; z += 2)
                for (std::size_t y = 0; y + 1 < s.h; y += 2)
                  for (std::size_t xo = 0; xo + 1 < s.w; xo += 2) {
                    double best = -INFINITY, second = -INFINITY;
                    for (std::size_t dz = 0; dz < 2; ++dz)
                      for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                          const double v =
                              x.values[bc * s.spatial() + ((z + dz) * s.h + y + dy) * s.w + xo + dx];
                          if (v > best) {
                            second = best;
                            best = v;
                          } else if (v > second) {
                            second = v;
                          }
                        }
                    if (best - second <= 2.0 * step) return true;
                  }
            return false;
          }};
}

DiffOp upsample_op() {
  return {"upsample_nearest",
          [](Tape<double>& t, const std::vector<Var>& v) { return upsample_nearest(t, v[0]); },
          {true},
          {}};
}

DiffOp batchnorm3d_op(BnMode mode) {
  // Eval mode normalises with fixed, non-trivial running statistics.
  return {mode == BnMode::Train ? "batchnorm3d/train" : "batchnorm3d/eval",
          [mode](Tape<double>& t, const std::vector<Var>& v) {
            const std::size_t c = t[v[0]].shape.c;
            RunningStats<double> stats(c);
            for (std::size_t i = 0; i < c; ++i) {
              stats.mean[i] = 0.1 * double(i) - 0.05;
              stats.var[i] = 0.5 + 0.25 * double(i);
            }
            return batchnorm3d(t, v[0], v[1], v[2], mode, &stats);
          },
          {true, true, true},
          {}};
}

DiffOp relu_op() {
  return {"relu", [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); },
          {true},
          [](const std::vector<Tensor<double>>& p, double step) {
            return std::any_of(p[0].values.begin(), p[0].values.end(),
                               [step](double x) { return std::abs(x) <= step; });
          }};
}

DiffOp sigmoid_op() {
  return {"sigmoid", [](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); },
          {true},
          {}};
}

DiffOp concat_op() {
  return {"concat_channels",
          [](Tape<double>& t, const std::vector<Var>& v) { return concat_channels(t, v[0], v[1]); },
          {true, true},
          {}};
}

DiffOp soft_dice_op() {
  return {"soft_dice_loss",
          [](Tape<double>& t, const std::vector<Var>& v) { return soft_dice_loss(t, v[0], v[1]); },
          {true, false},
          {}};
}

}  // namespace usbrain
