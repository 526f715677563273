#include "usbrain/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "usbrain/error.hpp"

namespace usbrain {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << d << "," << h << "," << w << ")";
  return os.str();
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, {}});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back) {
  const bool keep = recording_ && requires_grad;
  nodes_.push_back(Node{std::move(value), keep, keep ? std::move(back) : nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
void Tape<T>::backward(Var out) {
  if (nodes_.at(out.id).tensor.numel() != 1)
    throw Error(Errc::ShapeMismatch, "backward() without seed needs a scalar output");
  backward(out, std::vector<T>{T(1)});
}

template <typename T>
void Tape<T>::backward(Var out, const std::vector<T>& seed) {
  auto& root = nodes_.at(out.id).tensor;
  if (seed.size() != root.numel())
    throw Error(Errc::ShapeMismatch, "backward seed length does not match output");
  auto& g = root.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.back && node.tensor.has_grad()) node.back(*this);
  }
}

template class Tape<float>;
template class Tape<double>;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct Range {
  std::ptrdiff_t lo, hi;
};

// Output positions o in [0, n) whose source o + shift lies inside [0, n).
Range valid_range(std::ptrdiff_t n, std::ptrdiff_t shift) {
  return {std::max<std::ptrdiff_t>(0, -shift), std::min<std::ptrdiff_t>(n, n - shift)};
}

// Unfolds one batch item into a (in * k^3, d*h*w) row-major matrix; rows are
// ordered (channel, kz, ky, kx) to match the weight layout.
template <typename T>
void im2col(const T* src, std::size_t channels, const Shape& s, std::size_t k, T* cols) {
  const auto D = std::ptrdiff_t(s.d), H = std::ptrdiff_t(s.h), W = std::ptrdiff_t(s.w);
  const auto pad = std::ptrdiff_t(k / 2);
  const std::size_t spatial = s.spatial();
  T* row = cols;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    const T* in = src + ci * spatial;
    for (std::ptrdiff_t kz = 0; kz < std::ptrdiff_t(k); ++kz) {
      const auto zr = valid_range(D, kz - pad);
      for (std::ptrdiff_t ky = 0; ky < std::ptrdiff_t(k); ++ky) {
        const auto yr = valid_range(H, ky - pad);
        for (std::ptrdiff_t kx = 0; kx < std::ptrdiff_t(k); ++kx, row += spatial) {
          const std::ptrdiff_t dx = kx - pad;
          const auto xr = valid_range(W, dx);
          std::fill(row, row + spatial, T(0));
          for (std::ptrdiff_t z = zr.lo; z < zr.hi; ++z) {
            for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
              T* dst = row + (z * H + y) * W;
              const T* s_row = in + ((z + kz - pad) * H + (y + ky - pad)) * W + dx;
              for (std::ptrdiff_t x = xr.lo; x < xr.hi; ++x) dst[x] = s_row[x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, const Shape& s, std::size_t k, T* dst) {
  const auto D = std::ptrdiff_t(s.d), H = std::ptrdiff_t(s.h), W = std::ptrdiff_t(s.w);
  const auto pad = std::ptrdiff_t(k / 2);
  const std::size_t spatial = s.spatial();
  const T* row = cols;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    T* out = dst + ci * spatial;
    for (std::ptrdiff_t kz = 0; kz < std::ptrdiff_t(k); ++kz) {
      const auto zr = valid_range(D, kz - pad);
      for (std::ptrdiff_t ky = 0; ky < std::ptrdiff_t(k); ++ky) {
        const auto yr = valid_range(H, ky - pad);
        for (std::ptrdiff_t kx = 0; kx < std::ptrdiff_t(k); ++kx, row += spatial) {
          const std::ptrdiff_t dx = kx - pad;
          const auto xr = valid_range(W, dx);
          for (std::ptrdiff_t z = zr.lo; z < zr.hi; ++z) {
            for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
              const T* src = row + (z * H + y) * W;
              T* d_row = out + ((z + kz - pad) * H + (y + ky - pad)) * W + dx;
              for (std::ptrdiff_t x = xr.lo; x < xr.hi; ++x) d_row[x] += src[x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
bool any_requires(const Tape<T>& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (tape.requires_grad(v)) return true;
  return false;
}

}  // namespace

template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weights, Var bias) {
  const Shape xs = tape[input].shape;
  const Shape ws = tape[weights].shape;
  const std::size_t k = ws.d;
  if (ws.h != k || ws.w != k || k % 2 == 0)
    throw Error(Errc::ShapeMismatch, "conv3d kernel must be cubic with odd size, got " + ws.str());
  if (ws.c != xs.c)
    throw Error(Errc::ShapeMismatch, "conv3d input has " + std::to_string(xs.c) +
                                         " channels, weights expect " + std::to_string(ws.c));
  if (tape[bias].numel() != ws.n)
    throw Error(Errc::ShapeMismatch, "conv3d bias length != out channels");

  const std::size_t cin = xs.c, cout = ws.n, spatial = xs.spatial(), taps = k * k * k;
  const std::size_t rows = cin * taps;
  const auto R = Eigen::Index(rows), S = Eigen::Index(spatial), CO = Eigen::Index(cout);
  Tensor<T> out(Shape{xs.n, cout, xs.d, xs.h, xs.w});
  std::vector<T> cols(rows * spatial);
  ConstMapMat<T> wmat(tape[weights].values.data(), CO, R);
  const auto& bv = tape[bias].values;
  for (std::size_t b = 0; b < xs.n; ++b) {
    im2col(tape[input].channel(b, 0), cin, xs, k, cols.data());
    ConstMapMat<T> cmat(cols.data(), R, S);
    MapMat<T> omat(out.channel(b, 0), CO, S);
    omat.noalias() = wmat * cmat;
    for (std::size_t co = 0; co < cout; ++co) omat.row(Eigen::Index(co)).array() += bv[co];
  }

  const Var self{tape.size()};
  const bool rg = any_requires(tape, {input, weights, bias});
  return tape.push(std::move(out), rg, [=](Tape<T>& t) {
    const Tensor<T>& o = t[self];
    const bool need_w = t.requires_grad(weights) || t.requires_grad(bias);
    const bool need_x = t.requires_grad(input);
    std::vector<T> buf(rows * spatial);
    for (std::size_t b = 0; b < xs.n; ++b) {
      ConstMapMat<T> gmat(o.grad.data() + b * cout * spatial, CO, S);
      if (need_w) {
        im2col(t[input].channel(b, 0), cin, xs, k, buf.data());
        ConstMapMat<T> cmat(buf.data(), R, S);
        MapMat<T> gw(t.grad(weights).data(), CO, R);
        gw.noalias() += gmat * cmat.transpose();
        auto& gb = t.grad(bias);
        // Plain loop: Eigen's vectorised sum peels by pointer alignment, so its
        // rounding would depend on where the allocator put the buffer.
        for (std::size_t co = 0; co < cout; ++co) {
          const T* g = o.grad.data() + (b * cout + co) * spatial;
          double acc = 0.0;
          for (std::size_t i = 0; i < spatial; ++i) acc += double(g[i]);
          gb[co] += T(acc);
        }
      }
      if (need_x) {
        ConstMapMat<T> wm(t[weights].values.data(), CO, R);
        MapMat<T> dcols(buf.data(), R, S);
        dcols.noalias() = wm.transpose() * gmat;
        col2im_add(buf.data(), cin, xs, k, t.grad(input).data() + b * cin * spatial);
      }
    }
  });
}

template <typename T>
Var maxpool3d(Tape<T>& tape, Var input) {
  const Shape xs = tape[input].shape;
  if (xs.d % 2 || xs.h % 2 || xs.w % 2)
    throw Error(Errc::IndivisibleDim, "maxpool3d needs even spatial dims, got " + xs.str());
  const Shape os{xs.n, xs.c, xs.d / 2, xs.h / 2, xs.w / 2};
  Tensor<T> out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(os.numel());
  const auto& x = tape[input].values;
  std::size_t oi = 0;
  for (std::size_t bc = 0; bc < xs.n * xs.c; ++bc) {
    const std::size_t base = bc * xs.spatial();
    for (std::size_t z = 0; z < os.d; ++z)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xo = 0; xo < os.w; ++xo, ++oi) {
          std::size_t best = base + ((2 * z) * xs.h + 2 * y) * xs.w + 2 * xo;
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx =
                    base + ((2 * z + dz) * xs.h + 2 * y + dy) * xs.w + 2 * xo + dx;
                if (x[idx] > x[best]) best = idx;
              }
          out.values[oi] = x[best];
          (*argmax)[oi] = best;
        }
  }
  const Var self{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape<T>& t) {
    const auto& g = t[self].grad;
    auto& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var upsample_nearest(Tape<T>& tape, Var input) {
  const Shape xs = tape[input].shape;
  const Shape os{xs.n, xs.c, xs.d * 2, xs.h * 2, xs.w * 2};
  Tensor<T> out(os);
  const auto& x = tape[input].values;
  std::size_t oi = 0;
  for (std::size_t bc = 0; bc < xs.n * xs.c; ++bc) {
    const std::size_t base = bc * xs.spatial();
    for (std::size_t z = 0; z < os.d; ++z)
      for (std::size_t y = 0; y < os.h; ++y) {
        const T* row = x.data() + base + ((z / 2) * xs.h + y / 2) * xs.w;
        for (std::size_t xo = 0; xo < os.w; ++xo) out.values[oi++] = row[xo / 2];
      }
  }
  const Var self{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape<T>& t) {
    const auto& g = t[self].grad;
    auto& gx = t.grad(input);
    std::size_t i = 0;
    for (std::size_t bc = 0; bc < xs.n * xs.c; ++bc) {
      const std::size_t base = bc * xs.spatial();
      for (std::size_t z = 0; z < os.d; ++z)
        for (std::size_t y = 0; y < os.h; ++y) {
          T* row = gx.data() + base + ((z / 2) * xs.h + y / 2) * xs.w;
          for (std::size_t xo = 0; xo < os.w; ++xo) row[xo / 2] += g[i++];
        }
    }
  });
}

template <typename T>
Var batchnorm3d(Tape<T>& tape, Var input, Var gamma, Var beta, BnMode mode,
                RunningStats<T>* stats) {
  const Shape xs = tape[input].shape;
  const std::size_t C = xs.c, S = xs.spatial(), N = xs.n;
  if (tape[gamma].numel() != C || tape[beta].numel() != C)
    throw Error(Errc::ShapeMismatch, "batchnorm gamma/beta length != channels");
  if (stats && (stats->mean.size() != C || stats->var.size() != C))
    throw Error(Errc::ShapeMismatch, "batchnorm running stats length != channels");
  if (mode == BnMode::Eval && !stats)
    throw Error(Errc::InvalidConfig, "batchnorm eval mode needs running stats");

  const double count = double(N * S);
  std::vector<T> mean(C), inv_std(C);
  const auto& x = tape[input].values;
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == BnMode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < N; ++b) {
        const T* p = x.data() + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) sum += p[i];
      }
      const double mu = sum / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < N; ++b) {
        const T* p = x.data() + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / count;
      mean[c] = T(mu);
      inv_std[c] = T(1.0 / std::sqrt(var + kBatchNormEps));
      if (stats) {
        const double unbiased = count > 1 ? ss / (count - 1) : var;
        stats->mean[c] = T(kBatchNormMomentum * stats->mean[c] + (1 - kBatchNormMomentum) * mu);
        stats->var[c] =
            T(kBatchNormMomentum * stats->var[c] + (1 - kBatchNormMomentum) * unbiased);
      }
    } else {
      mean[c] = stats->mean[c];
      inv_std[c] = T(1.0 / std::sqrt(double(stats->var[c]) + kBatchNormEps));
    }
  }

  Tensor<T> out(xs);
  const auto& gv = tape[gamma].values;
  const auto& bv = tape[beta].values;
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = x.data() + (b * C + c) * S;
      T* o = out.values.data() + (b * C + c) * S;
      const T m = mean[c], is = inv_std[c], g = gv[c], be = bv[c];
      for (std::size_t i = 0; i < S; ++i) o[i] = g * ((p[i] - m) * is) + be;
    }

  const Var self{tape.size()};
  const bool rg = any_requires(tape, {input, gamma, beta});
  return tape.push(std::move(out), rg, [=](Tape<T>& t) {
    const auto& g = t[self].grad;
    const auto& xv = t[input].values;
    const auto& gam = t[gamma].values;
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = xv.data() + (b * C + c) * S;
        const T* gp = g.data() + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          sum_g[c] += gp[i];
          sum_gx[c] += double(gp[i]) * double((p[i] - mean[c]) * inv_std[c]);
        }
      }
    if (t.requires_grad(gamma)) {
      auto& gg = t.grad(gamma);
      for (std::size_t c = 0; c < C; ++c) gg[c] += T(sum_gx[c]);
    }
    if (t.requires_grad(beta)) {
      auto& gb = t.grad(beta);
      for (std::size_t c = 0; c < C; ++c) gb[c] += T(sum_g[c]);
    }
    if (t.requires_grad(input)) {
      auto& gx = t.grad(input);
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* p = xv.data() + (b * C + c) * S;
          const T* gp = g.data() + (b * C + c) * S;
          T* dst = gx.data() + (b * C + c) * S;
          if (mode == BnMode::Train) {
            const T mg = T(sum_g[c] / count), mgx = T(sum_gx[c] / count);
            const T scale = gam[c] * inv_std[c];
            for (std::size_t i = 0; i < S; ++i) {
              const T xhat = (p[i] - mean[c]) * inv_std[c];
              dst[i] += scale * (gp[i] - mg - xhat * mgx);
            }
          } else {
            const T scale = gam[c] * inv_std[c];
            for (std::size_t i = 0; i < S; ++i) dst[i] += scale * gp[i];
          }
        }
    }
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  Tensor<T> out(tape[input].shape);
  const auto& x = tape[input].values;
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x[i] > T(0) ? x[i] : T(0);
  const Var self{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape<T>& t) {
    const auto& g = t[self].grad;
    const auto& xv = t[input].values;
    auto& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
  Tensor<T> out(tape[input].shape);
  const auto& x = tape[input].values;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out.values[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out.values[i] = e / (T(1) + e);
    }
  }
  const Var self{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape<T>& t) {
    const auto& o = t[self];
    auto& gx = t.grad(input);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T s = o.values[i];
      gx[i] += o.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Shape as = tape[a].shape, bs = tape[b].shape;
  if (as.n != bs.n || as.d != bs.d || as.h != bs.h || as.w != bs.w)
    throw Error(Errc::ShapeMismatch, "concat_channels " + as.str() + " vs " + bs.str());
  const std::size_t S = as.spatial();
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.d, as.h, as.w});
  for (std::size_t n = 0; n < as.n; ++n) {
    std::copy_n(tape[a].channel(n, 0), as.c * S, out.channel(n, 0));
    std::copy_n(tape[b].channel(n, 0), bs.c * S, out.channel(n, as.c));
  }
  const Var self{tape.size()};
  return tape.push(std::move(out), any_requires(tape, {a, b}), [=](Tape<T>& t) {
    const auto& g = t[self].grad;
    const std::size_t C = as.c + bs.c;
    for (std::size_t n = 0; n < as.n; ++n) {
      const T* gn = g.data() + n * C * S;
      if (t.requires_grad(a)) {
        T* ga = t.grad(a).data() + n * as.c * S;
        for (std::size_t i = 0; i < as.c * S; ++i) ga[i] += gn[i];
      }
      if (t.requires_grad(b)) {
        T* gb = t.grad(b).data() + n * bs.c * S;
        for (std::size_t i = 0; i < bs.c * S; ++i) gb[i] += gn[as.c * S + i];
      }
    }
  });
}

template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var pred, Var target) {
  const auto& p = tape[pred];
  const auto& tg = tape[target];
  if (!(p.shape == tg.shape))
    throw Error(Errc::ShapeMismatch, "soft_dice_loss " + p.shape.str() + " vs " + tg.shape.str());
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    inter += double(p.values[i]) * double(tg.values[i]);
    sp += p.values[i];
    st += tg.values[i];
  }
  const double num = 2.0 * inter + kDiceEps;
  const double den = sp + st + kDiceEps;
  Tensor<T> out(Shape{1, 1, 1, 1, 1}, T(1.0 - num / den));
  const Var self{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(pred), [=](Tape<T>& t) {
    const double g = t[self].grad[0];
    const auto& tv = t[target].values;
    auto& gp = t.grad(pred);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double d = -(2.0 * tv[i] * den - num) / (den * den);
      gp[i] += T(g * d);
    }
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const std::vector<T>& weights) {
  const auto& x = tape[input].values;
  if (weights.size() != x.size())
    throw Error(Errc::LengthMismatch, "weighted_sum weights length != tensor size");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]) * double(weights[i]);
  const Var self{tape.size()};
  return tape.push(Tensor<T>(Shape{1, 1, 1, 1, 1}, T(acc)), tape.requires_grad(input),
                   [=](Tape<T>& t) {
                     const T g = t[self].grad[0];
                     auto& gx = t.grad(input);
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
                   });
}

#define USBRAIN_INSTANTIATE_OPS(T)                                                       \
  template Var conv3d<T>(Tape<T>&, Var, Var, Var);                                       \
  template Var maxpool3d<T>(Tape<T>&, Var);                                              \
  template Var upsample_nearest<T>(Tape<T>&, Var);                                       \
  template Var batchnorm3d<T>(Tape<T>&, Var, Var, Var, BnMode, RunningStats<T>*);        \
  template Var relu<T>(Tape<T>&, Var);                                                   \
  template Var sigmoid<T>(Tape<T>&, Var);                                                \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                   \
  template Var soft_dice_loss<T>(Tape<T>&, Var, Var);                                    \
  template Var weighted_sum<T>(Tape<T>&, Var, const std::vector<T>&);

USBRAIN_INSTANTIATE_OPS(float)
USBRAIN_INSTANTIATE_OPS(double)

}  // namespace usbrain
