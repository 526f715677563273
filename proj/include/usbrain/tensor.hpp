#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace usbrain {

// (batch, channels, depth, height, width); width is the fastest axis.
struct Shape {
  std::size_t n = 1, c = 1, d = 1, h = 1, w = 1;

  std::size_t spatial() const { return d * h * w; }
  std::size_t numel() const { return n * c * spatial(); }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a gradient is accumulated

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), values(s.numel(), fill) {}
  Tensor(Shape s, std::vector<T> v) : shape(s), values(std::move(v)) {}

  bool has_grad() const { return !grad.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
  std::size_t numel() const { return values.size(); }

  T* channel(std::size_t b, std::size_t ch) {
    return values.data() + (b * shape.c + ch) * shape.spatial();
  }
  const T* channel(std::size_t b, std::size_t ch) const {
    return values.data() + (b * shape.c + ch) * shape.spatial();
  }
};

}  // namespace usbrain
