#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tricov {

// Raised when tensor extents do not fit the operation they are fed to.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array. `grad` is either empty or has the same length as
// `data`.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents, T fill = T(0))
      : shape(std::move(extents)), data(count(shape), fill) {}
  Tensor(std::initializer_list<std::size_t> extents, T fill = T(0))
      : Tensor(std::vector<std::size_t>(extents), fill) {}

  static std::size_t count(const std::vector<std::size_t>& extents) {
    return std::accumulate(extents.begin(), extents.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool has_grad() const { return !grad.empty(); }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  // (channel, row, col) access for rank-3 tensors.
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * shape[1] + y) * shape[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * shape[1] + y) * shape[2] + x];
  }

  bool valid() const {
    return data.size() == count(shape) &&
           (grad.empty() || grad.size() == data.size());
  }
};

std::string describe_shape(const std::vector<std::size_t>& shape);

}  // namespace tricov
