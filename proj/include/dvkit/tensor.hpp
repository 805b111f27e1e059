#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dvkit/common.hpp"

namespace dvkit {

// Dense row-major tensor. Shape is fixed at construction.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int e : shape) {
      if (e <= 0) fail(Errc::invalid_config, "tensor extent must be positive");
      n *= static_cast<std::size_t>(e);
    }
    v.assign(n, 0.0);
  }

  std::size_t numel() const { return v.size(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

}  // namespace dvkit
