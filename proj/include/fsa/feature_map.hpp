#pragma once

#include <cstddef>
#include <vector>

namespace fsa {

/// Dense (channels, rows, cols) array in row-major order.
struct FeatureMap {
  int c = 1;
  int h = 1;
  int w = 1;
  std::vector<double> data;

  FeatureMap() : data(1, 0.0) {}
  FeatureMap(int channels, int rows, int cols, double fill = 0.0)
      : c(channels), h(rows), w(cols),
        data(static_cast<std::size_t>(channels) * rows * cols, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t index(int ch, int y, int x) const {
    return (static_cast<std::size_t>(ch) * h + y) * w + x;
  }
  double& at(int ch, int y, int x) { return data[index(ch, y, x)]; }
  double at(int ch, int y, int x) const { return data[index(ch, y, x)]; }

  bool same_shape(const FeatureMap& o) const { return c == o.c && h == o.h && w == o.w; }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

}  // namespace fsa
