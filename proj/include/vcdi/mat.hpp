#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace vcdi {

// Dense row-major 2-D array of doubles. All learned computation in the engine
// is expressed over these; higher-rank data is flattened by the caller.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), d(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), d(std::move(values)) {
    assert(d.size() == rows * cols);
  }

  static Mat zeros(std::size_t r, std::size_t c) { return Mat(r, c); }
  static Mat full(std::size_t r, std::size_t c, double v) {
    Mat m(r, c);
    for (auto& e : m.d) e = v;
    return m;
  }
  static Mat row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Mat(1, n, std::move(values));
  }

  std::size_t size() const { return d.size(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows && c < cols);
    return d[r * cols + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows && c < cols);
    return d[r * cols + c];
  }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) {
    for (auto& e : d) e = v;
  }
};

}  // namespace vcdi
