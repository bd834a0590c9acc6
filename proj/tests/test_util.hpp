#pragma once

#include <algorithm>
#include <cstring>
#include <random>

#include "tsft/series.hpp"
#include "tsft/tensor.hpp"

namespace tsft::testing {

inline Mat<double> randn(Index r, Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline MultiSeries random_series(Index channels, Index length, std::mt19937_64& rng) {
  MultiSeries s;
  s.x = randn(channels, length, rng);
  s.y = Mat<double>::Constant(1, 1, static_cast<double>(rng() & 1));
  return s;
}

template <typename S>
bool bit_equal(const Mat<S>& a, const Mat<S>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](S x, S y) {
           return std::memcmp(&x, &y, sizeof(S)) == 0;
         });
}

}  // namespace tsft::testing
