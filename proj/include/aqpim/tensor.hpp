// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace aqpim {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = RowMatrix<float>;
using Vector = ColVector<float>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

// Round-trip through IEEE binary16 (round to nearest even).
inline float round_to_half(float x) {
  return static_cast<float>(Eigen::half(x));
}

inline std::uint16_t half_bits(float x) { return std::bit_cast<std::uint16_t>(Eigen::half(x)); }
inline float half_from_bits(std::uint16_t b) { return static_cast<float>(std::bit_cast<Eigen::half>(b)); }
inline std::uint16_t bf16_bits(float x) { return std::bit_cast<std::uint16_t>(Eigen::bfloat16(x)); }
inline float bf16_from_bits(std::uint16_t b) {
  return static_cast<float>(std::bit_cast<Eigen::bfloat16>(b));
}

// Relative error ||a - b|| / max(||b||, tiny).
template <typename A, typename B>
double relative_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double den = std::max(static_cast<double>(b.template cast<double>().norm()), 1e-30);
  return (a.template cast<double>() - b.template cast<double>()).norm() / den;
}

}  // namespace aqpim
