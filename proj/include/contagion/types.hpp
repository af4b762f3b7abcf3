#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace contagion {

/// Upper bounds on problem dimensions. Small vectors use Eigen's
/// max-size-bounded dynamic storage, so per-step work in the Monte Carlo
/// loops never touches the heap.
inline constexpr int kMaxStocks = 16;
inline constexpr int kMaxRegimes = 8;

template <typename Scalar, int MaxRows>
using BoundedVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, MaxRows, 1>;

template <typename Scalar, int MaxRows, int MaxCols>
using BoundedMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, MaxRows, MaxCols>;

/// One entry per stock.
using StockVector = BoundedVector<double, kMaxStocks>;
/// One entry per regime (full probability vectors, per-regime values).
using RegimeVector = BoundedVector<double, kMaxRegimes>;
/// (K-1) x N diffusion coefficient of the projected filter.
using FilterDiffusion = BoundedMatrix<double, kMaxRegimes, kMaxStocks>;

/// Malformed configuration or a parameter outside its admissible range.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical scheme produced a value it cannot recover from
/// (non-finite node, filter leaving the simplex, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace contagion
