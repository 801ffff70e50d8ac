#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace proxcsl {

/// Dense coefficient vector. Sparsity is counted exactly: an entry is a
/// nonzero iff it is not 0.0, since the prox step writes true zeros.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(std::size_t d) : values_(d, 0.0) {}
  explicit WeightVector(std::vector<double> values) : values_(std::move(values)) {}
  WeightVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t j) { return values_[j]; }
  double operator[](std::size_t j) const { return values_[j]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  std::size_t nnz() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [](double v) { return v != 0.0; }));
  }

  double norm1() const noexcept {
    double s = 0.0;
    for (const double v : values_) s += std::abs(v);
    return s;
  }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (const double v : values_) s += v * v;
    return s;
  }

  double norm_inf() const noexcept {
    double s = 0.0;
    for (const double v : values_) s = std::max(s, std::abs(v));
    return s;
  }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const WeightVector&, const WeightVector&) = default;

 private:
  std::vector<double> values_;
};

}  // namespace proxcsl
