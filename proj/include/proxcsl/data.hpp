#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "proxcsl/error.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

/// One stored entry of a sparse matrix, addressed by (row, col).
struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Entries of one feature column, sorted by row.
struct ColumnView {
  std::span<const std::uint32_t> rows;
  std::span<const double> values;

  std::size_t size() const noexcept { return rows.size(); }
};

/// Entries of one sample, sorted by column.
struct RowEntries {
  std::span<const std::uint32_t> cols;
  std::span<const double> values;

  std::size_t size() const noexcept { return cols.size(); }
};

/// Compressed-row copy of a design matrix. Built on demand for prediction.
class RowView {
 public:
  RowView() = default;
  RowView(std::vector<std::size_t> row_ptr, std::vector<std::uint32_t> cols,
          std::vector<double> values)
      : row_ptr_(std::move(row_ptr)), cols_(std::move(cols)), values_(std::move(values)) {}

  std::size_t n_rows() const noexcept { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }

  RowEntries row(std::size_t i) const {
    const auto b = row_ptr_[i];
    const auto e = row_ptr_[i + 1];
    return {std::span(cols_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
  }

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> values_;
};

/**
 * Column-compressed sparse feature matrix.
 *
 * Coordinate descent and gradient accumulation walk one feature at a time,
 * so columns are the primary storage. The row view is materialized lazily
 * and shared between copies; the matrix is immutable after construction,
 * so copies may be read from several threads.
 */
class SparseDesignMatrix {
 public:
  SparseDesignMatrix() : col_ptr_(1, 0) {}

  /// Builds from CSC arrays. Validates every invariant.
  SparseDesignMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<std::size_t> col_ptr,
                     std::vector<std::uint32_t> row_idx, std::vector<double> values)
      : n_rows_(n_rows),
        n_cols_(n_cols),
        col_ptr_(std::move(col_ptr)),
        row_idx_(std::move(row_idx)),
        values_(std::move(values)) {
    validate();
  }

  /// Builds from unordered triplets. Duplicate (row, col) pairs are rejected;
  /// explicit zeros are dropped.
  static SparseDesignMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                          std::vector<Triplet> triplets) {
    std::erase_if(triplets, [](const Triplet& t) { return t.value == 0.0; });
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    std::vector<std::size_t> col_ptr(n_cols + 1, 0);
    std::vector<std::uint32_t> rows;
    std::vector<double> vals;
    rows.reserve(triplets.size());
    vals.reserve(triplets.size());
    for (const auto& t : triplets) {
      if (t.col >= n_cols || t.row >= n_rows) {
        throw InvalidArgument("triplet index out of range");
      }
      ++col_ptr[t.col + 1];
      rows.push_back(static_cast<std::uint32_t>(t.row));
      vals.push_back(t.value);
    }
    std::partial_sum(col_ptr.begin(), col_ptr.end(), col_ptr.begin());
    return SparseDesignMatrix(n_rows, n_cols, std::move(col_ptr), std::move(rows),
                              std::move(vals));
  }

  /// Builds from a row-major dense array, skipping zeros.
  static SparseDesignMatrix from_dense(std::size_t n_rows, std::size_t n_cols,
                                       std::span<const double> row_major) {
    if (row_major.size() != n_rows * n_cols) {
      throw InvalidArgument("dense array size does not match shape");
    }
    std::vector<std::size_t> col_ptr(n_cols + 1, 0);
    std::vector<std::uint32_t> rows;
    std::vector<double> vals;
    for (std::size_t j = 0; j < n_cols; ++j) {
      for (std::size_t i = 0; i < n_rows; ++i) {
        const double v = row_major[i * n_cols + j];
        if (v != 0.0) {
          rows.push_back(static_cast<std::uint32_t>(i));
          vals.push_back(v);
        }
      }
      col_ptr[j + 1] = rows.size();
    }
    return SparseDesignMatrix(n_rows, n_cols, std::move(col_ptr), std::move(rows),
                              std::move(vals));
  }

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return n_cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  ColumnView column(std::size_t j) const {
    const auto b = col_ptr_[j];
    const auto e = col_ptr_[j + 1];
    return {std::span(row_idx_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
  }

  /// Value at (i, j); zero when not stored.
  double at(std::size_t i, std::size_t j) const {
    const auto col = column(j);
    const auto it = std::lower_bound(col.rows.begin(), col.rows.end(), i);
    if (it == col.rows.end() || *it != i) return 0.0;
    return col.values[static_cast<std::size_t>(it - col.rows.begin())];
  }

  /// Row-compressed view, built on first use.
  const RowView& rows() const {
    std::call_once(row_cache_->once, [this] { row_cache_->view = build_row_view(); });
    return row_cache_->view;
  }

  /// out = X w
  void multiply(std::span<const double> w, std::span<double> out) const {
    if (w.size() != n_cols_ || out.size() != n_rows_) {
      throw InvalidArgument("multiply: dimension mismatch");
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < n_cols_; ++j) {
      const double wj = w[j];
      if (wj == 0.0) continue;
      const auto col = column(j);
      for (std::size_t k = 0; k < col.size(); ++k) out[col.rows[k]] += wj * col.values[k];
    }
  }

  /// out = Xᵀ r
  void multiply_transpose(std::span<const double> r, std::span<double> out) const {
    if (r.size() != n_rows_ || out.size() != n_cols_) {
      throw InvalidArgument("multiply_transpose: dimension mismatch");
    }
    for (std::size_t j = 0; j < n_cols_; ++j) {
      const auto col = column(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < col.size(); ++k) acc += col.values[k] * r[col.rows[k]];
      out[j] = acc;
    }
  }

  /// Submatrix holding the given rows, renumbered in the order listed.
  SparseDesignMatrix select_rows(std::span<const std::size_t> rows) const {
    constexpr auto kAbsent = static_cast<std::size_t>(-1);
    std::vector<std::size_t> new_index(n_rows_, kAbsent);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= n_rows_) throw InvalidArgument("select_rows: row out of range");
      if (new_index[rows[r]] != kAbsent) throw InvalidArgument("select_rows: repeated row");
      new_index[rows[r]] = r;
    }
    std::vector<std::size_t> col_ptr(n_cols_ + 1, 0);
    std::vector<std::uint32_t> out_rows;
    std::vector<double> out_vals;
    std::vector<std::pair<std::uint32_t, double>> scratch;
    for (std::size_t j = 0; j < n_cols_; ++j) {
      const auto col = column(j);
      scratch.clear();
      for (std::size_t k = 0; k < col.size(); ++k) {
        const auto ni = new_index[col.rows[k]];
        if (ni != kAbsent) scratch.emplace_back(static_cast<std::uint32_t>(ni), col.values[k]);
      }
      std::sort(scratch.begin(), scratch.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [r, v] : scratch) {
        out_rows.push_back(r);
        out_vals.push_back(v);
      }
      col_ptr[j + 1] = out_rows.size();
    }
    return SparseDesignMatrix(rows.size(), n_cols_, std::move(col_ptr), std::move(out_rows),
                              std::move(out_vals));
  }

  /// Same entries with a wider feature space (extra empty columns).
  SparseDesignMatrix with_n_cols(std::size_t n_cols) const {
    if (n_cols < n_cols_) throw InvalidArgument("with_n_cols: cannot shrink feature space");
    auto col_ptr = col_ptr_;
    col_ptr.resize(n_cols + 1, col_ptr_.back());
    return SparseDesignMatrix(n_rows_, n_cols, std::move(col_ptr), row_idx_, values_);
  }

  std::span<const std::size_t> col_ptr() const noexcept { return col_ptr_; }
  std::span<const std::uint32_t> row_indices() const noexcept { return row_idx_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  struct RowCache {
    std::once_flag once;
    RowView view;
  };

  void validate() const {
    if (n_rows_ > std::numeric_limits<std::uint32_t>::max()) {
      throw InvalidArgument("too many rows for 32-bit row indices");
    }
    if (col_ptr_.size() != n_cols_ + 1 || col_ptr_.front() != 0 ||
        col_ptr_.back() != row_idx_.size() || row_idx_.size() != values_.size()) {
      throw InvalidArgument("inconsistent CSC arrays");
    }
    for (std::size_t j = 0; j < n_cols_; ++j) {
      if (col_ptr_[j] > col_ptr_[j + 1]) throw InvalidArgument("column pointers not monotone");
      for (auto k = col_ptr_[j]; k < col_ptr_[j + 1]; ++k) {
        if (row_idx_[k] >= n_rows_) throw InvalidArgument("row index out of range");
        if (k > col_ptr_[j] && row_idx_[k] <= row_idx_[k - 1]) {
          throw InvalidArgument("row indices within a column must be strictly increasing");
        }
        if (!std::isfinite(values_[k])) throw InvalidArgument("non-finite matrix value");
      }
    }
  }

  RowView build_row_view() const {
    std::vector<std::size_t> row_ptr(n_rows_ + 1, 0);
    for (const auto r : row_idx_) ++row_ptr[r + 1];
    std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
    std::vector<std::uint32_t> cols(values_.size());
    std::vector<double> vals(values_.size());
    auto next = row_ptr;
    // Walking columns in order leaves each row's entries sorted by column.
    for (std::size_t j = 0; j < n_cols_; ++j) {
      for (auto k = col_ptr_[j]; k < col_ptr_[j + 1]; ++k) {
        const auto pos = next[row_idx_[k]]++;
        cols[pos] = static_cast<std::uint32_t>(j);
        vals[pos] = values_[k];
      }
    }
    return RowView(std::move(row_ptr), std::move(cols), std::move(vals));
  }

  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> col_ptr_;
  std::vector<std::uint32_t> row_idx_;
  std::vector<double> values_;
  std::shared_ptr<RowCache> row_cache_ = std::make_shared<RowCache>();
};

/// Design matrix plus binary labels in {0, 1}.
class LabeledDataset {
 public:
  LabeledDataset() = default;

  LabeledDataset(SparseDesignMatrix X, std::vector<std::uint8_t> y)
      : X_(std::move(X)), y_(std::move(y)) {
    if (y_.size() != X_.n_rows()) throw InvalidArgument("label count differs from row count");
    for (const auto label : y_) {
      if (label > 1) throw InvalidArgument("labels must be 0 or 1");
    }
  }

  const SparseDesignMatrix& X() const noexcept { return X_; }
  std::span<const std::uint8_t> y() const noexcept { return y_; }
  std::size_t n_rows() const noexcept { return X_.n_rows(); }
  std::size_t n_features() const noexcept { return X_.n_cols(); }

  LabeledDataset select_rows(std::span<const std::size_t> rows) const {
    std::vector<std::uint8_t> y;
    y.reserve(rows.size());
    for (const auto r : rows) {
      if (r >= y_.size()) throw InvalidArgument("select_rows: row out of range");
      y.push_back(y_[r]);
    }
    return LabeledDataset(X_.select_rows(rows), std::move(y));
  }

  LabeledDataset with_n_features(std::size_t d) const {
    return LabeledDataset(X_.with_n_cols(d), y_);
  }

 private:
  SparseDesignMatrix X_;
  std::vector<std::uint8_t> y_;
};

/// Disjoint row blocks of a training set, one per worker.
struct PartitionSet {
  std::vector<LabeledDataset> partitions;
  /// partition_of[i] is the partition holding training row i.
  std::vector<std::size_t> partition_of;
  /// source_rows[k][r] is the training row index of row r of partition k.
  std::vector<std::vector<std::size_t>> source_rows;

  std::size_t size() const noexcept { return partitions.size(); }
};

struct SyntheticSpec {
  std::size_t n_samples = 1000;
  std::size_t n_features = 100;
  std::size_t n_true_nonzeros = 10;
  /// Probability that a feature value is exactly zero; otherwise U(0, 1).
  double zero_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_true_nonzeros > n_features) {
      throw InvalidArgument("n_true_nonzeros exceeds n_features");
    }
    if (!(zero_prob >= 0.0 && zero_prob < 1.0)) {
      throw InvalidArgument("zero_prob must lie in [0, 1)");
    }
    if (n_samples == 0 || n_features == 0) throw InvalidArgument("empty synthetic shape");
  }
};

struct SyntheticData {
  LabeledDataset data;
  WeightVector w_true;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Uniform draw in the open interval (0, 1).
inline double open_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = 0.0;
  do {
    v = u(rng);
  } while (v == 0.0);
  return v;
}

inline double expit(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/**
 * Reads libsvm text (`label idx:val idx:val ...`, 1-based ascending indices).
 * Labels -1/0 map to 0 and +1/1 map to 1. The feature dimension is the
 * largest observed index unless `n_features` is given, which may only widen it.
 * Blank lines are skipped; explicit zero values are not stored.
 */
inline LabeledDataset parse_libsvm(std::istream& in,
                                   std::optional<std::size_t> n_features = std::nullopt) {
  std::vector<Triplet> triplets;
  std::vector<std::uint8_t> labels;
  std::size_t max_col = 0;
  bool any_feature = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto rest = detail::trim(line);
    if (rest.empty()) continue;

    auto next_token = [&rest]() {
      const auto end = rest.find_first_of(" \t");
      auto tok = rest.substr(0, end);
      rest = end == std::string_view::npos ? std::string_view{} : detail::trim(rest.substr(end));
      return tok;
    };

    const auto label_tok = next_token();
    double label = 0.0;
    if (!detail::parse_number(label_tok, label)) {
      throw ParseError(line_no, "malformed label '" + std::string(label_tok) + "'");
    }
    if (label == 1.0) {
      labels.push_back(1);
    } else if (label == 0.0 || label == -1.0) {
      labels.push_back(0);
    } else {
      throw ParseError(line_no, "label outside {-1, 0, 1}: '" + std::string(label_tok) + "'");
    }
    const std::size_t row = labels.size() - 1;

    std::size_t prev_index = 0;
    while (!rest.empty()) {
      const auto tok = next_token();
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(line_no, "expected idx:val, got '" + std::string(tok) + "'");
      }
      std::size_t index = 0;
      double value = 0.0;
      if (!detail::parse_number(tok.substr(0, colon), index) || index == 0) {
        throw ParseError(line_no, "bad feature index in '" + std::string(tok) + "'");
      }
      if (!detail::parse_number(tok.substr(colon + 1), value) || !std::isfinite(value)) {
        throw ParseError(line_no, "bad feature value in '" + std::string(tok) + "'");
      }
      if (index <= prev_index) {
        throw ParseError(line_no, "feature indices must be strictly ascending");
      }
      prev_index = index;
      max_col = std::max(max_col, index - 1);
      any_feature = true;
      if (value != 0.0) triplets.push_back({row, index - 1, value});
    }
  }
  std::size_t d = any_feature ? max_col + 1 : 0;
  if (n_features) {
    if (*n_features < d) {
      throw InvalidArgument("feature dimension override " + std::to_string(*n_features) +
                            " is below the observed dimension " + std::to_string(d));
    }
    d = *n_features;
  }
  auto X = SparseDesignMatrix::from_triplets(labels.size(), d, std::move(triplets));
  return LabeledDataset(std::move(X), std::move(labels));
}

inline LabeledDataset parse_libsvm(const std::filesystem::path& path,
                                   std::optional<std::size_t> n_features = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_libsvm(in, n_features);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

/// Writes libsvm text; values use shortest round-trip formatting.
inline void write_libsvm(std::ostream& out, const LabeledDataset& data) {
  const auto& rows = data.X().rows();
  char buf[64];
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    out << (data.y()[i] ? "+1" : "-1");
    const auto r = rows.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), r.values[k]);
      out << ' ' << (r.cols[k] + 1) << ':' << std::string_view(buf, res.ptr);
    }
    out << '\n';
  }
}

/**
 * Random train/test split. The test set receives round(N * test_fraction)
 * rows, clamped so both sides are non-empty. Rows keep their original order.
 */
inline std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& data,
                                                                  double test_fraction,
                                                                  std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  const auto n = data.n_rows();
  if (n < 2) throw InvalidArgument("need at least 2 rows to split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.select_rows(train), data.select_rows(test)};
}

/**
 * Shuffles rows, then cuts contiguous blocks whose sizes differ by at most
 * one (the first N mod p blocks get the extra row). Rows inside a partition
 * keep their original relative order.
 */
inline PartitionSet partition(const LabeledDataset& data, std::size_t p, std::uint64_t seed) {
  const auto n = data.n_rows();
  if (p == 0) throw InvalidArgument("partition count must be positive");
  if (p > n) throw InvalidArgument("more partitions than rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  PartitionSet out;
  out.partition_of.assign(n, 0);
  out.source_rows.resize(p);
  const auto base = n / p;
  const auto extra = n % p;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < p; ++k) {
    const auto len = base + (k < extra ? 1 : 0);
    auto& rows = out.source_rows[k];
    rows.assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                order.begin() + static_cast<std::ptrdiff_t>(offset + len));
    std::sort(rows.begin(), rows.end());
    for (const auto r : rows) out.partition_of[r] = k;
    offset += len;
  }
  out.partitions.reserve(p);
  for (const auto& rows : out.source_rows) out.partitions.push_back(data.select_rows(rows));
  return out;
}

/**
 * Draws a dataset with a known sparse generating model.
 *
 * Each X entry is 0 with probability zero_prob, else U(0, 1). The true model
 * has exactly n_true_nonzeros coefficients at random positions with
 * magnitudes U(0.5, 2) and random signs. Labels are Bernoulli(expit(x w*)).
 */
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto n = spec.n_samples;
  const auto d = spec.n_features;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  WeightVector w(d);
  std::vector<std::size_t> positions(d);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  std::shuffle(positions.begin(), positions.end(), rng);
  positions.resize(spec.n_true_nonzeros);
  std::sort(positions.begin(), positions.end());
  for (const auto j : positions) {
    const double magnitude = 0.5 + 1.5 * unit(rng);
    w[j] = unit(rng) < 0.5 ? -magnitude : magnitude;
  }

  std::vector<std::size_t> col_ptr(d + 1, 0);
  std::vector<std::uint32_t> rows;
  std::vector<double> vals;
  const auto expected = static_cast<double>(n) * static_cast<double>(d) * (1.0 - spec.zero_prob);
  rows.reserve(static_cast<std::size_t>(expected * 1.01) + 16);
  vals.reserve(rows.capacity());
  std::vector<double> margin(n, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.zero_prob > 0.0 && unit(rng) < spec.zero_prob) continue;
      const double v = detail::open_unit(rng);
      rows.push_back(static_cast<std::uint32_t>(i));
      vals.push_back(v);
      margin[i] += v * w[j];
    }
    col_ptr[j + 1] = rows.size();
  }
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = unit(rng) < detail::expit(margin[i]) ? 1 : 0;

  SparseDesignMatrix X(n, d, std::move(col_ptr), std::move(rows), std::move(vals));
  return {LabeledDataset(std::move(X), std::move(y)), std::move(w)};
}

}  // namespace proxcsl
