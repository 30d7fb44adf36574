// SPDX-License-Identifier: Apache-2.0
#pragma once

// Numeric primitives shared by every learnable module: the dense matrix type,
// sigmoid / clamped BCE, the parameter-slot registry and a central-difference
// gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddp/error.hpp"

namespace ddp {

#ifdef DDP_USE_FLOAT
using Real = float;
#else
using Real = double;
#endif

/// Clamp applied to every probability that enters a log.
inline constexpr double kProbEps = 1e-7;

template <typename T>
struct BasicMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  BasicMatrix() = default;
  BasicMatrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  void resize(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    data.assign(r * c, T(0));
  }
  void set_zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;
};

using DenseMatrix = BasicMatrix<Real>;

/// Branches on sign so exp never overflows. The result is floored at the
/// smallest normal value so downstream clamps see a positive probability.
template <typename T>
T sigmoid(T z) {
  T out;
  if (z >= T(0)) {
    out = T(1) / (T(1) + std::exp(-z));
  } else {
    const T ez = std::exp(z);
    out = ez / (T(1) + ez);
  }
  return std::max(out, std::numeric_limits<T>::min());
}

inline double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

/// Binary cross entropy with p clamped to [eps, 1-eps].
inline double bce(double p, double y) {
  const double pc = clamp_prob(p);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

// ---------------------------------------------------------------------------
// GEMM helpers over row-major buffers. All shapes are (rows x cols).

namespace gemm {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

/// C (n x m) = A (n x k) * B (k x m), or C += when accumulate.
template <typename T>
void nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m,
        bool accumulate = false) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  Map<T> C(c, N, M);
  if (accumulate)
    C.noalias() += CMap<T>(a, N, K) * CMap<T>(b, K, M);
  else
    C.noalias() = CMap<T>(a, N, K) * CMap<T>(b, K, M);
}

/// C (k x m) += A^T * B where A is (n x k), B is (n x m).
template <typename T>
void tn_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  Map<T>(c, K, M).noalias() += CMap<T>(a, N, K).transpose() * CMap<T>(b, N, M);
}

/// C (n x k) = A * B^T where A is (n x m), B is (k x m).
template <typename T>
void nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m, std::size_t k) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  Map<T>(c, N, K).noalias() = CMap<T>(a, N, M) * CMap<T>(b, K, M).transpose();
}

}  // namespace gemm

// ---------------------------------------------------------------------------
// Parameter registry

/// Which optimizer owns a slot. The feature-prior vector is the only
/// SGD-group slot; everything else is updated by Adam.
enum class UpdateGroup { Untagged, Sgd, Adam };

struct ParamSlot {
  std::string name;
  DenseMatrix values;
  DenseMatrix grad;
  UpdateGroup group = UpdateGroup::Untagged;
  bool sparse = false;

  ParamSlot() = default;
  ParamSlot(std::string n, std::size_t rows, std::size_t cols, UpdateGroup g, bool is_sparse)
      : name(std::move(n)), values(rows, cols), grad(rows, cols), group(g), sparse(is_sparse),
        touched_mask_(is_sparse ? rows : 0, 0) {}

  std::size_t rows() const { return values.rows; }
  std::size_t cols() const { return values.cols; }

  /// Records that `row` carries gradient this step (sparse slots only).
  void mark_row(std::size_t row) {
    if (!sparse) return;
    if (!touched_mask_[row]) {
      touched_mask_[row] = 1;
      touched_.push_back(static_cast<std::uint32_t>(row));
    }
  }

  /// Rows the optimizer must visit: the touched set for sparse slots,
  /// every row otherwise.
  template <typename Fn>
  void for_each_active_row(Fn&& fn) const {
    if (sparse) {
      for (auto r : touched_) fn(static_cast<std::size_t>(r));
    } else {
      for (std::size_t r = 0; r < rows(); ++r) fn(r);
    }
  }

  std::span<const std::uint32_t> touched_rows() const { return touched_; }
  bool is_touched(std::size_t row) const { return !sparse || touched_mask_[row] != 0; }

  void clear_grad() {
    if (sparse) {
      for (auto r : touched_) {
        auto g = grad.row(r);
        std::fill(g.begin(), g.end(), Real(0));
        touched_mask_[r] = 0;
      }
      touched_.clear();
    } else {
      grad.set_zero();
    }
  }

  /// Drops the gradient buffer entirely (used by frozen copies).
  void release_grad() {
    grad = DenseMatrix{};
    touched_.clear();
    touched_.shrink_to_fit();
    touched_mask_.clear();
    touched_mask_.shrink_to_fit();
  }

 private:
  std::vector<std::uint32_t> touched_;
  std::vector<std::uint8_t> touched_mask_;
};

template <typename Rng>
void fill_uniform(DenseMatrix& m, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : m.data) v = static_cast<Real>(dist(rng));
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t min_coords = 200;
  std::uint64_t seed = 17;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_slot;
  std::size_t coords_checked = 0;
  /// The coordinate behind max_rel_error.
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Max relative error per slot, in slot order.
  std::vector<std::pair<std::string, double>> per_slot;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against central differences on a sampled
/// subset of coordinates covering every slot.
///
/// `compute_grads` must zero and refill every slot's `grad`; `loss` evaluates
/// the scalar objective at the current parameter values. For sparse slots the
/// sample favours rows that carry gradient, plus one untouched row so a
/// spurious non-zero gradient there is caught as well.
inline GradCheckResult grad_check(std::span<ParamSlot* const> slots,
                                  const std::function<double()>& loss,
                                  const std::function<void()>& compute_grads,
                                  const GradCheckOptions& opts = {}) {
  compute_grads();
  // Snapshot the analytic gradients before any perturbed evaluation.
  std::vector<DenseMatrix> analytic;
  analytic.reserve(slots.size());
  for (auto* s : slots) analytic.push_back(s->grad);

  std::mt19937_64 rng(opts.seed);
  std::vector<std::vector<std::size_t>> candidates(slots.size());
  for (std::size_t si = 0; si < slots.size(); ++si) {
    const ParamSlot& slot = *slots[si];
    const DenseMatrix& g = analytic[si];
    auto& cand = candidates[si];
    if (slot.sparse) {
      std::vector<std::size_t> idle;
      for (std::size_t r = 0; r < slot.rows(); ++r) {
        bool any = false;
        for (std::size_t c = 0; c < slot.cols(); ++c) any = any || g(r, c) != Real(0);
        auto& bucket = any ? cand : idle;
        for (std::size_t c = 0; c < slot.cols(); ++c) bucket.push_back(r * slot.cols() + c);
      }
      std::shuffle(cand.begin(), cand.end(), rng);
      if (!idle.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, idle.size() - 1);
        cand.insert(cand.begin(), idle[pick(rng)]);
      }
    } else {
      cand.resize(slot.values.size());
      for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = i;
      std::shuffle(cand.begin(), cand.end(), rng);
    }
  }

  // Equal share per slot first, then top up round-robin until the floor is met.
  std::vector<std::size_t> take(slots.size(), 0);
  const std::size_t quota =
      slots.empty() ? 0 : (opts.min_coords + slots.size() - 1) / slots.size();
  std::size_t total = 0;
  for (std::size_t si = 0; si < slots.size(); ++si) {
    take[si] = std::min(quota, candidates[si].size());
    total += take[si];
  }
  for (bool grew = true; total < opts.min_coords && grew;) {
    grew = false;
    for (std::size_t si = 0; si < slots.size() && total < opts.min_coords; ++si) {
      if (take[si] < candidates[si].size()) {
        ++take[si];
        ++total;
        grew = true;
      }
    }
  }

  GradCheckResult result;
  for (std::size_t si = 0; si < slots.size(); ++si) {
    ParamSlot& slot = *slots[si];
    double slot_max = 0.0;
    for (std::size_t i = 0; i < take[si]; ++i) {
      const std::size_t flat = candidates[si][i];
      Real& p = slot.values.data[flat];
      const Real saved = p;
      p = static_cast<Real>(saved + opts.eps);
      const double up = loss();
      p = static_cast<Real>(saved - opts.eps);
      const double down = loss();
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        fail(ErrorCode::NonFiniteLoss, "perturbed loss is not finite in slot " + slot.name);
      }
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double err = relative_error(analytic[si].data[flat], numeric);
      slot_max = std::max(slot_max, err);
      if (result.coords_checked == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_slot = slot.name;
        result.worst_index = flat;
        result.worst_analytic = analytic[si].data[flat];
        result.worst_numeric = numeric;
      }
      ++result.coords_checked;
    }
    result.per_slot.emplace_back(slot.name, slot_max);
  }
  return result;
}

}  // namespace ddp
