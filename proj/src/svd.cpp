#include "hrank/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hrank/error.hpp"

namespace hrank {

namespace {

void require_finite(std::span<const double> data) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("matrix has non-finite entries");
  }
}

constexpr double kEps = std::numeric_limits<double>::epsilon();

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate(double* a, double* b, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i];
    const double y = b[i];
    a[i] = c * x - s * y;
    b[i] = s * x + c * y;
  }
}

// Orthogonalizes the columns of `w` (col-major, m x n, m >= n) in place.
// When `v` is non-null the same rotations are accumulated into it (n x n).
int jacobi_sweeps(std::vector<double>& w, std::size_t m, std::size_t n, double* v,
                  const JacobiOptions& opts) {
  std::vector<double> norm2(n);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    double largest = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      norm2[j] = dot(&w[j * m], &w[j * m], m);
      largest = std::max(largest, norm2[j]);
    }
    // Columns at rounding level relative to the largest one are left alone.
    const double negligible = largest * std::pow(static_cast<double>(m) * kEps, 2);
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norm2[p];
        const double beta = norm2[q];
        if (alpha <= negligible || beta <= negligible) continue;
        const double gamma = dot(&w[p * m], &w[q * m], m);
        if (std::abs(gamma) <= opts.tolerance * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(&w[p * m], &w[q * m], m, c, s);
        if (v != nullptr) rotate(v + p * n, v + q * n, n, c, s);
        norm2[p] = alpha - t * gamma;
        norm2[q] = beta + t * gamma;
      }
    }
    if (!rotated) return sweep;
  }
  throw NumericError("jacobi svd did not converge within " + std::to_string(opts.max_sweeps) +
                     " sweeps");
}

// Replaces the listed columns of q (rows x k, orthonormal elsewhere) with
// unit vectors orthogonal to every other column. Each one is the standard
// basis vector with the largest component outside the current span.
void complete_basis(Eigen::MatrixXd& q, const std::vector<Eigen::Index>& missing) {
  const Eigen::Index rows = q.rows();
  std::vector<bool> is_missing(static_cast<std::size_t>(q.cols()), false);
  for (auto j : missing) is_missing[static_cast<std::size_t>(j)] = true;
  auto residual = [&](Eigen::Index probe) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(rows, probe);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index k = 0; k < q.cols(); ++k) {
        if (is_missing[static_cast<std::size_t>(k)]) continue;
        e -= q.col(k).dot(e) * q.col(k);
      }
    }
    return e;
  };
  for (auto j : missing) {
    Eigen::VectorXd best;
    double best_len = -1.0;
    for (Eigen::Index probe = 0; probe < rows; ++probe) {
      Eigen::VectorXd e = residual(probe);
      const double len = e.norm();
      if (len > best_len) {
        best_len = len;
        best = std::move(e);
      }
    }
    q.col(j) = best / best_len;
    is_missing[static_cast<std::size_t>(j)] = false;
  }
}

}  // namespace

SvdResult svd(const Eigen::MatrixXd& a, const JacobiOptions& opts) {
  require_finite(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
  const bool transposed = a.rows() < a.cols();
  const Eigen::MatrixXd work = transposed ? Eigen::MatrixXd(a.transpose()) : a;
  const auto m = static_cast<std::size_t>(work.rows());
  const auto n = static_cast<std::size_t>(work.cols());

  SvdResult r;
  if (n == 0) {
    r.u = Eigen::MatrixXd(a.rows(), 0);
    r.v = Eigen::MatrixXd(a.cols(), 0);
    return r;
  }
  std::vector<double> w(work.data(), work.data() + work.size());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  r.sweeps = jacobi_sweeps(w, m, n, v.data(), opts);

  Eigen::Map<Eigen::MatrixXd> wm(w.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  Eigen::VectorXd sigma(static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < sigma.size(); ++j) sigma(j) = wm.col(j).norm();

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return sigma(x) > sigma(y); });

  const double floor = (n > 0 ? sigma(order.front()) : 0.0) * std::numeric_limits<double>::epsilon() *
                       static_cast<double>(m);
  Eigen::MatrixXd left(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd right(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  r.singular_values.resize(static_cast<Eigen::Index>(n));
  std::vector<Eigen::Index> degenerate;
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(n); ++k) {
    const Eigen::Index j = order[static_cast<std::size_t>(k)];
    r.singular_values(k) = sigma(j);
    right.col(k) = v.col(j);
    if (sigma(j) > floor && sigma(j) > 0.0) {
      left.col(k) = wm.col(j) / sigma(j);
    } else {
      left.col(k).setZero();
      degenerate.push_back(k);
    }
  }
  if (!degenerate.empty()) complete_basis(left, degenerate);

  if (transposed) {
    r.u = std::move(right);
    r.v = std::move(left);
  } else {
    r.u = std::move(left);
    r.v = std::move(right);
  }
  return r;
}

std::vector<double> singular_values(std::span<const double> row_major, std::size_t rows,
                                    std::size_t cols, const JacobiOptions& opts) {
  if (row_major.size() != rows * cols) throw ShapeError("matrix buffer does not match its extents");
  require_finite(row_major);

  std::vector<std::size_t> live_rows;
  std::vector<std::size_t> live_cols;
  std::vector<bool> col_used(cols, false);
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (row_major[r * cols + c] != 0.0) {
        any = true;
        col_used[c] = true;
      }
    }
    if (any) live_rows.push_back(r);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (col_used[c]) live_cols.push_back(c);
  }
  const std::size_t lr = live_rows.size();
  const std::size_t lc = live_cols.size();
  if (lr == 0) return {};

  // Pack as col-major with the longer extent down the columns.
  const bool by_rows = lr < lc;  // columns of the work matrix are the original rows
  const std::size_t m = by_rows ? lc : lr;
  const std::size_t n = by_rows ? lr : lc;
  std::vector<double> w(m * n);
  for (std::size_t i = 0; i < lr; ++i) {
    for (std::size_t j = 0; j < lc; ++j) {
      const double x = row_major[live_rows[i] * cols + live_cols[j]];
      if (by_rows) {
        w[i * m + j] = x;
      } else {
        w[j * m + i] = x;
      }
    }
  }
  jacobi_sweeps(w, m, n, nullptr, opts);
  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(&w[j * m], &w[j * m], m));
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

}  // namespace hrank
