#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace hrank {

struct JacobiOptions {
  int max_sweeps = 60;
  // A column pair counts as orthogonal once |<a_p, a_q>| <= tolerance * |a_p| |a_q|.
  double tolerance = 1e-12;
};

/// Thin SVD A = U diag(sigma) V^T with k = min(rows, cols) terms, sigma
/// sorted in decreasing order.
struct SvdResult {
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd u;  // rows x k
  Eigen::MatrixXd v;  // cols x k
  int sweeps = 0;
};

/// One-sided (Hestenes) Jacobi SVD. Throws NumericError on non-finite input
/// or when the sweep cap is reached before convergence.
SvdResult svd(const Eigen::MatrixXd& a, const JacobiOptions& opts = {});

/// Singular values only, decreasing, for a row-major rows x cols matrix.
/// All-zero rows and columns are dropped first since they carry no spectrum.
std::vector<double> singular_values(std::span<const double> row_major, std::size_t rows,
                                    std::size_t cols, const JacobiOptions& opts = {});

}  // namespace hrank
