#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tipsfuse/matrix.hpp"
#include "tipsfuse/tensor.hpp"

namespace tipsfuse::ot {

using ad::Matrix;

struct OtConfig {
  double epsilon = 0.1;  // entropic regularisation
  int max_iters = 100;
  double tol = 1e-6;  // L1 marginal violation
};

// Coupling between a source measure (rows) and a target measure (columns).
struct TransportPlan {
  Matrix plan;
  std::vector<double> source;
  std::vector<double> target;
  double cost = 0.0;  // <plan, C>
  int iterations = 0;
  // L1 marginal violation (rows + columns) after each sweep, before the
  // final feasibility rounding.
  std::vector<double> violation_history;

  std::size_t rows() const { return plan.rows(); }
  std::size_t cols() const { return plan.cols(); }
};

std::vector<double> uniform_marginal(std::size_t n);

// Pairwise Euclidean distances between the rows of a (N x d) and b (M x d).
Matrix cost_matrix(const Matrix& a, const Matrix& b);

// Entropic OT by alternating scaling of exp(-C/eps), carried out on log
// potentials. The returned plan is rounded onto the feasible set, so its
// marginals hold to machine precision even when max_iters is hit first.
TransportPlan sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                       const OtConfig& config = {});

// Renormalised plan-weighted aggregation: (M * T^T) F, so every output row is
// a convex combination of F's rows when the target marginal is uniform 1/M.
// The plan enters as a constant; gradients flow only into F.
ad::Tensor ot_aggregate(const TransportPlan& t, const ad::Tensor& features);
Matrix ot_aggregate(const TransportPlan& t, const Matrix& features);

struct LpSolution {
  Matrix plan;
  double cost = 0.0;
};

// Exact unregularised optimum for desk-scale problems (N*M <= 64). Uses
// basis enumeration when the number of candidate bases is small and
// successive shortest paths otherwise.
LpSolution lp_oracle(const Matrix& cost, std::span<const double> mu, std::span<const double> nu);

// The two exact routes, exposed for cross-checking.
LpSolution lp_enumerate_bases(const Matrix& cost, std::span<const double> mu,
                              std::span<const double> nu);
LpSolution lp_min_cost_flow(const Matrix& cost, std::span<const double> mu,
                            std::span<const double> nu);

}  // namespace tipsfuse::ot
