#pragma once

// Reference computations used to cross-check the library. Each oracle
// reaches its answer through a different route than the implementation:
// quadrature instead of tensor exponentials, dense normal equations instead
// of the profiled solver, exhaustive grids instead of projected gradient,
// fixed-point iteration instead of a direct linear solve.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mpenssar/path.hpp"
#include "mpenssar/signature.hpp"

namespace oracle {

/// Iterated integrals of the polyline through composite trapezoidal sums on
/// `subdiv` fine steps per segment. Coefficient order is level-major
/// lexicographic, matching SigVector.
inline Eigen::VectorXd quadrature_signature(const mpenssar::Path& p, int order,
                                            int subdiv) {
  const int P = p.channels();
  const int K = p.stamps() - 1;
  const int N = K * subdiv;

  std::vector<Eigen::VectorXd> dX(N);
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd step =
        (p.values.row(k + 1) - p.values.row(k)).transpose() / subdiv;
    for (int j = 0; j < subdiv; ++j) dX[k * subdiv + j] = step;
  }

  Eigen::VectorXd coeffs(mpenssar::sig_dim(P, order, 0));
  std::int64_t pos = 0;
  std::vector<Eigen::VectorXd> prev{Eigen::VectorXd::Ones(N + 1)};
  for (int level = 1; level <= order; ++level) {
    std::vector<Eigen::VectorXd> cur;
    cur.reserve(prev.size() * P);
    for (const auto& F : prev) {
      for (int ch = 0; ch < P; ++ch) {
        Eigen::VectorXd G(N + 1);
        G[0] = 0.0;
        for (int t = 0; t < N; ++t)
          G[t + 1] = G[t] + 0.5 * (F[t] + F[t + 1]) * dX[t][ch];
        cur.push_back(std::move(G));
      }
    }
    for (const auto& G : cur) coeffs[pos++] = G[N];
    prev = std::move(cur);
  }
  return coeffs;
}

/// Signature of a single linear segment in closed form: level k equals the
/// k-fold tensor power of the increment over k factorial.
inline Eigen::VectorXd segment_signature_closed_form(const Eigen::VectorXd& delta,
                                                     int order) {
  const int P = static_cast<int>(delta.size());
  Eigen::VectorXd coeffs(mpenssar::sig_dim(P, order, 0));
  std::int64_t pos = 0;
  std::vector<double> prev{1.0};
  double factorial = 1.0;
  for (int level = 1; level <= order; ++level) {
    factorial *= level;
    std::vector<double> cur;
    cur.reserve(prev.size() * P);
    for (double a : prev)
      for (int ch = 0; ch < P; ++ch) cur.push_back(a * delta[ch]);
    for (double a : cur) coeffs[pos++] = a / factorial;
    prev = std::move(cur);
  }
  return coeffs;
}

/// Profiled ridge coefficients by dense normal equations: the intercept
/// column is unpenalized, every design column carries n*lambda.
inline std::pair<Eigen::RowVectorXd, Eigen::MatrixXd> ridge_profile(
    const Eigen::MatrixXd& S_tilde, const Eigen::MatrixXd& M, double lambda) {
  const Eigen::Index n = S_tilde.rows();
  const Eigen::Index s1 = S_tilde.cols();
  Eigen::MatrixXd A = S_tilde.transpose() * S_tilde;
  for (Eigen::Index j = 1; j < s1; ++j) A(j, j) += n * lambda;
  const Eigen::MatrixXd theta =
      A.colPivHouseholderQr().solve(S_tilde.transpose() * M);
  return {theta.row(0), theta.bottomRows(s1 - 1)};
}

/// Gradient of the profiled objective
///   (1/n)||M - S_tilde theta||_F^2 + lambda ||beta||_F^2
/// at theta = (mu; beta); zero at the optimum.
inline Eigen::MatrixXd ridge_gradient(const Eigen::MatrixXd& S_tilde,
                                      const Eigen::MatrixXd& M,
                                      const Eigen::RowVectorXd& mu,
                                      const Eigen::MatrixXd& beta, double lambda) {
  const Eigen::Index n = S_tilde.rows();
  Eigen::MatrixXd theta(1 + beta.rows(), beta.cols());
  theta.row(0) = mu;
  theta.bottomRows(beta.rows()) = beta;
  Eigen::MatrixXd g =
      (2.0 / n) * (S_tilde.transpose() * (S_tilde * theta - M));
  g.bottomRows(beta.rows()) += 2.0 * lambda * beta;
  return g;
}

/// Exhaustive minimization of (1/n)||a - B r||^2 over r in the [-1,1]^2 grid
/// with 2N+1 points per axis. Returns (r, objective at r).
inline std::pair<Eigen::Vector2d, double> grid_search_column(
    const Eigen::VectorXd& a, const Eigen::MatrixXd& B, int N) {
  const double n = static_cast<double>(a.size());
  const Eigen::Matrix2d G = B.transpose() * B;
  const Eigen::Vector2d c = B.transpose() * a;
  const double a2 = a.squaredNorm();
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best_r = Eigen::Vector2d::Zero();
  for (int i = -N; i <= N; ++i) {
    const double r0 = static_cast<double>(i) / N;
    for (int j = -N; j <= N; ++j) {
      const double r1 = static_cast<double>(j) / N;
      const double quad = G(0, 0) * r0 * r0 + 2.0 * G(0, 1) * r0 * r1 +
                          G(1, 1) * r1 * r1;
      const double obj = (a2 - 2.0 * (c[0] * r0 + c[1] * r1) + quad) / n;
      if (obj < best) {
        best = obj;
        best_r << r0, r1;
      }
    }
  }
  return {best_r, best};
}

/// Objective (1/n)||A - B R||_F^2.
inline double r_objective(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          const Eigen::MatrixXd& R) {
  return (A - B * R).squaredNorm() / A.rows();
}

/// Held-out responses by fixed-point iteration of
///   Y_T <- W_TT Y_T R + C,
/// valid when the induced map is a contraction. Throws on stagnation.
inline Eigen::MatrixXd fixed_point_predict(const Eigen::MatrixXd& W_TT,
                                           const Eigen::MatrixXd& R,
                                           const Eigen::MatrixXd& C, double tol,
                                           int max_iter) {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(C.rows(), C.cols());
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd next = W_TT * Y * R + C;
    const double move = (next - Y).cwiseAbs().maxCoeff();
    Y = std::move(next);
    if (move < tol) return Y;
  }
  throw std::runtime_error("fixed_point_predict: no contraction");
}

}  // namespace oracle
