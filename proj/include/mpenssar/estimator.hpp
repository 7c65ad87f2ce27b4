#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "mpenssar/path.hpp"
#include "mpenssar/signature.hpp"
#include "mpenssar/spatial.hpp"

namespace mpenssar {

struct FitDiagnostics {
  int iterations = 0;
  bool converged = true;
  double projected_gradient_norm = 0.0;
  Eigen::MatrixXd residual_cov;  // (1/n) E'E at the fitted parameters
};

/// Fitted spatial autoregression with signature features. beta_hat has one
/// column per response; R_hat entries are clipped to [-1,1] by construction.
struct MpenssarFit {
  Eigen::MatrixXd R_hat;       // Q x Q
  Eigen::RowVectorXd mu_hat;   // 1 x Q
  Eigen::MatrixXd beta_hat;    // s x Q
  int m = 0;
  double lambda = 0.0;
  double train_objective = 0.0;  // unpenalized mean squared residual
  FitDiagnostics diagnostics;

  int responses() const { return static_cast<int>(R_hat.rows()); }
};

/// Ridge-profiled solve for the intercept and feature coefficients given a
/// fixed design block. The intercept is never penalized. Chooses between the
/// direct normal-equations route and the kernel-space route depending on
/// whether the design is wider than tall; both give the exact same solution.
/// The referenced design must outlive the solver. Re-factorizing for another
/// ridge value reuses the cached Gram products.
class ProfiledSolver {
 public:
  ProfiledSolver(Eigen::Ref<const Eigen::MatrixXd> S, double lambda);

  ProfiledSolver refit(double lambda) const;

  /// (mu, beta) minimizing ||M - 1 mu - S beta||^2 + n lambda ||beta||^2,
  /// column by column of M.
  std::pair<Eigen::RowVectorXd, Eigen::MatrixXd> coefficients(
      const Eigen::MatrixXd& M) const;

  /// Residual M - 1 mu_hat - S beta_hat at the profiled optimum.
  Eigen::MatrixXd annihilate(const Eigen::MatrixXd& M) const;

  int n() const { return n_; }
  int design_cols() const { return s_; }
  double lambda() const { return lambda_; }

 private:
  struct Shared;  // lambda-independent Gram products
  ProfiledSolver(std::shared_ptr<const Shared> shared, double lambda);
  void factorize();

  std::shared_ptr<const Shared> shared_;
  int n_ = 0, s_ = 0;
  double lambda_ = 0.0;
  bool dual_ = false;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

/// mu and beta solving the profiled ridge system for the response Y - W Y R.
/// S_tilde carries the unit column in position 0.
std::pair<Eigen::RowVectorXd, Eigen::MatrixXd> profile_coefficients(
    const Eigen::MatrixXd& S_tilde, const Eigen::MatrixXd& Y,
    const SpatialWeights& W, const Eigen::MatrixXd& R, double lambda);

/// Minimizes the profiled objective (1/n)||(I-P)(Y - W Y R)||_F^2 over the
/// box [-1,1]^{QxQ} by projected gradient with the exact Lipschitz step.
/// The objective is convex quadratic and separates over columns of R. A flat
/// objective (W = 0) returns the zero matrix. Non-convergence within 10^4
/// iterations is reported through the diagnostics, not thrown.
Eigen::MatrixXd fit_R(const Eigen::MatrixXd& S_tilde, const Eigen::MatrixXd& Y,
                      const SpatialWeights& W, double lambda,
                      FitDiagnostics* diagnostics = nullptr);

/// Full fit at a fixed order and ridge value: signature design, fit_R, then
/// the profiled coefficients at the selected R.
MpenssarFit fit(const std::vector<AugmentedPath>& paths, const Eigen::MatrixXd& Y,
                const SpatialWeights& W, int m, double lambda,
                std::int64_t cap = 10000);

/// Same fit on an externally supplied design block (no unit column). Used by
/// order-selection sweeps that hold the design cache.
MpenssarFit fit_design(Eigen::Ref<const Eigen::MatrixXd> S, const Eigen::MatrixXd& Y,
                       const SpatialWeights& W, int m, double lambda);

/// fit_design with a prebuilt solver over the same design; lets a ridge or
/// response sweep reuse the factorization inputs.
MpenssarFit fit_design(const ProfiledSolver& solver, Eigen::Ref<const Eigen::MatrixXd> S,
                       const Eigen::MatrixXd& Y, const SpatialWeights& W, int m);

/// Predictions for held-out units. W_full covers training units first, then
/// test units, in the order of paths_test. Observed training responses stay
/// fixed; the test block solves the induced linear system
/// (I - R'⊗W_TT) vec(Y_T) = vec(W_T,train Y_train R + 1 mu + S_T beta).
Eigen::MatrixXd predict(const MpenssarFit& fit,
                        const std::vector<AugmentedPath>& paths_test,
                        const SpatialWeights& W_full,
                        const Eigen::MatrixXd& Y_train);

/// predict with the test design supplied directly.
Eigen::MatrixXd predict_design(const MpenssarFit& fit, const Eigen::MatrixXd& S_test,
                               const SpatialWeights& W_full,
                               const Eigen::MatrixXd& Y_train);

/// Per-response baseline: the same machinery with a single response column.
MpenssarFit penssar_fit(const std::vector<AugmentedPath>& paths,
                        const Eigen::VectorXd& y, const SpatialWeights& W, int m,
                        double lambda, std::int64_t cap = 10000);

/// Baseline on principal-component scores of the standardized signature
/// coefficients. Zero-variance columns are dropped before z-scoring; the
/// number of retained components is the largest count whose cumulative
/// explained variance stays below inertia_cap (at least one). The spatial
/// fit on the scores runs unpenalized.
struct ProjssarFit {
  MpenssarFit core;            // Q = 1 fit on the score design
  std::vector<int> kept_cols;  // indices into the shifted signature vector
  Eigen::VectorXd col_mean, col_sd;  // per kept column
  Eigen::MatrixXd loadings;    // kept x components
  int m = 0;
  int components = 0;
};

ProjssarFit projssar_fit(const std::vector<AugmentedPath>& paths,
                         const Eigen::VectorXd& y, const SpatialWeights& W, int m,
                         double inertia_cap, std::int64_t cap = 10000);

/// projssar_fit on a precomputed raw signature design (no unit column).
ProjssarFit projssar_fit_design(Eigen::Ref<const Eigen::MatrixXd> S,
                                const Eigen::VectorXd& y, const SpatialWeights& W,
                                int m, double inertia_cap);

/// Score design for new paths under a fitted ProjSSAR transform.
Eigen::MatrixXd projssar_scores(const ProjssarFit& fit, const Eigen::MatrixXd& S_raw);

Eigen::VectorXd projssar_predict(const ProjssarFit& fit,
                                 const std::vector<AugmentedPath>& paths_test,
                                 const SpatialWeights& W_full,
                                 const Eigen::VectorXd& y_train);

}  // namespace mpenssar
