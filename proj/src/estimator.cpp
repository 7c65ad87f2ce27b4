#include "mpenssar/estimator.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>

#include "mpenssar/errors.hpp"

namespace mpenssar {

namespace {

constexpr double kGradTol = 1e-10;
constexpr int kMaxIters = 10000;
constexpr double kSolveTol = 1e-8;

Eigen::MatrixXd strip_unit(const Eigen::MatrixXd& S_tilde) {
  if (S_tilde.cols() < 2) throw ConfigError("design needs a unit column plus features");
  if ((S_tilde.col(0).array() - 1.0).abs().maxCoeff() > 0.0)
    throw ConfigError("design: first column must be the unit column");
  return S_tilde.rightCols(S_tilde.cols() - 1);
}

}  // namespace

struct ProfiledSolver::Shared {
  Eigen::Ref<const Eigen::MatrixXd> S;
  int n = 0, s = 0;
  bool dual = false;
  Eigen::VectorXd s_bar;
  Eigen::MatrixXd gram;  // dual: centered S S^T (n x n); primal: S^T S (s x s)
  Eigen::VectorXd su;    // primal only: S^T 1

  explicit Shared(Eigen::Ref<const Eigen::MatrixXd> S_in) : S(S_in) {
    n = static_cast<int>(S.rows());
    s = static_cast<int>(S.cols());
    if (n < 2) throw ConfigError("profiled solve: need at least two rows");
    if (s < 1) throw ConfigError("profiled solve: empty design");
    s_bar = S.colwise().mean().transpose();
    dual = (s + 1 > n);
    if (dual) {
      Eigen::MatrixXd Sc = S.rowwise() - s_bar.transpose();
      gram.noalias() = Sc * Sc.transpose();
    } else {
      gram.noalias() = S.transpose() * S;
      su.noalias() = S.transpose() * Eigen::VectorXd::Ones(n);
    }
  }
};

ProfiledSolver::ProfiledSolver(Eigen::Ref<const Eigen::MatrixXd> S, double lambda)
    : ProfiledSolver(std::make_shared<const Shared>(S), lambda) {}

ProfiledSolver::ProfiledSolver(std::shared_ptr<const Shared> shared, double lambda)
    : shared_(std::move(shared)), lambda_(lambda) {
  if (lambda_ < 0.0) throw ConfigError("profiled solve: lambda must be nonnegative");
  n_ = shared_->n;
  s_ = shared_->s;
  dual_ = shared_->dual;
  factorize();
}

ProfiledSolver ProfiledSolver::refit(double lambda) const {
  return ProfiledSolver(shared_, lambda);
}

void ProfiledSolver::factorize() {
  if (dual_) {
    if (lambda_ == 0.0)
      throw NumericError(
          "profiled solve: design wider than sample is singular without ridge; "
          "use lambda > 0");
    Eigen::MatrixXd A = shared_->gram;
    A.diagonal().array() += n_ * lambda_;
    ldlt_.compute(A);
  } else {
    Eigen::MatrixXd H(s_ + 1, s_ + 1);
    H(0, 0) = n_;
    H.block(0, 1, 1, s_) = shared_->su.transpose();
    H.block(1, 0, s_, 1) = shared_->su;
    H.block(1, 1, s_, s_) = shared_->gram;
    H.block(1, 1, s_, s_).diagonal().array() += n_ * lambda_;
    ldlt_.compute(H);
  }
  if (ldlt_.info() != Eigen::Success)
    throw NumericError("profiled solve: factorization failed; use lambda > 0");
}

namespace {

// Solve with one step of iterative refinement; reject solutions whose
// relative residual stays above tolerance (rank-deficient unpenalized case).
Eigen::MatrixXd checked_solve(const Eigen::LDLT<Eigen::MatrixXd>& ldlt,
                              const Eigen::MatrixXd& A, const Eigen::MatrixXd& rhs) {
  Eigen::MatrixXd x = ldlt.solve(rhs);
  const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
  Eigen::MatrixXd resid = rhs - A * x;
  if (!x.allFinite() || resid.cwiseAbs().maxCoeff() > kSolveTol * scale) {
    x += ldlt.solve(resid);
    resid = rhs - A * x;
    if (!x.allFinite() || resid.cwiseAbs().maxCoeff() > kSolveTol * scale)
      throw NumericError("profiled solve: system is singular; use lambda > 0");
  }
  return x;
}

}  // namespace

std::pair<Eigen::RowVectorXd, Eigen::MatrixXd> ProfiledSolver::coefficients(
    const Eigen::MatrixXd& M) const {
  if (M.rows() != n_) throw ConfigError("profiled solve: response rows mismatch");
  const auto& sh = *shared_;
  if (dual_) {
    const Eigen::RowVectorXd m_bar = M.colwise().mean();
    Eigen::MatrixXd A = sh.gram;
    A.diagonal().array() += n_ * lambda_;
    const Eigen::MatrixXd alpha = checked_solve(ldlt_, A, M.rowwise() - m_bar);
    Eigen::MatrixXd beta;
    beta.noalias() = sh.S.transpose() * alpha;
    beta.noalias() -= sh.s_bar * alpha.colwise().sum();
    const Eigen::RowVectorXd mu = m_bar - sh.s_bar.transpose() * beta;
    return {mu, std::move(beta)};
  }
  Eigen::MatrixXd rhs(s_ + 1, M.cols());
  rhs.row(0) = M.colwise().sum();
  rhs.bottomRows(s_).noalias() = sh.S.transpose() * M;

  Eigen::MatrixXd H(s_ + 1, s_ + 1);
  H(0, 0) = n_;
  H.block(0, 1, 1, s_) = sh.su.transpose();
  H.block(1, 0, s_, 1) = sh.su;
  H.block(1, 1, s_, s_) = sh.gram;
  H.block(1, 1, s_, s_).diagonal().array() += n_ * lambda_;

  const Eigen::MatrixXd x = checked_solve(ldlt_, H, rhs);
  return {x.row(0), x.bottomRows(s_)};
}

Eigen::MatrixXd ProfiledSolver::annihilate(const Eigen::MatrixXd& M) const {
  if (M.rows() != n_) throw ConfigError("profiled solve: response rows mismatch");
  const auto& sh = *shared_;
  if (dual_) {
    const Eigen::RowVectorXd m_bar = M.colwise().mean();
    Eigen::MatrixXd A = sh.gram;
    A.diagonal().array() += n_ * lambda_;
    Eigen::MatrixXd alpha = checked_solve(ldlt_, A, M.rowwise() - m_bar);
    alpha *= n_ * lambda_;
    return alpha;
  }
  const auto [mu, beta] = coefficients(M);
  Eigen::MatrixXd E = M;
  E.rowwise() -= mu;
  E.noalias() -= sh.S * beta;
  return E;
}

std::pair<Eigen::RowVectorXd, Eigen::MatrixXd> profile_coefficients(
    const Eigen::MatrixXd& S_tilde, const Eigen::MatrixXd& Y,
    const SpatialWeights& W, const Eigen::MatrixXd& R, double lambda) {
  const Eigen::MatrixXd S = strip_unit(S_tilde);
  if (Y.rows() != S.rows()) throw ConfigError("profile_coefficients: row mismatch");
  if (W.n != Y.rows()) throw ConfigError("profile_coefficients: weights size mismatch");
  Eigen::MatrixXd M = Y;
  M.noalias() -= W.entries * Y * R;
  return ProfiledSolver(S, lambda).coefficients(M);
}

namespace {

double projected_gradient_norm(const Eigen::MatrixXd& R, const Eigen::MatrixXd& G) {
  double sq = 0.0;
  for (Eigen::Index j = 0; j < R.cols(); ++j) {
    for (Eigen::Index i = 0; i < R.rows(); ++i) {
      const double g = G(i, j);
      if (R(i, j) <= -1.0 && g > 0.0) continue;
      if (R(i, j) >= 1.0 && g < 0.0) continue;
      sq += g * g;
    }
  }
  return std::sqrt(sq);
}

// Box-constrained minimization of (1/n)||A - B R||_F^2 over R in [-1,1]^{QxQ}.
// Convex quadratic; projected gradient with the exact Lipschitz step.
Eigen::MatrixXd pg_box_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                             FitDiagnostics* diag) {
  const int n = static_cast<int>(A.rows());
  const int Q = static_cast<int>(A.cols());
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(Q, Q);

  const Eigen::MatrixXd BtB = B.transpose() * B;
  const Eigen::MatrixXd BtA = B.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(BtB);
  const double L = 2.0 / n * es.eigenvalues().maxCoeff();

  if (L <= 0.0 || !std::isfinite(L)) {
    // Flat objective: keep the canonical zero matrix.
    if (diag) {
      diag->iterations = 0;
      diag->converged = true;
      diag->projected_gradient_norm = 0.0;
    }
    return R;
  }

  const double step = 1.0 / L;
  int it = 0;
  double pg = 0.0;
  bool converged = false;
  for (; it <= kMaxIters; ++it) {
    Eigen::MatrixXd G = (2.0 / n) * (BtB * R - BtA);
    pg = projected_gradient_norm(R, G);
    if (pg <= kGradTol) {
      converged = true;
      break;
    }
    if (it == kMaxIters) break;
    R = (R - step * G).cwiseMax(-1.0).cwiseMin(1.0);
  }
  if (diag) {
    diag->iterations = it;
    diag->converged = converged;
    diag->projected_gradient_norm = pg;
  }
  return R;
}

}  // namespace

Eigen::MatrixXd fit_R(const Eigen::MatrixXd& S_tilde, const Eigen::MatrixXd& Y,
                      const SpatialWeights& W, double lambda,
                      FitDiagnostics* diagnostics) {
  const Eigen::MatrixXd S = strip_unit(S_tilde);
  if (Y.rows() != S.rows() || W.n != Y.rows()) throw ConfigError("fit_R: size mismatch");
  ProfiledSolver solver(S, lambda);
  const Eigen::MatrixXd A = solver.annihilate(Y);
  const Eigen::MatrixXd WY = W.entries * Y;
  const Eigen::MatrixXd B = solver.annihilate(WY);
  return pg_box_solve(A, B, diagnostics);
}

MpenssarFit fit_design(const ProfiledSolver& solver, Eigen::Ref<const Eigen::MatrixXd> S,
                       const Eigen::MatrixXd& Y, const SpatialWeights& W, int m) {
  const int n = static_cast<int>(Y.rows());
  if (S.rows() != n || W.n != n || solver.n() != n)
    throw ConfigError("fit: size mismatch");
  if (!Y.allFinite()) throw ConfigError("fit: non-finite response");

  const Eigen::MatrixXd A = solver.annihilate(Y);
  const Eigen::MatrixXd WY = W.entries * Y;
  const Eigen::MatrixXd B = solver.annihilate(WY);

  MpenssarFit out;
  out.R_hat = pg_box_solve(A, B, &out.diagnostics);
  Eigen::MatrixXd M = Y;
  M.noalias() -= WY * out.R_hat;
  std::tie(out.mu_hat, out.beta_hat) = solver.coefficients(M);

  Eigen::MatrixXd E = M;
  E.rowwise() -= out.mu_hat;
  E.noalias() -= S * out.beta_hat;
  out.m = m;
  out.lambda = solver.lambda();
  out.train_objective = E.squaredNorm() / n;
  out.diagnostics.residual_cov.noalias() = E.transpose() * E / n;
  return out;
}

MpenssarFit fit_design(Eigen::Ref<const Eigen::MatrixXd> S, const Eigen::MatrixXd& Y,
                       const SpatialWeights& W, int m, double lambda) {
  ProfiledSolver solver(S, lambda);
  return fit_design(solver, S, Y, W, m);
}

MpenssarFit fit(const std::vector<AugmentedPath>& paths, const Eigen::MatrixXd& Y,
                const SpatialWeights& W, int m, double lambda, std::int64_t cap) {
  if (static_cast<int>(paths.size()) != Y.rows())
    throw ConfigError("fit: path count does not match response rows");
  const Eigen::MatrixXd S = sig_matrix(paths, m, cap);
  return fit_design(S, Y, W, m, lambda);
}

Eigen::MatrixXd predict_design(const MpenssarFit& fit, const Eigen::MatrixXd& S_test,
                               const SpatialWeights& W_full,
                               const Eigen::MatrixXd& Y_train) {
  const int Q = fit.responses();
  const int n_train = static_cast<int>(Y_train.rows());
  const int n_test = static_cast<int>(S_test.rows());
  if (W_full.n != n_train + n_test)
    throw ConfigError("predict: weights must cover training then test units");
  if (S_test.cols() != fit.beta_hat.rows())
    throw ConfigError("predict: design width does not match fit");
  if (Y_train.cols() != Q) throw ConfigError("predict: response column mismatch");

  std::vector<int> train_idx(n_train), test_idx(n_test);
  for (int i = 0; i < n_train; ++i) train_idx[i] = i;
  for (int i = 0; i < n_test; ++i) test_idx[i] = n_train + i;
  const Eigen::MatrixXd W_tt = weight_block(W_full, test_idx, test_idx);
  const Eigen::MatrixXd W_ttr = weight_block(W_full, test_idx, train_idx);

  Eigen::MatrixXd base = W_ttr * Y_train * fit.R_hat;
  base.rowwise() += fit.mu_hat;
  base.noalias() += S_test * fit.beta_hat;

  // (I - R'⊗W_TT) vec(Y_T) = vec(base); block (q,q') of the Kronecker factor
  // is R(q',q) W_TT.
  const int dim = n_test * Q;
  Eigen::MatrixXd Asys = Eigen::MatrixXd::Identity(dim, dim);
  for (int q = 0; q < Q; ++q)
    for (int qp = 0; qp < Q; ++qp)
      Asys.block(q * n_test, qp * n_test, n_test, n_test) -=
          fit.R_hat(qp, q) * W_tt;

  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(base.data(), dim);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Asys);
  const Eigen::VectorXd x = lu.solve(b);
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if (!x.allFinite() || (Asys * x - b).cwiseAbs().maxCoeff() > kSolveTol * scale)
    throw NumericError("predict: spatial system is near-singular");
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), n_test, Q);
}

Eigen::MatrixXd predict(const MpenssarFit& fit,
                        const std::vector<AugmentedPath>& paths_test,
                        const SpatialWeights& W_full,
                        const Eigen::MatrixXd& Y_train) {
  const Eigen::MatrixXd S_test = sig_matrix(paths_test, fit.m, 0);
  return predict_design(fit, S_test, W_full, Y_train);
}

MpenssarFit penssar_fit(const std::vector<AugmentedPath>& paths,
                        const Eigen::VectorXd& y, const SpatialWeights& W, int m,
                        double lambda, std::int64_t cap) {
  return fit(paths, y, W, m, lambda, cap);
}

ProjssarFit projssar_fit_design(Eigen::Ref<const Eigen::MatrixXd> S,
                                const Eigen::VectorXd& y, const SpatialWeights& W,
                                int m, double inertia_cap) {
  if (!(inertia_cap > 0.0 && inertia_cap < 1.0))
    throw ConfigError("projssar: inertia cap must lie in (0,1)");
  const int n = static_cast<int>(S.rows());
  if (n < 2) throw ConfigError("projssar: need at least two units");

  const Eigen::RowVectorXd mean = S.colwise().mean();
  Eigen::RowVectorXd sd(S.cols());
  for (Eigen::Index j = 0; j < S.cols(); ++j)
    sd[j] = std::sqrt((S.col(j).array() - mean[j]).square().sum() / (n - 1));

  ProjssarFit out;
  out.m = m;
  for (Eigen::Index j = 0; j < S.cols(); ++j)
    if (sd[j] > 0.0) out.kept_cols.push_back(static_cast<int>(j));
  if (out.kept_cols.empty()) throw NumericError("projssar: all columns are constant");

  const int kept = static_cast<int>(out.kept_cols.size());
  out.col_mean.resize(kept);
  out.col_sd.resize(kept);
  Eigen::MatrixXd Z(n, kept);
  for (int c = 0; c < kept; ++c) {
    const int j = out.kept_cols[c];
    out.col_mean[c] = mean[j];
    out.col_sd[c] = sd[j];
    Z.col(c) = (S.col(j).array() - mean[j]) / sd[j];
  }

  // Principal directions of the correlation matrix via the thin SVD of Z.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd ev = svd.singularValues().array().square() / (n - 1);
  const double total = ev.sum();
  if (!(total > 0.0)) throw NumericError("projssar: degenerate correlation spectrum");

  int keep = 1;
  double cum = ev[0] / total;
  for (int k = 2; k <= ev.size(); ++k) {
    const double next = cum + ev[k - 1] / total;
    if (next < inertia_cap) {
      cum = next;
      keep = k;
    } else {
      break;
    }
  }
  out.components = keep;
  out.loadings = svd.matrixV().leftCols(keep);
  const Eigen::MatrixXd scores = Z * out.loadings;
  out.core = fit_design(scores, y, W, m, 0.0);
  return out;
}

ProjssarFit projssar_fit(const std::vector<AugmentedPath>& paths,
                         const Eigen::VectorXd& y, const SpatialWeights& W, int m,
                         double inertia_cap, std::int64_t cap) {
  const Eigen::MatrixXd S = sig_matrix(paths, m, cap);
  return projssar_fit_design(S, y, W, m, inertia_cap);
}

Eigen::MatrixXd projssar_scores(const ProjssarFit& fit, const Eigen::MatrixXd& S_raw) {
  const int kept = static_cast<int>(fit.kept_cols.size());
  if (kept == 0) throw ConfigError("projssar: empty transform");
  if (S_raw.cols() <= fit.kept_cols.back())
    throw ConfigError("projssar: design narrower than the fitted transform");
  Eigen::MatrixXd Z(S_raw.rows(), kept);
  for (int c = 0; c < kept; ++c)
    Z.col(c) = (S_raw.col(fit.kept_cols[c]).array() - fit.col_mean[c]) / fit.col_sd[c];
  return Z * fit.loadings;
}

Eigen::VectorXd projssar_predict(const ProjssarFit& fit,
                                 const std::vector<AugmentedPath>& paths_test,
                                 const SpatialWeights& W_full,
                                 const Eigen::VectorXd& y_train) {
  const Eigen::MatrixXd S_test = sig_matrix(paths_test, fit.m, 0);
  const Eigen::MatrixXd scores = projssar_scores(fit, S_test);
  return predict_design(fit.core, scores, W_full, y_train).col(0);
}

}  // namespace mpenssar
