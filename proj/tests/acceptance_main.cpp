// Acceptance harness: one self-contained check per release criterion, each
// printing a single PASS/FAIL line with its measured quantities and pinned
// tolerances. Run with --criterion N for one check or with no arguments for
// the full sweep. Exit code 0 only when every executed check passes.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mpenssar/errors.hpp"
#include "mpenssar/estimator.hpp"
#include "mpenssar/path.hpp"
#include "mpenssar/rng.hpp"
#include "mpenssar/selection.hpp"
#include "mpenssar/signature.hpp"
#include "mpenssar/simulation.hpp"
#include "mpenssar/spatial.hpp"
#include "oracles.hpp"

using namespace mpenssar;

namespace {

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool ok = false;
  std::string details;
};

double uni(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Path random_path(std::mt19937_64& rng, int channels, int segments, double scale) {
  std::vector<double> times(segments + 1);
  times[0] = 0.0;
  for (int j = 1; j <= segments; ++j) times[j] = times[j - 1] + uni(rng, 0.1, 1.0);
  Eigen::MatrixXd values(segments + 1, channels);
  for (int j = 0; j <= segments; ++j)
    for (int c = 0; c < channels; ++c) values(j, c) = uni(rng, -1.0, 1.0) * scale;
  return Path::make(std::move(times), std::move(values));
}

Eigen::MatrixXd randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = nd(rng);
  return M;
}

SpatialWeights random_weights(std::mt19937_64& rng, int n, int k) {
  Eigen::MatrixX2d coords(n, 2);
  for (int i = 0; i < n; ++i) {
    coords(i, 0) = uni(rng, 0.0, 10.0);
    coords(i, 1) = uni(rng, 0.0, 10.0);
  }
  return knn_weights(coords, k, true);
}

std::vector<AugmentedPath> random_design_paths(std::mt19937_64& rng, int n, int P,
                                               int segments) {
  std::vector<Path> raw;
  raw.reserve(n);
  for (int i = 0; i < n; ++i) raw.push_back(random_path(rng, P, segments, 1.0));
  return augment_all(raw);
}

Eigen::MatrixXd with_unit(const Eigen::MatrixXd& S) {
  Eigen::MatrixXd out(S.rows(), S.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(S.cols()) = S;
  return out;
}

// Direct dense solve of Y = W Y R + C, stacked over response columns.
Eigen::MatrixXd solve_sar_dense(const Eigen::MatrixXd& Wd, const Eigen::MatrixXd& R,
                                const Eigen::MatrixXd& C) {
  const Eigen::Index n = C.rows(), Q = C.cols();
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n * Q, n * Q);
  for (Eigen::Index b = 0; b < Q; ++b)
    for (Eigen::Index a = 0; a < Q; ++a)
      A.block(b * n, a * n, n, n) -= R(a, b) * Wd;
  Eigen::VectorXd c(n * Q);
  for (Eigen::Index q = 0; q < Q; ++q) c.segment(q * n, n) = C.col(q);
  const Eigen::VectorXd y = A.partialPivLu().solve(c);
  Eigen::MatrixXd Y(n, Q);
  for (Eigen::Index q = 0; q < Q; ++q) Y.col(q) = y.segment(q * n, n);
  return Y;
}

Eigen::MatrixXd rows(const Eigen::MatrixXd& M, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), M.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = M.row(idx[i]);
  return out;
}

std::vector<AugmentedPath> gather(const std::vector<AugmentedPath>& paths,
                                  const std::vector<int>& idx) {
  std::vector<AugmentedPath> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(paths[i]);
  return out;
}

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double pooled_rmse(const Eigen::MatrixXd& E) {
  return std::sqrt(E.squaredNorm() / static_cast<double>(E.size()));
}

// ---------------------------------------------------------------------------
// 1. Signatures against a fine quadrature oracle, plus the concatenation
//    identity.

Outcome criterion_1() {
  std::mt19937_64 rng(101);
  constexpr double tol_quad = 1e-6;
  constexpr double tol_chen = 1e-10;
  constexpr int subdiv = 2000;

  double worst_quad = 0.0, worst_chen = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int P = 2 + static_cast<int>(rng() % 2);
    const int segs = 2 + static_cast<int>(rng() % 9);  // 2..10
    const Path p = random_path(rng, P, segs, 1.0);

    const SigVector s = polyline_signature(p, 4, 0);
    const Eigen::VectorXd q = oracle::quadrature_signature(p, 4, subdiv);
    worst_quad = std::max(worst_quad, (s.coeffs - q).cwiseAbs().maxCoeff());

    const int cut = segs / 2;  // both halves keep at least one segment
    Path front = Path::make(
        std::vector<double>(p.times.begin(), p.times.begin() + cut + 1),
        p.values.topRows(cut + 1));
    Path back = Path::make(std::vector<double>(p.times.begin() + cut, p.times.end()),
                           p.values.bottomRows(p.stamps() - cut));
    const SigVector glued =
        chen_product(polyline_signature(front, 4, 0), polyline_signature(back, 4, 0));
    worst_chen = std::max(worst_chen, (s.coeffs - glued.coeffs).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_quad <= tol_quad && worst_chen <= tol_chen;
  return {ok, fmt("max |sig - quadrature| %.3e (tol 1e-6), "
                  "max concatenation defect %.3e (tol 1e-10) over 100 paths",
                  worst_quad, worst_chen)};
}

// ---------------------------------------------------------------------------
// 2. Norm envelope: the unit-extended signature never exceeds exp of the
//    total variation.

Outcome criterion_2() {
  std::mt19937_64 rng(102);
  int violations = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 10000; ++trial) {
    const int P = 1 + static_cast<int>(rng() % 3);
    const int segs = 1 + static_cast<int>(rng() % 9);
    const Path p = random_path(rng, P, segs, uni(rng, 0.5, 2.0));
    const AugmentedPath a = augment(p);
    const double bound = std::exp(total_variation(a.inner));
    const SigVector s = signature(a, 5, 0);
    for (int m = 1; m <= 5; ++m) {
      const auto head = s.coeffs.head(sig_dim(a.channels(), m, 0));
      const double norm = std::sqrt(1.0 + head.squaredNorm());
      worst_margin = std::max(worst_margin, norm - bound);
      if (norm > bound + 1e-12) ++violations;
    }
  }
  return {violations == 0,
          fmt("%d violations over 10000 paths x 5 orders, worst norm-bound "
              "margin %.3e (must be <= 1e-12)",
              violations, worst_margin)};
}

// ---------------------------------------------------------------------------
// 3. Profiled ridge coefficients against dense normal equations, and the
//    stationarity of the profiled objective.

Outcome criterion_3() {
  std::mt19937_64 rng(103);
  constexpr double tol_coef = 1e-10;
  constexpr double tol_grad = 1e-8;

  double worst_coef = 0.0, worst_grad = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int P = trial % 2 == 0 ? 2 : 1;      // aug channels 3 or 2
    const int m = P == 2 ? 2 : 3;              // 12 or 14 features
    const int n = 8 + static_cast<int>(rng() % 23);  // 8..30, both solver routes
    const int Q = 1 + static_cast<int>(rng() % 3);
    const double lambda = std::pow(10.0, -static_cast<double>(rng() % 5));

    const auto paths = random_design_paths(rng, n, P, 4);
    const Eigen::MatrixXd S = sig_matrix(paths, m, 0);
    const Eigen::MatrixXd S_tilde = with_unit(S);
    const SpatialWeights W = random_weights(rng, n, std::min(5, n - 1));
    const Eigen::MatrixXd Wd = Eigen::MatrixXd(W.entries);
    const Eigen::MatrixXd Y = randn(rng, n, Q);
    const Eigen::MatrixXd R = 0.5 * (randn(rng, Q, Q).array().tanh()).matrix();

    const Eigen::MatrixXd M = Y - Wd * Y * R;
    const auto [mu, beta] = profile_coefficients(S_tilde, Y, W, R, lambda);
    const auto [mu_o, beta_o] = oracle::ridge_profile(S_tilde, M, lambda);

    worst_coef = std::max(worst_coef, (mu - mu_o).cwiseAbs().maxCoeff());
    worst_coef = std::max(worst_coef, (beta - beta_o).cwiseAbs().maxCoeff());
    const Eigen::MatrixXd g = oracle::ridge_gradient(S_tilde, M, mu, beta, lambda);
    worst_grad = std::max(worst_grad, g.cwiseAbs().maxCoeff());
  }
  const bool ok = worst_coef <= tol_coef && worst_grad <= tol_grad;
  return {ok, fmt("max coefficient gap vs normal equations %.3e (tol 1e-10), "
                  "max profiled gradient %.3e (tol 1e-8) over 50 instances",
                  worst_coef, worst_grad)};
}

// ---------------------------------------------------------------------------
// 4. Spatial-effect optimizer against exhaustive 1e-3 grid search. The
//    objective separates over the two columns of R, so scanning each column's
//    [-1,1]^2 grid independently enumerates the full [-1,1]^4 grid.

Outcome criterion_4() {
  std::mt19937_64 rng(104);
  constexpr int N = 1000;  // 2N+1 = 2001 points per axis, spacing 1e-3
  constexpr double h = 1.0 / N;

  double worst_excess = 0.0;   // fit objective above the grid minimum
  double worst_rel_cell = 0.0; // grid minus fit, relative to the one-cell budget
  for (int trial = 0; trial < 25; ++trial) {
    const int Q = 2;
    const int n = 30 + static_cast<int>(rng() % 21);
    const double lambda = 1e-2;
    const auto paths = random_design_paths(rng, n, 2, 4);
    const Eigen::MatrixXd S_tilde = with_unit(sig_matrix(paths, 2, 0));
    const SpatialWeights W = random_weights(rng, n, 6);
    const Eigen::MatrixXd Wd = Eigen::MatrixXd(W.entries);

    Eigen::MatrixXd Y;
    if (trial % 2 == 0) {
      Y = randn(rng, n, Q);
    } else {
      Eigen::MatrixXd R0(Q, Q);
      for (int a = 0; a < Q; ++a)
        for (int b = 0; b < Q; ++b) R0(a, b) = uni(rng, -0.45, 0.45);
      Y = solve_sar_dense(Wd, R0, randn(rng, n, Q));
    }

    const Eigen::MatrixXd R_hat = fit_R(S_tilde, Y, W, lambda);

    // Annihilated responses and regressors through the independent profiler.
    auto resid = [&](const Eigen::MatrixXd& M) {
      const auto [mu, beta] = oracle::ridge_profile(S_tilde, M, lambda);
      return Eigen::MatrixXd(M - Eigen::VectorXd::Ones(n) * mu -
                             S_tilde.rightCols(S_tilde.cols() - 1) * beta);
    };
    const Eigen::MatrixXd A = resid(Y);
    const Eigen::MatrixXd B = resid(Wd * Y);

    double obj_fit = 0.0, obj_grid = 0.0, cell_budget = 1e-12;
    for (int q = 0; q < Q; ++q) {
      obj_fit += (A.col(q) - B * R_hat.col(q)).squaredNorm() / n;
      obj_grid += oracle::grid_search_column(A.col(q), B, N).second;
      const double L =
          (2.0 / n) *
          Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(B.transpose() * B)
              .eigenvalues()
              .maxCoeff();
      cell_budget += L * h * h;
    }
    worst_excess = std::max(worst_excess, obj_fit - obj_grid);
    worst_rel_cell = std::max(worst_rel_cell, (obj_grid - obj_fit) / cell_budget);
  }
  const bool ok = worst_excess <= 1e-9 && worst_rel_cell <= 1.0;
  return {ok, fmt("max fit objective excess over 2001^4 grid %.3e (tol 1e-9), "
                  "max grid-over-fit gap %.2f of the one-cell budget (tol 1) "
                  "over 25 instances",
                  worst_excess, worst_rel_cell)};
}

// ---------------------------------------------------------------------------
// 5. Noiseless recovery of the spatial effect matrix and an essentially zero
//    training objective.

Outcome criterion_5() {
  constexpr double tol_R = 1e-3;
  constexpr double tol_obj = 1e-6;

  double worst_R = 0.0, worst_obj = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(1050 + seed);
    const int n = 60, P = 2, Q = 3, m = 2;
    const auto paths = random_design_paths(rng, n, P, 6);
    const Eigen::MatrixXd S = sig_matrix(paths, m, 0);
    const SpatialWeights W = random_weights(rng, n, 6);
    const Eigen::MatrixXd Wd = Eigen::MatrixXd(W.entries);

    Eigen::MatrixXd R0(Q, Q);
    for (int a = 0; a < Q; ++a)
      for (int b = 0; b < Q; ++b) R0(a, b) = uni(rng, -0.25, 0.25);
    const Eigen::RowVectorXd mu0 = randn(rng, 1, Q);
    const Eigen::MatrixXd beta0 = 0.3 * randn(rng, static_cast<int>(S.cols()), Q);
    const Eigen::MatrixXd theta =
        Eigen::VectorXd::Ones(n) * mu0 + S * beta0;
    const Eigen::MatrixXd Y = solve_sar_dense(Wd, R0, theta);

    const MpenssarFit f = fit(paths, Y, W, m, 1e-8);
    worst_R = std::max(worst_R, (f.R_hat - R0).cwiseAbs().maxCoeff());
    worst_obj = std::max(worst_obj, f.train_objective);
  }
  const bool ok = worst_R <= tol_R && worst_obj <= tol_obj;
  return {ok, fmt("max |R_hat - R0| %.3e (tol 1e-3), max train objective %.3e "
                  "(tol 1e-6) over 10 noiseless seeds",
                  worst_R, worst_obj)};
}

// ---------------------------------------------------------------------------
// 6. Order selection with the slope-heuristic penalty constant recovers the
//    generating order 2 on most replications.

Outcome criterion_6() {
  const int reps = 20;
  int hits = 0;
  std::string misses;
  for (int rep = 1; rep <= reps; ++rep) {
    SimConfig cfg;
    cfg.design = ThetaDesign::sig2;
    cfg.grid_side = 20;
    cfg.n = 200;
    cfg.P = 2;
    cfg.Q = 4;
    cfg.R = builtin_R("weak");
    cfg.Sigma = default_sigma() / 4.0;
    cfg.n_times = 101;
    cfg.m_for_design = 2;
    cfg.knn_k = 8;
    cfg.seed = derive_seed(606, static_cast<std::uint64_t>(rep));
    const SimDataset ds = generate(cfg);

    const auto paths = augment_all(ds.paths_fit);
    const int P_aug = paths.front().channels();
    const int m_max = 4;
    const double lambda = 1e-6;
    const auto cache = SigDesignCache::build(paths, m_max, 0);
    const auto risks = risk_table(cache, ds.Y, ds.W, lambda, m_max);

    int m_hat = -1;
    try {
      const double kpen = slope_heuristic_from_risks(risks, cfg.n, P_aug, 0.4,
                                                     default_kpen_grid(risks));
      PenaltyConfig pc;
      pc.K_pen = kpen;
      pc.kappa = 0.4;
      pc.m_max = m_max;
      m_hat = select_from_risks(risks, cfg.n, P_aug, pc).m_hat;
    } catch (const NumericError&) {
      m_hat = -1;  // no jump in the calibration curve counts as a miss
    }
    if (m_hat == 2)
      ++hits;
    else
      misses += fmt(" rep%d->%d", rep, m_hat);
  }
  const bool ok = hits >= 14;
  return {ok, fmt("selected order 2 in %d/20 replications (need >= 14)%s%s", hits,
                  misses.empty() ? "" : "; misses:", misses.c_str())};
}

// ---------------------------------------------------------------------------
// Shared pipeline for the comparative criteria: order selection by slope
// heuristic plus ridge grid chosen on a validation set.

struct EvalContext {
  std::vector<int> tr, va, te;
  SigDesignCache cache_tr, cache_va, cache_te;
  Eigen::MatrixXd Y_tr, Y_va, Y_te;
  SpatialWeights W_tr, W_vactx, W_tectx;
  int P_aug = 0;
  int m_max = 0;
};

EvalContext make_context(const SimDataset& ds, const SplitPlan& plan, int m_max) {
  EvalContext cx;
  cx.tr = plan.train;
  cx.va = plan.validation;
  cx.te = plan.test;
  const auto paths = augment_all(ds.paths_fit);
  cx.cache_tr = SigDesignCache::build(gather(paths, cx.tr), m_max, 0);
  cx.cache_va = SigDesignCache::build(gather(paths, cx.va), m_max, 0);
  cx.cache_te = SigDesignCache::build(gather(paths, cx.te), m_max, 0);
  cx.Y_tr = rows(ds.Y, cx.tr);
  cx.Y_va = rows(ds.Y, cx.va);
  cx.Y_te = rows(ds.Y, cx.te);
  cx.W_tr = subset_weights(ds.W, cx.tr);
  cx.W_vactx = subset_weights(ds.W, concat(cx.tr, cx.va));
  cx.W_tectx = subset_weights(ds.W, concat(cx.tr, cx.te));
  cx.P_aug = paths.front().channels();
  cx.m_max = m_max;
  return cx;
}

const std::vector<double> kLambdaGrid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};

// Joint fit across all responses; returns the test residual matrix.
MpenssarFit run_joint(const EvalContext& cx, Eigen::MatrixXd* test_resid) {
  const long long n_tr = cx.Y_tr.rows();
  double best_rmse = std::numeric_limits<double>::infinity();
  MpenssarFit best;
  for (double lambda : kLambdaGrid) {
    const auto risks = risk_table(cx.cache_tr, cx.Y_tr, cx.W_tr, lambda, cx.m_max);
    double kpen = 1.0;
    try {
      kpen = slope_heuristic_from_risks(risks, n_tr, cx.P_aug, 0.4,
                                        default_kpen_grid(risks));
    } catch (const NumericError&) {
    }
    PenaltyConfig pc;
    pc.K_pen = kpen;
    pc.kappa = 0.4;
    pc.m_max = cx.m_max;
    const int m = select_from_risks(risks, n_tr, cx.P_aug, pc).m_hat;
    MpenssarFit f = fit_design(cx.cache_tr.shifted(m), cx.Y_tr, cx.W_tr, m, lambda);
    const Eigen::MatrixXd Yhat_va =
        predict_design(f, cx.cache_va.shifted(m), cx.W_vactx, cx.Y_tr);
    const double rmse = pooled_rmse(Yhat_va - cx.Y_va);
    if (rmse < best_rmse) {
      best_rmse = rmse;
      best = std::move(f);
    }
  }
  if (test_resid) {
    const Eigen::MatrixXd Yhat_te =
        predict_design(best, cx.cache_te.shifted(best.m), cx.W_tectx, cx.Y_tr);
    *test_resid = Yhat_te - cx.Y_te;
  }
  return best;
}

// Independent per-response fits; returns per-response spatial effects and the
// test residual matrix.
Eigen::VectorXd run_per_response(const EvalContext& cx, Eigen::MatrixXd* test_resid) {
  const int Q = static_cast<int>(cx.Y_tr.cols());
  Eigen::VectorXd r_diag(Q);
  if (test_resid) test_resid->resize(cx.Y_te.rows(), Q);
  for (int q = 0; q < Q; ++q) {
    double best_rmse = std::numeric_limits<double>::infinity();
    MpenssarFit best;
    for (int m = 1; m <= cx.m_max; ++m) {
      ProfiledSolver base(cx.cache_tr.shifted(m), kLambdaGrid.front());
      for (std::size_t li = 0; li < kLambdaGrid.size(); ++li) {
        const ProfiledSolver solver =
            li == 0 ? base : base.refit(kLambdaGrid[li]);
        MpenssarFit f = fit_design(solver, cx.cache_tr.shifted(m),
                                   cx.Y_tr.col(q), cx.W_tr, m);
        const Eigen::MatrixXd yhat_va = predict_design(
            f, cx.cache_va.shifted(m), cx.W_vactx, cx.Y_tr.col(q));
        const double rmse = pooled_rmse(yhat_va - cx.Y_va.col(q));
        if (rmse < best_rmse) {
          best_rmse = rmse;
          best = std::move(f);
        }
      }
    }
    r_diag[q] = best.R_hat(0, 0);
    if (test_resid)
      test_resid->col(q) =
          predict_design(best, cx.cache_te.shifted(best.m), cx.W_tectx,
                         cx.Y_tr.col(q)) -
          cx.Y_te.col(q);
  }
  return r_diag;
}

SimDataset comparative_dataset(const std::string& r_name, std::uint64_t seed) {
  SimConfig cfg;
  cfg.design = ThetaDesign::sig2;
  cfg.grid_side = 20;
  cfg.n = 200;
  cfg.P = 2;
  cfg.Q = 4;
  cfg.R = builtin_R(r_name);
  cfg.Sigma = default_sigma();
  cfg.n_times = 101;
  cfg.m_for_design = 2;
  cfg.knn_k = 8;
  cfg.seed = seed;
  return generate(cfg);
}

// ---------------------------------------------------------------------------
// 7. Under strong cross-variable spatial effects and a spatial validation
//    split, the joint estimator's pooled test error beats the per-response
//    baseline on most replications.

Outcome criterion_7() {
  const int reps = 20;
  int wins = 0;
  for (int rep = 1; rep <= reps; ++rep) {
    const SimDataset ds =
        comparative_dataset("high", derive_seed(707, static_cast<std::uint64_t>(rep)));
    const SplitPlan plan =
        split_spatial(ds.coords, 6, derive_seed(708, static_cast<std::uint64_t>(rep)));
    const EvalContext cx = make_context(ds, plan, 3);

    Eigen::MatrixXd resid_joint, resid_per;
    run_joint(cx, &resid_joint);
    run_per_response(cx, &resid_per);
    if (pooled_rmse(resid_joint) <= pooled_rmse(resid_per)) ++wins;
  }
  const bool ok = wins >= 12;
  return {ok, fmt("joint pooled test RMSE <= per-response in %d/20 "
                  "spatial-split replications (need >= 12)",
                  wins)};
}

// ---------------------------------------------------------------------------
// 8. Cross-effect estimation under moderate off-diagonal spatial effects:
//    finite off-diagonal error, and diagonal error no worse than the
//    per-response baseline on most replications. This criterion scores
//    estimation accuracy, so both methods fit the full sample with the same
//    selection machinery and the same fixed ridge value.

Outcome criterion_8() {
  const int reps = 20;
  const double lambda_est = 1e-3;
  int wins = 0;
  double offdiag_sum = 0.0;
  bool offdiag_finite = true;
  const Eigen::MatrixXd R_true = builtin_R("moderate");

  auto select_m = [](const std::vector<double>& risks, long long n, int P_aug) {
    double kpen = 1.0;
    try {
      kpen = slope_heuristic_from_risks(risks, n, P_aug, 0.4,
                                        default_kpen_grid(risks));
    } catch (const NumericError&) {
    }
    PenaltyConfig pc;
    pc.K_pen = kpen;
    pc.kappa = 0.4;
    pc.m_max = 4;
    return select_from_risks(risks, n, P_aug, pc).m_hat;
  };

  for (int rep = 1; rep <= reps; ++rep) {
    const SimDataset ds = comparative_dataset(
        "moderate", derive_seed(808, static_cast<std::uint64_t>(rep)));
    const auto paths = augment_all(ds.paths_fit);
    const int P_aug = paths.front().channels();
    const auto cache = SigDesignCache::build(paths, 4, 0);

    const auto risks = risk_table(cache, ds.Y, ds.W, 1e-6, 4);
    const int m = select_m(risks, ds.config.n, P_aug);
    const MpenssarFit joint =
        fit_design(cache.shifted(m), ds.Y, ds.W, m, lambda_est);

    const int Q = static_cast<int>(R_true.rows());
    double diag_joint = 0.0, diag_per = 0.0, off = 0.0;
    for (int a = 0; a < Q; ++a)
      for (int b = 0; b < Q; ++b) {
        const double err = std::abs(joint.R_hat(a, b) - R_true(a, b));
        if (a == b)
          diag_joint += err;
        else
          off += err;
      }
    for (int q = 0; q < Q; ++q) {
      const auto risks_q = risk_table(cache, ds.Y.col(q), ds.W, 1e-6, 4);
      const int mq = select_m(risks_q, ds.config.n, P_aug);
      const MpenssarFit fq =
          fit_design(cache.shifted(mq), ds.Y.col(q), ds.W, mq, lambda_est);
      diag_per += std::abs(fq.R_hat(0, 0) - R_true(q, q));
    }
    if (!std::isfinite(off)) offdiag_finite = false;
    offdiag_sum += off / (Q * (Q - 1));
    if (diag_joint <= diag_per) ++wins;
  }
  const bool ok = offdiag_finite && wins >= 12;
  return {ok, fmt("mean off-diagonal MAE %.4f (finite: %s); joint diagonal MAE "
                  "<= per-response in %d/20 replications (need >= 12)",
                  offdiag_sum / reps, offdiag_finite ? "yes" : "no", wins)};
}

// ---------------------------------------------------------------------------
// 9. Every generated dataset satisfies its own defining equation.

Outcome criterion_9() {
  constexpr double tol = 1e-9;
  double worst = 0.0;
  int checked = 0;
  for (ThetaDesign design :
       {ThetaDesign::sig2, ThetaDesign::terminal, ThetaDesign::mixed}) {
    for (std::uint64_t seed : {1ull, 2ull}) {
      SimConfig cfg;
      cfg.design = design;
      cfg.grid_side = 20;
      cfg.n = 100;
      cfg.P = 2;
      cfg.Q = 4;
      cfg.R = builtin_R("weak");
      cfg.Sigma = default_sigma();
      cfg.n_times = 21;
      cfg.m_for_design = 2;
      cfg.knn_k = 8;
      cfg.seed = seed;
      const SimDataset ds = generate(cfg);
      const Eigen::MatrixXd defect =
          ds.Y - ds.W.entries * ds.Y * ds.config.R - ds.theta - ds.noise;
      worst = std::max(worst, defect.cwiseAbs().maxCoeff());
      ++checked;
    }
  }
  {
    // Large instance to exercise the sparse response solver.
    SimConfig cfg;
    cfg.design = ThetaDesign::terminal;
    cfg.grid_side = 40;
    cfg.n = 1300;
    cfg.P = 1;
    cfg.Q = 4;
    cfg.R = builtin_R("weak");
    cfg.Sigma = default_sigma();
    cfg.n_times = 5;
    cfg.seed = 3;
    cfg.knn_k = 8;
    const SimDataset ds = generate(cfg);
    const Eigen::MatrixXd defect =
        ds.Y - ds.W.entries * ds.Y * ds.config.R - ds.theta - ds.noise;
    worst = std::max(worst, defect.cwiseAbs().maxCoeff());
    ++checked;
  }
  return {worst <= tol,
          fmt("max generating-equation defect %.3e over %d datasets (tol 1e-9)",
              worst, checked)};
}

// ---------------------------------------------------------------------------
// 10. Theory constants and the misselection bound against an independently
//     coded extended-precision oracle, plus monotonicity of the bound in n.

namespace oracle10 {

long double count_features(int P, int m) {
  if (m <= 0) return 0.0L;
  if (P == 1) return static_cast<long double>(m);
  return (powl(static_cast<long double>(P), m + 1) - P) / (P - 1);
}

struct Derived {
  double K, K1, K2, K3, K4, n1, n2, n3;
};

Derived constants(const TheoryConstants& c) {
  const long double pi = acosl(-1.0L);
  const long double Q = c.Q;
  const long double s_star = count_features(c.P, c.m_star);
  const long double s_next = count_features(c.P, c.m_star + 1);
  const long double A = 1.0L - sqrtl(s_star / s_next);
  const long double B =
      c.K_neighb * c.K_Y * powl(Q, 1.5L) + expl(c.K_X) * c.alpha;
  const long double K = 2.0L * (c.K_Y + B);

  Derived d;
  d.K = static_cast<double>(K);
  const long double kp2A2 = c.K_pen * c.K_pen * A * A;
  d.K1 = static_cast<double>(kp2A2 / (9216.0L * K * K * B * B));
  d.K2 = static_cast<double>(kp2A2 / (8.0L * powl(c.K_Y, 4.0L)));
  d.K3 = std::min(d.K1, d.K2);
  d.K4 = static_cast<double>(fminl(1.0L / (2304.0L * K * K * B * B),
                                   1.0L / (2.0L * powl(c.K_Y, 4.0L))));

  const long double q52 = powl(Q, 2.5L);
  const long double n1_base =
      A * c.K_pen /
      (864.0L * K * sqrtl(pi) *
       (c.alpha * expl(c.K_X) + c.K_neighb * c.K_Y * q52 / sqrtl(s_next)));
  d.n1 = static_cast<double>(
      fmaxl(1.0L, ceill(powl(n1_base, 1.0L / (c.kappa - 0.5L)))));

  const long double tail2 =
      c.alpha * expl(c.K_X) * sqrtl(count_features(c.P, c.m_n2) * pi) +
      c.K_neighb * c.K_Y * q52 * sqrtl(pi);
  d.n2 = static_cast<double>(
      fmaxl(1.0L, ceill(powl(432.0L * K * tail2 / c.delta_n2, 2.0L))));

  const long double tail3 =
      c.alpha * expl(c.K_X) * sqrtl(count_features(c.P, c.m_star - 1) * pi) +
      c.K_neighb * c.K_Y * q52 * sqrtl(pi);
  const long double n3_base = fmaxl(1728.0L * K * tail3 / c.L_gap,
                                    2.0L * c.K_pen * sqrtl(s_star) / c.L_gap);
  d.n3 = static_cast<double>(fmaxl(1.0L, ceill(powl(n3_base, 1.0L / c.kappa))));
  return d;
}

struct Bound {
  double raw, clamped, next;
};

Bound bound(const TheoryConstants& c, double n, int tail_terms) {
  const long double rate = powl(n, 1.0L - 2.0L * c.kappa);
  long double raw =
      148.0L * c.m_star * expl(-static_cast<long double>(n) *
                               (c.K4 / 16.0L) * c.L_gap * c.L_gap);
  for (int m = c.m_star + 1; m <= c.m_star + tail_terms; ++m)
    raw += 74.0L * expl(-c.K3 * count_features(c.P, m) * rate);
  const long double next =
      74.0L * expl(-c.K3 * count_features(c.P, c.m_star + tail_terms + 1) * rate);
  Bound b;
  b.raw = static_cast<double>(raw);
  b.clamped = std::clamp(b.raw, 0.0, 1.0);
  b.next = static_cast<double>(next);
  return b;
}

}  // namespace oracle10

double rel_gap(double a, double b) {
  if (a == b) return 0.0;  // covers shared zeros and shared infinities
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

Outcome criterion_10() {
  std::mt19937_64 rng(110);
  constexpr double tol = 1e-12;
  double worst_const = 0.0, worst_bound = 0.0;
  bool monotone = true;

  for (int trial = 0; trial < 20; ++trial) {
    TheoryConstants in;
    in.K_Y = uni(rng, 0.5, 2.5);
    in.K_X = uni(rng, 0.05, 1.5);
    in.K_neighb = uni(rng, 0.5, 3.0);
    in.alpha = uni(rng, 0.1, 2.0);
    in.Q = 1 + static_cast<int>(rng() % 5);
    in.P = 1 + static_cast<int>(rng() % 4);
    in.sigma2 = uni(rng, 0.2, 3.0);
    in.L_gap = uni(rng, 0.05, 2.0);
    in.m_star = 1 + static_cast<int>(rng() % 4);
    in.kappa = uni(rng, 0.05, 0.45);
    in.K_pen = uni(rng, 0.2, 3.0);
    in.delta_n2 = uni(rng, 0.05, 1.5);
    in.m_n2 = static_cast<int>(rng() % 5);

    const TheoryConstants c = theory_constants(in);
    const oracle10::Derived d = oracle10::constants(in);
    for (auto [got, want] :
         {std::pair{c.K, d.K}, {c.K1, d.K1}, {c.K2, d.K2}, {c.K3, d.K3},
          {c.K4, d.K4}, {c.n1, d.n1}, {c.n2, d.n2}, {c.n3, d.n3}})
      worst_const = std::max(worst_const, rel_gap(got, want));

    // Bound agreement at the validity edge (often in the underflow regime).
    const double n_edge = std::max(c.n1, c.n3);
    for (double n : {n_edge, 10.0 * n_edge}) {
      const MisselectionBound got =
          misselection_bound(c, n, c.m_star, c.kappa, c.K_pen, 20);
      const oracle10::Bound want = oracle10::bound(c, n, 20);
      worst_bound = std::max({worst_bound, rel_gap(got.raw, want.raw),
                              rel_gap(got.clamped, want.clamped),
                              rel_gap(got.truncation_next_term, want.next)});
    }

    // Bound agreement and strict decrease away from underflow: same inputs
    // with the derived constants rescaled into a numerically live range.
    TheoryConstants live = c;
    live.K3 = uni(rng, 1e-6, 1e-5);
    live.K4 = uni(rng, 1e-6, 1e-5);
    live.n1 = live.n3 = 50.0;
    double prev = std::numeric_limits<double>::infinity();
    for (int g = 0; g <= 4; ++g) {
      const double n = 50.0 * std::pow(10.0, g);
      const MisselectionBound got =
          misselection_bound(live, n, live.m_star, live.kappa, live.K_pen, 20);
      const oracle10::Bound want = oracle10::bound(live, n, 20);
      worst_bound = std::max({worst_bound, rel_gap(got.raw, want.raw),
                              rel_gap(got.clamped, want.clamped),
                              rel_gap(got.truncation_next_term, want.next)});
      if (!(got.raw < prev)) monotone = false;
      prev = got.raw;
    }
  }
  const bool ok = worst_const <= tol && worst_bound <= tol && monotone;
  return {ok, fmt("max constant rel gap %.3e, max bound rel gap %.3e "
                  "(tol 1e-12), bound strictly decreasing in n: %s",
                  worst_const, worst_bound, monotone ? "yes" : "no")};
}

using CriterionFn = Outcome (*)();
constexpr CriterionFn kCriteria[] = {criterion_1, criterion_2, criterion_3,
                                     criterion_4, criterion_5, criterion_6,
                                     criterion_7, criterion_8, criterion_9,
                                     criterion_10};

}  // namespace

int main(int argc, char** argv) {
  int which = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      which = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }
  if (which < 0 || which > 10) {
    std::fprintf(stderr, "criterion must lie in 1..10\n");
    return 2;
  }

  bool all_ok = true;
  for (int k = 1; k <= 10; ++k) {
    if (which != 0 && k != which) continue;
    const Outcome out = kCriteria[k - 1]();
    std::printf("criterion %2d: %s  %s\n", k, out.ok ? "PASS" : "FAIL",
                out.details.c_str());
    std::fflush(stdout);
    all_ok = all_ok && out.ok;
  }
  return all_ok ? 0 : 1;
}
