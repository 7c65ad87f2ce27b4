#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mpenssar/estimator.hpp"
#include "mpenssar/path.hpp"
#include "mpenssar/signature.hpp"
#include "mpenssar/spatial.hpp"

namespace mpenssar {

/// Penalty configuration for truncation-order selection. m_max <= 0 means
/// "largest order whose coefficient count stays within the dimension cap".
struct PenaltyConfig {
  double K_pen = 1.0;
  double kappa = 0.4;  // must lie in (0, 1/2)
  int m_max = 0;
  std::int64_t dim_cap = 10000;
};

/// Largest order m >= 1 with sig_dim(channels, m) <= cap.
int default_max_order(int channels, std::int64_t cap = 10000);

/// pen_n(m) = K_pen n^{-kappa} sqrt(s_P(m)) for P = channels.
double pen(long long n, int m, int channels, const PenaltyConfig& cfg);

struct CriterionRow {
  int m = 0;
  double L_hat = 0.0;
  double pen = 0.0;
  double criterion = 0.0;
};

struct OrderSelection {
  int m_hat = 0;
  std::vector<CriterionRow> table;
};

/// Training risk L_hat(m) for m = 1..m_max at a fixed ridge value, one full
/// fit per order; orders run in parallel off the shared design cache.
std::vector<double> risk_table(const SigDesignCache& cache, const Eigen::MatrixXd& Y,
                               const SpatialWeights& W, double lambda, int m_max);

/// Smallest minimizer of L_hat(m) + pen_n(m).
OrderSelection select_order(const std::vector<AugmentedPath>& paths,
                            const Eigen::MatrixXd& Y, const SpatialWeights& W,
                            double lambda, const PenaltyConfig& cfg);

OrderSelection select_order_cached(const SigDesignCache& cache,
                                   const Eigen::MatrixXd& Y, const SpatialWeights& W,
                                   double lambda, const PenaltyConfig& cfg);

/// Selection from an existing risk table (risks[i] = L_hat(i+1)); lets one
/// table serve many penalty settings.
OrderSelection select_from_risks(const std::vector<double>& risks, long long n,
                                 int channels, const PenaltyConfig& cfg);

/// Index into the grid where m_hat lands after its largest single-step drop
/// (earliest such step). Throws when m_hat never moves.
int first_big_jump_index(const std::vector<int>& m_hats);

/// Calibrated K_pen: twice the grid value at which the selected order takes
/// its largest single-step drop. The grid must be strictly increasing with at
/// least 10 points.
double slope_heuristic(const std::vector<AugmentedPath>& paths, const Eigen::MatrixXd& Y,
                       const SpatialWeights& W, double lambda, double kappa,
                       const std::vector<double>& K_pen_grid,
                       std::int64_t dim_cap = 10000);

/// Same computation from a precomputed risk table (risks[i] = L_hat(i+1)).
double slope_heuristic_from_risks(const std::vector<double>& risks, long long n,
                                  int channels, double kappa,
                                  const std::vector<double>& K_pen_grid);

/// Log-spaced default grid spanning [1e-3, 1e2] times the spread of the risk
/// values.
std::vector<double> default_kpen_grid(const std::vector<double>& risks, int points = 40);

/// Inputs and derived values of the finite-sample constant calculator. The
/// n thresholds are integer-valued but kept as doubles: honest constants
/// routinely push them past any 64-bit range.
struct TheoryConstants {
  // inputs
  double K_Y = 1.0;      // response sup bound
  double K_X = 1.0;      // covariate total-variation bound
  double K_neighb = 1.0; // neighbor-count bound
  double alpha = 1.0;    // coefficient-norm bound
  int Q = 1;
  int P = 1;
  double sigma2 = 1.0;   // trace of the noise covariance
  double L_gap = 1.0;    // limit risk at m*-1 minus sigma2
  int m_star = 1;
  double kappa = 0.4;
  double K_pen = 1.0;
  double delta_n2 = 1.0; // slack in the n2 threshold
  int m_n2 = 1;          // order at which n2 is evaluated

  // derived
  double K = 0.0, K1 = 0.0, K2 = 0.0, K3 = 0.0, K4 = 0.0;
  double n1 = 0.0, n2 = 0.0, n3 = 0.0;
};

/// Fills the derived constants from the inputs. Pure formula evaluation.
TheoryConstants theory_constants(TheoryConstants c);

struct MisselectionBound {
  double raw = 0.0;                // value of the finite-sample bound
  double clamped = 0.0;            // raw clipped to [0,1] for reporting
  double truncation_next_term = 0.0;  // first omitted tail term
};

/// Finite-sample misselection bound
///   148 m* exp(-n K4/16 L_gap^2) + 74 sum_{m=m*+1}^{m*+tail} exp(-K3 s_P(m) n^{1-2k}).
/// Requires n >= max(n1, n3).
MisselectionBound misselection_bound(const TheoryConstants& c, double n, int m_star,
                                     double kappa, double K_pen, int tail_terms = 20);

}  // namespace mpenssar
