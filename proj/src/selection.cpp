#include "mpenssar/selection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mpenssar/errors.hpp"

namespace mpenssar {

namespace {

void check_penalty(const PenaltyConfig& cfg) {
  if (!(cfg.K_pen > 0.0)) throw ConfigError("penalty: K_pen must be positive");
  if (!(cfg.kappa > 0.0 && cfg.kappa < 0.5))
    throw ConfigError("penalty: kappa must lie in (0, 1/2)");
}

// s_P(m) in floating point, for penalty and bound formulas where the count
// itself may be astronomically large.
double sig_dim_real(int P, int m) {
  if (m <= 0) return 0.0;
  if (P == 1) return m;
  return (std::pow(P, m + 1) - P) / (P - 1);
}

}  // namespace

int default_max_order(int channels, std::int64_t cap) {
  if (channels < 1) throw ConfigError("default_max_order: need at least one channel");
  if (cap < channels) throw ConfigError("default_max_order: cap below first level");
  int m = 1;
  while (true) {
    try {
      sig_dim(channels, m + 1, cap);
    } catch (const Error&) {
      return m;
    }
    ++m;
  }
}

double pen(long long n, int m, int channels, const PenaltyConfig& cfg) {
  check_penalty(cfg);
  if (n < 1) throw ConfigError("pen: n must be positive");
  if (m < 1) throw ConfigError("pen: m must be positive");
  return cfg.K_pen * std::pow(static_cast<double>(n), -cfg.kappa) *
         std::sqrt(sig_dim_real(channels, m));
}

std::vector<double> risk_table(const SigDesignCache& cache, const Eigen::MatrixXd& Y,
                               const SpatialWeights& W, double lambda, int m_max) {
  if (m_max < 1 || m_max > cache.max_order())
    throw ConfigError("risk_table: m_max outside the cached range");
  std::vector<double> risks(m_max, 0.0);
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int m = 1; m <= m_max; ++m) {
    try {
      risks[m - 1] = fit_design(cache.shifted(m), Y, W, m, lambda).train_objective;
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty())
        failure = "order " + std::to_string(m) + ": " + e.what();
    }
  }
  if (!failure.empty()) throw NumericError("risk_table failed at " + failure);
  return risks;
}

OrderSelection select_from_risks(const std::vector<double>& risks, long long n,
                                 int channels, const PenaltyConfig& cfg) {
  OrderSelection sel;
  sel.table.reserve(risks.size());
  for (int m = 1; m <= static_cast<int>(risks.size()); ++m) {
    CriterionRow row;
    row.m = m;
    row.L_hat = risks[m - 1];
    row.pen = pen(n, m, channels, cfg);
    row.criterion = row.L_hat + row.pen;
    sel.table.push_back(row);
  }
  sel.m_hat = 1;
  for (const auto& row : sel.table)
    if (row.criterion < sel.table[sel.m_hat - 1].criterion) sel.m_hat = row.m;
  return sel;
}

OrderSelection select_order_cached(const SigDesignCache& cache,
                                   const Eigen::MatrixXd& Y, const SpatialWeights& W,
                                   double lambda, const PenaltyConfig& cfg) {
  check_penalty(cfg);
  const int m_max = cfg.m_max > 0 ? cfg.m_max : cache.max_order();
  const auto risks = risk_table(cache, Y, W, lambda, m_max);
  return select_from_risks(risks, cache.rows(), cache.channels(), cfg);
}

OrderSelection select_order(const std::vector<AugmentedPath>& paths,
                            const Eigen::MatrixXd& Y, const SpatialWeights& W,
                            double lambda, const PenaltyConfig& cfg) {
  check_penalty(cfg);
  if (paths.empty()) throw ConfigError("select_order: no paths");
  const int channels = paths.front().channels();
  const int m_max =
      cfg.m_max > 0 ? cfg.m_max : default_max_order(channels, cfg.dim_cap);
  const auto cache = SigDesignCache::build(paths, m_max, cfg.dim_cap);
  return select_order_cached(cache, Y, W, lambda, cfg);
}

int first_big_jump_index(const std::vector<int>& m_hats) {
  if (m_hats.size() < 2)
    throw ConfigError("slope heuristic: need at least two grid points");
  int best_drop = 0, best_idx = -1;
  for (std::size_t i = 0; i + 1 < m_hats.size(); ++i) {
    const int drop = m_hats[i] - m_hats[i + 1];
    if (drop > best_drop) {
      best_drop = drop;
      best_idx = static_cast<int>(i + 1);
    }
  }
  if (best_idx < 0)
    throw NumericError(
        "slope heuristic: selected order never drops across the grid; widen the grid");
  return best_idx;
}

double slope_heuristic_from_risks(const std::vector<double>& risks, long long n,
                                  int channels, double kappa,
                                  const std::vector<double>& K_pen_grid) {
  if (K_pen_grid.size() < 10)
    throw ConfigError("slope heuristic: grid needs at least 10 points");
  for (std::size_t i = 0; i + 1 < K_pen_grid.size(); ++i)
    if (!(K_pen_grid[i] < K_pen_grid[i + 1]))
      throw ConfigError("slope heuristic: grid must be strictly increasing");
  if (risks.empty()) throw ConfigError("slope heuristic: empty risk table");

  std::vector<int> m_hats(K_pen_grid.size());
  for (std::size_t g = 0; g < K_pen_grid.size(); ++g) {
    PenaltyConfig cfg;
    cfg.K_pen = K_pen_grid[g];
    cfg.kappa = kappa;
    m_hats[g] = select_from_risks(risks, n, channels, cfg).m_hat;
  }
  return 2.0 * K_pen_grid[first_big_jump_index(m_hats)];
}

double slope_heuristic(const std::vector<AugmentedPath>& paths, const Eigen::MatrixXd& Y,
                       const SpatialWeights& W, double lambda, double kappa,
                       const std::vector<double>& K_pen_grid, std::int64_t dim_cap) {
  if (paths.empty()) throw ConfigError("slope heuristic: no paths");
  const int channels = paths.front().channels();
  const int m_max = default_max_order(channels, dim_cap);
  const auto cache = SigDesignCache::build(paths, m_max, dim_cap);
  const auto risks = risk_table(cache, Y, W, lambda, m_max);
  return slope_heuristic_from_risks(risks, cache.rows(), channels, kappa, K_pen_grid);
}

std::vector<double> default_kpen_grid(const std::vector<double>& risks, int points) {
  if (points < 10) throw ConfigError("default grid: need at least 10 points");
  double spread = 0.0;
  if (!risks.empty()) {
    const auto [lo, hi] = std::minmax_element(risks.begin(), risks.end());
    spread = *hi - *lo;
  }
  if (!(spread > 0.0)) spread = 1.0;
  const double lo = 1e-3 * spread, hi = 1e2 * spread;
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i)
    grid[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
  return grid;
}

TheoryConstants theory_constants(TheoryConstants c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("theory constants: ") + name + " must be positive");
  };
  positive(c.K_Y, "K_Y");
  positive(c.K_X, "K_X");
  positive(c.K_neighb, "K_neighb");
  positive(c.alpha, "alpha");
  positive(c.sigma2, "sigma2");
  positive(c.L_gap, "L_gap");
  positive(c.K_pen, "K_pen");
  positive(c.delta_n2, "delta_n2");
  if (c.Q < 1 || c.P < 1) throw ConfigError("theory constants: Q and P must be positive");
  if (c.m_star < 1) throw ConfigError("theory constants: m_star must be positive");
  if (c.m_n2 < 0) throw ConfigError("theory constants: m_n2 must be nonnegative");
  if (!(c.kappa > 0.0 && c.kappa < 0.5))
    throw ConfigError("theory constants: kappa must lie in (0, 1/2)");

  const double Qd = c.Q;
  const double s_star = sig_dim_real(c.P, c.m_star);
  const double s_next = sig_dim_real(c.P, c.m_star + 1);
  const double A = 1.0 - std::sqrt(s_star / s_next);
  const double B = c.K_neighb * c.K_Y * std::pow(Qd, 1.5) + std::exp(c.K_X) * c.alpha;

  c.K = 2.0 * (c.K_Y + B);
  c.K1 = c.K_pen * c.K_pen * A * A / (9216.0 * c.K * c.K * B * B);
  c.K2 = c.K_pen * c.K_pen * A * A / (8.0 * std::pow(c.K_Y, 4));
  c.K3 = std::min(c.K1, c.K2);
  c.K4 = std::min(1.0 / (2304.0 * c.K * c.K * B * B), 1.0 / (2.0 * std::pow(c.K_Y, 4)));

  const double root_pi = std::sqrt(M_PI);
  const double q52 = std::pow(Qd, 2.5);
  const double n1_base =
      A * c.K_pen /
      (864.0 * c.K * root_pi *
       (c.alpha * std::exp(c.K_X) + c.K_neighb * c.K_Y * q52 / std::sqrt(s_next)));
  c.n1 = std::max(1.0, std::ceil(std::pow(n1_base, 1.0 / (c.kappa - 0.5))));

  const double tail_n2 = c.alpha * std::exp(c.K_X) *
                             std::sqrt(sig_dim_real(c.P, c.m_n2) * M_PI) +
                         c.K_neighb * c.K_Y * q52 * root_pi;
  c.n2 = std::max(1.0, std::ceil(std::pow(432.0 * c.K * tail_n2 / c.delta_n2, 2.0)));

  const double tail_n3 = c.alpha * std::exp(c.K_X) *
                             std::sqrt(sig_dim_real(c.P, c.m_star - 1) * M_PI) +
                         c.K_neighb * c.K_Y * q52 * root_pi;
  const double n3_base = std::max(1728.0 * c.K * tail_n3 / c.L_gap,
                                  2.0 * c.K_pen * std::sqrt(s_star) / c.L_gap);
  c.n3 = std::max(1.0, std::ceil(std::pow(n3_base, 1.0 / c.kappa)));
  return c;
}

MisselectionBound misselection_bound(const TheoryConstants& c, double n, int m_star,
                                     double kappa, double K_pen, int tail_terms) {
  (void)K_pen;  // enters through K3 inside c
  if (tail_terms < 0) throw ConfigError("misselection bound: negative tail length");
  if (m_star < 1) throw ConfigError("misselection bound: m_star must be positive");
  if (!(kappa > 0.0 && kappa < 0.5))
    throw ConfigError("misselection bound: kappa must lie in (0, 1/2)");
  if (!(c.K3 > 0.0 && c.K4 > 0.0))
    throw ConfigError("misselection bound: derived constants missing; fill them first");
  if (!(n >= std::max(c.n1, c.n3)))
    throw ConfigError("misselection bound: n below the validity thresholds n1=" +
                      std::to_string(c.n1) + ", n3=" + std::to_string(c.n3));

  MisselectionBound out;
  const double rate = std::pow(n, 1.0 - 2.0 * kappa);
  out.raw = 148.0 * m_star * std::exp(-n * (c.K4 / 16.0) * c.L_gap * c.L_gap);
  for (int m = m_star + 1; m <= m_star + tail_terms; ++m)
    out.raw += 74.0 * std::exp(-c.K3 * sig_dim_real(c.P, m) * rate);
  out.truncation_next_term =
      74.0 * std::exp(-c.K3 * sig_dim_real(c.P, m_star + tail_terms + 1) * rate);
  out.clamped = std::clamp(out.raw, 0.0, 1.0);
  return out;
}

}  // namespace mpenssar
