#include "mpenssar/simulation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mpenssar/errors.hpp"
#include "mpenssar/rng.hpp"
#include "mpenssar/signature.hpp"

namespace mpenssar {

namespace {

constexpr std::uint64_t kStreamCoords = 21;
constexpr std::uint64_t kStreamPathsX = 22;
constexpr std::uint64_t kStreamPathsZ = 23;
constexpr std::uint64_t kStreamEta = 24;
constexpr std::uint64_t kStreamNoise = 25;

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::string to_string(ThetaDesign d) {
  switch (d) {
    case ThetaDesign::sig2: return "sig2";
    case ThetaDesign::terminal: return "terminal";
    case ThetaDesign::mixed: return "mixed";
  }
  throw ConfigError("unknown design");
}

ThetaDesign theta_design_from_string(const std::string& s) {
  if (s == "sig2") return ThetaDesign::sig2;
  if (s == "terminal") return ThetaDesign::terminal;
  if (s == "mixed") return ThetaDesign::mixed;
  throw ConfigError("unknown design name: " + s);
}

Eigen::MatrixX2d gen_coords(int grid_side, int n, std::uint64_t seed) {
  if (grid_side < 1) throw ConfigError("gen_coords: grid side must be positive");
  if (n < 1) throw ConfigError("gen_coords: n must be positive");
  const std::int64_t cells = static_cast<std::int64_t>(grid_side) * grid_side;
  if (n > cells) throw ConfigError("gen_coords: more units than lattice points");

  std::vector<std::int64_t> idx(cells);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, kStreamCoords);
  // Partial Fisher-Yates: only the first n draws matter.
  for (int i = 0; i < n; ++i)
    std::swap(idx[i], idx[i + bounded(rng, cells - i)]);

  Eigen::MatrixX2d coords(n, 2);
  for (int i = 0; i < n; ++i) {
    coords(i, 0) = static_cast<double>(idx[i] % grid_side);
    coords(i, 1) = static_cast<double>(idx[i] / grid_side);
  }
  return coords;
}

std::vector<Path> gen_gp_paths(int n, int P, int n_times,
                               std::pair<double, double> slope_range,
                               std::uint64_t seed) {
  if (n < 1 || P < 1) throw ConfigError("gen_gp_paths: n and P must be positive");
  if (n_times < 2) throw ConfigError("gen_gp_paths: need at least two stamps");
  if (!(slope_range.first <= slope_range.second))
    throw ConfigError("gen_gp_paths: empty slope range");

  std::vector<double> times(n_times);
  for (int j = 0; j < n_times; ++j)
    times[j] = static_cast<double>(j) / (n_times - 1);

  Eigen::MatrixXd C(n_times, n_times);
  for (int j = 0; j < n_times; ++j)
    for (int k = 0; k < n_times; ++k)
      C(j, k) = std::exp(-std::abs(times[j] - times[k]));

  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 1e-10;
  while (true) {
    Eigen::MatrixXd Cj = C;
    Cj.diagonal().array() += jitter;
    llt.compute(Cj);
    if (llt.info() == Eigen::Success) break;
    jitter *= 10.0;
    if (jitter > 1e-6)
      throw NumericError("gen_gp_paths: covariance factorization failed");
  }
  const Eigen::MatrixXd L = llt.matrixL();

  auto rng = make_rng(seed, kStreamPathsX);
  std::uniform_real_distribution<double> slope(slope_range.first, slope_range.second);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Path> out;
  out.reserve(n);
  Eigen::VectorXd z(n_times);
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd values(n_times, P);
    for (int p = 0; p < P; ++p) {
      const double gamma = slope(rng);
      for (int j = 0; j < n_times; ++j) z[j] = gauss(rng);
      values.col(p) = L * z;
      for (int j = 0; j < n_times; ++j) values(j, p) += gamma * times[j];
    }
    out.push_back(Path::make(times, std::move(values)));
  }
  return out;
}

namespace {

// Normalized uniform weights; each column divides by its sum, redrawing the
// column in the zero-sum corner case.
Eigen::MatrixXd draw_eta(int rows, int Q, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd eta(rows, Q);
  for (int q = 0; q < Q; ++q) {
    do {
      for (int k = 0; k < rows; ++k) eta(k, q) = unif(rng);
    } while (eta.col(q).sum() == 0.0);
  }
  return eta;
}

Eigen::MatrixXd terminal_features(const std::vector<Path>& paths) {
  const int n = static_cast<int>(paths.size());
  const int P = paths.front().channels();
  Eigen::MatrixXd F(n, P);
  for (int i = 0; i < n; ++i) {
    if (paths[i].channels() != P)
      throw ConfigError("gen_theta: channel mismatch across paths");
    F.row(i) = paths[i].values.row(paths[i].stamps() - 1);
  }
  return F;
}

Eigen::MatrixXd weighted_mix(const Eigen::MatrixXd& F, const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd weights = eta;
  for (Eigen::Index q = 0; q < weights.cols(); ++q)
    weights.col(q) /= weights.col(q).sum();
  return F * weights;
}

}  // namespace

Eigen::MatrixXd gen_theta(ThetaDesign design, const std::vector<Path>& paths_X,
                          const std::vector<Path>* paths_Z, int m_for_design, int Q,
                          std::uint64_t seed, Eigen::MatrixXd* eta_out) {
  if (paths_X.empty()) throw ConfigError("gen_theta: no covariate paths");
  if (Q < 1) throw ConfigError("gen_theta: Q must be positive");
  auto rng = make_rng(seed, kStreamEta);

  Eigen::MatrixXd theta, eta;
  switch (design) {
    case ThetaDesign::sig2: {
      const Eigen::MatrixXd S =
          sig_matrix(augment_all(paths_X), m_for_design, 0);
      eta = draw_eta(static_cast<int>(S.cols()), Q, rng);
      theta = weighted_mix(S, eta);
      break;
    }
    case ThetaDesign::terminal: {
      const Eigen::MatrixXd F = terminal_features(paths_X);
      eta = draw_eta(static_cast<int>(F.cols()), Q, rng);
      theta = weighted_mix(F, eta);
      break;
    }
    case ThetaDesign::mixed: {
      if (paths_Z == nullptr || paths_Z->size() != paths_X.size())
        throw ConfigError("gen_theta: mixed design needs matching Z paths");
      const Eigen::MatrixXd FX = terminal_features(paths_X);
      const Eigen::MatrixXd FZ = terminal_features(*paths_Z);
      eta = draw_eta(static_cast<int>(FX.cols()), Q, rng);
      const Eigen::MatrixXd TX = weighted_mix(FX, eta);
      const Eigen::MatrixXd TZ = weighted_mix(FZ, eta);
      theta.resize(FX.rows(), Q);
      for (int q = 0; q < Q; ++q)
        theta.col(q) = (q % 2 == 0) ? TX.col(q) : TZ.col(q);
      break;
    }
  }
  if (eta_out) *eta_out = eta;
  return theta;
}

Eigen::MatrixXd gen_response(const Eigen::MatrixXd& theta, const SpatialWeights& W,
                             const Eigen::MatrixXd& R, const Eigen::MatrixXd& Sigma,
                             std::uint64_t seed, Eigen::MatrixXd* noise_out) {
  const int n = static_cast<int>(theta.rows());
  const int Q = static_cast<int>(theta.cols());
  if (W.n != n) throw ConfigError("gen_response: weights size mismatch");
  if (R.rows() != Q || R.cols() != Q) throw ConfigError("gen_response: R shape mismatch");
  if (Sigma.rows() != Q || Sigma.cols() != Q)
    throw ConfigError("gen_response: Sigma shape mismatch");

  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  if (llt.info() != Eigen::Success)
    throw ConfigError("gen_response: Sigma is not positive definite");
  const Eigen::MatrixXd Lnoise = llt.matrixL();

  auto rng = make_rng(seed, kStreamNoise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd e(n, Q);
  Eigen::VectorXd z(Q);
  for (int i = 0; i < n; ++i) {
    for (int q = 0; q < Q; ++q) z[q] = gauss(rng);
    e.row(i) = (Lnoise * z).transpose();
  }

  const Eigen::MatrixXd rhs = theta + e;
  const Eigen::VectorXd b =
      Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(n) * Q);
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * Q;

  Eigen::VectorXd y;
  if (dim <= 5000) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(dim, dim);
    for (int q = 0; q < Q; ++q)
      for (int qp = 0; qp < Q; ++qp) {
        if (R(qp, q) == 0.0) continue;
        for (int j = 0; j < W.entries.outerSize(); ++j)
          for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it)
            A(q * n + it.row(), qp * n + it.col()) -= R(qp, q) * it.value();
      }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    y = lu.solve(b);
    if ((A * y - b).cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, b.cwiseAbs().maxCoeff()))
      throw NumericError(
          "gen_response: spatial system near-singular (spectral radius of R'⊗W "
          "reaches one)");
  } else {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(dim + W.entries.nonZeros() * Q * Q);
    for (Eigen::Index d = 0; d < dim; ++d) trips.emplace_back(d, d, 1.0);
    for (int q = 0; q < Q; ++q)
      for (int qp = 0; qp < Q; ++qp) {
        if (R(qp, q) == 0.0) continue;
        for (int j = 0; j < W.entries.outerSize(); ++j)
          for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it)
            trips.emplace_back(q * n + it.row(), qp * n + it.col(),
                               -R(qp, q) * it.value());
      }
    Eigen::SparseMatrix<double> A(dim, dim);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> slu(A);
    if (slu.info() != Eigen::Success)
      throw NumericError(
          "gen_response: spatial system near-singular (spectral radius of R'⊗W "
          "reaches one)");
    y = slu.solve(b);
  }

  if (noise_out) *noise_out = e;
  return Eigen::Map<const Eigen::MatrixXd>(y.data(), n, Q);
}

Eigen::MatrixXd builtin_R(const std::string& name) {
  Eigen::MatrixXd R(4, 4);
  if (name == "weak") {
    R << 0.40, -0.10, 0.20, 0.05,
        -0.20, 0.35, 0.10, -0.10,
        0.15, 0.10, 0.30, 0.20,
        0.05, -0.15, 0.15, 0.25;
  } else if (name == "moderate") {
    R << 0.6, -0.2, 0.4, 0.2,
        -0.4, 0.6, 0.2, -0.2,
        0.3, 0.2, 0.5, 0.4,
        0.1, -0.3, 0.3, 0.4;
  } else if (name == "high") {
    R << 0.9, -0.6, 0.7, -0.7,
        -0.8, 0.7, 0.8, 0.6,
        0.6, 0.7, 0.7, 0.9,
        -0.7, 0.8, 0.7, 0.6;
  } else {
    throw ConfigError("builtin_R: unknown name '" + name +
                      "' (expected weak, moderate, or high)");
  }
  return R;
}

Eigen::MatrixXd default_sigma() {
  Eigen::MatrixXd S = Eigen::MatrixXd::Constant(4, 4, 0.1);
  S.diagonal().setConstant(0.4);
  return S;
}

SimDataset generate(const SimConfig& config) {
  if (config.Q < 1 || config.P < 1)
    throw ConfigError("generate: P and Q must be positive");
  if (config.R.rows() != config.Q || config.R.cols() != config.Q)
    throw ConfigError("generate: R must be Q x Q");
  if (config.R.cwiseAbs().maxCoeff() > 1.0)
    throw ConfigError("generate: R entries must lie in [-1,1]");
  if (config.Sigma.rows() != config.Q || config.Sigma.cols() != config.Q)
    throw ConfigError("generate: Sigma must be Q x Q");
  if ((config.Sigma - config.Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("generate: Sigma must be symmetric");
  if (config.n_times < 3) throw ConfigError("generate: need at least three stamps");

  SimDataset ds;
  ds.config = config;
  ds.coords = gen_coords(config.grid_side, config.n, config.seed);
  ds.W = knn_weights(ds.coords, config.knn_k, config.row_normalize);
  ds.paths_X = gen_gp_paths(config.n, config.P, config.n_times, {-3.0, 3.0},
                            derive_seed(config.seed, kStreamPathsX));
  if (config.design == ThetaDesign::mixed)
    ds.paths_Z = gen_gp_paths(config.n, config.P, config.n_times, {-3.0, 3.0},
                              derive_seed(config.seed, kStreamPathsZ));

  ds.theta = gen_theta(config.design, ds.paths_X,
                       ds.paths_Z.empty() ? nullptr : &ds.paths_Z,
                       config.m_for_design, config.Q, config.seed, &ds.eta);
  ds.Y = gen_response(ds.theta, ds.W, config.R, config.Sigma, config.seed, &ds.noise);

  if (config.design == ThetaDesign::sig2) {
    ds.paths_fit = ds.paths_X;
  } else {
    // Fitters observe the covariates one stamp short of the horizon the
    // generator used.
    ds.paths_fit.reserve(config.n);
    for (const auto& p : ds.paths_X) {
      const int keep = p.stamps() - 1;
      std::vector<double> t(p.times.begin(), p.times.begin() + keep);
      ds.paths_fit.push_back(Path::make(std::move(t), p.values.topRows(keep)));
    }
  }
  return ds;
}

}  // namespace mpenssar
