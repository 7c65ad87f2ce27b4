#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpenssar/path.hpp"
#include "mpenssar/spatial.hpp"

namespace mpenssar {

/// The three synthetic outcome designs: linear in order-2 signature features,
/// linear in terminal covariate values, and the mixed variant where even
/// responses depend on a latent second covariate family.
enum class ThetaDesign { sig2, terminal, mixed };

std::string to_string(ThetaDesign d);
ThetaDesign theta_design_from_string(const std::string& s);

struct SimConfig {
  int grid_side = 60;
  int n = 200;
  int P = 2;
  int Q = 4;
  ThetaDesign design = ThetaDesign::sig2;
  Eigen::MatrixXd R;      // Q x Q, entries in [-1,1]
  Eigen::MatrixXd Sigma;  // Q x Q symmetric positive definite
  int n_times = 101;
  int m_for_design = 2;   // signature order behind the sig2 design
  std::uint64_t seed = 0;
  int knn_k = 8;
  bool row_normalize = true;
};

struct SimDataset {
  Eigen::MatrixX2d coords;
  std::vector<Path> paths_fit;  // covariates exactly as fitters observe them
  std::vector<Path> paths_X;    // full covariate paths
  std::vector<Path> paths_Z;    // latent family, mixed design only
  Eigen::MatrixXd theta, noise, Y;
  SpatialWeights W;
  Eigen::MatrixXd eta;          // feature weights behind theta
  SimConfig config;
};

/// n distinct lattice points of the grid_side x grid_side grid, uniformly
/// without replacement.
Eigen::MatrixX2d gen_coords(int grid_side, int n, std::uint64_t seed);

/// Covariate paths on n_times equally spaced stamps of [0,1]: a uniform
/// random slope plus a zero-mean Gaussian process with covariance
/// exp(-|s-t|), sampled jointly through a jittered Cholesky factor.
std::vector<Path> gen_gp_paths(int n, int P, int n_times,
                               std::pair<double, double> slope_range,
                               std::uint64_t seed);

/// Outcome mean matrix theta for the chosen design. eta_out receives the raw
/// uniform feature weights (before per-column normalization).
Eigen::MatrixXd gen_theta(ThetaDesign design, const std::vector<Path>& paths_X,
                          const std::vector<Path>* paths_Z, int m_for_design, int Q,
                          std::uint64_t seed, Eigen::MatrixXd* eta_out = nullptr);

/// Solves vec(Y) = (I - R'⊗W)^{-1} vec(theta + e) with e_i ~ N(0, Sigma).
/// noise_out receives the drawn e.
Eigen::MatrixXd gen_response(const Eigen::MatrixXd& theta, const SpatialWeights& W,
                             const Eigen::MatrixXd& R, const Eigen::MatrixXd& Sigma,
                             std::uint64_t seed, Eigen::MatrixXd* noise_out = nullptr);

/// The three built-in 4x4 spatial effect matrices: weak, moderate, high.
Eigen::MatrixXd builtin_R(const std::string& name);

/// Compound-symmetric 4x4 noise covariance, 0.4 diagonal and 0.1 off.
Eigen::MatrixXd default_sigma();

/// Full dataset: coordinates, weights, covariates, theta, response. For the
/// terminal and mixed designs the emitted fitting paths stop one stamp short
/// of the horizon used by the generator.
SimDataset generate(const SimConfig& config);

}  // namespace mpenssar
