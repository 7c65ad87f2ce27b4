#include "mpenssar/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mpenssar/errors.hpp"
#include "mpenssar/rng.hpp"

namespace mpenssar {

namespace {

constexpr std::uint64_t kStreamSplitOrdinary = 11;
constexpr std::uint64_t kStreamSplitSpatial = 12;

// Portable bounded draw (rejection sampling), so shuffles do not depend on
// library-specific distribution internals.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

void fisher_yates(std::vector<int>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

void check_coords(const Eigen::MatrixX2d& coords) {
  if (!coords.allFinite()) throw ConfigError("coordinates must be finite");
  if (coords.rows() < 2) throw ConfigError("need at least two units");
}

SpatialWeights finalize(int n, std::vector<Eigen::Triplet<double>> trips,
                        bool normalize) {
  if (normalize) {
    std::vector<double> row_sum(n, 0.0);
    for (const auto& t : trips) row_sum[t.row()] += t.value();
    for (auto& t : trips) {
      if (row_sum[t.row()] > 0.0)
        t = {t.row(), t.col(), t.value() / row_sum[t.row()]};
    }
  }
  return weights_from_triplets(n, std::move(trips), normalize);
}

}  // namespace

SpatialWeights weights_from_triplets(int n,
                                     std::vector<Eigen::Triplet<double>> trips,
                                     bool row_normalized) {
  if (n < 1) throw ConfigError("weights: need at least one unit");
  for (const auto& t : trips)
    if (t.row() < 0 || t.row() >= n || t.col() < 0 || t.col() >= n)
      throw ConfigError("weights: entry index out of range");
  SpatialWeights W;
  W.n = n;
  W.entries.resize(n, n);
  W.entries.setFromTriplets(trips.begin(), trips.end());
  W.entries.makeCompressed();
  W.row_normalized = row_normalized;

  std::vector<int> support(n, 0);
  for (int j = 0; j < W.entries.outerSize(); ++j) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it) {
      if (it.row() == it.col()) throw NumericError("weights: nonzero diagonal");
      if (it.value() < 0.0 || it.value() > 1.0)
        throw NumericError("weights: entry outside [0,1]");
      ++support[it.row()];
    }
  }
  W.max_neighbors =
      support.empty() ? 0 : *std::max_element(support.begin(), support.end());
  return W;
}

SpatialWeights subset_weights(const SpatialWeights& W, const std::vector<int>& units) {
  std::vector<int> pos(W.n, -1);
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (units[u] < 0 || units[u] >= W.n)
      throw ConfigError("subset_weights: unit index out of range");
    if (pos[units[u]] >= 0) throw ConfigError("subset_weights: duplicate unit");
    pos[units[u]] = static_cast<int>(u);
  }
  std::vector<Eigen::Triplet<double>> trips;
  for (int j = 0; j < W.entries.outerSize(); ++j) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it) {
      const int r = pos[it.row()];
      const int c = pos[it.col()];
      if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
    }
  }
  return weights_from_triplets(static_cast<int>(units.size()), std::move(trips), false);
}

SpatialWeights knn_weights(const Eigen::MatrixX2d& coords, int k, bool normalize) {
  check_coords(coords);
  const int n = static_cast<int>(coords.rows());
  if (k < 1) throw ConfigError("knn_weights: k must be positive");
  if (k >= n) throw ConfigError("knn_weights: k must be smaller than the unit count");

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * k);
  std::vector<std::pair<double, int>> cand(n - 1);
  for (int i = 0; i < n; ++i) {
    int c = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {(coords.row(i) - coords.row(j)).norm(), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int r = 0; r < k; ++r) trips.emplace_back(i, cand[r].second, 1.0);
  }
  return finalize(n, std::move(trips), normalize);
}

SpatialWeights inverse_distance_weights(const Eigen::MatrixX2d& coords,
                                        int min_neighbors, bool normalize) {
  check_coords(coords);
  const int n = static_cast<int>(coords.rows());
  if (min_neighbors < 1) throw ConfigError("inverse_distance_weights: min_neighbors must be positive");
  if (min_neighbors >= n)
    throw ConfigError("inverse_distance_weights: min_neighbors must be smaller than the unit count");

  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      d(i, j) = (coords.row(i) - coords.row(j)).norm();

  // g = the largest over units of the distance to the min_neighbors-th
  // nearest other unit; any admissible threshold must exceed it.
  double g = 0.0;
  std::vector<double> others(n - 1);
  for (int i = 0; i < n; ++i) {
    int c = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) others[c++] = d(i, j);
    std::nth_element(others.begin(), others.begin() + (min_neighbors - 1), others.end());
    g = std::max(g, others[min_neighbors - 1]);
  }
  if (g <= 0.0) throw ConfigError("inverse_distance_weights: degenerate geometry");

  double tau = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (d(i, j) > g) tau = std::min(tau, d(i, j));
  if (!std::isfinite(tau)) tau = std::nextafter(g, std::numeric_limits<double>::infinity());

  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && d(i, j) < tau)
        trips.emplace_back(i, j, 1.0 / (1.0 + d(i, j)));
  return finalize(n, std::move(trips), normalize);
}

SplitPlan split_ordinary(int n, const std::array<double, 3>& fractions,
                         std::uint64_t seed) {
  if (n < 3) throw ConfigError("split_ordinary: need at least three units");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split_ordinary: fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split_ordinary: fractions must sum to one");

  const int n_val = static_cast<int>(std::lround(n * fractions[1]));
  const int n_test = static_cast<int>(std::lround(n * fractions[2]));
  const int n_train = n - n_val - n_test;
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ConfigError("split_ordinary: a part is empty after rounding");

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, kStreamSplitOrdinary);
  fisher_yates(perm, rng);

  SplitPlan plan;
  plan.kind = SplitKind::ordinary;
  plan.seed = seed;
  plan.train.assign(perm.begin(), perm.begin() + n_train);
  plan.validation.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  plan.test.assign(perm.begin() + n_train + n_val, perm.end());
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.validation.begin(), plan.validation.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

namespace {

std::vector<int> kmeans_labels(const Eigen::MatrixX2d& coords, int K,
                               std::mt19937_64& rng) {
  const int n = static_cast<int>(coords.rows());
  Eigen::MatrixX2d centers(K, 2);

  // k-means++ seeding.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  centers.row(0) = coords.row(static_cast<int>(uniform_index(rng, n)));
  Eigen::VectorXd d2 = (coords.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < K; ++c) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      double target = unit(rng) * total, run = 0.0;
      for (int i = 0; i < n; ++i) {
        run += d2[i];
        if (run >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(uniform_index(rng, n));
    }
    centers.row(c) = coords.row(pick);
    d2 = d2.cwiseMin((coords.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> labels(n, 0);
  int repairs = 0;
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < K; ++c) {
        const double v = (coords.row(i) - centers.row(c)).squaredNorm();
        if (v < best) {
          best = v;
          labels[i] = c;
        }
      }
    }

    std::vector<int> count(K, 0);
    for (int l : labels) ++count[l];
    for (int c = 0; c < K; ++c) {
      if (count[c] > 0) continue;
      // Re-seed an empty cluster from the point farthest from its center.
      if (++repairs > K) throw NumericError("split_spatial: clustering failed");
      int far = 0;
      double best = -1.0;
      for (int i = 0; i < n; ++i) {
        const double v = (coords.row(i) - centers.row(labels[i])).squaredNorm();
        if (v > best && count[labels[i]] > 1) {
          best = v;
          far = i;
        }
      }
      --count[labels[far]];
      labels[far] = c;
      count[c] = 1;
    }

    Eigen::MatrixX2d next = Eigen::MatrixX2d::Zero(K, 2);
    for (int i = 0; i < n; ++i) next.row(labels[i]) += coords.row(i);
    for (int c = 0; c < K; ++c) next.row(c) /= count[c];
    const double move = (next - centers).rowwise().norm().maxCoeff();
    centers = next;
    if (move <= 1e-6) break;
  }
  return labels;
}

}  // namespace

SplitPlan split_spatial(const Eigen::MatrixX2d& coords, int K, std::uint64_t seed) {
  check_coords(coords);
  const int n = static_cast<int>(coords.rows());
  if (K < 3) throw ConfigError("split_spatial: need K >= 3");
  if (n < K) throw ConfigError("split_spatial: need at least K units");

  auto rng = make_rng(seed, kStreamSplitSpatial);
  const auto labels = kmeans_labels(coords, K, rng);

  const int val_cluster = static_cast<int>(uniform_index(rng, K));
  int test_cluster = static_cast<int>(uniform_index(rng, K - 1));
  if (test_cluster >= val_cluster) ++test_cluster;

  SplitPlan plan;
  plan.kind = SplitKind::spatial;
  plan.seed = seed;
  for (int i = 0; i < n; ++i) {
    if (labels[i] == val_cluster)
      plan.validation.push_back(i);
    else if (labels[i] == test_cluster)
      plan.test.push_back(i);
    else
      plan.train.push_back(i);
  }
  if (plan.train.empty() || plan.validation.empty() || plan.test.empty())
    throw NumericError("split_spatial: empty part");
  return plan;
}

Eigen::MatrixXd weight_block(const SpatialWeights& W, const std::vector<int>& rows,
                             const std::vector<int>& cols) {
  std::vector<int> col_pos(W.n, -1);
  for (std::size_t c = 0; c < cols.size(); ++c) col_pos[cols[c]] = static_cast<int>(c);
  std::vector<int> row_pos(W.n, -1);
  for (std::size_t r = 0; r < rows.size(); ++r) row_pos[rows[r]] = static_cast<int>(r);

  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(rows.size(), cols.size());
  for (int j = 0; j < W.entries.outerSize(); ++j) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it) {
      const int r = row_pos[it.row()];
      const int c = col_pos[it.col()];
      if (r >= 0 && c >= 0) block(r, c) = it.value();
    }
  }
  return block;
}

}  // namespace mpenssar
