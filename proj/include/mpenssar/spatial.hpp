#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cstdint>
#include <vector>

namespace mpenssar {

/// Sparse spatial weight matrix. Entries live in [0,1] with a zero diagonal;
/// max_neighbors is the largest row support.
struct SpatialWeights {
  int n = 0;
  Eigen::SparseMatrix<double> entries;
  bool row_normalized = false;
  int max_neighbors = 0;

  bool empty() const { return entries.nonZeros() == 0; }
};

/// W_{i,j} = 1 for the k nearest Euclidean neighbors of i, ties broken by the
/// smaller index; rows divided by their sum (= 1/k) when normalize is set.
SpatialWeights knn_weights(const Eigen::MatrixX2d& coords, int k, bool normalize);

/// Threshold weights W_{i,j} = 1/(1+d_{ij}) for d_{ij} < tau. tau is the
/// smallest pairwise-distance value leaving every unit with at least
/// min_neighbors others strictly inside it.
SpatialWeights inverse_distance_weights(const Eigen::MatrixX2d& coords,
                                        int min_neighbors, bool normalize);

enum class SplitKind { ordinary, spatial };

/// Disjoint, exhaustive train/validation/test partition of 0..n-1. Index
/// lists are kept sorted.
struct SplitPlan {
  std::vector<int> train, validation, test;
  SplitKind kind = SplitKind::ordinary;
  std::uint64_t seed = 0;
};

/// Uniformly random partition with sizes round(n*f) for validation and test;
/// training absorbs the remainder.
SplitPlan split_ordinary(int n, const std::array<double, 3>& fractions,
                         std::uint64_t seed);

/// K-means on the coordinates (k-means++ start, at most 100 iterations,
/// tolerance 1e-6 on center movement); two distinct clusters drawn at random
/// become validation and test, the rest train.
SplitPlan split_spatial(const Eigen::MatrixX2d& coords, int K, std::uint64_t seed);

/// Dense block W[rows, cols] of the weight matrix.
Eigen::MatrixXd weight_block(const SpatialWeights& W, const std::vector<int>& rows,
                             const std::vector<int>& cols);

/// Validated construction from explicit entries (used by file loaders).
SpatialWeights weights_from_triplets(int n,
                                     std::vector<Eigen::Triplet<double>> entries,
                                     bool row_normalized);

/// Restriction of W to the given units, reindexed in their order. Entries are
/// copied as they are; rows of a normalized matrix generally stop summing to
/// one, so the flag is cleared.
SpatialWeights subset_weights(const SpatialWeights& W, const std::vector<int>& units);

}  // namespace mpenssar
