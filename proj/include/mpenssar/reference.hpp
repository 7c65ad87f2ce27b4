#pragma once

#include <Eigen/Dense>

#include "mpenssar/path.hpp"

namespace mpenssar::reference {

/// Naive serial signature of a polyline, shifted level-major layout, same
/// contract as the optimized kernel. Coefficients are assembled from the
/// closed form for a single segment (product of increments over the
/// multi-index divided by level factorial) and a literal sum over all splits
/// of each multi-index when appending a segment. Slow on purpose; kept as an
/// independently coded comparison point for tests and benchmarks.
Eigen::VectorXd polyline_signature(const Path& p, int order);

}  // namespace mpenssar::reference
