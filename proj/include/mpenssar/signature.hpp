#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mpenssar/path.hpp"

namespace mpenssar {

/// Number of coefficients in the truncated signature with the constant level
/// dropped: sum over k=1..m of P^k. Throws when the count would overflow or
/// exceed `cap` (cap <= 0 disables the cap check).
std::int64_t sig_dim(int P, int m, std::int64_t cap = 0);

/// Truncated signature with the leading 1 removed. Coefficients are stored
/// level-major: all P^1 level-1 entries, then the P^2 level-2 entries in
/// lexicographic multi-index order, and so on. Truncating at a lower order is
/// therefore a prefix of this vector.
struct SigVector {
  int channels = 0;
  int order = 0;
  bool includes_unit = false;
  Eigen::VectorXd coeffs;
};

/// Prepends the constant 1, turning the shifted vector into the full one.
SigVector with_unit(const SigVector& s);

/// Signature of the piecewise linear interpolation of the augmented path,
/// truncated at `order`. Each segment contributes its tensor exponential;
/// segments are combined multiplicatively.
SigVector signature(const AugmentedPath& path, int order, std::int64_t cap = 10000);

/// Same computation on a bare polyline, without any augmentation convention.
SigVector polyline_signature(const Path& p, int order, std::int64_t cap = 10000);

/// Truncated tensor-algebra product of the unit-extended inputs, with the
/// unit dropped again from the result. This is exactly how the signature of a
/// concatenated path decomposes into the signatures of its halves.
SigVector chen_product(const SigVector& a, const SigVector& b);

/// Row i is the shifted signature of paths[i]. All paths must share a channel
/// count. Rows are independent, so they are filled in parallel.
Eigen::MatrixXd sig_matrix(const std::vector<AugmentedPath>& paths, int order,
                           std::int64_t cap = 10000);

/// Signature matrix held at the largest order of interest; because storage is
/// level-major, the matrix truncated at any lower order is a column prefix.
/// Lets order-selection sweeps reuse one computation.
class SigDesignCache {
 public:
  static SigDesignCache build(const std::vector<AugmentedPath>& paths, int max_order,
                              std::int64_t cap = 10000);

  int channels() const { return channels_; }
  int max_order() const { return max_order_; }
  int rows() const { return static_cast<int>(full_.rows()); }

  /// Column prefix for the given order (1 <= order <= max_order()).
  Eigen::Ref<const Eigen::MatrixXd> shifted(int order) const;

 private:
  int channels_ = 0;
  int max_order_ = 0;
  Eigen::MatrixXd full_;
};

}  // namespace mpenssar
