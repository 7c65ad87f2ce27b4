#include "mpenssar/reference.hpp"

#include <cstdint>
#include <vector>

#include "mpenssar/errors.hpp"
#include "mpenssar/signature.hpp"

namespace mpenssar::reference {

namespace {

// Digits of a level-L lexicographic index, most significant first.
std::vector<int> decode(std::int64_t idx, int P, int L) {
  std::vector<int> d(L);
  for (int i = L - 1; i >= 0; --i) {
    d[i] = static_cast<int>(idx % P);
    idx /= P;
  }
  return d;
}

std::int64_t encode(const std::vector<int>& d, int first, int count, int P) {
  std::int64_t idx = 0;
  for (int i = 0; i < count; ++i) idx = idx * P + d[first + i];
  return idx;
}

}  // namespace

Eigen::VectorXd polyline_signature(const Path& p, int order) {
  if (order < 1) throw ConfigError("reference signature: order must be positive");
  const int P = p.channels();
  const std::int64_t dim = sig_dim(P, order, 0);

  std::vector<std::int64_t> off(order + 1, 0);
  for (int k = 1; k <= order; ++k) {
    std::int64_t pk = 1;
    for (int i = 0; i < k; ++i) pk *= P;
    off[k] = off[k - 1] + pk;
  }

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  for (int s = 1; s < p.stamps(); ++s) {
    const Eigen::VectorXd delta = p.values.row(s) - p.values.row(s - 1);

    // Closed-form signature of the single segment.
    Eigen::VectorXd seg(dim);
    for (int L = 1; L <= order; ++L) {
      double fact = 1.0;
      for (int i = 2; i <= L; ++i) fact *= i;
      for (std::int64_t u = 0; u < off[L] - off[L - 1]; ++u) {
        const auto digits = decode(u, P, L);
        double prod = 1.0;
        for (int i = 0; i < L; ++i) prod *= delta[digits[i]];
        seg[off[L - 1] + u] = prod / fact;
      }
    }

    if (s == 1) {
      acc = seg;
      continue;
    }

    // Chen relation, written out as the sum over all splits of the index.
    Eigen::VectorXd next(dim);
    for (int L = 1; L <= order; ++L) {
      for (std::int64_t u = 0; u < off[L] - off[L - 1]; ++u) {
        const auto digits = decode(u, P, L);
        double total = acc[off[L - 1] + u] + seg[off[L - 1] + u];
        for (int j = 1; j < L; ++j) {
          const std::int64_t left = encode(digits, 0, j, P);
          const std::int64_t right = encode(digits, j, L - j, P);
          total += acc[off[j - 1] + left] * seg[off[L - j - 1] + right];
        }
        next[off[L - 1] + u] = total;
      }
    }
    acc = next;
  }
  return acc;
}

}  // namespace mpenssar::reference
