#include "mpenssar/signature.hpp"

#include <limits>

#include "mpenssar/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mpenssar {

std::int64_t sig_dim(int P, int m, std::int64_t cap) {
  if (P < 1) throw ConfigError("sig_dim: need at least one channel");
  if (m < 0) throw ConfigError("sig_dim: negative order");
  constexpr std::int64_t kLimit = std::numeric_limits<std::int64_t>::max() / 4;
  std::int64_t total = 0, pk = 1;
  for (int k = 1; k <= m; ++k) {
    if (pk > kLimit / P) throw NumericError("sig_dim: coefficient count overflows");
    pk *= P;
    total += pk;
    if (cap > 0 && total > cap)
      throw ConfigError("sig_dim: coefficient count exceeds cap");
  }
  return total;
}

namespace {

// Offsets of the level blocks inside a shifted level-major vector:
// level k occupies [off[k-1], off[k-1] + P^k).
std::vector<std::int64_t> level_offsets(int P, int m) {
  std::vector<std::int64_t> off(m + 1, 0);
  std::int64_t pk = 1;
  for (int k = 1; k <= m; ++k) {
    pk *= P;
    off[k] = off[k - 1] + pk;
  }
  return off;
}

// Tensor exponential of a single increment, truncated at order m:
// level k = delta^{(x) k} / k!.
void segment_exp(const Eigen::VectorXd& delta, int m,
                 const std::vector<std::int64_t>& off, Eigen::VectorXd& out) {
  const int P = static_cast<int>(delta.size());
  out.segment(0, P) = delta;
  std::int64_t prev_size = P;
  for (int k = 2; k <= m; ++k) {
    const double* prev = out.data() + off[k - 2];
    double* cur = out.data() + off[k - 1];
    const double inv_k = 1.0 / k;
    for (std::int64_t u = 0; u < prev_size; ++u) {
      const double a = prev[u] * inv_k;
      double* row = cur + u * P;
      for (int c = 0; c < P; ++c) row[c] = a * delta[c];
    }
    prev_size *= P;
  }
}

// In-place Chen combination acc := acc (x) seg over the truncated algebra.
// Levels are updated top-down so the lower levels of acc read on the right
// hand side are still the pre-update values.
void concat_inplace(Eigen::VectorXd& acc, const Eigen::VectorXd& seg, int P, int m,
                    const std::vector<std::int64_t>& off) {
  for (int L = m; L >= 1; --L) {
    double* out = acc.data() + off[L - 1];
    for (int j = L - 1; j >= 1; --j) {
      const double* a = acc.data() + off[j - 1];
      const double* b = seg.data() + off[L - j - 1];
      const std::int64_t an = off[j] - off[j - 1];
      const std::int64_t bn = off[L - j] - off[L - j - 1];
      for (std::int64_t u = 0; u < an; ++u) {
        const double av = a[u];
        if (av == 0.0) continue;
        double* row = out + u * bn;
        for (std::int64_t v = 0; v < bn; ++v) row[v] += av * b[v];
      }
    }
    const double* b = seg.data() + off[L - 1];
    const std::int64_t bn = off[L] - off[L - 1];
    for (std::int64_t v = 0; v < bn; ++v) out[v] += b[v];
  }
}

}  // namespace

SigVector polyline_signature(const Path& p, int order, std::int64_t cap) {
  if (order < 1) throw ConfigError("signature: order must be positive");
  const int P = p.channels();
  const std::int64_t dim = sig_dim(P, order, cap);
  const auto off = level_offsets(P, order);

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd seg(dim);
  for (int j = 1; j < p.stamps(); ++j) {
    const Eigen::VectorXd delta = p.values.row(j) - p.values.row(j - 1);
    segment_exp(delta, order, off, seg);
    if (j == 1) {
      acc = seg;
    } else {
      concat_inplace(acc, seg, P, order, off);
    }
  }
  SigVector s;
  s.channels = P;
  s.order = order;
  s.coeffs = std::move(acc);
  return s;
}

SigVector signature(const AugmentedPath& path, int order, std::int64_t cap) {
  return polyline_signature(path.inner, order, cap);
}

SigVector with_unit(const SigVector& s) {
  if (s.includes_unit) throw ConfigError("with_unit: vector already carries the unit");
  SigVector out;
  out.channels = s.channels;
  out.order = s.order;
  out.includes_unit = true;
  out.coeffs.resize(s.coeffs.size() + 1);
  out.coeffs[0] = 1.0;
  out.coeffs.tail(s.coeffs.size()) = s.coeffs;
  return out;
}

SigVector chen_product(const SigVector& a, const SigVector& b) {
  if (a.channels != b.channels) throw ConfigError("chen_product: channel mismatch");
  if (a.order != b.order) throw ConfigError("chen_product: order mismatch");
  if (a.includes_unit || b.includes_unit)
    throw ConfigError("chen_product: expects shifted vectors");
  const int P = a.channels;
  const int m = a.order;
  const auto off = level_offsets(P, m);
  SigVector out;
  out.channels = P;
  out.order = m;
  out.coeffs = a.coeffs;
  concat_inplace(out.coeffs, b.coeffs, P, m, off);
  return out;
}

Eigen::MatrixXd sig_matrix(const std::vector<AugmentedPath>& paths, int order,
                           std::int64_t cap) {
  if (paths.empty()) throw ConfigError("sig_matrix: no paths");
  const int P = paths.front().channels();
  for (const auto& ap : paths)
    if (ap.channels() != P) throw ConfigError("sig_matrix: channel mismatch across paths");
  const std::int64_t dim = sig_dim(P, order, cap);

  const int n = static_cast<int>(paths.size());
  Eigen::MatrixXd S(n, dim);
  bool failed = false;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    try {
      S.row(i) = signature(paths[i], order, cap).coeffs.transpose();
    } catch (...) {
#pragma omp critical
      failed = true;
    }
  }
  if (failed) throw NumericError("sig_matrix: signature computation failed");
  return S;
}

SigDesignCache SigDesignCache::build(const std::vector<AugmentedPath>& paths,
                                     int max_order, std::int64_t cap) {
  SigDesignCache c;
  if (max_order < 1) throw ConfigError("design cache: order must be positive");
  c.full_ = sig_matrix(paths, max_order, cap);
  c.channels_ = paths.front().channels();
  c.max_order_ = max_order;
  return c;
}

Eigen::Ref<const Eigen::MatrixXd> SigDesignCache::shifted(int order) const {
  if (order < 1 || order > max_order_)
    throw ConfigError("design cache: order out of range");
  return full_.leftCols(sig_dim(channels_, order));
}

}  // namespace mpenssar
