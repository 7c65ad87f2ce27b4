// Timing comparison for the signature kernels: the naive serial reference,
// the optimized kernel on one thread, and the parallel batch entry point.
// Prints one line per configuration with throughput in paths per second.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "mpenssar/path.hpp"
#include "mpenssar/reference.hpp"
#include "mpenssar/signature.hpp"

using namespace mpenssar;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<Path> make_paths(int n, int channels, int segments, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Path> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> times(segments + 1);
    for (int j = 0; j <= segments; ++j) times[j] = static_cast<double>(j);
    Eigen::MatrixXd values(segments + 1, channels);
    for (int j = 0; j <= segments; ++j)
      for (int c = 0; c < channels; ++c) values(j, c) = u(rng);
    out.push_back(Path::make(std::move(times), std::move(values)));
  }
  return out;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

int main() {
  struct Config {
    int n, channels, segments, order;
  };
  const Config configs[] = {
      {200, 2, 50, 3},
      {200, 3, 50, 4},
      {500, 3, 100, 4},
      {200, 4, 100, 5},
  };

  std::printf("%6s %3s %5s %3s | %12s %12s %12s | %7s %8s\n", "paths", "ch",
              "segs", "m", "reference/s", "kernel-1t/s", "parallel/s", "thr",
              "speedup");

  for (const Config& cfg : configs) {
    const auto paths = make_paths(cfg.n, cfg.channels, cfg.segments, 42);
    std::vector<AugmentedPath> aug = augment_all(paths);

    // Reference implementation, serial by construction. Timed on a subset
    // when slow, then scaled to a rate.
    const int ref_n = std::min(cfg.n, 50);
    auto t0 = Clock::now();
    volatile double sink = 0.0;
    for (int i = 0; i < ref_n; ++i)
      sink += reference::polyline_signature(aug[i].inner, cfg.order).sum();
    const double ref_rate = ref_n / seconds_since(t0);

    // Optimized kernel, one path at a time on the calling thread.
    t0 = Clock::now();
    for (int i = 0; i < cfg.n; ++i)
      sink += polyline_signature(aug[i].inner, cfg.order, 0).coeffs.sum();
    const double one_rate = cfg.n / seconds_since(t0);

    // Batch entry point, parallel across paths.
    t0 = Clock::now();
    sink += sig_matrix(aug, cfg.order, 0).sum();
    const double par_rate = cfg.n / seconds_since(t0);

    std::printf("%6d %3d %5d %3d | %12.0f %12.0f %12.0f | %7d %7.2fx\n", cfg.n,
                cfg.channels, cfg.segments, cfg.order, ref_rate, one_rate,
                par_rate, omp_get_max_threads(), par_rate / one_rate);
    (void)sink;
  }
  return 0;
}
