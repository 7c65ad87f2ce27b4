#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace mpenssar {

/// A sampled multivariate path: `values.row(j)` is the observation at
/// `times[j]`. Stamps are strictly increasing and everything is finite;
/// construct through `make` to get those checks.
struct Path {
  std::vector<double> times;
  Eigen::MatrixXd values;  // stamps x channels

  int stamps() const { return static_cast<int>(times.size()); }
  int channels() const { return static_cast<int>(values.cols()); }

  static Path make(std::vector<double> times, Eigen::MatrixXd values);
};

/// Path prepared for signature computation: a zero basepoint is prepended one
/// synthetic step before the first stamp, stamps are affinely rescaled to
/// [0,1], and the rescaled time is appended as an extra channel. Channel
/// count is therefore original + 1.
struct AugmentedPath {
  Path inner;
  int raw_channels = 0;
  bool basepointed = false;  // first value vector is exactly zero

  int channels() const { return inner.channels(); }
};

AugmentedPath augment(const Path& p);
std::vector<AugmentedPath> augment_all(const std::vector<Path>& paths);

/// Sum over segments of the Euclidean norm of the increment.
double total_variation(const Path& p);

/// One raw record: stamp plus per-channel readings, possibly missing.
struct RawSample {
  double time = 0.0;
  std::vector<std::optional<double>> values;
};

/// Assemble a Path from raw records sharing a channel count. Records are
/// sorted by stamp; interior gaps are filled by linear interpolation in time,
/// boundary gaps by the nearest observed value. A channel observed nowhere is
/// an error, as are duplicate stamps.
Path interpolate_missing(std::vector<RawSample> samples);

}  // namespace mpenssar
