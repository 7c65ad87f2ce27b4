#include "mpenssar/path.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mpenssar/errors.hpp"

namespace mpenssar {

Path Path::make(std::vector<double> times, Eigen::MatrixXd values) {
  if (times.size() < 2) throw ConfigError("path needs at least two stamps");
  if (static_cast<Eigen::Index>(times.size()) != values.rows())
    throw ConfigError("stamp count does not match value rows");
  if (values.cols() < 1) throw ConfigError("path needs at least one channel");
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!std::isfinite(times[j])) throw ConfigError("non-finite stamp");
    if (j > 0 && !(times[j] > times[j - 1]))
      throw ConfigError("stamps must be strictly increasing");
  }
  if (!values.allFinite()) throw ConfigError("non-finite path value");
  Path p;
  p.times = std::move(times);
  p.values = std::move(values);
  return p;
}

AugmentedPath augment(const Path& p) {
  if (p.stamps() < 2) throw ConfigError("augment: path needs at least two stamps");
  if (!p.values.allFinite()) throw ConfigError("augment: non-finite path value");
  const int n = p.stamps();
  const int P = p.channels();

  // Synthetic basepoint stamp sits one first-spacing before the first stamp.
  const double dt = p.times[1] - p.times[0];
  const double t0 = p.times[0] - dt;
  const double span = p.times[n - 1] - t0;

  std::vector<double> times(n + 1);
  times[0] = 0.0;
  for (int j = 0; j < n; ++j) times[j + 1] = (p.times[j] - t0) / span;
  times[n] = 1.0;  // pin the endpoint exactly

  Eigen::MatrixXd values = Eigen::MatrixXd::Zero(n + 1, P + 1);
  values.block(1, 0, n, P) = p.values;
  for (int j = 0; j <= n; ++j) values(j, P) = times[j];

  AugmentedPath ap;
  ap.inner = Path::make(std::move(times), std::move(values));
  ap.raw_channels = P;
  ap.basepointed = true;
  return ap;
}

std::vector<AugmentedPath> augment_all(const std::vector<Path>& paths) {
  std::vector<AugmentedPath> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(augment(p));
  return out;
}

double total_variation(const Path& p) {
  double tv = 0.0;
  for (int j = 1; j < p.stamps(); ++j)
    tv += (p.values.row(j) - p.values.row(j - 1)).norm();
  return tv;
}

Path interpolate_missing(std::vector<RawSample> samples) {
  if (samples.size() < 2) throw ConfigError("need at least two samples");
  const std::size_t P = samples.front().values.size();
  if (P == 0) throw ConfigError("samples carry no channels");
  for (const auto& s : samples)
    if (s.values.size() != P) throw ConfigError("inconsistent channel count across samples");

  std::sort(samples.begin(), samples.end(),
            [](const RawSample& a, const RawSample& b) { return a.time < b.time; });
  for (std::size_t j = 1; j < samples.size(); ++j)
    if (!(samples[j].time > samples[j - 1].time))
      throw ConfigError("duplicate stamp in samples");

  const int n = static_cast<int>(samples.size());
  Eigen::MatrixXd values(n, static_cast<int>(P));
  std::vector<double> times(n);
  for (int j = 0; j < n; ++j) times[j] = samples[j].time;

  for (std::size_t p = 0; p < P; ++p) {
    std::vector<int> seen;
    for (int j = 0; j < n; ++j)
      if (samples[j].values[p].has_value()) seen.push_back(j);
    if (seen.size() < 2)
      throw ConfigError("channel " + std::to_string(p + 1) +
                        " has fewer than two observed values");
    for (int j = 0; j < n; ++j) {
      if (samples[j].values[p]) {
        values(j, p) = *samples[j].values[p];
        continue;
      }
      auto it = std::lower_bound(seen.begin(), seen.end(), j);
      if (it == seen.begin()) {
        values(j, p) = *samples[*it].values[p];  // leading gap: carry backward
      } else if (it == seen.end()) {
        values(j, p) = *samples[*(it - 1)].values[p];  // trailing gap: carry forward
      } else {
        const int hi = *it, lo = *(it - 1);
        const double w = (times[j] - times[lo]) / (times[hi] - times[lo]);
        values(j, p) =
            (1.0 - w) * *samples[lo].values[p] + w * *samples[hi].values[p];
      }
    }
  }
  return Path::make(std::move(times), std::move(values));
}

}  // namespace mpenssar
