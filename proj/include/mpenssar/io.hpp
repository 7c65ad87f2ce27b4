#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpenssar/estimator.hpp"
#include "mpenssar/path.hpp"
#include "mpenssar/selection.hpp"
#include "mpenssar/spatial.hpp"

namespace mpenssar {

/// Shortest decimal representation that round-trips the double exactly.
std::string format_double(double v);
double parse_double(const std::string& s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
void ensure_dir(const std::string& path);

/// Flat key/value document with named sections; the format behind configs,
/// manifests, fit files, and reports. Lines are `key = value`; sections open
/// with `[name]`; `#` starts a comment. Values keep everything after the
/// first `=` (trimmed), so vectors are stored space-separated on one line.
class KvDoc {
 public:
  void set(const std::string& section, const std::string& key, std::string value);
  void set_double(const std::string& section, const std::string& key, double v);
  void set_int(const std::string& section, const std::string& key, long long v);
  void set_u64(const std::string& section, const std::string& key, std::uint64_t v);
  void set_bool(const std::string& section, const std::string& key, bool v);
  void set_matrix(const std::string& section, const std::string& key,
                  const Eigen::MatrixXd& m);  // row-major entries

  bool has(const std::string& section, const std::string& key) const;
  const std::string* find(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     std::string fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  long long get_int(const std::string& section, const std::string& key) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  Eigen::MatrixXd get_matrix(const std::string& section, const std::string& key,
                             int rows, int cols) const;
  std::vector<double> get_doubles(const std::string& section,
                                  const std::string& key) const;

  std::string serialize() const;
  static KvDoc parse(const std::string& text);
  void save(const std::string& path) const;
  static KvDoc load(const std::string& path);

 private:
  using Section = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Section>> sections_;
};

// Covariate paths: header unit_id,t,x1..xP, one row per stamp, empty cell =
// missing value. Units come back sorted by id; gaps are filled by the path
// interpolation rules.
void write_paths_csv(const std::string& path, const std::vector<Path>& paths);
std::vector<Path> read_paths_csv(const std::string& path);

void write_coords_csv(const std::string& path, const Eigen::MatrixX2d& coords);
Eigen::MatrixX2d read_coords_csv(const std::string& path);

// Responses: header unit_id,y1..yQ.
void write_response_csv(const std::string& path, const Eigen::MatrixXd& Y);
Eigen::MatrixXd read_response_csv(const std::string& path);

// Weights as 1-based COO triples i,j,w.
void write_weights_csv(const std::string& path, const SpatialWeights& W);
SpatialWeights read_weights_csv(const std::string& path, int n,
                                bool row_normalized = false);

void write_split_csv(const std::string& path, const SplitPlan& plan);
SplitPlan read_split_csv(const std::string& path, int n);

void write_criterion_csv(const std::string& path,
                         const std::vector<CriterionRow>& table);

void write_predictions_csv(const std::string& path, const std::vector<int>& unit_ids,
                           const Eigen::MatrixXd& Yhat);

// Raw binary dump: two little-endian uint32 (rows, cols), then row-major
// little-endian doubles.
void write_sig_matrix(const std::string& path, const Eigen::MatrixXd& S);
Eigen::MatrixXd read_sig_matrix(const std::string& path);

// Lossless structured-text round trip of fits.
void write_fit(const std::string& path, const MpenssarFit& fit);
MpenssarFit read_fit(const std::string& path);
void write_projssar_fit(const std::string& path, const ProjssarFit& fit);
ProjssarFit read_projssar_fit(const std::string& path);

}  // namespace mpenssar
