#include "mpenssar/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mpenssar/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary dumps assume a little-endian platform");

namespace mpenssar {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '+')) ++begin;
  double v = 0.0;
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw IoError("cannot parse number: '" + s + "'");
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, end - start)));
    start = end + 1;
  }
  return cells;
}

std::vector<double> split_doubles(const std::string& value) {
  std::vector<double> out;
  std::istringstream ss(value);
  std::string tok;
  while (ss >> tok) out.push_back(parse_double(tok));
  return out;
}

long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw IoError("cannot parse integer: '" + s + "'");
  return v;
}

}  // namespace

void KvDoc::set(const std::string& section, const std::string& key,
                std::string value) {
  for (auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (auto& [k, v] : entries) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries.emplace_back(key, std::move(value));
    return;
  }
  sections_.emplace_back(section, Section{{key, std::move(value)}});
}

void KvDoc::set_double(const std::string& section, const std::string& key, double v) {
  set(section, key, format_double(v));
}
void KvDoc::set_int(const std::string& section, const std::string& key, long long v) {
  set(section, key, std::to_string(v));
}
void KvDoc::set_u64(const std::string& section, const std::string& key,
                    std::uint64_t v) {
  set(section, key, std::to_string(v));
}
void KvDoc::set_bool(const std::string& section, const std::string& key, bool v) {
  set(section, key, v ? "true" : "false");
}

void KvDoc::set_matrix(const std::string& section, const std::string& key,
                       const Eigen::MatrixXd& m) {
  std::string value;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!value.empty()) value += ' ';
      value += format_double(m(i, j));
    }
  set(section, key, std::move(value));
}

const std::string* KvDoc::find(const std::string& section,
                               const std::string& key) const {
  for (const auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (const auto& [k, v] : entries)
      if (k == key) return &v;
  }
  return nullptr;
}

bool KvDoc::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string KvDoc::get(const std::string& section, const std::string& key) const {
  const std::string* v = find(section, key);
  if (!v) throw ConfigError("missing key [" + section + "] " + key);
  return *v;
}

std::string KvDoc::get_or(const std::string& section, const std::string& key,
                          std::string fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : std::move(fallback);
}

double KvDoc::get_double(const std::string& section, const std::string& key) const {
  try {
    return parse_double(get(section, key));
  } catch (const IoError& e) {
    throw ConfigError("key [" + section + "] " + key + ": " + e.what());
  }
}

long long KvDoc::get_int(const std::string& section, const std::string& key) const {
  try {
    return parse_int(get(section, key));
  } catch (const IoError& e) {
    throw ConfigError("key [" + section + "] " + key + ": " + e.what());
  }
}

std::uint64_t KvDoc::get_u64(const std::string& section, const std::string& key) const {
  const std::string t = trim(get(section, key));
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError("key [" + section + "] " + key + ": not an unsigned integer");
  return v;
}

bool KvDoc::get_bool(const std::string& section, const std::string& key) const {
  const std::string v = trim(get(section, key));
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key [" + section + "] " + key + ": expected true/false");
}

std::vector<double> KvDoc::get_doubles(const std::string& section,
                                       const std::string& key) const {
  try {
    return split_doubles(get(section, key));
  } catch (const IoError& e) {
    throw ConfigError("key [" + section + "] " + key + ": " + e.what());
  }
}

Eigen::MatrixXd KvDoc::get_matrix(const std::string& section, const std::string& key,
                                  int rows, int cols) const {
  const auto v = get_doubles(section, key);
  if (static_cast<int>(v.size()) != rows * cols)
    throw ConfigError("key [" + section + "] " + key + ": expected " +
                      std::to_string(rows * cols) + " entries, got " +
                      std::to_string(v.size()));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[i * cols + j];
  return m;
}

std::string KvDoc::serialize() const {
  std::string out;
  for (const auto& [name, entries] : sections_) {
    if (!out.empty()) out += '\n';
    out += '[' + name + "]\n";
    for (const auto& [k, v] : entries) out += k + " = " + v + '\n';
  }
  return out;
}

KvDoc KvDoc::parse(const std::string& text) {
  KvDoc doc;
  std::string section;
  int line_no = 0;
  for (const auto& raw : split_lines(text)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw IoError("line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw IoError("line " + std::to_string(line_no) + ": key before any [section]");
    doc.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return doc;
}

void KvDoc::save(const std::string& path) const { write_file(path, serialize()); }

KvDoc KvDoc::load(const std::string& path) {
  try {
    return parse(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_paths_csv(const std::string& path, const std::vector<Path>& paths) {
  if (paths.empty()) throw ConfigError("write_paths_csv: no paths");
  const int P = paths.front().channels();
  std::string out = "unit_id,t";
  for (int p = 1; p <= P; ++p) out += ",x" + std::to_string(p);
  out += '\n';
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (paths[i].channels() != P)
      throw ConfigError("write_paths_csv: channel mismatch across paths");
    for (int j = 0; j < paths[i].stamps(); ++j) {
      out += std::to_string(i + 1) + ',' + format_double(paths[i].times[j]);
      for (int p = 0; p < P; ++p)
        out += ',' + format_double(paths[i].values(j, p));
      out += '\n';
    }
  }
  write_file(path, out);
}

std::vector<Path> read_paths_csv(const std::string& path) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty()) throw IoError(path + ": empty file");
  const auto header = split_csv_row(lines[0]);
  if (header.size() < 3 || header[0] != "unit_id" || header[1] != "t")
    throw IoError(path + ": expected header unit_id,t,x1,...");
  const int P = static_cast<int>(header.size()) - 2;

  std::map<long long, std::vector<RawSample>> units;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_csv_row(lines[ln]);
    if (static_cast<int>(cells.size()) != P + 2)
      throw IoError(path + " line " + std::to_string(ln + 1) +
                    ": wrong cell count");
    RawSample s;
    s.time = parse_double(cells[1]);
    s.values.resize(P);
    for (int p = 0; p < P; ++p)
      if (!cells[p + 2].empty()) s.values[p] = parse_double(cells[p + 2]);
    units[parse_int(cells[0])].push_back(std::move(s));
  }
  if (units.empty()) throw IoError(path + ": no data rows");

  std::vector<Path> out;
  out.reserve(units.size());
  for (auto& [id, samples] : units) {
    try {
      out.push_back(interpolate_missing(std::move(samples)));
    } catch (const Error& e) {
      throw IoError(path + " unit " + std::to_string(id) + ": " + e.what());
    }
  }
  return out;
}

void write_coords_csv(const std::string& path, const Eigen::MatrixX2d& coords) {
  std::string out = "unit_id,sx,sy\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    out += std::to_string(i + 1) + ',' + format_double(coords(i, 0)) + ',' +
           format_double(coords(i, 1)) + '\n';
  write_file(path, out);
}

Eigen::MatrixX2d read_coords_csv(const std::string& path) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty() || split_csv_row(lines[0]) !=
                           std::vector<std::string>{"unit_id", "sx", "sy"})
    throw IoError(path + ": expected header unit_id,sx,sy");
  std::map<long long, std::pair<double, double>> rows;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_csv_row(lines[ln]);
    if (cells.size() != 3)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": wrong cell count");
    rows[parse_int(cells[0])] = {parse_double(cells[1]), parse_double(cells[2])};
  }
  Eigen::MatrixX2d coords(rows.size(), 2);
  Eigen::Index i = 0;
  for (const auto& [id, xy] : rows) {
    coords(i, 0) = xy.first;
    coords(i, 1) = xy.second;
    ++i;
  }
  return coords;
}

void write_response_csv(const std::string& path, const Eigen::MatrixXd& Y) {
  std::string out = "unit_id";
  for (Eigen::Index q = 1; q <= Y.cols(); ++q) out += ",y" + std::to_string(q);
  out += '\n';
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    out += std::to_string(i + 1);
    for (Eigen::Index q = 0; q < Y.cols(); ++q) out += ',' + format_double(Y(i, q));
    out += '\n';
  }
  write_file(path, out);
}

Eigen::MatrixXd read_response_csv(const std::string& path) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty()) throw IoError(path + ": empty file");
  const auto header = split_csv_row(lines[0]);
  if (header.size() < 2 || header[0] != "unit_id")
    throw IoError(path + ": expected header unit_id,y1,...");
  const int Q = static_cast<int>(header.size()) - 1;
  std::map<long long, std::vector<double>> rows;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_csv_row(lines[ln]);
    if (static_cast<int>(cells.size()) != Q + 1)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": wrong cell count");
    std::vector<double> v(Q);
    for (int q = 0; q < Q; ++q) v[q] = parse_double(cells[q + 1]);
    rows[parse_int(cells[0])] = std::move(v);
  }
  Eigen::MatrixXd Y(rows.size(), Q);
  Eigen::Index i = 0;
  for (const auto& [id, v] : rows) {
    for (int q = 0; q < Q; ++q) Y(i, q) = v[q];
    ++i;
  }
  return Y;
}

void write_weights_csv(const std::string& path, const SpatialWeights& W) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(W.entries.nonZeros());
  for (int j = 0; j < W.entries.outerSize(); ++j)
    for (Eigen::SparseMatrix<double>::InnerIterator it(W.entries, j); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  std::sort(trips.begin(), trips.end(), [](const auto& a, const auto& b) {
    return a.row() != b.row() ? a.row() < b.row() : a.col() < b.col();
  });
  std::string out = "i,j,w\n";
  for (const auto& t : trips)
    out += std::to_string(t.row() + 1) + ',' + std::to_string(t.col() + 1) + ',' +
           format_double(t.value()) + '\n';
  write_file(path, out);
}

SpatialWeights read_weights_csv(const std::string& path, int n, bool row_normalized) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty() ||
      split_csv_row(lines[0]) != std::vector<std::string>{"i", "j", "w"})
    throw IoError(path + ": expected header i,j,w");
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_csv_row(lines[ln]);
    if (cells.size() != 3)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": wrong cell count");
    const long long i = parse_int(cells[0]), j = parse_int(cells[1]);
    if (i < 1 || i > n || j < 1 || j > n)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": index out of range");
    trips.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1),
                       parse_double(cells[2]));
  }
  try {
    return weights_from_triplets(n, std::move(trips), row_normalized);
  } catch (const Error& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_split_csv(const std::string& path, const SplitPlan& plan) {
  std::string out = "unit_id,part\n";
  auto emit = [&](const std::vector<int>& idx, const char* part) {
    for (int i : idx) out += std::to_string(i + 1) + ',' + part + '\n';
  };
  emit(plan.train, "train");
  emit(plan.validation, "validation");
  emit(plan.test, "test");
  write_file(path, out);
}

SplitPlan read_split_csv(const std::string& path, int n) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty() ||
      split_csv_row(lines[0]) != std::vector<std::string>{"unit_id", "part"})
    throw IoError(path + ": expected header unit_id,part");
  SplitPlan plan;
  std::vector<bool> seen(n, false);
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_csv_row(lines[ln]);
    if (cells.size() != 2)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": wrong cell count");
    const long long id = parse_int(cells[0]);
    if (id < 1 || id > n)
      throw IoError(path + " line " + std::to_string(ln + 1) + ": unit out of range");
    if (seen[id - 1])
      throw IoError(path + " line " + std::to_string(ln + 1) + ": duplicate unit");
    seen[id - 1] = true;
    const int idx = static_cast<int>(id - 1);
    if (cells[1] == "train")
      plan.train.push_back(idx);
    else if (cells[1] == "validation")
      plan.validation.push_back(idx);
    else if (cells[1] == "test")
      plan.test.push_back(idx);
    else
      throw IoError(path + " line " + std::to_string(ln + 1) + ": unknown part '" +
                    cells[1] + "'");
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i]) throw IoError(path + ": unit " + std::to_string(i + 1) + " missing");
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.validation.begin(), plan.validation.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

void write_criterion_csv(const std::string& path,
                         const std::vector<CriterionRow>& table) {
  std::string out = "m,L_hat,pen,criterion\n";
  for (const auto& row : table)
    out += std::to_string(row.m) + ',' + format_double(row.L_hat) + ',' +
           format_double(row.pen) + ',' + format_double(row.criterion) + '\n';
  write_file(path, out);
}

void write_predictions_csv(const std::string& path, const std::vector<int>& unit_ids,
                           const Eigen::MatrixXd& Yhat) {
  if (static_cast<Eigen::Index>(unit_ids.size()) != Yhat.rows())
    throw ConfigError("write_predictions_csv: row mismatch");
  std::string out = "unit_id";
  for (Eigen::Index q = 1; q <= Yhat.cols(); ++q) out += ",yhat" + std::to_string(q);
  out += '\n';
  for (Eigen::Index i = 0; i < Yhat.rows(); ++i) {
    out += std::to_string(unit_ids[i] + 1);
    for (Eigen::Index q = 0; q < Yhat.cols(); ++q)
      out += ',' + format_double(Yhat(i, q));
    out += '\n';
  }
  write_file(path, out);
}

void write_sig_matrix(const std::string& path, const Eigen::MatrixXd& S) {
  const std::uint32_t n = static_cast<std::uint32_t>(S.rows());
  const std::uint32_t s = static_cast<std::uint32_t>(S.cols());
  std::string out;
  out.resize(8 + sizeof(double) * static_cast<std::size_t>(n) * s);
  std::memcpy(out.data(), &n, 4);
  std::memcpy(out.data() + 4, &s, 4);
  char* p = out.data() + 8;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < s; ++j) {
      const double v = S(i, j);
      std::memcpy(p, &v, sizeof(double));
      p += sizeof(double);
    }
  write_file(path, out);
}

Eigen::MatrixXd read_sig_matrix(const std::string& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 8) throw IoError(path + ": truncated header");
  std::uint32_t n = 0, s = 0;
  std::memcpy(&n, raw.data(), 4);
  std::memcpy(&s, raw.data() + 4, 4);
  const std::size_t expect = 8 + sizeof(double) * static_cast<std::size_t>(n) * s;
  if (raw.size() != expect) throw IoError(path + ": size does not match header");
  Eigen::MatrixXd S(n, s);
  const char* p = raw.data() + 8;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < s; ++j) {
      double v;
      std::memcpy(&v, p, sizeof(double));
      S(i, j) = v;
      p += sizeof(double);
    }
  return S;
}

namespace {

void fill_fit_doc(KvDoc& doc, const MpenssarFit& fit) {
  const int Q = fit.responses();
  const int s = static_cast<int>(fit.beta_hat.rows());
  doc.set_int("fit", "m", fit.m);
  doc.set_double("fit", "lambda", fit.lambda);
  doc.set_int("fit", "Q", Q);
  doc.set_int("fit", "s", s);
  doc.set_matrix("fit", "R_hat", fit.R_hat);
  doc.set_matrix("fit", "mu_hat", fit.mu_hat);
  doc.set_matrix("fit", "beta_hat", fit.beta_hat);
  doc.set_double("fit", "train_objective", fit.train_objective);
  doc.set_int("fit", "iterations", fit.diagnostics.iterations);
  doc.set_bool("fit", "converged", fit.diagnostics.converged);
  doc.set_double("fit", "projected_gradient_norm",
                 fit.diagnostics.projected_gradient_norm);
  doc.set_matrix("fit", "residual_cov", fit.diagnostics.residual_cov);
}

MpenssarFit fit_from_doc(const KvDoc& doc) {
  MpenssarFit fit;
  const int Q = static_cast<int>(doc.get_int("fit", "Q"));
  const int s = static_cast<int>(doc.get_int("fit", "s"));
  fit.m = static_cast<int>(doc.get_int("fit", "m"));
  fit.lambda = doc.get_double("fit", "lambda");
  fit.R_hat = doc.get_matrix("fit", "R_hat", Q, Q);
  fit.mu_hat = doc.get_matrix("fit", "mu_hat", 1, Q);
  fit.beta_hat = doc.get_matrix("fit", "beta_hat", s, Q);
  fit.train_objective = doc.get_double("fit", "train_objective");
  fit.diagnostics.iterations = static_cast<int>(doc.get_int("fit", "iterations"));
  fit.diagnostics.converged = doc.get_bool("fit", "converged");
  fit.diagnostics.projected_gradient_norm =
      doc.get_double("fit", "projected_gradient_norm");
  fit.diagnostics.residual_cov = doc.get_matrix("fit", "residual_cov", Q, Q);
  return fit;
}

}  // namespace

void write_fit(const std::string& path, const MpenssarFit& fit) {
  KvDoc doc;
  fill_fit_doc(doc, fit);
  doc.save(path);
}

MpenssarFit read_fit(const std::string& path) {
  return fit_from_doc(KvDoc::load(path));
}

void write_projssar_fit(const std::string& path, const ProjssarFit& fit) {
  KvDoc doc;
  fill_fit_doc(doc, fit.core);
  doc.set_int("projssar", "m", fit.m);
  doc.set_int("projssar", "components", fit.components);
  std::string kept;
  for (int j : fit.kept_cols) {
    if (!kept.empty()) kept += ' ';
    kept += std::to_string(j);
  }
  doc.set("projssar", "kept_cols", kept);
  doc.set_matrix("projssar", "col_mean", fit.col_mean.transpose());
  doc.set_matrix("projssar", "col_sd", fit.col_sd.transpose());
  doc.set_matrix("projssar", "loadings", fit.loadings);
  doc.save(path);
}

ProjssarFit read_projssar_fit(const std::string& path) {
  const KvDoc doc = KvDoc::load(path);
  ProjssarFit fit;
  fit.core = fit_from_doc(doc);
  fit.m = static_cast<int>(doc.get_int("projssar", "m"));
  fit.components = static_cast<int>(doc.get_int("projssar", "components"));
  std::istringstream ss(doc.get("projssar", "kept_cols"));
  long long v = 0;
  while (ss >> v) fit.kept_cols.push_back(static_cast<int>(v));
  const int kept = static_cast<int>(fit.kept_cols.size());
  fit.col_mean = doc.get_matrix("projssar", "col_mean", 1, kept).transpose();
  fit.col_sd = doc.get_matrix("projssar", "col_sd", 1, kept).transpose();
  fit.loadings = doc.get_matrix("projssar", "loadings", kept, fit.components);
  return fit;
}

}  // namespace mpenssar
