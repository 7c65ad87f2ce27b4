#include "mpenssar/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpenssar/errors.hpp"
#include "mpenssar/estimator.hpp"
#include "mpenssar/io.hpp"
#include "mpenssar/rng.hpp"
#include "mpenssar/selection.hpp"
#include "mpenssar/simulation.hpp"
#include "mpenssar/spatial.hpp"
#include "mpenssar/version.hpp"

namespace mpenssar::cli {
namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

/// Run record written to <out>/manifest.txt. The manifest lands with
/// status = running before any result file, so an interrupted run is
/// detectable; finish() rewrites it completed with elapsed time and the
/// artifact list.
class RunLog {
 public:
  RunLog(std::string out_dir, const std::string& command)
      : dir_(std::move(out_dir)), t0_(std::chrono::steady_clock::now()) {
    ensure_dir(dir_);
    doc_.set("run", "command", command);
    doc_.set("run", "version", kVersion);
  }

  KvDoc& doc() { return doc_; }

  void add_artifact(const std::string& name) { artifacts_.push_back(name); }

  void start() {
    doc_.set("run", "status", "running");
    doc_.save(join(dir_, "manifest.txt"));
  }

  void finish() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0_;
    doc_.set("run", "status", "completed");
    doc_.set_double("run", "elapsed_seconds", dt.count());
    std::string files;
    for (const auto& a : artifacts_) {
      if (!files.empty()) files += ' ';
      files += a;
    }
    doc_.set("artifacts", "files", files);
    doc_.save(join(dir_, "manifest.txt"));
  }

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  KvDoc doc_;
  std::vector<std::string> artifacts_;
  std::chrono::steady_clock::time_point t0_;
};

// ---------------------------------------------------------------------------
// bundle plumbing

struct Bundle {
  Eigen::MatrixX2d coords;
  std::vector<Path> paths;
  Eigen::MatrixXd Y;
  SpatialWeights W;
  bool has_truth = false;
  KvDoc truth;
  int n = 0, Q = 0;
};

Bundle load_bundle(const std::string& dir) {
  Bundle b;
  b.coords = read_coords_csv(join(dir, "coords.csv"));
  b.paths = read_paths_csv(join(dir, "paths.csv"));
  b.Y = read_response_csv(join(dir, "response.csv"));
  b.n = static_cast<int>(b.Y.rows());
  b.Q = static_cast<int>(b.Y.cols());
  if (static_cast<int>(b.paths.size()) != b.n || b.coords.rows() != b.n)
    throw ConfigError("bundle " + dir + ": unit counts disagree across files");
  bool row_norm = false;
  const std::string truth_path = join(dir, "truth.txt");
  if (std::filesystem::exists(truth_path)) {
    b.truth = KvDoc::load(truth_path);
    b.has_truth = true;
    if (b.truth.has("truth", "row_normalize"))
      row_norm = b.truth.get_bool("truth", "row_normalize");
  }
  b.W = read_weights_csv(join(dir, "weights.csv"), b.n, row_norm);
  return b;
}

void write_bundle(const std::string& dir, const SimDataset& ds, RunLog* log) {
  ensure_dir(dir);
  write_coords_csv(join(dir, "coords.csv"), ds.coords);
  write_paths_csv(join(dir, "paths.csv"), ds.paths_fit);
  write_response_csv(join(dir, "response.csv"), ds.Y);
  write_weights_csv(join(dir, "weights.csv"), ds.W);
  KvDoc truth;
  truth.set("truth", "design", to_string(ds.config.design));
  truth.set_u64("truth", "seed", ds.config.seed);
  truth.set_int("truth", "grid_side", ds.config.grid_side);
  truth.set_int("truth", "n", ds.config.n);
  truth.set_int("truth", "P", ds.config.P);
  truth.set_int("truth", "Q", ds.config.Q);
  truth.set_int("truth", "n_times", ds.config.n_times);
  truth.set_int("truth", "m_for_design", ds.config.m_for_design);
  truth.set_int("truth", "knn_k", ds.config.knn_k);
  truth.set_bool("truth", "row_normalize", ds.config.row_normalize);
  truth.set_matrix("truth", "R", ds.config.R);
  truth.set_matrix("truth", "Sigma", ds.config.Sigma);
  truth.set_matrix("truth", "eta", ds.eta);
  truth.save(join(dir, "truth.txt"));
  if (log)
    for (const char* f :
         {"coords.csv", "paths.csv", "response.csv", "weights.csv", "truth.txt"})
      log->add_artifact(f);
}

std::vector<AugmentedPath> gather(const std::vector<AugmentedPath>& all,
                                  const std::vector<int>& idx) {
  std::vector<AugmentedPath> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[i]);
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& Y, const std::vector<int>& idx) {
  Eigen::MatrixXd out(idx.size(), Y.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = Y.row(idx[r]);
  return out;
}

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double pooled_rmse(const Eigen::MatrixXd& diff) {
  return std::sqrt(diff.squaredNorm() / diff.size());
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int reps = 0;  // 0 = from config, default 1
};

SimConfig sim_config_from_doc(const KvDoc& doc) {
  SimConfig cfg;
  const std::string sec = "simulate";
  if (doc.has(sec, "design"))
    cfg.design = theta_design_from_string(doc.get(sec, "design"));
  if (doc.has(sec, "grid_side")) cfg.grid_side = static_cast<int>(doc.get_int(sec, "grid_side"));
  if (doc.has(sec, "n")) cfg.n = static_cast<int>(doc.get_int(sec, "n"));
  if (doc.has(sec, "P")) cfg.P = static_cast<int>(doc.get_int(sec, "P"));
  if (doc.has(sec, "Q")) cfg.Q = static_cast<int>(doc.get_int(sec, "Q"));
  if (doc.has(sec, "n_times")) cfg.n_times = static_cast<int>(doc.get_int(sec, "n_times"));
  if (doc.has(sec, "m_for_design"))
    cfg.m_for_design = static_cast<int>(doc.get_int(sec, "m_for_design"));
  if (doc.has(sec, "seed")) cfg.seed = doc.get_u64(sec, "seed");
  if (doc.has(sec, "knn_k")) cfg.knn_k = static_cast<int>(doc.get_int(sec, "knn_k"));
  if (doc.has(sec, "row_normalize")) cfg.row_normalize = doc.get_bool(sec, "row_normalize");

  if (doc.has(sec, "R") && doc.has(sec, "R_values"))
    throw ConfigError("simulate config: give R or R_values, not both");
  if (doc.has(sec, "R"))
    cfg.R = builtin_R(doc.get(sec, "R"));
  else if (doc.has(sec, "R_values"))
    cfg.R = doc.get_matrix(sec, "R_values", cfg.Q, cfg.Q);
  else if (cfg.Q == 4)
    cfg.R = builtin_R("weak");
  else
    throw ConfigError("simulate config: R_values required when Q != 4");

  if (doc.has(sec, "Sigma_values"))
    cfg.Sigma = doc.get_matrix(sec, "Sigma_values", cfg.Q, cfg.Q);
  else if (cfg.Q == 4)
    cfg.Sigma = default_sigma();
  else
    throw ConfigError("simulate config: Sigma_values required when Q != 4");
  return cfg;
}

int cmd_simulate(const SimulateArgs& args) {
  KvDoc doc;
  if (!args.config.empty()) doc = KvDoc::load(args.config);
  SimConfig cfg = sim_config_from_doc(doc);
  if (args.seed_given) cfg.seed = args.seed;
  int reps = args.reps;
  if (reps <= 0)
    reps = doc.has("simulate", "reps")
               ? static_cast<int>(doc.get_int("simulate", "reps"))
               : 1;
  if (reps < 1) throw ConfigError("simulate: reps must be >= 1");

  RunLog log(args.out, "simulate");
  KvDoc& m = log.doc();
  m.set("config", "design", to_string(cfg.design));
  m.set_int("config", "grid_side", cfg.grid_side);
  m.set_int("config", "n", cfg.n);
  m.set_int("config", "P", cfg.P);
  m.set_int("config", "Q", cfg.Q);
  m.set_int("config", "n_times", cfg.n_times);
  m.set_int("config", "m_for_design", cfg.m_for_design);
  m.set_u64("config", "seed", cfg.seed);
  m.set_int("config", "knn_k", cfg.knn_k);
  m.set_bool("config", "row_normalize", cfg.row_normalize);
  m.set_matrix("config", "R", cfg.R);
  m.set_matrix("config", "Sigma", cfg.Sigma);
  m.set_int("config", "reps", reps);
  log.start();

  if (reps == 1) {
    write_bundle(args.out, generate(cfg), &log);
  } else {
    for (int r = 1; r <= reps; ++r) {
      SimConfig rc = cfg;
      rc.seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(r));
      char name[32];
      std::snprintf(name, sizeof(name), "rep_%03d", r);
      write_bundle(join(args.out, name), generate(rc), nullptr);
      log.add_artifact(name);
    }
  }
  log.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string method = "mpenssar";
  std::string split = "ov";
  int m = 0;             // 0 = select / sweep
  double lambda = -1.0;  // < 0 = grid
  std::string kpen = "auto";
  double kappa = 0.4;
  std::uint64_t seed = 0;
};

struct FitSettings {
  std::vector<double> fractions{0.5, 0.25, 0.25};
  int kmeans_K = 6;
  std::vector<double> lambda_grid;
  int m_max = 0;  // 0 = auto from dim_cap
  std::int64_t dim_cap = 10000;
  double inertia = 0.95;
};

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int e = -6; e <= 2; ++e) g.push_back(std::pow(10.0, e));
  return g;
}

FitSettings fit_settings_from_doc(const KvDoc& doc) {
  FitSettings fs;
  const std::string sec = "fit";
  if (doc.has(sec, "fractions")) {
    fs.fractions = doc.get_doubles(sec, "fractions");
    if (fs.fractions.size() != 3)
      throw ConfigError("fit config: fractions needs 3 values");
  }
  if (doc.has(sec, "kmeans_K")) fs.kmeans_K = static_cast<int>(doc.get_int(sec, "kmeans_K"));
  if (doc.has(sec, "lambda_grid")) fs.lambda_grid = doc.get_doubles(sec, "lambda_grid");
  if (fs.lambda_grid.empty()) fs.lambda_grid = default_lambda_grid();
  if (doc.has(sec, "m_max")) fs.m_max = static_cast<int>(doc.get_int(sec, "m_max"));
  if (doc.has(sec, "dim_cap")) fs.dim_cap = doc.get_int(sec, "dim_cap");
  if (doc.has(sec, "inertia")) fs.inertia = doc.get_double(sec, "inertia");
  return fs;
}

struct FitContext {
  SplitPlan plan;
  std::vector<AugmentedPath> tr, va;
  Eigen::MatrixXd Y_tr, Y_va;
  SpatialWeights W_tr, W_vactx;
  int n_tr = 0, P_aug = 0;
};

FitContext make_fit_context(const Bundle& b, const FitArgs& args,
                            const FitSettings& fs) {
  FitContext cx;
  if (args.split == "ov") {
    cx.plan = split_ordinary(
        b.n, {fs.fractions[0], fs.fractions[1], fs.fractions[2]}, args.seed);
  } else if (args.split == "sv") {
    cx.plan = split_spatial(b.coords, fs.kmeans_K, args.seed);
  } else {
    throw ConfigError("--split must be ov or sv");
  }
  const auto aug = augment_all(b.paths);
  cx.tr = gather(aug, cx.plan.train);
  cx.va = gather(aug, cx.plan.validation);
  cx.Y_tr = take_rows(b.Y, cx.plan.train);
  cx.Y_va = take_rows(b.Y, cx.plan.validation);
  cx.W_tr = subset_weights(b.W, cx.plan.train);
  cx.W_vactx = subset_weights(b.W, concat(cx.plan.train, cx.plan.validation));
  cx.n_tr = static_cast<int>(cx.plan.train.size());
  cx.P_aug = cx.tr.front().channels();
  return cx;
}

void run_fit_mpenssar(const FitContext& cx, const FitArgs& args,
                      const FitSettings& fs, RunLog& log) {
  const bool kpen_auto = args.kpen == "auto";
  double kpen_value = 0.0;
  if (!kpen_auto) {
    try {
      kpen_value = parse_double(args.kpen);
    } catch (const IoError&) {
      throw ConfigError("--kpen must be 'auto' or a number");
    }
  }

  const int m_max =
      args.m > 0 ? args.m
                 : (fs.m_max > 0 ? fs.m_max : default_max_order(cx.P_aug, fs.dim_cap));
  const std::int64_t cap = args.m > 0 ? 0 : fs.dim_cap;
  const auto cache_tr = SigDesignCache::build(cx.tr, m_max, cap);
  const auto cache_va = SigDesignCache::build(cx.va, m_max, cap);

  const std::vector<double> lambdas =
      args.lambda >= 0.0 ? std::vector<double>{args.lambda} : fs.lambda_grid;

  double best_rmse = std::numeric_limits<double>::infinity();
  MpenssarFit best_fit;
  OrderSelection best_sel;
  double best_lambda = 0.0, best_kpen = 0.0;
  bool have_best = false;

  for (double lambda : lambdas) {
    int m_l = args.m;
    OrderSelection sel;
    double kpen_l = kpen_value;
    if (args.m <= 0) {
      const auto risks = risk_table(cache_tr, cx.Y_tr, cx.W_tr, lambda, m_max);
      if (kpen_auto)
        kpen_l = slope_heuristic_from_risks(risks, cx.n_tr, cx.P_aug, args.kappa,
                                            default_kpen_grid(risks));
      PenaltyConfig pc;
      pc.K_pen = kpen_l;
      pc.kappa = args.kappa;
      pc.m_max = m_max;
      pc.dim_cap = fs.dim_cap;
      sel = select_from_risks(risks, cx.n_tr, cx.P_aug, pc);
      m_l = sel.m_hat;
    }
    MpenssarFit f = fit_design(cache_tr.shifted(m_l), cx.Y_tr, cx.W_tr, m_l, lambda);
    const Eigen::MatrixXd Yhat =
        predict_design(f, cache_va.shifted(m_l), cx.W_vactx, cx.Y_tr);
    const double rmse = pooled_rmse(Yhat - cx.Y_va);
    if (!have_best || rmse < best_rmse) {
      have_best = true;
      best_rmse = rmse;
      best_fit = std::move(f);
      best_sel = std::move(sel);
      best_lambda = lambda;
      best_kpen = kpen_l;
    }
  }

  if (args.m <= 0) {
    write_criterion_csv(join(log.dir(), "criterion_table.csv"), best_sel.table);
    log.add_artifact("criterion_table.csv");
    if (kpen_auto) log.doc().set_double("result", "K_pen", best_kpen);
  }
  write_fit(join(log.dir(), "fit.txt"), best_fit);
  log.add_artifact("fit.txt");
  log.doc().set_int("result", "m", best_fit.m);
  log.doc().set_double("result", "lambda", best_lambda);
  log.doc().set_double("result", "validation_rmse", best_rmse);
}

void run_fit_penssar(const FitContext& cx, const FitArgs& args, const FitSettings& fs,
                     RunLog& log) {
  const int Q = static_cast<int>(cx.Y_tr.cols());
  const int m_top =
      args.m > 0 ? args.m
                 : (fs.m_max > 0 ? fs.m_max : default_max_order(cx.P_aug, fs.dim_cap));
  const std::int64_t cap = args.m > 0 ? 0 : fs.dim_cap;
  const auto cache_tr = SigDesignCache::build(cx.tr, m_top, cap);
  const auto cache_va = SigDesignCache::build(cx.va, m_top, cap);

  std::vector<int> orders;
  if (args.m > 0)
    orders.push_back(args.m);
  else
    for (int m = 1; m <= m_top; ++m) orders.push_back(m);
  const std::vector<double> lambdas =
      args.lambda >= 0.0 ? std::vector<double>{args.lambda} : fs.lambda_grid;

  std::vector<double> best_rmse(Q, std::numeric_limits<double>::infinity());
  std::vector<MpenssarFit> best_fit(Q);
  std::vector<bool> have(Q, false);

  for (int m : orders) {
    const auto S_tr = cache_tr.shifted(m);
    const auto S_va = cache_va.shifted(m);
    ProfiledSolver base(S_tr, lambdas.front());
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
      const ProfiledSolver solver = li == 0 ? base : base.refit(lambdas[li]);
      for (int q = 0; q < Q; ++q) {
        MpenssarFit f = fit_design(solver, S_tr, cx.Y_tr.col(q), cx.W_tr, m);
        const Eigen::MatrixXd yhat =
            predict_design(f, S_va, cx.W_vactx, cx.Y_tr.col(q));
        const double rmse = pooled_rmse(yhat - cx.Y_va.col(q));
        if (!have[q] || rmse < best_rmse[q]) {
          have[q] = true;
          best_rmse[q] = rmse;
          best_fit[q] = std::move(f);
        }
      }
    }
  }

  for (int q = 0; q < Q; ++q) {
    const std::string name = "fit_q" + std::to_string(q + 1) + ".txt";
    write_fit(join(log.dir(), name), best_fit[q]);
    log.add_artifact(name);
    const std::string tag = "_q" + std::to_string(q + 1);
    log.doc().set_int("result", "m" + tag, best_fit[q].m);
    log.doc().set_double("result", "lambda" + tag, best_fit[q].lambda);
    log.doc().set_double("result", "validation_rmse" + tag, best_rmse[q]);
  }
}

void run_fit_projssar(const FitContext& cx, const FitArgs& args, const FitSettings& fs,
                      RunLog& log) {
  const int Q = static_cast<int>(cx.Y_tr.cols());
  const int m_top =
      args.m > 0 ? args.m
                 : (fs.m_max > 0 ? fs.m_max : default_max_order(cx.P_aug, fs.dim_cap));
  const std::int64_t cap = args.m > 0 ? 0 : fs.dim_cap;
  const auto cache_tr = SigDesignCache::build(cx.tr, m_top, cap);
  const auto cache_va = SigDesignCache::build(cx.va, m_top, cap);

  std::vector<int> orders;
  if (args.m > 0)
    orders.push_back(args.m);
  else
    for (int m = 1; m <= m_top; ++m) orders.push_back(m);

  std::vector<double> best_rmse(Q, std::numeric_limits<double>::infinity());
  std::vector<ProjssarFit> best_fit(Q);
  std::vector<bool> have(Q, false);

  for (int m : orders) {
    const auto S_tr = cache_tr.shifted(m);
    const auto S_va = cache_va.shifted(m);
    for (int q = 0; q < Q; ++q) {
      ProjssarFit pf =
          projssar_fit_design(S_tr, cx.Y_tr.col(q), cx.W_tr, m, fs.inertia);
      const Eigen::MatrixXd scores_va = projssar_scores(pf, S_va);
      const Eigen::MatrixXd yhat =
          predict_design(pf.core, scores_va, cx.W_vactx, cx.Y_tr.col(q));
      const double rmse = pooled_rmse(yhat - cx.Y_va.col(q));
      if (!have[q] || rmse < best_rmse[q]) {
        have[q] = true;
        best_rmse[q] = rmse;
        best_fit[q] = std::move(pf);
      }
    }
  }

  for (int q = 0; q < Q; ++q) {
    const std::string name = "fit_q" + std::to_string(q + 1) + ".txt";
    write_projssar_fit(join(log.dir(), name), best_fit[q]);
    log.add_artifact(name);
    const std::string tag = "_q" + std::to_string(q + 1);
    log.doc().set_int("result", "m" + tag, best_fit[q].m);
    log.doc().set_int("result", "components" + tag, best_fit[q].components);
    log.doc().set_double("result", "validation_rmse" + tag, best_rmse[q]);
  }
}

int cmd_fit(const FitArgs& args) {
  if (args.method != "mpenssar" && args.method != "penssar" &&
      args.method != "projssar")
    throw ConfigError("--method must be mpenssar, penssar, or projssar");
  KvDoc doc;
  if (!args.config.empty()) doc = KvDoc::load(args.config);
  const FitSettings fs = fit_settings_from_doc(doc);
  const Bundle b = load_bundle(args.data);

  RunLog log(args.out, "fit");
  KvDoc& m = log.doc();
  m.set("config", "data", args.data);
  m.set("config", "method", args.method);
  m.set("config", "split", args.split);
  m.set_u64("config", "seed", args.seed);
  m.set_int("config", "m", args.m);
  m.set_double("config", "lambda", args.lambda);
  m.set("config", "kpen", args.kpen);
  m.set_double("config", "kappa", args.kappa);
  m.set_matrix("config", "fractions",
               Eigen::RowVector3d(fs.fractions[0], fs.fractions[1], fs.fractions[2]));
  m.set_int("config", "kmeans_K", fs.kmeans_K);
  {
    Eigen::MatrixXd g(1, fs.lambda_grid.size());
    for (std::size_t i = 0; i < fs.lambda_grid.size(); ++i) g(0, i) = fs.lambda_grid[i];
    m.set_matrix("config", "lambda_grid", g);
  }
  m.set_int("config", "m_max", fs.m_max);
  m.set_int("config", "dim_cap", fs.dim_cap);
  m.set_double("config", "inertia", fs.inertia);
  log.start();

  const FitContext cx = make_fit_context(b, args, fs);
  write_split_csv(join(log.dir(), "split.csv"), cx.plan);
  log.add_artifact("split.csv");

  if (args.method == "mpenssar")
    run_fit_mpenssar(cx, args, fs, log);
  else if (args.method == "penssar")
    run_fit_penssar(cx, args, fs, log);
  else
    run_fit_projssar(cx, args, fs, log);
  log.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// predict / evaluate

struct PredictArgs {
  std::string data;
  std::string fit;
  std::string out;
};

/// Test-set predictions under the fits stored in `fit_dir`. Context units are
/// the training rows followed by the test rows; validation units stay out.
Eigen::MatrixXd test_predictions(const Bundle& b, const std::string& fit_dir,
                                 const std::string& method, const SplitPlan& plan) {
  const auto aug = augment_all(b.paths);
  const auto te = gather(aug, plan.test);
  const Eigen::MatrixXd Y_tr = take_rows(b.Y, plan.train);
  const SpatialWeights W_ctx = subset_weights(b.W, concat(plan.train, plan.test));

  Eigen::MatrixXd Yhat(plan.test.size(), b.Q);
  if (method == "mpenssar") {
    const MpenssarFit f = read_fit(join(fit_dir, "fit.txt"));
    Yhat = predict(f, te, W_ctx, Y_tr);
  } else if (method == "penssar") {
    for (int q = 0; q < b.Q; ++q) {
      const MpenssarFit f =
          read_fit(join(fit_dir, "fit_q" + std::to_string(q + 1) + ".txt"));
      Yhat.col(q) = predict(f, te, W_ctx, Y_tr.col(q));
    }
  } else if (method == "projssar") {
    for (int q = 0; q < b.Q; ++q) {
      const ProjssarFit f =
          read_projssar_fit(join(fit_dir, "fit_q" + std::to_string(q + 1) + ".txt"));
      Yhat.col(q) = projssar_predict(f, te, W_ctx, Y_tr.col(q));
    }
  } else {
    throw ConfigError("fit manifest: unknown method '" + method + "'");
  }
  return Yhat;
}

std::string fit_dir_method(const std::string& fit_dir) {
  return KvDoc::load(join(fit_dir, "manifest.txt")).get("config", "method");
}

int cmd_predict(const PredictArgs& args) {
  const Bundle b = load_bundle(args.data);
  const std::string method = fit_dir_method(args.fit);
  const SplitPlan plan = read_split_csv(join(args.fit, "split.csv"), b.n);

  RunLog log(args.out, "predict");
  log.doc().set("config", "data", args.data);
  log.doc().set("config", "fit", args.fit);
  log.doc().set("config", "method", method);
  log.start();

  const Eigen::MatrixXd Yhat = test_predictions(b, args.fit, method, plan);
  write_predictions_csv(join(log.dir(), "predictions.csv"), plan.test, Yhat);
  log.add_artifact("predictions.csv");
  log.finish();
  return 0;
}

struct EvaluateArgs {
  std::string data;
  std::vector<std::string> fits;
  std::string out;
};

void append_metrics(std::vector<std::pair<std::string, double>>& rows,
                    const std::string& prefix, const Bundle& b,
                    const std::string& fit_dir, const std::string& method,
                    const SplitPlan& plan, double* pooled_out) {
  const Eigen::MatrixXd Yhat = test_predictions(b, fit_dir, method, plan);
  const Eigen::MatrixXd Y_te = take_rows(b.Y, plan.test);
  const Eigen::MatrixXd diff = Yhat - Y_te;
  for (int q = 0; q < b.Q; ++q)
    rows.emplace_back(prefix + "rmse_q" + std::to_string(q + 1),
                      std::sqrt(diff.col(q).squaredNorm() / diff.rows()));
  const double pooled = pooled_rmse(diff);
  rows.emplace_back(prefix + "rmse_pooled", pooled);
  if (pooled_out) *pooled_out = pooled;

  if (!b.has_truth || !b.truth.has("truth", "R")) return;
  const Eigen::MatrixXd R_true = b.truth.get_matrix("truth", "R", b.Q, b.Q);
  if (method == "mpenssar") {
    const MpenssarFit f = read_fit(join(fit_dir, "fit.txt"));
    double diag = 0.0, off = 0.0;
    for (int a = 0; a < b.Q; ++a)
      for (int c = 0; c < b.Q; ++c) {
        const double err = std::abs(f.R_hat(a, c) - R_true(a, c));
        rows.emplace_back(prefix + "r_err_" + std::to_string(a + 1) + "_" +
                              std::to_string(c + 1),
                          err);
        (a == c ? diag : off) += err;
      }
    rows.emplace_back(prefix + "r_diag_mae", diag / b.Q);
    if (b.Q > 1)
      rows.emplace_back(prefix + "r_offdiag_mae", off / (b.Q * (b.Q - 1)));
  } else {
    // Per-response fits estimate only the diagonal spatial effect.
    double diag = 0.0;
    for (int q = 0; q < b.Q; ++q) {
      const std::string file = join(fit_dir, "fit_q" + std::to_string(q + 1) + ".txt");
      const double r_qq = method == "projssar" ? read_projssar_fit(file).core.R_hat(0, 0)
                                               : read_fit(file).R_hat(0, 0);
      const double err = std::abs(r_qq - R_true(q, q));
      rows.emplace_back(
          prefix + "r_err_" + std::to_string(q + 1) + "_" + std::to_string(q + 1), err);
      diag += err;
    }
    rows.emplace_back(prefix + "r_diag_mae", diag / b.Q);
  }
}

int cmd_evaluate(const EvaluateArgs& args) {
  if (args.fits.empty()) throw ConfigError("evaluate: at least one --fit required");
  const Bundle b = load_bundle(args.data);

  RunLog log(args.out, "evaluate");
  log.doc().set("config", "data", args.data);
  for (std::size_t i = 0; i < args.fits.size(); ++i)
    log.doc().set("config", "fit" + std::to_string(i + 1), args.fits[i]);
  log.start();

  // All fits must share the split written by the first fit directory.
  const SplitPlan plan = read_split_csv(join(args.fits.front(), "split.csv"), b.n);
  for (const auto& dir : args.fits) {
    const SplitPlan other = read_split_csv(join(dir, "split.csv"), b.n);
    if (other.train != plan.train || other.test != plan.test)
      throw ConfigError("evaluate: fit directories use different splits");
  }

  std::vector<std::pair<std::string, double>> rows;
  std::vector<double> pooled(args.fits.size());
  for (std::size_t i = 0; i < args.fits.size(); ++i) {
    const std::string method = fit_dir_method(args.fits[i]);
    const std::string prefix =
        args.fits.size() == 1
            ? std::string()
            : "fit" + std::to_string(i + 1) + "_" + method + "_";
    append_metrics(rows, prefix, b, args.fits[i], method, plan, &pooled[i]);
  }
  if (args.fits.size() == 2)
    rows.emplace_back("rmse_pooled_diff", pooled[0] - pooled[1]);

  std::string csv = "metric,value\n";
  for (const auto& [name, value] : rows)
    csv += name + ',' + format_double(value) + '\n';
  write_file(join(log.dir(), "metrics.csv"), csv);
  log.add_artifact("metrics.csv");
  log.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// constants

struct ConstantsArgs {
  std::string config;
  std::string out;
};

int cmd_constants(const ConstantsArgs& args) {
  const KvDoc doc = KvDoc::load(args.config);
  const std::string sec = "constants";
  TheoryConstants c;
  if (doc.has(sec, "K_Y")) c.K_Y = doc.get_double(sec, "K_Y");
  if (doc.has(sec, "K_X")) c.K_X = doc.get_double(sec, "K_X");
  if (doc.has(sec, "K_neighb")) c.K_neighb = doc.get_double(sec, "K_neighb");
  if (doc.has(sec, "alpha")) c.alpha = doc.get_double(sec, "alpha");
  if (doc.has(sec, "Q")) c.Q = static_cast<int>(doc.get_int(sec, "Q"));
  if (doc.has(sec, "P")) c.P = static_cast<int>(doc.get_int(sec, "P"));
  if (doc.has(sec, "sigma2")) c.sigma2 = doc.get_double(sec, "sigma2");
  if (doc.has(sec, "L_gap")) c.L_gap = doc.get_double(sec, "L_gap");
  if (doc.has(sec, "m_star")) c.m_star = static_cast<int>(doc.get_int(sec, "m_star"));
  if (doc.has(sec, "kappa")) c.kappa = doc.get_double(sec, "kappa");
  if (doc.has(sec, "K_pen")) c.K_pen = doc.get_double(sec, "K_pen");
  if (doc.has(sec, "delta_n2")) c.delta_n2 = doc.get_double(sec, "delta_n2");
  if (doc.has(sec, "m_n2")) c.m_n2 = static_cast<int>(doc.get_int(sec, "m_n2"));

  RunLog log(args.out, "constants");
  log.doc().set("config", "file", args.config);
  log.start();

  c = theory_constants(c);

  KvDoc report;
  report.set_double("inputs", "K_Y", c.K_Y);
  report.set_double("inputs", "K_X", c.K_X);
  report.set_double("inputs", "K_neighb", c.K_neighb);
  report.set_double("inputs", "alpha", c.alpha);
  report.set_int("inputs", "Q", c.Q);
  report.set_int("inputs", "P", c.P);
  report.set_double("inputs", "sigma2", c.sigma2);
  report.set_double("inputs", "L_gap", c.L_gap);
  report.set_int("inputs", "m_star", c.m_star);
  report.set_double("inputs", "kappa", c.kappa);
  report.set_double("inputs", "K_pen", c.K_pen);
  report.set_double("inputs", "delta_n2", c.delta_n2);
  report.set_int("inputs", "m_n2", c.m_n2);
  report.set_double("derived", "K", c.K);
  report.set_double("derived", "K1", c.K1);
  report.set_double("derived", "K2", c.K2);
  report.set_double("derived", "K3", c.K3);
  report.set_double("derived", "K4", c.K4);
  report.set_double("derived", "n1", c.n1);
  report.set_double("derived", "n2", c.n2);
  report.set_double("derived", "n3", c.n3);

  if (doc.has(sec, "n")) {
    const double n = doc.get_double(sec, "n");
    const int tail = doc.has(sec, "tail_terms")
                         ? static_cast<int>(doc.get_int(sec, "tail_terms"))
                         : 20;
    const MisselectionBound bound =
        misselection_bound(c, n, c.m_star, c.kappa, c.K_pen, tail);
    report.set_double("bound", "n", n);
    report.set_double("bound", "raw", bound.raw);
    report.set_double("bound", "clamped", bound.clamped);
    report.set_double("bound", "truncation_next_term", bound.truncation_next_term);
  }

  report.save(join(log.dir(), "constants_report.txt"));
  log.add_artifact("constants_report.txt");
  log.finish();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Signature-feature spatial autoregression toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate synthetic dataset bundles");
  c_sim->add_option("--config", sim.config, "Run configuration file");
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  auto* sim_seed = c_sim->add_option("--seed", sim.seed, "Master seed override");
  c_sim->add_option("--reps", sim.reps, "Replication count");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit and select on a dataset bundle");
  c_fit->add_option("--data", fit.data, "Dataset bundle directory")->required();
  c_fit->add_option("--out", fit.out, "Output directory")->required();
  c_fit->add_option("--config", fit.config, "Run configuration file");
  c_fit->add_option("--method", fit.method, "mpenssar|penssar|projssar");
  c_fit->add_option("--split", fit.split, "ov|sv");
  c_fit->add_option("--m", fit.m, "Fixed truncation order (skips selection)");
  c_fit->add_option("--lambda", fit.lambda, "Fixed ridge value (skips the grid)");
  c_fit->add_option("--kpen", fit.kpen, "Penalty constant: auto or a number");
  c_fit->add_option("--kappa", fit.kappa, "Penalty exponent");
  c_fit->add_option("--seed", fit.seed, "Split seed");

  PredictArgs pred;
  auto* c_pred = app.add_subcommand("predict", "Predict test responses from a fit");
  c_pred->add_option("--data", pred.data, "Dataset bundle directory")->required();
  c_pred->add_option("--fit", pred.fit, "Fit output directory")->required();
  c_pred->add_option("--out", pred.out, "Output directory")->required();

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score fits on the test set");
  c_eval->add_option("--data", eval.data, "Dataset bundle directory")->required();
  c_eval->add_option("--fit", eval.fits, "Fit output directory (repeatable)")
      ->required();
  c_eval->add_option("--out", eval.out, "Output directory")->required();

  ConstantsArgs cons;
  auto* c_cons = app.add_subcommand("constants", "Finite-sample constant report");
  c_cons->add_option("--config", cons.config, "Constants configuration file")
      ->required();
  c_cons->add_option("--out", cons.out, "Output directory")->required();

  try {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("mpenssar");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<char*> argv;
    argv.reserve(full.size());
    for (auto& s : full) argv.push_back(s.data());
    app.parse(static_cast<int>(argv.size()), argv.data());

    sim.seed_given = sim_seed->count() > 0;
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_fit->parsed()) return cmd_fit(fit);
    if (c_pred->parsed()) return cmd_predict(pred);
    if (c_eval->parsed()) return cmd_evaluate(eval);
    if (c_cons->parsed()) return cmd_constants(cons);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mpenssar::cli
