#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dol/balancing.hpp"
#include "dol/eval.hpp"
#include "dol/gkdr.hpp"
#include "dol/logistic.hpp"
#include "dol/owl.hpp"
#include "dol/pseudo.hpp"
#include "dol/rng.hpp"
#include "dol/simgen.hpp"

namespace dol {

enum class GMode { linear, oracle };

inline const char* to_string(GMode m) { return m == GMode::linear ? "linear" : "oracle"; }

inline GMode parse_g_mode(const std::string& s) {
  if (s == "linear") return GMode::linear;
  if (s == "oracle") return GMode::oracle;
  throw Error(ErrorKind::config, "unknown g mode '" + s + "'");
}

struct PipelineConfig {
  WeightMethod weights_method = WeightMethod::kcb;
  GMode g_mode = GMode::linear;
  bool reduce = true;  // false: AOL on the raw covariates
  std::vector<double> epsilon_grid{kDefaultEpsilon};
  std::vector<Index> u_grid{1, 2, 3};
  std::vector<double> lambda_grid;  // empty: default_lambda_grid(n)
  int cv_folds = 2;
  std::uint64_t seed = 0;
  std::optional<Bandwidth> sigma_kcb;
  std::optional<Bandwidth> sigma_gkdr;
  std::optional<Bandwidth> sigma_svm;
  double kcb_lambda2 = -1.0;  // negative: held-out selection
  double svm_tol = 1e-3;
  // Estimate weights and g once on the full training sample and reuse them
  // inside every CV fold instead of re-estimating on each training fold.
  bool reuse_nuisance = false;
  std::string tag;

  void validate(bool have_oracle) const {
    if (!have_oracle && (weights_method == WeightMethod::oracle || g_mode == GMode::oracle)) {
      throw Error(ErrorKind::config, "oracle weights or g need an oracle sidecar");
    }
    if (cv_folds < 2) throw Error(ErrorKind::config, "cv_folds must be at least 2");
    if (epsilon_grid.empty() || u_grid.empty()) throw Error(ErrorKind::config, "reduction grids must be nonempty");
    for (double e : epsilon_grid) if (!(e > 0)) throw Error(ErrorKind::config, "epsilon values must be positive");
    for (double l : lambda_grid) if (!(l > 0)) throw Error(ErrorKind::config, "lambda values must be positive");
    if (!(svm_tol > 0)) throw Error(ErrorKind::config, "svm_tol must be positive");
  }

  std::string method_tag() const {
    if (!tag.empty()) return tag;
    return std::string(reduce ? "DOL" : "AOL") + (g_mode == GMode::oracle ? "-O" : "-L");
  }
};

struct Nuisance {
  Vector w;
  Vector g;
};

/// Weights and g values on `data` (rows of the training sample).
inline Nuisance estimate_nuisance(const PipelineConfig& cfg, const Dataset& data, const SimOracle* oracle,
                                  std::uint64_t seed) {
  Nuisance nu;
  try {
    switch (cfg.weights_method) {
      case WeightMethod::kcb: {
        KcbOptions o;
        o.bandwidth = cfg.sigma_kcb;
        o.lambda2 = cfg.kcb_lambda2;
        nu.w = kcb_balance(data, o, seed).w;
        break;
      }
      case WeightMethod::ipw_logistic: nu.w = logistic_ipw(data).w; break;
      case WeightMethod::oracle: nu.w = oracle->inverse_propensity(data.A); break;
    }
  } catch (const Error& e) {
    throw e.with_stage("weights");
  }
  try {
    nu.g = cfg.g_mode == GMode::oracle ? oracle_g(*oracle) : fit_g(data, nu.w).evaluate(data.X);
  } catch (const Error& e) {
    throw e.with_stage("g");
  }
  return nu;
}

struct PipelineResult {
  EvalReport report;
  DecisionRule rule;
  Vector weights;
  double epsilon = std::nan("");
  Index u = 0;
  double lambda_n = 0.0;
  std::vector<double> lambda_scores;
};

namespace detail {

/// Per-fold nuisance estimates, keyed by the training rows.
class NuisanceCache {
 public:
  NuisanceCache(const PipelineConfig& cfg, const Dataset& data, const SimOracle* oracle, const Nuisance& full)
      : cfg_(cfg), data_(data), oracle_(oracle), full_(full) {}

  const Nuisance& get(const std::vector<Index>& rows) {
    auto it = cache_.find(rows);
    if (it != cache_.end()) return it->second;
    Nuisance nu;
    if (cfg_.reuse_nuisance || static_cast<Index>(rows.size()) == data_.n()) {
      nu.w = subset(full_.w, rows);
      nu.g = subset(full_.g, rows);
    } else {
      const Dataset sub = data_.subset(rows);
      std::optional<SimOracle> so;
      if (oracle_) so = oracle_->subset(rows);
      nu = estimate_nuisance(cfg_, sub, so ? &*so : nullptr, derive_seed(cfg_.seed, streams::resample, cache_.size() + 1));
    }
    return cache_.emplace(rows, std::move(nu)).first->second;
  }

 private:
  const PipelineConfig& cfg_;
  const Dataset& data_;
  const SimOracle* oracle_;
  const Nuisance& full_;
  std::map<std::vector<Index>, Nuisance> cache_;
};

/// Held-out values of the rule fitted on `tr` for every lambda; evaluation
/// weights on the held-out rows come from the full-sample nuisance.
inline std::vector<double> fold_lambda_values(const PipelineConfig& cfg, const Dataset& data, NuisanceCache& cache,
                                              const Nuisance& full, const std::vector<Index>& tr,
                                              const std::vector<Index>& ho, const SubspaceBasis& basis,
                                              const std::vector<double>& grid) {
  const Nuisance& nu = cache.get(tr);
  const Dataset dtr = data.subset(tr), dho = data.subset(ho);
  const WsvmProblem prob = build_problem(dtr, nu.w, nu.g, basis, cfg.sigma_svm);
  const Matrix Vho = project(dho.X, basis);
  const Vector who = subset(full.w, ho);
  std::vector<double> out(grid.size(), -std::numeric_limits<double>::infinity());
  WsvmOptions o;
  o.tol = cfg.svm_tol;
  o.warn = false;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    try {
      const DecisionRule r = fit_wsvm(prob, grid[c], o);
      const Vector d = decision_values_reduced(r, Vho).unaryExpr([](double v) { return sign_plus(v); });
      if (auto v = weighted_value(d, dho.A, dho.Y, who)) out[c] = *v;
    } catch (const Error&) {
    }
  }
  return out;
}

}  // namespace detail

/// weights -> g -> pseudo-outcomes -> gKDR (identity basis when reduce is
/// off) -> weighted SVM with CV-tuned lambda -> evaluation on `test`.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const Dataset& train, const Dataset& test,
                                   const SimOracle* train_oracle = nullptr, const SimOracle* test_oracle = nullptr) {
  cfg.validate(train_oracle != nullptr);
  train.validate();
  PipelineResult res;
  const std::uint64_t fold_seed = derive_seed(cfg.seed, streams::folds);
  const Nuisance full = estimate_nuisance(cfg, train, train_oracle, derive_seed(cfg.seed, streams::resample));
  res.weights = full.w;
  const std::vector<double> grid = cfg.lambda_grid.empty() ? default_lambda_grid(train.n()) : cfg.lambda_grid;
  detail::NuisanceCache cache(cfg, train, train_oracle, full);

  SubspaceBasis basis;
  try {
    if (cfg.reduce) {
      std::vector<Index> u_grid;
      for (Index u : cfg.u_grid) if (u <= train.p()) u_grid.push_back(u);
      if (u_grid.empty()) throw Error(ErrorKind::config, "no u grid value fits the covariate dimension");
      auto pseudo = [&](const std::vector<Index>& rows) {
        const Nuisance& nu = cache.get(rows);
        return pseudo_outcomes(train.subset(rows), nu.w, nu.g).z;
      };
      auto scorer = [&](const std::vector<Index>& tr, const std::vector<Index>& ho, const SubspaceBasis& b) {
        const auto v = detail::fold_lambda_values(cfg, train, cache, full, tr, ho, b, grid);
        return *std::max_element(v.begin(), v.end());
      };
      const ReductionSelection sel = select_reduction(train.X, pseudo, cfg.sigma_gkdr, cfg.epsilon_grid, u_grid,
                                                      cfg.cv_folds, fold_seed, scorer);
      basis = sel.basis;
      res.epsilon = sel.epsilon;
      res.u = sel.u;
    } else {
      basis = SubspaceBasis::identity(train.p());
      res.u = train.p();
    }
  } catch (const Error& e) {
    throw e.with_stage("reduce");
  }

  try {
    std::vector<double> scores(grid.size(), 0.0);
    if (grid.size() > 1) {
      const auto labels = assign_folds(train.n(), cfg.cv_folds, fold_seed);
      std::vector<Index> tr, ho;
      for (int k = 0; k < cfg.cv_folds; ++k) {
        split_fold(labels, k, tr, ho);
        const auto v = detail::fold_lambda_values(cfg, train, cache, full, tr, ho, basis, grid);
        for (std::size_t c = 0; c < grid.size(); ++c) scores[c] += v[c] / cfg.cv_folds;
      }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < grid.size(); ++c) {
      if (scores[c] > scores[best] || (scores[c] == scores[best] && grid[c] > grid[best])) best = c;
    }
    res.lambda_scores = scores;
    res.lambda_n = grid[best];
    const WsvmProblem prob = build_problem(train, full.w, full.g, basis, cfg.sigma_svm);
    WsvmOptions o;
    o.tol = cfg.svm_tol;
    res.rule = fit_wsvm(prob, res.lambda_n, o);
  } catch (const Error& e) {
    throw e.with_stage("fit");
  }

  try {
    if (test_oracle) {
      res.report = evaluate_with_oracle(res.rule, test, *test_oracle);
    } else {
      const LogisticFit lf = fit_logistic(test.X, test.A);
      Vector pi(test.n());
      for (Index i = 0; i < test.n(); ++i) {
        const double p1 = lf.prob_treated(test.X.row(i));
        pi[i] = test.A[i] > 0 ? p1 : 1.0 - p1;
      }
      res.report = evaluate_without_oracle(res.rule, test, pi);
    }
  } catch (const Error& e) {
    throw e.with_stage("evaluate");
  }
  return res;
}

struct ReplicationResult {
  int replicate_id = 0;
  int setting = 1;
  Index n = 0;
  std::string method;
  double accuracy = std::nan("");
  double value_pct = std::nan("");
  double projection_error = std::nan("");
  double wall_time = 0.0;
  std::string error;  // empty on success

  // Everything but wall_time, which varies from run to run.
  bool same_outcome(const ReplicationResult& o) const {
    auto eq = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return replicate_id == o.replicate_id && setting == o.setting && n == o.n && method == o.method &&
           eq(accuracy, o.accuracy) && eq(value_pct, o.value_pct) && eq(projection_error, o.projection_error) &&
           error == o.error;
  }
};

struct ReplicationPlan {
  std::vector<PipelineConfig> methods;
  std::vector<int> settings{1};
  Index n = 500;
  Index n_test = kTestSetSize;
  bool randomized = true;
  int n_reps = 1;
  std::uint64_t seed = 0;
  unsigned workers = 1;  // 0: hardware concurrency
};

/// Seed of replicate `rep` of `setting`; stage streams derive from it.
inline std::uint64_t replicate_seed(std::uint64_t master, int setting, int rep) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(setting)), static_cast<std::uint64_t>(rep));
}

inline std::vector<ReplicationResult> run_replicate(const ReplicationPlan& plan, int setting, int rep) {
  const std::uint64_t rs = replicate_seed(plan.seed, setting, rep);
  std::vector<ReplicationResult> rows;
  std::optional<std::pair<Dataset, SimOracle>> tr, te;
  std::string data_error;
  try {
    tr = generate(setting, plan.n, plan.randomized, derive_seed(rs, streams::train));
    te = generate(setting, plan.n_test, plan.randomized, derive_seed(rs, streams::test));
  } catch (const Error& e) {
    data_error = e.what();
  }
  for (const auto& m : plan.methods) {
    ReplicationResult r;
    r.replicate_id = rep;
    r.setting = setting;
    r.n = plan.n;
    r.method = m.method_tag();
    const auto t0 = std::chrono::steady_clock::now();
    if (!data_error.empty()) {
      r.error = data_error;
    } else {
      try {
        PipelineConfig c = m;
        c.seed = derive_seed(rs, streams::folds);
        const auto res = run_pipeline(c, tr->first, te->first, &tr->second, &te->second);
        r.accuracy = res.report.accuracy;
        r.value_pct = res.report.value_pct_of_bayes;
        r.projection_error = res.report.projection_error;
      } catch (const Error& e) {
        r.error = e.what();
      }
    }
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Rows ordered by (setting, replicate, method) regardless of which worker
/// finished first.
inline std::vector<ReplicationResult> run_replications(const ReplicationPlan& plan) {
  if (plan.n_reps < 1) throw Error(ErrorKind::config, "n_reps must be at least 1");
  if (plan.methods.empty()) throw Error(ErrorKind::config, "no methods configured");
  for (int s : plan.settings) sim::detail::check_setting(s);
  struct Task {
    int setting, rep;
  };
  std::vector<Task> tasks;
  for (int s : plan.settings) for (int r = 0; r < plan.n_reps; ++r) tasks.push_back({s, r});
  std::vector<std::vector<ReplicationResult>> out(tasks.size());

  unsigned workers = plan.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : plan.workers;
  workers = std::min<unsigned>(workers, static_cast<unsigned>(tasks.size()));
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) out[t] = run_replicate(plan, tasks[t].setting, tasks[t].rep);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < workers; ++k) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t t;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= tasks.size()) return;
            t = next++;
          }
          out[t] = run_replicate(plan, tasks[t].setting, tasks[t].rep);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<ReplicationResult> rows;
  for (auto& v : out) for (auto& r : v) rows.push_back(std::move(r));
  return rows;
}

struct SummaryRow {
  int setting = 1;
  Index n = 0;
  std::string method;
  int count = 0;
  int errors = 0;
  double accuracy_mean = std::nan(""), accuracy_sd = std::nan("");
  double value_pct_mean = std::nan(""), value_pct_sd = std::nan("");
  double projection_error_mean = std::nan(""), projection_error_sd = std::nan("");
};

/// Mean and sample sd per (setting, n, method) over successful rows.
inline std::vector<SummaryRow> summarize(const std::vector<ReplicationResult>& rows) {
  std::vector<SummaryRow> out;
  auto find = [&](const ReplicationResult& r) -> SummaryRow& {
    for (auto& s : out) if (s.setting == r.setting && s.n == r.n && s.method == r.method) return s;
    SummaryRow s;
    s.setting = r.setting;
    s.n = r.n;
    s.method = r.method;
    out.push_back(s);
    return out.back();
  };
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) return;
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) { sd = std::nan(""); return; }
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  std::map<std::size_t, std::vector<double>> acc, val, pe;
  for (const auto& r : rows) {
    SummaryRow& s = find(r);
    const std::size_t k = static_cast<std::size_t>(&s - out.data());
    if (!r.error.empty()) { ++s.errors; continue; }
    ++s.count;
    acc[k].push_back(r.accuracy);
    val[k].push_back(r.value_pct);
    if (!std::isnan(r.projection_error)) pe[k].push_back(r.projection_error);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    stats(acc[k], out[k].accuracy_mean, out[k].accuracy_sd);
    stats(val[k], out[k].value_pct_mean, out[k].value_pct_sd);
    stats(pe[k], out[k].projection_error_mean, out[k].projection_error_sd);
  }
  return out;
}

}  // namespace dol
