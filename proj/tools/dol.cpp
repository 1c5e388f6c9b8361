// dol: command-line front end for simulation, balancing weights, subspace
// reduction, rule fitting, prediction, evaluation and replication runs.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dol/balancing.hpp"
#include "dol/eval.hpp"
#include "dol/gkdr.hpp"
#include "dol/io.hpp"
#include "dol/logistic.hpp"
#include "dol/owl.hpp"
#include "dol/pipeline.hpp"
#include "dol/pseudo.hpp"
#include "dol/simgen.hpp"

namespace fs = std::filesystem;
using namespace dol;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir;
};

std::string out_path(const Globals& g, const std::string& p) {
  if (g.out_dir.empty() || fs::path(p).is_absolute()) return p;
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / p).string();
}

std::optional<Bandwidth> sigma_opt(double s) {
  if (s <= 0) return std::nullopt;
  return Bandwidth(s);
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = io::trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_integral_v<T>) out.push_back(static_cast<T>(std::stoll(item, &used)));
      else out.push_back(static_cast<T>(std::stod(item, &used)));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::config, std::string("bad value '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw Error(ErrorKind::config, std::string(what) + " is empty");
  return out;
}

std::optional<SimOracle> maybe_oracle(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return io::load_oracle(path);
}

Vector g_values(const std::string& mode, const Dataset& d, const Vector& w, const std::optional<SimOracle>& o) {
  if (parse_g_mode(mode) == GMode::oracle) {
    if (!o) throw Error(ErrorKind::config, "g = oracle needs --oracle");
    if (o->mu.size() != d.n()) throw Error(ErrorKind::config, "oracle sidecar does not match the dataset");
    return oracle_g(*o);
  }
  return fit_g(d, w).evaluate(d.X);
}

void print_written(const std::string& p) { std::cout << "wrote " << p << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dimension-reduced outcome-weighted learning"};
  app.set_config("--config", "", "key = value configuration file");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out-dir", g.out_dir, "Directory for relative output paths");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a simulated dataset and its oracle sidecar");
  int setting = 1;
  Index sim_n = 500, sim_n_test = 0;
  bool randomized = false;
  std::string sim_out = "train";
  sim->add_option("--setting", setting, "Simulation setting (1, 2 or 3)")->check(CLI::Range(1, 3));
  sim->add_option("--n", sim_n, "Training sample size")->check(CLI::PositiveNumber);
  sim->add_flag("--randomized", randomized, "Treatment assigned with probability 1/2");
  sim->add_option("--n-test", sim_n_test, "Also write a test set of this size (0: none)");
  sim->add_option("--out", sim_out, "Output prefix; writes PREFIX.csv and PREFIX.oracle.json");

  // weights
  auto* wts = app.add_subcommand("weights", "Estimate balancing or inverse-propensity weights");
  std::string w_data, w_method = "kcb", w_oracle, w_out = "weights.csv";
  double w_lambda2 = -1, w_sigma = -1;
  wts->add_option("--data", w_data, "Dataset CSV")->required();
  wts->add_option("--method", w_method, "kcb, ipw or oracle");
  wts->add_option("--oracle", w_oracle, "Oracle sidecar (needed for --method oracle)");
  wts->add_option("--lambda2", w_lambda2, "KCB ridge parameter (default: held-out selection)");
  wts->add_option("--sigma", w_sigma, "KCB kernel bandwidth (default: median heuristic)");
  wts->add_option("--out", w_out, "Weights CSV");

  // reduce
  auto* red = app.add_subcommand("reduce", "Estimate the subspace basis by gKDR");
  std::string r_data, r_weights, r_g = "linear", r_oracle, r_eps = "1e-5", r_out = "basis.csv",
                                 r_eig_out = "eigenvalues.csv";
  Index r_dim = 2;
  double r_sigma = -1;
  int r_cv = 0;
  red->add_option("--data", r_data, "Dataset CSV")->required();
  red->add_option("--weights", r_weights, "Weights CSV")->required();
  red->add_option("--g", r_g, "linear or oracle");
  red->add_option("--oracle", r_oracle, "Oracle sidecar");
  red->add_option("--epsilon", r_eps, "Tikhonov parameter, or a comma list with --cv");
  red->add_option("--dim", r_dim, "Dimension u (largest candidate with --cv)")->check(CLI::PositiveNumber);
  red->add_option("--sigma", r_sigma, "gKDR bandwidth (default: median heuristic)");
  red->add_option("--cv", r_cv, "Folds for selecting (epsilon, u) by held-out value (0: no selection)");
  red->add_option("--out", r_out, "Basis CSV");
  red->add_option("--eigenvalues-out", r_eig_out, "Eigenvalue CSV");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the weighted SVM decision rule");
  std::string f_data, f_weights, f_basis, f_eig, f_g = "linear", f_oracle, f_lambda, f_out = "rule.json";
  double f_sigma = -1, f_tol = 1e-3;
  int f_cv = 2;
  fit->add_option("--data", f_data, "Dataset CSV")->required();
  fit->add_option("--weights", f_weights, "Weights CSV")->required();
  fit->add_option("--basis", f_basis, "Basis CSV (default: identity, i.e. no reduction)");
  fit->add_option("--eigenvalues", f_eig, "Eigenvalue CSV matching --basis");
  fit->add_option("--g", f_g, "linear or oracle");
  fit->add_option("--oracle", f_oracle, "Oracle sidecar");
  fit->add_option("--lambda", f_lambda, "lambda_n, or a comma list tuned by CV (default grid)");
  fit->add_option("--cv", f_cv, "Folds for lambda tuning")->check(CLI::Range(2, 100));
  fit->add_option("--sigma", f_sigma, "Reduced-space bandwidth (default: median heuristic)");
  fit->add_option("--tol", f_tol, "KKT tolerance")->check(CLI::PositiveNumber);
  fit->add_option("--out", f_out, "Rule file");

  // predict
  auto* pred = app.add_subcommand("predict", "Recommend treatments with a fitted rule");
  std::string p_rule, p_data, p_out = "predictions.csv";
  pred->add_option("--rule", p_rule, "Rule file")->required();
  pred->add_option("--data", p_data, "Covariate CSV (A and Y columns are ignored)")->required();
  pred->add_option("--out", p_out, "Treatment CSV");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Evaluate a rule on a test set");
  std::string e_rule, e_data, e_oracle, e_out = "report.json";
  evl->add_option("--rule", e_rule, "Rule file")->required();
  evl->add_option("--data", e_data, "Test dataset CSV")->required();
  evl->add_option("--oracle", e_oracle, "Oracle sidecar of the test set (otherwise logistic propensities)");
  evl->add_option("--out", e_out, "Report file");

  // replicate
  auto* rep = app.add_subcommand("replicate", "Monte Carlo replications of several methods");
  std::string rp_settings = "1", rp_methods = "DOL-O,AOL-O", rp_out = "replications.csv",
              rp_summary = "summary.csv", rp_u = "1,2,3", rp_eps = "1e-5", rp_lambda;
  Index rp_n = 500, rp_n_test = kTestSetSize;
  int rp_reps = 20, rp_cv = 2;
  unsigned rp_workers = 1;
  bool rp_randomized = false, rp_reuse = false;
  rep->add_option("--settings", rp_settings, "Comma list of settings");
  rep->add_option("--n", rp_n, "Training sample size")->check(CLI::PositiveNumber);
  rep->add_option("--n-test", rp_n_test, "Test sample size")->check(CLI::PositiveNumber);
  rep->add_option("--reps", rp_reps, "Replicates per setting")->check(CLI::PositiveNumber);
  rep->add_flag("--randomized", rp_randomized, "Randomized treatment assignment");
  rep->add_option("--methods", rp_methods, "Comma list of DOL-O, DOL-L, AOL-O, AOL-L (suffix /ipw for logistic weights)");
  rep->add_option("--u-grid", rp_u, "Candidate dimensions");
  rep->add_option("--epsilon-grid", rp_eps, "Candidate Tikhonov parameters");
  rep->add_option("--lambda-grid", rp_lambda, "Candidate lambda_n (default grid)");
  rep->add_option("--cv", rp_cv, "Folds")->check(CLI::Range(2, 100));
  rep->add_flag("--reuse-nuisance", rp_reuse, "Reuse full-sample weights and g inside CV folds");
  rep->add_option("--workers", rp_workers, "Worker threads (0: all cores)");
  rep->add_option("--out", rp_out, "Per-replicate CSV");
  rep->add_option("--summary-out", rp_summary, "Summary CSV");

  for (auto* sub : {sim, wts, red, fit, pred, evl, rep}) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      auto [d, o] = generate(setting, sim_n, randomized, derive_seed(g.seed, streams::train));
      const std::string csv = out_path(g, sim_out + ".csv"), js = out_path(g, sim_out + ".oracle.json");
      io::save_dataset(csv, d);
      io::save_oracle(js, o);
      print_written(csv);
      print_written(js);
      if (!randomized) {
        std::cout << "propensity range [" << o.propensity.minCoeff() << ", " << o.propensity.maxCoeff() << "]\n";
      }
      if (sim_n_test > 0) {
        auto [dt, ot] = generate(setting, sim_n_test, randomized, derive_seed(g.seed, streams::test));
        const std::string tc = out_path(g, sim_out + ".test.csv"), tj = out_path(g, sim_out + ".test.oracle.json");
        io::save_dataset(tc, dt);
        io::save_oracle(tj, ot);
        print_written(tc);
        print_written(tj);
      }
    } else if (*wts) {
      const Dataset d = io::load_dataset(w_data).data;
      const WeightMethod m = parse_weight_method(w_method);
      Vector w;
      if (m == WeightMethod::kcb) {
        KcbOptions o;
        o.lambda2 = w_lambda2;
        o.bandwidth = sigma_opt(w_sigma);
        const BalancingWeights bw = kcb_balance(d, o, derive_seed(g.seed, streams::folds));
        w = bw.w;
        std::cout << "lambda2 " << bw.lambda2 << "\n";
      } else if (m == WeightMethod::ipw_logistic) {
        w = logistic_ipw(d).w;
      } else {
        const auto o = maybe_oracle(w_oracle);
        if (!o) throw Error(ErrorKind::config, "--method oracle needs --oracle");
        if (o->mu.size() != d.n()) throw Error(ErrorKind::config, "oracle sidecar does not match the dataset");
        w = o->inverse_propensity(d.A);
      }
      const std::string p = out_path(g, w_out);
      io::save_weights(p, d, w, m);
      print_written(p);
    } else if (*red) {
      const Dataset d = io::load_dataset(r_data).data;
      const Vector w = io::load_weights(r_weights, d.n()).w;
      const auto o = maybe_oracle(r_oracle);
      const Vector gv = g_values(r_g, d, w, o);
      const Vector z = pseudo_outcomes(d, w, gv).z;
      const auto eps = parse_list<double>(r_eps, "--epsilon");
      if (r_dim > d.p()) throw Error(ErrorKind::config, "--dim exceeds the number of covariates");
      SubspaceBasis basis;
      if (r_cv > 0) {
        if (r_cv < 2) throw Error(ErrorKind::config, "--cv needs at least 2 folds");
        std::vector<Index> u_grid;
        for (Index u = 1; u <= r_dim; ++u) u_grid.push_back(u);
        auto pseudo = [&](const std::vector<Index>& rows) { return subset(z, rows); };
        const auto grid = default_lambda_grid(d.n());
        auto scorer = [&](const std::vector<Index>& tr, const std::vector<Index>& ho, const SubspaceBasis& b) {
          const Dataset dtr = d.subset(tr), dho = d.subset(ho);
          const WsvmProblem prob = build_problem(dtr, subset(w, tr), subset(gv, tr), b);
          const Matrix Vho = project(dho.X, b);
          double best = -std::numeric_limits<double>::infinity();
          WsvmOptions so;
          so.warn = false;
          for (double lam : grid) {
            try {
              const DecisionRule rl = fit_wsvm(prob, lam, so);
              const Vector dec = decision_values_reduced(rl, Vho).unaryExpr([](double v) { return sign_plus(v); });
              if (auto v = weighted_value(dec, dho.A, dho.Y, subset(w, ho))) best = std::max(best, *v);
            } catch (const Error&) {
            }
          }
          return best;
        };
        const auto sel = select_reduction(d.X, pseudo, sigma_opt(r_sigma), eps, u_grid, r_cv,
                                          derive_seed(g.seed, streams::folds), scorer);
        basis = sel.basis;
        std::cout << "selected epsilon " << sel.epsilon << " u " << sel.u << "\n";
      } else {
        if (eps.size() != 1) throw Error(ErrorKind::config, "several --epsilon values need --cv");
        basis = top_eigenvectors(gkdr_matrix(d.X, z, sigma_opt(r_sigma), eps[0]), r_dim);
      }
      if (basis.degenerate) std::cerr << "warning: eigenvalues u and u+1 coincide; basis is not unique\n";
      const std::string bp = out_path(g, r_out), ep = out_path(g, r_eig_out);
      io::save_basis(bp, ep, basis);
      print_written(bp);
      print_written(ep);
    } else if (*fit) {
      const Dataset d = io::load_dataset(f_data).data;
      const Vector w = io::load_weights(f_weights, d.n()).w;
      const auto o = maybe_oracle(f_oracle);
      const Vector gv = g_values(f_g, d, w, o);
      const SubspaceBasis basis = f_basis.empty() ? SubspaceBasis::identity(d.p()) : io::load_basis(f_basis, f_eig);
      if (basis.p() != d.p()) throw Error(ErrorKind::config, "basis rows do not match the covariate count");
      const WsvmProblem prob = build_problem(d, w, gv, basis, sigma_opt(f_sigma));
      const std::vector<double> grid = f_lambda.empty() ? default_lambda_grid(d.n()) : parse_list<double>(f_lambda, "--lambda");
      WsvmOptions so;
      so.tol = f_tol;
      const LambdaSelection sel = tune_lambda(prob, grid, f_cv, d, w, derive_seed(g.seed, streams::folds), so);
      const std::string p = out_path(g, f_out);
      io::save_rule(p, sel.rule);
      std::cout << "lambda_n " << sel.lambda_n << " kkt " << sel.rule.kkt_violation << "\n";
      print_written(p);
    } else if (*pred) {
      const DecisionRule rule = io::load_rule(p_rule);
      const Matrix X = io::load_covariates(p_data);
      const Vector f = decision_function(rule, X);
      std::ostringstream s;
      s << "index,treatment,decision_value\n";
      for (Index i = 0; i < f.size(); ++i) {
        s << i << ',' << (sign_plus(f[i]) > 0 ? "1" : "-1") << ',' << io::format_double(f[i]) << '\n';
      }
      const std::string p = out_path(g, p_out);
      io::write_text(p, s.str());
      print_written(p);
    } else if (*evl) {
      const DecisionRule rule = io::load_rule(e_rule);
      const Dataset d = io::load_dataset(e_data).data;
      EvalReport r;
      if (const auto o = maybe_oracle(e_oracle)) {
        if (o->mu.size() != d.n()) throw Error(ErrorKind::config, "oracle sidecar does not match the test set");
        r = evaluate_with_oracle(rule, d, *o);
      } else {
        const LogisticFit lf = fit_logistic(d.X, d.A);
        Vector pi(d.n());
        for (Index i = 0; i < d.n(); ++i) {
          const double p1 = lf.prob_treated(d.X.row(i));
          pi[i] = d.A[i] > 0 ? p1 : 1.0 - p1;
        }
        r = evaluate_without_oracle(rule, d, pi);
      }
      const std::string p = out_path(g, e_out);
      io::write_text(p, io::report_to_json(r).dump(2) + "\n");
      std::cout << io::report_to_json(r).dump() << "\n";
      print_written(p);
    } else if (*rep) {
      ReplicationPlan plan;
      plan.settings = parse_list<int>(rp_settings, "--settings");
      plan.n = rp_n;
      plan.n_test = rp_n_test;
      plan.randomized = rp_randomized;
      plan.n_reps = rp_reps;
      plan.seed = g.seed;
      plan.workers = rp_workers;
      std::stringstream ms(rp_methods);
      std::string tag;
      while (std::getline(ms, tag, ',')) {
        tag = io::trim(tag);
        if (tag.empty()) continue;
        PipelineConfig c;
        std::string base = tag;
        c.weights_method = WeightMethod::kcb;
        if (const auto slash = tag.find('/'); slash != std::string::npos) {
          base = tag.substr(0, slash);
          c.weights_method = parse_weight_method(tag.substr(slash + 1));
        }
        if (base == "DOL-O" || base == "DOL-L") c.reduce = true;
        else if (base == "AOL-O" || base == "AOL-L") c.reduce = false;
        else throw Error(ErrorKind::config, "unknown method '" + tag + "'");
        c.g_mode = base.back() == 'O' ? GMode::oracle : GMode::linear;
        // The AOL baselines weight by the known propensity unless told otherwise.
        if (!c.reduce && tag.find('/') == std::string::npos) c.weights_method = WeightMethod::oracle;
        c.u_grid = parse_list<Index>(rp_u, "--u-grid");
        c.epsilon_grid = parse_list<double>(rp_eps, "--epsilon-grid");
        if (!rp_lambda.empty()) c.lambda_grid = parse_list<double>(rp_lambda, "--lambda-grid");
        c.cv_folds = rp_cv;
        c.reuse_nuisance = rp_reuse;
        c.tag = tag;
        plan.methods.push_back(c);
      }
      const auto rows = run_replications(plan);
      const std::string p = out_path(g, rp_out), sp = out_path(g, rp_summary);
      io::write_text(p, io::replication_csv(rows));
      const auto summary = summarize(rows);
      io::write_text(sp, io::summary_csv(summary));
      for (const auto& s : summary) {
        std::cout << "setting " << s.setting << " n " << s.n << " " << s.method << ": accuracy " << s.accuracy_mean
                  << " value% " << s.value_pct_mean << " errors " << s.errors << "\n";
      }
      print_written(p);
      print_written(sp);
    }
  } catch (const Error& e) {
    std::cerr << "dol: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "dol: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dol: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
