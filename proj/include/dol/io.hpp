#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dol/balancing.hpp"
#include "dol/eval.hpp"
#include "dol/gkdr.hpp"
#include "dol/owl.hpp"
#include "dol/pipeline.hpp"
#include "dol/simgen.hpp"
#include "dol/types.hpp"

namespace dol::io {

using json = nlohmann::json;

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Parses a finite double; empty fields and NA markers are missing values.
inline double parse_double(const std::string& field, const std::string& where) {
  const std::string f = trim(field);
  if (f.empty() || f == "NA" || f == "na" || f == "NaN" || f == "nan") {
    throw Error(ErrorKind::parse, "missing value at " + where);
  }
  double v = 0.0;
  const char* b = f.data();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, f.data() + f.size(), v);
  if (r.ec != std::errc() || r.ptr != f.data() + f.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::parse, "cannot parse '" + f + "' as a number at " + where);
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(ErrorKind::parse, path + ": row " + std::to_string(t.rows.size() + 1) + " (line " +
                                        std::to_string(ln) + ") has " + std::to_string(fields.size()) +
                                        " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(ln);
  }
  if (t.header.empty()) throw Error(ErrorKind::parse, path + ": missing header row");
  return t;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::config, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::config, "write to '" + path + "' failed");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- datasets -------------------------------------------------------------

struct LoadedDataset {
  Dataset data;
  std::vector<std::string> covariate_names;
};

/// Header row required. Column `A` holds the treatment (+1/-1, or 1/0 with
/// 0 read as -1), column `Y` the outcome, every other column is a covariate
/// in header order.
inline LoadedDataset parse_dataset(const CsvTable& t, const std::string& name = "dataset") {
  LoadedDataset out;
  int a_col = -1, y_col = -1;
  std::vector<int> x_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] == "A") a_col = static_cast<int>(c);
    else if (t.header[c] == "Y") y_col = static_cast<int>(c);
    else {
      x_cols.push_back(static_cast<int>(c));
      out.covariate_names.push_back(t.header[c]);
    }
  }
  if (a_col < 0 || y_col < 0) throw Error(ErrorKind::parse, name + ": header needs columns A and Y");
  const Index n = static_cast<Index>(t.rows.size());
  Dataset& d = out.data;
  d.X.resize(n, static_cast<Index>(x_cols.size()));
  d.A.resize(n);
  d.Y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    const std::string where = name + " row " + std::to_string(i + 1);
    const double a = parse_double(row[static_cast<std::size_t>(a_col)], where + ", column A");
    if (a == 1.0) d.A[i] = 1.0;
    else if (a == -1.0 || a == 0.0) d.A[i] = -1.0;
    else throw Error(ErrorKind::parse, "treatment value '" + row[static_cast<std::size_t>(a_col)] + "' at " + where +
                                           " is not one of -1, 0, 1");
    d.Y[i] = parse_double(row[static_cast<std::size_t>(y_col)], where + ", column Y");
    for (std::size_t k = 0; k < x_cols.size(); ++k) {
      d.X(i, static_cast<Index>(k)) =
          parse_double(row[static_cast<std::size_t>(x_cols[k])], where + ", column " + t.header[static_cast<std::size_t>(x_cols[k])]);
    }
  }
  return out;
}

inline LoadedDataset load_dataset(const std::string& path) { return parse_dataset(read_csv(path), path); }

/// Covariate matrix from a CSV; columns A and Y are ignored when present.
inline Matrix load_covariates(const std::string& path) {
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] != "A" && t.header[c] != "Y") cols.push_back(c);
  }
  Matrix X(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      X(static_cast<Index>(r), static_cast<Index>(k)) =
          parse_double(t.rows[r][cols[k]], path + " row " + std::to_string(r + 1) + ", column " + t.header[cols[k]]);
    }
  }
  return X;
}

inline std::string dataset_csv(const Dataset& d, const std::vector<std::string>& names = {}) {
  std::ostringstream s;
  for (Index j = 0; j < d.p(); ++j) {
    s << (names.size() == static_cast<std::size_t>(d.p()) ? names[static_cast<std::size_t>(j)] : "X" + std::to_string(j + 1))
      << ',';
  }
  s << "A,Y\n";
  for (Index i = 0; i < d.n(); ++i) {
    for (Index j = 0; j < d.p(); ++j) s << format_double(d.X(i, j)) << ',';
    s << (d.A[i] > 0 ? "1" : "-1") << ',' << format_double(d.Y[i]) << '\n';
  }
  return s.str();
}

inline void save_dataset(const std::string& path, const Dataset& d, const std::vector<std::string>& names = {}) {
  write_text(path, dataset_csv(d, names));
}

// ---- weights --------------------------------------------------------------

inline std::string weights_csv(const Dataset& d, const Vector& w, WeightMethod method) {
  std::ostringstream s;
  s << "index,treatment,weight,method\n";
  for (Index i = 0; i < w.size(); ++i) {
    s << i << ',' << (d.A[i] > 0 ? "1" : "-1") << ',' << format_double(w[i]) << ',' << to_string(method) << '\n';
  }
  return s.str();
}

inline void save_weights(const std::string& path, const Dataset& d, const Vector& w, WeightMethod method) {
  write_text(path, weights_csv(d, w, method));
}

/// Complete weights indexed 0..n-1; every unit must appear exactly once.
inline BalancingWeights load_weights(const std::string& path, Index n) {
  const CsvTable t = read_csv(path);
  int ic = -1, wc = -1, mc = -1;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] == "index") ic = static_cast<int>(c);
    if (t.header[c] == "weight") wc = static_cast<int>(c);
    if (t.header[c] == "method") mc = static_cast<int>(c);
  }
  if (ic < 0 || wc < 0) throw Error(ErrorKind::parse, path + ": header needs columns index and weight");
  Vector w = Vector::Constant(n, std::nan(""));
  WeightMethod method = WeightMethod::kcb;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + " row " + std::to_string(r + 1);
    const double idx = parse_double(t.rows[r][static_cast<std::size_t>(ic)], where);
    if (idx < 0 || idx >= static_cast<double>(n) || idx != std::floor(idx)) {
      throw Error(ErrorKind::index, "weight index out of range at " + where);
    }
    const Index i = static_cast<Index>(idx);
    if (!std::isnan(w[i])) throw Error(ErrorKind::index, "duplicate weight index at " + where);
    w[i] = parse_double(t.rows[r][static_cast<std::size_t>(wc)], where);
    if (mc >= 0) method = parse_weight_method(t.rows[r][static_cast<std::size_t>(mc)]);
  }
  for (Index i = 0; i < n; ++i) {
    if (std::isnan(w[i])) throw Error(ErrorKind::index, path + ": no weight for unit " + std::to_string(i));
  }
  return make_complete_weights(std::move(w), method);
}

// ---- bases ----------------------------------------------------------------

inline std::string basis_csv(const SubspaceBasis& b) {
  std::ostringstream s;
  for (Index k = 0; k < b.u(); ++k) s << (k ? "," : "") << "b" << k + 1;
  s << '\n';
  for (Index r = 0; r < b.p(); ++r) {
    for (Index k = 0; k < b.u(); ++k) s << (k ? "," : "") << format_double(b.B(r, k));
    s << '\n';
  }
  return s.str();
}

inline std::string eigenvalues_csv(const SubspaceBasis& b) {
  std::ostringstream s;
  s << "index,eigenvalue\n";
  for (Index k = 0; k < b.eigenvalues.size(); ++k) s << k + 1 << ',' << format_double(b.eigenvalues[k]) << '\n';
  return s.str();
}

inline void save_basis(const std::string& basis_path, const std::string& eig_path, const SubspaceBasis& b) {
  write_text(basis_path, basis_csv(b));
  if (!eig_path.empty()) write_text(eig_path, eigenvalues_csv(b));
}

inline SubspaceBasis load_basis(const std::string& basis_path, const std::string& eig_path = "") {
  const CsvTable t = read_csv(basis_path);
  SubspaceBasis b;
  const Index u = static_cast<Index>(t.header.size());
  b.B.resize(static_cast<Index>(t.rows.size()), u);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (Index k = 0; k < u; ++k) {
      b.B(static_cast<Index>(r), k) =
          parse_double(t.rows[r][static_cast<std::size_t>(k)], basis_path + " row " + std::to_string(r + 1));
    }
  }
  if (!(b.B.transpose() * b.B - Matrix::Identity(u, u)).isZero(1e-8)) {
    throw Error(ErrorKind::parse, basis_path + ": basis columns are not orthonormal");
  }
  b.eigenvalues = Vector::Zero(u);
  if (!eig_path.empty()) {
    const CsvTable e = read_csv(eig_path);
    if (static_cast<Index>(e.rows.size()) != u) throw Error(ErrorKind::parse, eig_path + ": expected one row per column");
    for (Index k = 0; k < u; ++k) {
      b.eigenvalues[k] = parse_double(e.rows[static_cast<std::size_t>(k)].back(), eig_path + " row " + std::to_string(k + 1));
    }
  }
  return b;
}

// ---- JSON helpers ---------------------------------------------------------

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorKind::parse, what + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::parse, what + " holds a non-number");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const json& j, Index cols_if_empty, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorKind::parse, what + " must be an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Vector row = vector_from_json(j[static_cast<std::size_t>(r)], what);
    if (row.size() != cols) throw Error(ErrorKind::parse, what + " rows have unequal lengths");
    m.row(r) = row.transpose();
  }
  return m;
}

inline const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorKind::parse, std::string("missing field '") + key + "'");
  return j.at(key);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, what + ": " + e.what());
  }
}

// ---- rules ----------------------------------------------------------------

inline json rule_to_json(const DecisionRule& r) {
  return json{{"format", "dol-rule"},
              {"version", 1},
              {"lambda_n", r.lambda_n},
              {"intercept", r.intercept},
              {"bandwidth", r.bandwidth.sigma},
              {"kkt_violation", r.kkt_violation},
              {"basis", to_json(r.basis.B)},
              {"eigenvalues", to_json(r.basis.eigenvalues)},
              {"alphas", to_json(r.alphas)},
              {"train_points_reduced", to_json(r.train_points_reduced)}};
}

inline DecisionRule rule_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "dol-rule") throw Error(ErrorKind::parse, "not a rule file");
    DecisionRule r;
    r.lambda_n = field(j, "lambda_n").get<double>();
    r.intercept = field(j, "intercept").get<double>();
    r.bandwidth = Bandwidth(field(j, "bandwidth").get<double>());
    r.kkt_violation = j.value("kkt_violation", 0.0);
    r.basis.B = matrix_from_json(field(j, "basis"), 0, "basis");
    r.basis.eigenvalues = j.contains("eigenvalues") ? vector_from_json(j["eigenvalues"], "eigenvalues")
                                                    : Vector::Zero(r.basis.B.cols());
    r.alphas = vector_from_json(field(j, "alphas"), "alphas");
    r.train_points_reduced = matrix_from_json(field(j, "train_points_reduced"), r.basis.B.cols(), "train_points_reduced");
    if (r.train_points_reduced.rows() != r.alphas.size() || r.train_points_reduced.cols() != r.basis.B.cols()) {
      throw Error(ErrorKind::parse, "rule arrays have inconsistent sizes");
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("rule file: ") + e.what());
  }
}

inline void save_rule(const std::string& path, const DecisionRule& r) { write_text(path, rule_to_json(r).dump(2) + "\n"); }

inline DecisionRule load_rule(const std::string& path) { return rule_from_json(parse_json(read_text(path), path)); }

// ---- oracle sidecar -------------------------------------------------------

inline json oracle_to_json(const SimOracle& o) {
  return json{{"format", "dol-oracle"}, {"version", 1},           {"setting", o.setting},
              {"randomized", o.randomized}, {"B0", to_json(o.B0)}, {"latent", to_json(o.latent)},
              {"mu", to_json(o.mu)},     {"f_tilde", to_json(o.f_tilde)}, {"pi", to_json(o.propensity)}};
}

inline SimOracle oracle_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "dol-oracle") throw Error(ErrorKind::parse, "not an oracle sidecar");
    SimOracle o;
    o.setting = field(j, "setting").get<int>();
    o.randomized = field(j, "randomized").get<bool>();
    o.B0 = matrix_from_json(field(j, "B0"), 0, "B0");
    o.latent = matrix_from_json(field(j, "latent"), kSimDimension, "latent");
    o.mu = vector_from_json(field(j, "mu"), "mu");
    o.f_tilde = vector_from_json(field(j, "f_tilde"), "f_tilde");
    o.propensity = vector_from_json(field(j, "pi"), "pi");
    const Index n = o.mu.size();
    if (o.f_tilde.size() != n || o.propensity.size() != n || o.latent.rows() != n) {
      throw Error(ErrorKind::parse, "oracle arrays have inconsistent lengths");
    }
    return o;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("oracle file: ") + e.what());
  }
}

inline void save_oracle(const std::string& path, const SimOracle& o) { write_text(path, oracle_to_json(o).dump() + "\n"); }

inline SimOracle load_oracle(const std::string& path) { return oracle_from_json(parse_json(read_text(path), path)); }

// ---- reports --------------------------------------------------------------

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json report_to_json(const EvalReport& r) {
  return json{{"accuracy", number_or_null(r.accuracy)},
              {"value_estimate", number_or_null(r.value_estimate)},
              {"value_pct_of_bayes", number_or_null(r.value_pct_of_bayes)},
              {"modified_value", number_or_null(r.modified_value)},
              {"projection_error", number_or_null(r.projection_error)},
              {"n_test", r.n_test}};
}

inline std::string replication_csv(const std::vector<ReplicationResult>& rows) {
  std::ostringstream s;
  s << "replicate_id,setting,n,method,accuracy,value_pct,projection_error,wall_time,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    for (char& c : err) if (c == ',' || c == '\n' || c == '"') c = ';';
    s << r.replicate_id << ',' << r.setting << ',' << r.n << ',' << r.method << ',' << format_double(r.accuracy) << ','
      << format_double(r.value_pct) << ',' << format_double(r.projection_error) << ',' << format_double(r.wall_time)
      << ',' << err << '\n';
  }
  return s.str();
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream s;
  s << "setting,n,method,count,errors,accuracy_mean,accuracy_sd,value_pct_mean,value_pct_sd,"
       "projection_error_mean,projection_error_sd\n";
  for (const auto& r : rows) {
    s << r.setting << ',' << r.n << ',' << r.method << ',' << r.count << ',' << r.errors << ','
      << format_double(r.accuracy_mean) << ',' << format_double(r.accuracy_sd) << ','
      << format_double(r.value_pct_mean) << ',' << format_double(r.value_pct_sd) << ','
      << format_double(r.projection_error_mean) << ',' << format_double(r.projection_error_sd) << '\n';
  }
  return s.str();
}

}  // namespace dol::io
