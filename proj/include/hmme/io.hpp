#ifndef HMME_IO_HPP
#define HMME_IO_HPP

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hmme/design.hpp"
#include "hmme/error.hpp"
#include "hmme/inference.hpp"
#include "hmme/model.hpp"
#include "hmme/varcomp.hpp"

namespace hmme::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---- files

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, what + ": " + e.what());
  }
}

// ---- CSV

/// Comma separated, header row first, no quoting. Blank lines are skipped.
inline Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (header) {
      t.header = std::move(cells);
      header = false;
    } else {
      if (cells.size() != t.header.size()) {
        throw Error(ErrorCode::Parse, "CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                          " fields, header has " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (header) throw Error(ErrorCode::Parse, "CSV input is empty");
  return t;
}

inline Table read_csv(const std::string& path) { return parse_csv(read_file(path)); }

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- model description

/// {"response": "y", "fixed": ["intercept", "trt", {"numeric": "x"}], "random": ["block"]}
/// A bare string other than "intercept" is a categorical column; {"factor": c} is the same.
inline ModelDescription model_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, "model description must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "response" && key != "fixed" && key != "random") {
      throw Error(ErrorCode::Parse, "unknown model key '" + key + "'");
    }
  }
  ModelDescription m;
  try {
    m.response = j.at("response").get<std::string>();
    for (const auto& term : j.value("fixed", json::array({"intercept"}))) {
      if (term.is_string()) {
        const auto name = term.get<std::string>();
        m.fixed.push_back(name == "intercept" ? FixedTerm::intercept() : FixedTerm::categorical(name));
      } else if (term.is_object() && term.size() == 1 && term.contains("numeric")) {
        m.fixed.push_back(FixedTerm::numeric(term.at("numeric").get<std::string>()));
      } else if (term.is_object() && term.size() == 1 && term.contains("factor")) {
        m.fixed.push_back(FixedTerm::categorical(term.at("factor").get<std::string>()));
      } else {
        throw Error(ErrorCode::Parse, "fixed term must be \"intercept\", a column name, {\"numeric\": c} or {\"factor\": c}");
      }
    }
    m.random = j.at("random").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("model description: ") + e.what());
  }
  if (m.random.empty()) throw Error(ErrorCode::EmptyDesign, "model needs at least one random factor");
  return m;
}

inline json model_to_json(const ModelDescription& m) {
  json fixed = json::array();
  for (const auto& t : m.fixed) {
    switch (t.kind) {
      case FixedTerm::Kind::Intercept: fixed.push_back("intercept"); break;
      case FixedTerm::Kind::Numeric: fixed.push_back({{"numeric", t.column}}); break;
      case FixedTerm::Kind::Categorical: fixed.push_back({{"factor", t.column}}); break;
    }
  }
  return {{"response", m.response}, {"fixed", fixed}, {"random", m.random}};
}

// ---- Eigen <-> JSON

inline json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

inline VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return VectorXd::Map(v.data(), static_cast<Index>(v.size()));
}

/// Rows of equal length; `cols` is needed to restore an n x 0 or 0 x c shape.
inline MatrixXd matrix_from_json(const json& j, Index cols) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  MatrixXd m(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != cols) throw Error(ErrorCode::Parse, "ragged matrix in JSON");
    for (Index k = 0; k < cols; ++k) m(static_cast<Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return m;
}

/// Non-finite values have no JSON literal; they are written as strings.
inline json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

inline double number_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw Error(ErrorCode::Parse, "unexpected number string '" + s + "'");
  }
  return j.get<double>();
}

// ---- fit artifact

struct FitArtifact {
  int format_version = kFormatVersion;
  std::string timestamp;
  ModelDescription model;
  std::vector<std::string> fixed_labels;
  std::vector<std::string> factor_names;
  std::vector<std::vector<std::string>> level_labels;
  VectorXd y;
  MatrixXd X;
  std::vector<MatrixXd> z_blocks;
  VcMethod method = VcMethod::REML;
  std::optional<VectorXd> prior;
  double eps = 1e-8;
  int max_iter = 500;
  VectorXd sigma2_hat;
  VectorXd sigma2_unconstrained;
  MatrixXd fisher;
  std::optional<MatrixXd> sigma_cov_hat;
  std::optional<double> loglik;
  int iterations = 0;
  bool converged = false;
  bool boundary = false;
  bool non_unique = false;
  VectorXd b_hat;
  VectorXd u_hat;

  LmmSpec spec() const { return LmmSpec(y, X, z_blocks, fixed_labels, factor_names, level_labels); }

  friend bool operator==(const FitArtifact& a, const FitArtifact& b) {
    auto opt_eq = [](const auto& x, const auto& y) { return x.has_value() == y.has_value() && (!x || *x == *y); };
    return a.format_version == b.format_version && a.timestamp == b.timestamp && a.model == b.model &&
           a.fixed_labels == b.fixed_labels && a.factor_names == b.factor_names && a.level_labels == b.level_labels &&
           a.y == b.y && a.X == b.X && a.z_blocks == b.z_blocks && a.method == b.method && opt_eq(a.prior, b.prior) &&
           a.eps == b.eps && a.max_iter == b.max_iter && a.sigma2_hat == b.sigma2_hat &&
           a.sigma2_unconstrained == b.sigma2_unconstrained && a.fisher == b.fisher &&
           opt_eq(a.sigma_cov_hat, b.sigma_cov_hat) && opt_eq(a.loglik, b.loglik) && a.iterations == b.iterations &&
           a.converged == b.converged && a.boundary == b.boundary && a.non_unique == b.non_unique &&
           a.b_hat == b.b_hat && a.u_hat == b.u_hat;
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

inline FitArtifact make_artifact(const LmmSpec& spec, const ModelDescription& model, const VcEstimate& est,
                                 const EstimationOptions& opts, const std::optional<VarComponents>& prior) {
  FitArtifact a;
  a.timestamp = utc_timestamp();
  a.model = model;
  a.fixed_labels = spec.fixed_labels();
  a.factor_names = spec.factor_names();
  a.level_labels = spec.level_labels();
  a.y = spec.y();
  a.X = spec.X();
  a.z_blocks = spec.z_blocks();
  a.method = est.method;
  if (prior) a.prior = prior->values();
  a.eps = opts.eps;
  a.max_iter = opts.max_iter;
  a.sigma2_hat = est.sigma2_hat.values();
  a.sigma2_unconstrained = est.sigma2_unconstrained;
  a.fisher = est.fisher;
  a.sigma_cov_hat = est.sigma_cov_hat;
  a.loglik = est.loglik;
  a.iterations = est.iterations;
  a.converged = est.converged;
  a.boundary = est.boundary;
  a.non_unique = est.non_unique;
  a.b_hat = est.solution.b_tilde;
  a.u_hat = est.solution.u_tilde;
  return a;
}

inline json artifact_to_json(const FitArtifact& a) {
  const auto s = a.sigma2_hat.size();
  json u_by_factor = json::object();
  Index off = 0;
  for (std::size_t i = 0; i < a.factor_names.size(); ++i) {
    json levels = json::object();
    for (const auto& lv : a.level_labels[i]) levels[lv] = a.u_hat(off++);
    u_by_factor[a.factor_names[i]] = levels;
  }
  json z = json::array();
  for (const auto& zb : a.z_blocks) z.push_back({{"columns", zb.cols()}, {"values", to_json(zb)}});
  json b = json::object();
  for (std::size_t j = 0; j < a.fixed_labels.size(); ++j) b[a.fixed_labels[j]] = a.b_hat(static_cast<Index>(j));

  return {
      {"format_version", a.format_version},
      {"timestamp", a.timestamp},
      {"model", model_to_json(a.model)},
      {"design",
       {{"fixed_labels", a.fixed_labels},
        {"factor_names", a.factor_names},
        {"level_labels", a.level_labels},
        {"y", to_json(a.y)},
        {"X", {{"columns", a.X.cols()}, {"values", to_json(a.X)}}},
        {"Z", z}}},
      {"estimation",
       {{"method", std::string(to_string(a.method))},
        {"prior", a.prior ? to_json(*a.prior) : json(nullptr)},
        {"eps", a.eps},
        {"max_iter", a.max_iter}}},
      {"sigma2_hat", to_json(a.sigma2_hat)},
      {"sigma2_unconstrained", to_json(a.sigma2_unconstrained)},
      {"fisher", to_json(a.fisher)},
      {"Sigma_hat", a.sigma_cov_hat ? to_json(*a.sigma_cov_hat) : json(nullptr)},
      {"loglik", a.loglik ? json(*a.loglik) : json(nullptr)},
      {"convergence",
       {{"iterations", a.iterations},
        {"converged", a.converged},
        {"boundary", a.boundary},
        {"non_unique", a.non_unique}}},
      {"b_hat", to_json(a.b_hat)},
      {"b_hat_by_label", b},
      {"u_hat", to_json(a.u_hat)},
      {"u_hat_by_factor", u_by_factor},
      {"components", s},
  };
}

namespace detail {

inline void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw Error(ErrorCode::Parse, "unknown field '" + key + "' in " + where);
  }
  for (const auto& key : allowed) {
    if (!j.contains(key)) throw Error(ErrorCode::Parse, "missing field '" + key + "' in " + where);
  }
}

}  // namespace detail

inline FitArtifact artifact_from_json(const json& j) {
  detail::require_keys(j,
                       {"format_version", "timestamp", "model", "design", "estimation", "sigma2_hat",
                        "sigma2_unconstrained", "fisher", "Sigma_hat", "loglik", "convergence", "b_hat",
                        "b_hat_by_label", "u_hat", "u_hat_by_factor", "components"},
                       "fit artifact");
  FitArtifact a;
  try {
    a.format_version = j.at("format_version").get<int>();
    if (a.format_version != kFormatVersion) {
      throw Error(ErrorCode::Parse, "unsupported fit artifact version " + std::to_string(a.format_version));
    }
    a.timestamp = j.at("timestamp").get<std::string>();
    a.model = model_from_json(j.at("model"));
    const json& d = j.at("design");
    detail::require_keys(d, {"fixed_labels", "factor_names", "level_labels", "y", "X", "Z"}, "design");
    a.fixed_labels = d.at("fixed_labels").get<std::vector<std::string>>();
    a.factor_names = d.at("factor_names").get<std::vector<std::string>>();
    a.level_labels = d.at("level_labels").get<std::vector<std::vector<std::string>>>();
    a.y = vector_from_json(d.at("y"));
    detail::require_keys(d.at("X"), {"columns", "values"}, "design.X");
    a.X = matrix_from_json(d.at("X").at("values"), d.at("X").at("columns").get<Index>());
    for (const auto& zb : d.at("Z")) {
      detail::require_keys(zb, {"columns", "values"}, "design.Z");
      a.z_blocks.push_back(matrix_from_json(zb.at("values"), zb.at("columns").get<Index>()));
    }
    const json& e = j.at("estimation");
    detail::require_keys(e, {"method", "prior", "eps", "max_iter"}, "estimation");
    a.method = parse_vc_method(e.at("method").get<std::string>());
    if (!e.at("prior").is_null()) a.prior = vector_from_json(e.at("prior"));
    a.eps = e.at("eps").get<double>();
    a.max_iter = e.at("max_iter").get<int>();
    a.sigma2_hat = vector_from_json(j.at("sigma2_hat"));
    a.sigma2_unconstrained = vector_from_json(j.at("sigma2_unconstrained"));
    const Index k = a.sigma2_hat.size();
    a.fisher = matrix_from_json(j.at("fisher"), k);
    if (!j.at("Sigma_hat").is_null()) a.sigma_cov_hat = matrix_from_json(j.at("Sigma_hat"), k);
    if (!j.at("loglik").is_null()) a.loglik = j.at("loglik").get<double>();
    const json& c = j.at("convergence");
    detail::require_keys(c, {"iterations", "converged", "boundary", "non_unique"}, "convergence");
    a.iterations = c.at("iterations").get<int>();
    a.converged = c.at("converged").get<bool>();
    a.boundary = c.at("boundary").get<bool>();
    a.non_unique = c.at("non_unique").get<bool>();
    a.b_hat = vector_from_json(j.at("b_hat"));
    a.u_hat = vector_from_json(j.at("u_hat"));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("fit artifact: ") + ex.what());
  }
  validate_spec(a.spec());
  if (a.sigma2_hat.size() != static_cast<Index>(a.z_blocks.size()) + 1 || a.b_hat.size() != a.X.cols() ||
      a.u_hat.size() != a.spec().r()) {
    throw Error(ErrorCode::Parse, "fit artifact estimates do not match its design");
  }
  return a;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---- contrast file

/// {"contrasts": [ ... one entry per column of Lambda ... ], "w0": [..]}
/// An entry is either dense, {"k": [p numbers], "l": [r numbers]}, or
/// symbolic, {"fixed": {"(Intercept)": 1}, "random": {"group:A": 1}} with
/// fixed keys taken from the fixed labels and random keys "factor:level".
struct ContrastFile {
  ContrastSet contrast;
  std::optional<VectorXd> w0;
};

inline ContrastFile contrast_from_json(const json& j, const LmmSpec& spec) {
  if (!j.is_object() || !j.contains("contrasts")) throw Error(ErrorCode::Parse, "contrast file needs a \"contrasts\" array");
  for (const auto& [key, _] : j.items()) {
    if (key != "contrasts" && key != "w0") throw Error(ErrorCode::Parse, "unknown field '" + key + "' in contrast file");
  }
  const json& list = j.at("contrasts");
  if (!list.is_array() || list.empty()) throw Error(ErrorCode::Parse, "\"contrasts\" must be a nonempty array");
  const Index p = spec.p();
  const Index r = spec.r();
  const auto q = static_cast<Index>(list.size());
  MatrixXd k = MatrixXd::Zero(p, q);
  MatrixXd l = MatrixXd::Zero(r, q);
  try {
    for (Index c = 0; c < q; ++c) {
      const json& e = list.at(static_cast<std::size_t>(c));
      if (!e.is_object()) throw Error(ErrorCode::Parse, "contrast entries must be objects");
      for (const auto& [key, _] : e.items()) {
        if (key != "k" && key != "l" && key != "fixed" && key != "random") {
          throw Error(ErrorCode::Parse, "unknown field '" + key + "' in contrast entry");
        }
      }
      if (e.contains("k") || e.contains("l")) {
        if (e.contains("fixed") || e.contains("random")) {
          throw Error(ErrorCode::Parse, "a contrast entry is either dense (k, l) or symbolic (fixed, random)");
        }
        if (e.contains("k")) {
          const VectorXd kv = vector_from_json(e.at("k"));
          if (kv.size() != p) throw Error(ErrorCode::DimensionMismatch, "k needs p = " + std::to_string(p) + " entries");
          k.col(c) = kv;
        }
        if (e.contains("l")) {
          const VectorXd lv = vector_from_json(e.at("l"));
          if (lv.size() != r) throw Error(ErrorCode::DimensionMismatch, "l needs r = " + std::to_string(r) + " entries");
          l.col(c) = lv;
        }
        continue;
      }
      const json fixed = e.value("fixed", json::object());
      const json random = e.value("random", json::object());
      for (const auto& [label, value] : fixed.items()) {
        const auto& labels = spec.fixed_labels();
        auto it = std::find(labels.begin(), labels.end(), label);
        if (it == labels.end()) throw Error(ErrorCode::Parse, "unknown fixed effect '" + label + "'");
        k(static_cast<Index>(it - labels.begin()), c) = value.get<double>();
      }
      for (const auto& [sel, value] : random.items()) {
        const auto colon = sel.find(':');
        if (colon == std::string::npos) throw Error(ErrorCode::Parse, "random selector '" + sel + "' must be factor:level");
        const std::string factor = sel.substr(0, colon);
        const std::string level = sel.substr(colon + 1);
        const auto& names = spec.factor_names();
        auto fit = std::find(names.begin(), names.end(), factor);
        if (fit == names.end()) throw Error(ErrorCode::Parse, "unknown random factor '" + factor + "'");
        const auto fi = static_cast<Index>(fit - names.begin());
        const auto& lv = spec.level_labels()[static_cast<std::size_t>(fi)];
        auto lit = std::find(lv.begin(), lv.end(), level);
        if (lit == lv.end()) throw Error(ErrorCode::Parse, "factor '" + factor + "' has no level '" + level + "'");
        l(spec.offset(fi) + static_cast<Index>(lit - lv.begin()), c) = value.get<double>();
      }
    }
    std::optional<VectorXd> w0;
    if (j.contains("w0")) {
      w0 = vector_from_json(j.at("w0"));
      if (w0->size() != q) throw Error(ErrorCode::DimensionMismatch, "w0 needs one entry per contrast");
    }
    return {ContrastSet(k, l), w0};
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::Parse, std::string("contrast file: ") + ex.what());
  }
}

// ---- inference report

inline json report_to_json(const InferenceResult& r, const ContrastSet& contrast) {
  json interval = nullptr;
  if (r.interval) interval = {{"lower", r.interval->lower}, {"upper", r.interval->upper}};
  return {{"format_version", kFormatVersion},
          {"method", std::string(to_string(r.method))},
          {"K", to_json(contrast.K())},
          {"L", to_json(contrast.L())},
          {"w_hat", to_json(r.w_hat)},
          {"w0", to_json(r.w0)},
          {"mse_used", to_json(r.mse_used)},
          {"statistic_kind", r.statistic_kind},
          {"statistic", number_to_json(r.statistic)},
          {"df", number_to_json(r.df)},
          {"df_num", r.df_num},
          {"kappa", number_to_json(r.kappa)},
          {"p_value", number_to_json(r.p_value)},
          {"level", r.level},
          {"interval", interval},
          {"region",
           {{"center", to_json(r.region.center)},
            {"shape", to_json(r.region.shape)},
            {"radius2", number_to_json(r.region.radius2)}}},
          {"flags", r.flags}};
}

// ---- simulation

struct SimulationDesign {
  /// Crossed random factors: (name, number of levels).
  std::vector<std::pair<std::string, int>> factors;
  int reps = 1;
  /// sigma2_1..sigma2_s, sigma2_e.
  VectorXd sigma2;
  double intercept = 0.0;
  std::uint64_t seed = 1;
};

/// Every combination of factor levels is replicated `reps` times;
/// y = intercept + sum_i u_i[level_i] + e with independent normal draws.
/// Level labels are the factor name followed by the 1-based level index.
inline std::string simulate_csv(const SimulationDesign& d) {
  if (d.factors.empty()) throw Error(ErrorCode::InvalidArgument, "simulation needs at least one factor");
  if (d.reps < 1) throw Error(ErrorCode::InvalidArgument, "reps must be at least 1");
  for (const auto& [name, levels] : d.factors) {
    if (name.empty() || name == "y") throw Error(ErrorCode::InvalidArgument, "invalid factor name '" + name + "'");
    if (levels < 2) throw Error(ErrorCode::InvalidArgument, "factor '" + name + "' needs at least 2 levels");
  }
  if (d.sigma2.size() != static_cast<Index>(d.factors.size()) + 1) {
    throw Error(ErrorCode::DimensionMismatch, "sigma2 needs one entry per factor plus the error variance");
  }
  const VarComponents vc(d.sigma2);  // rejects nonpositive entries

  std::mt19937_64 rng(d.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> effects;
  for (std::size_t i = 0; i < d.factors.size(); ++i) {
    std::vector<double> u(static_cast<std::size_t>(d.factors[i].second));
    for (auto& x : u) x = std::sqrt(vc[static_cast<Index>(i)]) * normal(rng);
    effects.push_back(std::move(u));
  }

  std::ostringstream out;
  for (const auto& f : d.factors) out << f.first << ',';
  out << "y\n";
  std::vector<int> idx(d.factors.size(), 0);
  const double se = std::sqrt(vc.error_variance());
  while (true) {
    for (int rep = 0; rep < d.reps; ++rep) {
      double y = d.intercept;
      for (std::size_t i = 0; i < d.factors.size(); ++i) {
        out << d.factors[i].first << idx[i] + 1 << ',';
        y += effects[i][static_cast<std::size_t>(idx[i])];
      }
      y += se * normal(rng);
      out << format_double(y) << '\n';
    }
    std::size_t k = d.factors.size();
    while (k > 0) {
      --k;
      if (++idx[k] < d.factors[k].second) break;
      idx[k] = 0;
      if (k == 0) return out.str();
    }
  }
}

// ---- small parsing helpers for flag values

inline VectorXd parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> v;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string cell = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    auto x = parse_double(cell);
    if (!x) throw Error(ErrorCode::Parse, what + ": '" + cell + "' is not a number");
    v.push_back(*x);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return VectorXd::Map(v.data(), static_cast<Index>(v.size()));
}

/// "a:4,b:3" -> {(a, 4), (b, 3)}
inline std::vector<std::pair<std::string, int>> parse_factor_list(const std::string& text) {
  std::vector<std::pair<std::string, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::Parse, "factor spec '" + item + "' must be name:levels");
    auto n = parse_double(item.substr(colon + 1));
    if (!n || *n != std::floor(*n)) throw Error(ErrorCode::Parse, "factor spec '" + item + "' needs an integer level count");
    out.emplace_back(item.substr(0, colon), static_cast<int>(*n));
  }
  if (out.empty()) throw Error(ErrorCode::Parse, "empty factor list");
  return out;
}

}  // namespace hmme::io

#endif  // HMME_IO_HPP
