#pragma once

// Data-generating scenarios: covariate law, participation, propensity, CATE and
// baseline models, each a coefficient list over a small term vocabulary.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebcal/basis.hpp"
#include "ebcal/basis_parser.hpp"
#include "ebcal/error.hpp"

namespace ebcal {

enum class ModelTermKind { Constant, Linear, Square, Max, Exp };

struct ModelTerm {
  ModelTermKind kind = ModelTermKind::Constant;
  double coef = 0.0;
  int var = -1;
  int var2 = -1;  // Max only
  double offset = 0.0;                       // Exp only
  std::vector<std::pair<int, double>> slope;  // Exp only: exp(offset + sum a_k x_k)

  static ModelTerm constant(double c) { return make(ModelTermKind::Constant, c); }
  static ModelTerm linear(int v, double c) { return make(ModelTermKind::Linear, c, v); }
  static ModelTerm square(int v, double c) { return make(ModelTermKind::Square, c, v); }
  static ModelTerm max(int v1, int v2, double c) { return make(ModelTermKind::Max, c, v1, v2); }
  static ModelTerm exp(double c, double offset, std::vector<std::pair<int, double>> slope) {
    ModelTerm t = make(ModelTermKind::Exp, c);
    t.offset = offset;
    t.slope = std::move(slope);
    return t;
  }

  double evaluate(std::span<const double> x) const {
    switch (kind) {
      case ModelTermKind::Constant: return coef;
      case ModelTermKind::Linear: return coef * x[var];
      case ModelTermKind::Square: return coef * x[var] * x[var];
      case ModelTermKind::Max: return coef * std::max(x[var], x[var2]);
      case ModelTermKind::Exp: {
        double a = offset;
        for (auto [v, c] : slope) a += c * x[v];
        return coef * std::exp(a);
      }
    }
    return 0.0;
  }

  int max_var() const {
    int m = std::max(var, var2);
    for (auto [v, c] : slope) m = std::max(m, v);
    return m;
  }

 private:
  static ModelTerm make(ModelTermKind kind, double coef, int var = -1, int var2 = -1) {
    ModelTerm t;
    t.kind = kind;
    t.coef = coef;
    t.var = var;
    t.var2 = var2;
    return t;
  }
};

/// Sum of terms.
struct Model {
  std::vector<ModelTerm> terms;

  double operator()(std::span<const double> x) const {
    double s = 0;
    for (const auto& t : terms) s += t.evaluate(x);
    return s;
  }

  int max_var() const {
    int m = -1;
    for (const auto& t : terms) m = std::max(m, t.max_var());
    return m;
  }

  static Model linear(std::initializer_list<std::pair<int, double>> coefs, double intercept = 0.0) {
    Model m;
    if (intercept != 0.0) m.terms.push_back(ModelTerm::constant(intercept));
    for (auto [v, c] : coefs) m.terms.push_back(ModelTerm::linear(v, c));
    return m;
  }
};

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct CovariateLaw {
  enum class Kind { Uniform, Normal };
  Kind kind = Kind::Uniform;
  int dim = 5;
  double lo = -2.0;  // Uniform bounds
  double hi = 2.0;
  double mean = 0.0;  // Normal parameters
  double sd = 1.0;
};

struct ScenarioConfig {
  std::string name;
  CovariateLaw law;
  Model participation;  // logit of P(S = 1 | x)
  Model propensity;     // logit of P(A = 1 | x, S = 1)
  Model cate;
  Model baseline;
  std::string propensity_tag = "custom";
  std::string cate_tag = "custom";
  std::string baseline_tag = "custom";
  double noise_sd = 1.0;
  int n = 800;
  int replicates = 400;
  std::uint64_t seed = 20240601;
  std::string basis = "H:const,x1,x2,x3;G:x4,x5";

  BasisSpec basis_spec() const { return parse_basis(basis); }
};

// x1..x5 are indices 0..4.
inline Model participation_model() { return Model::linear({{0, 0.4}, {1, 0.3}, {3, -0.2}}); }

inline Model propensity_model(const std::string& tag) {
  if (tag == "P1") return Model::linear({{1, 0.7}, {2, 0.5}});
  if (tag == "P2") return Model::linear({{1, 0.35}, {2, 0.25}, {3, 0.2}, {4, -0.7}});
  if (tag == "P3") {
    Model m = Model::linear({{1, 0.35}, {4, -0.7}});
    m.terms.push_back(ModelTerm::max(2, 3, -0.4));
    return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown propensity tag '" + tag + "'");
}

inline Model cate_model(const std::string& tag) {
  if (tag == "T1") return Model::linear({{0, 1.0}, {1, -0.6}, {2, -0.4}});
  if (tag == "T2") {
    Model m = Model::linear({{0, 1.0}});
    m.terms.push_back(ModelTerm::exp(-0.5, 0.0, {{1, 1.0}, {2, -0.5}}));
    return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown CATE tag '" + tag + "'");
}

inline Model baseline_model(const std::string& tag) {
  if (tag == "M1") return Model::linear({{0, 0.5}, {1, 0.3}, {2, 0.3}, {3, -0.4}, {4, -0.5}});
  if (tag == "M2") {
    Model m = Model::linear({{0, 0.5}, {4, -0.5}});
    m.terms.push_back(ModelTerm::square(1, 0.3));
    m.terms.push_back(ModelTerm::exp(0.2, -1.0, {{2, 1.0}, {3, -1.0}}));
    return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown baseline tag '" + tag + "'");
}

/// One cell of the published simulation grid, e.g. builtin_scenario("P2", "T1", "M1").
inline ScenarioConfig builtin_scenario(const std::string& p, const std::string& t, const std::string& m) {
  ScenarioConfig c;
  c.name = p + "-" + t + "-" + m;
  c.participation = participation_model();
  c.propensity = propensity_model(p);
  c.cate = cate_model(t);
  c.baseline = baseline_model(m);
  c.propensity_tag = p;
  c.cate_tag = t;
  c.baseline_tag = m;
  return c;
}

/// All twelve (P, T, M) cells.
inline std::vector<ScenarioConfig> builtin_grid() {
  std::vector<ScenarioConfig> out;
  for (const char* m : {"M1", "M2"})
    for (const char* t : {"T1", "T2"})
      for (const char* p : {"P1", "P2", "P3"}) out.push_back(builtin_scenario(p, t, m));
  return out;
}

// ---- JSON ----------------------------------------------------------------

namespace detail {

inline int var_index(const std::string& name) {
  if (name.size() < 2 || name[0] != 'x') throw Error(ErrorCode::InvalidArgument, "variable must be xK, got " + name);
  int k = 0;
  auto [p, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc() || p != name.data() + name.size() || k < 1)
    throw Error(ErrorCode::InvalidArgument, "variable must be xK with K >= 1, got " + name);
  return k - 1;
}

inline std::string var_name(int v) { return "x" + std::to_string(v + 1); }

}  // namespace detail

inline void to_json(nlohmann::json& j, const ModelTerm& t) {
  switch (t.kind) {
    case ModelTermKind::Constant: j = {{"kind", "constant"}, {"coef", t.coef}}; break;
    case ModelTermKind::Linear: j = {{"kind", "linear"}, {"coef", t.coef}, {"var", detail::var_name(t.var)}}; break;
    case ModelTermKind::Square: j = {{"kind", "square"}, {"coef", t.coef}, {"var", detail::var_name(t.var)}}; break;
    case ModelTermKind::Max:
      j = {{"kind", "max"}, {"coef", t.coef}, {"vars", {detail::var_name(t.var), detail::var_name(t.var2)}}};
      break;
    case ModelTermKind::Exp: {
      nlohmann::json slope = nlohmann::json::object();
      for (auto [v, c] : t.slope) slope[detail::var_name(v)] = c;
      j = {{"kind", "exp"}, {"coef", t.coef}, {"offset", t.offset}, {"slope", slope}};
      break;
    }
  }
}

inline void from_json(const nlohmann::json& j, ModelTerm& t) {
  const std::string kind = j.at("kind").get<std::string>();
  t = {};
  t.coef = j.value("coef", 1.0);
  if (kind == "constant") {
    t.kind = ModelTermKind::Constant;
  } else if (kind == "linear" || kind == "square") {
    t.kind = kind == "linear" ? ModelTermKind::Linear : ModelTermKind::Square;
    t.var = detail::var_index(j.at("var").get<std::string>());
  } else if (kind == "max") {
    t.kind = ModelTermKind::Max;
    const auto& v = j.at("vars");
    if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::InvalidArgument, "max term needs two vars");
    t.var = detail::var_index(v[0].get<std::string>());
    t.var2 = detail::var_index(v[1].get<std::string>());
  } else if (kind == "exp") {
    t.kind = ModelTermKind::Exp;
    t.offset = j.value("offset", 0.0);
    for (const auto& [k, c] : j.at("slope").items()) t.slope.emplace_back(detail::var_index(k), c.get<double>());
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown model term kind '" + kind + "'");
  }
}

inline void to_json(nlohmann::json& j, const Model& m) { j = m.terms; }
inline void from_json(const nlohmann::json& j, Model& m) { m.terms = j.get<std::vector<ModelTerm>>(); }

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json law;
  if (c.law.kind == CovariateLaw::Kind::Uniform)
    law = {{"kind", "uniform"}, {"dim", c.law.dim}, {"lo", c.law.lo}, {"hi", c.law.hi}};
  else
    law = {{"kind", "normal"}, {"dim", c.law.dim}, {"mean", c.law.mean}, {"sd", c.law.sd}};
  auto model_field = [](const std::string& tag, const Model& m) -> nlohmann::json {
    if (tag != "custom") return tag;
    return m;
  };
  return {{"name", c.name},
          {"covariates", law},
          {"participation", nlohmann::json(c.participation)},
          {"propensity", model_field(c.propensity_tag, c.propensity)},
          {"cate", model_field(c.cate_tag, c.cate)},
          {"baseline", model_field(c.baseline_tag, c.baseline)},
          {"noise_sd", c.noise_sd},
          {"n", c.n},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"basis", c.basis}};
}

/// Reads one scenario object. Models are either a tag ("P1", "T2", ...) or a
/// list of terms.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.participation = participation_model();
    if (j.contains("covariates")) {
      const auto& law = j.at("covariates");
      const std::string kind = law.value("kind", "uniform");
      c.law.dim = law.value("dim", 5);
      if (kind == "uniform") {
        c.law.kind = CovariateLaw::Kind::Uniform;
        c.law.lo = law.value("lo", -2.0);
        c.law.hi = law.value("hi", 2.0);
        if (!(c.law.hi > c.law.lo)) throw Error(ErrorCode::InvalidArgument, "uniform law needs hi > lo");
      } else if (kind == "normal") {
        c.law.kind = CovariateLaw::Kind::Normal;
        c.law.mean = law.value("mean", 0.0);
        c.law.sd = law.value("sd", 1.0);
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown covariate law '" + kind + "'");
      }
    }
    if (j.contains("participation") && !j.at("participation").is_string())
      c.participation = j.at("participation").get<Model>();
    auto read_model = [&](const char* key, auto tag_fn, Model& model, std::string& tag) {
      const auto& v = j.at(key);
      if (v.is_string()) {
        tag = v.get<std::string>();
        model = tag_fn(tag);
      } else {
        tag = "custom";
        model = v.get<Model>();
      }
    };
    read_model("propensity", propensity_model, c.propensity, c.propensity_tag);
    read_model("cate", cate_model, c.cate, c.cate_tag);
    read_model("baseline", baseline_model, c.baseline, c.baseline_tag);
    c.name = j.value("name", c.propensity_tag + "-" + c.cate_tag + "-" + c.baseline_tag);
    c.noise_sd = j.value("noise_sd", 1.0);
    c.n = j.value("n", 800);
    c.replicates = j.value("replicates", 400);
    c.seed = j.value("seed", c.seed);
    c.basis = j.value("basis", c.basis);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("scenario: ") + e.what());
  }
  if (c.n < 4 || c.replicates < 1 || !(c.noise_sd >= 0))
    throw Error(ErrorCode::InvalidArgument, "scenario needs n >= 4, replicates >= 1, noise_sd >= 0");
  const int max_var = std::max({c.participation.max_var(), c.propensity.max_var(), c.cate.max_var(),
                                c.baseline.max_var(), c.basis_spec().max_var()});
  if (max_var >= c.law.dim) throw Error(ErrorCode::IndexOutOfRange, "scenario references a covariate beyond dim");
  return c;
}

/// A scenario file holds one object, a list, or {"scenarios": [...]}.
/// The string "builtin" stands for the full built-in grid.
inline std::vector<ScenarioConfig> scenarios_from_json(const nlohmann::json& j) {
  std::vector<ScenarioConfig> out;
  if (j.is_string() && j.get<std::string>() == "builtin") return builtin_grid();
  const nlohmann::json* list = &j;
  if (j.is_object() && j.contains("scenarios")) list = &j.at("scenarios");
  if (list->is_array()) {
    for (const auto& s : *list) {
      if (s.is_string() && s.get<std::string>() == "builtin") {
        auto grid = builtin_grid();
        out.insert(out.end(), grid.begin(), grid.end());
      } else {
        out.push_back(scenario_from_json(s));
      }
    }
  } else {
    out.push_back(scenario_from_json(*list));
  }
  return out;
}

}  // namespace ebcal
