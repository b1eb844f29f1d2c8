#pragma once

// Text form of a basis: "H:const,x1,x2,x1^2;G:x4,log1p(x5),x1*x4,cat(race)".

#include <algorithm>
#include <charconv>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ebcal/basis.hpp"
#include "ebcal/error.hpp"

namespace ebcal {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline int resolve_var(std::string_view name, const CovariateInfo& info) {
  name = trim(name);
  for (std::size_t j = 0; j < info.names.size(); ++j)
    if (info.names[j] == name) return static_cast<int>(j);
  // xK fallback when names are not supplied
  if (info.names.empty() && name.size() > 1 && name[0] == 'x') {
    int k = 0;
    auto [p, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
    if (ec == std::errc() && p == name.data() + name.size() && k >= 1) return k - 1;
  }
  throw Error(ErrorCode::UnknownTerm, "unknown covariate '" + std::string(name) + "' in basis");
}

inline double resolve_level(int var, std::string_view level, const CovariateInfo& info) {
  level = trim(level);
  if (static_cast<std::size_t>(var) < info.levels.size() && !info.levels[var].empty()) {
    const auto& lv = info.levels[var];
    auto it = std::find(lv.begin(), lv.end(), level);
    if (it == lv.end()) throw Error(ErrorCode::UnknownTerm, "unknown level '" + std::string(level) + "'");
    return static_cast<double>(it - lv.begin());
  }
  double v = 0;
  auto [p, ec] = std::from_chars(level.data(), level.data() + level.size(), v);
  if (ec != std::errc() || p != level.data() + level.size())
    throw Error(ErrorCode::InvalidArgument, "indicator level '" + std::string(level) + "' is not numeric");
  return v;
}

inline std::vector<Term> parse_term(std::string_view text, const CovariateInfo& info, const Eigen::MatrixXd* X) {
  text = trim(text);
  if (text == "const" || text == "1") return {Term::constant()};
  if (auto open = text.find('('); open != std::string_view::npos && text.back() == ')') {
    const std::string_view fn = trim(text.substr(0, open));
    const std::string_view arg = text.substr(open + 1, text.size() - open - 2);
    const int var = resolve_var(arg, info);
    if (fn == "cat") {
      std::vector<double> cats;
      if (static_cast<std::size_t>(var) < info.levels.size() && !info.levels[var].empty()) {
        for (std::size_t k = 0; k < info.levels[var].size(); ++k) cats.push_back(static_cast<double>(k));
      } else if (X) {
        std::set<double> seen(X->col(var).data(), X->col(var).data() + X->rows());
        cats.assign(seen.begin(), seen.end());
      } else {
        throw Error(ErrorCode::InvalidArgument, "cat() needs level labels or data");
      }
      return expand_categorical(var, cats);
    }
    auto t = transform_from_string(fn);
    if (!t) throw Error(ErrorCode::UnknownTerm, "unknown transform '" + std::string(fn) + "'");
    return {Term::custom(*t, var)};
  }
  if (auto eq = text.find("=="); eq != std::string_view::npos) {
    const int var = resolve_var(text.substr(0, eq), info);
    return {Term::indicator(var, resolve_level(var, text.substr(eq + 2), info))};
  }
  if (auto caret = text.find('^'); caret != std::string_view::npos) {
    const int var = resolve_var(text.substr(0, caret), info);
    const auto deg_text = trim(text.substr(caret + 1));
    int degree = 0;
    auto [p, ec] = std::from_chars(deg_text.data(), deg_text.data() + deg_text.size(), degree);
    if (ec != std::errc() || p != deg_text.data() + deg_text.size())
      throw Error(ErrorCode::InvalidArgument, "bad power in term '" + std::string(text) + "'");
    return {Term::power(var, degree)};
  }
  if (auto star = text.find('*'); star != std::string_view::npos)
    return {Term::product(resolve_var(text.substr(0, star), info), resolve_var(text.substr(star + 1), info))};
  return {Term::identity(resolve_var(text, info))};
}

}  // namespace detail

/// Parses "H:...;G:..." (G optional). A missing "const" is prepended to H.
inline BasisSpec parse_basis(std::string_view text, const CovariateInfo& info = {},
                             const Eigen::MatrixXd* X = nullptr) {
  std::vector<Term> h, g;
  bool saw_h = false;
  for (auto part : detail::split(text, ';')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    auto colon = part.find(':');
    if (colon == std::string_view::npos)
      throw Error(ErrorCode::InvalidArgument, "basis section '" + std::string(part) + "' lacks an H: or G: prefix");
    const auto side = detail::trim(part.substr(0, colon));
    std::vector<Term>* dst = nullptr;
    if (side == "H") {
      dst = &h;
      saw_h = true;
    } else if (side == "G") {
      dst = &g;
    } else {
      throw Error(ErrorCode::InvalidArgument, "basis section must be H or G");
    }
    const auto body = detail::trim(part.substr(colon + 1));
    if (body.empty()) continue;
    for (auto tok : detail::split(body, ',')) {
      auto terms = detail::parse_term(tok, info, X);
      dst->insert(dst->end(), terms.begin(), terms.end());
    }
  }
  if (!saw_h) throw Error(ErrorCode::InvalidArgument, "basis needs an H section");
  auto is_const = [](const Term& t) { return t.kind == TermKind::Constant; };
  if (std::none_of(h.begin(), h.end(), is_const)) h.insert(h.begin(), Term::constant());
  return BasisSpec(std::move(h), std::move(g));
}

}  // namespace ebcal
