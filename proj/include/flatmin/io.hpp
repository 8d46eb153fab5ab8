#pragma once

// JSON and CSV serialization of specs, certificates, reports and trajectories.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flatmin/error.hpp"
#include "flatmin/flow.hpp"
#include "flatmin/landscapes.hpp"
#include "flatmin/optimizers.hpp"
#include "flatmin/oracle.hpp"
#include "flatmin/schedule.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

using json = nlohmann::json;

/// Malformed configuration. line is 1-based, 0 when unknown.
class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(const std::string& what, std::size_t line = 0)
      : InvalidArgument(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Round-trip exact decimal form (17 significant digits).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

namespace detail {

inline const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(where + ": missing required field '" + key + "'");
  }
  return j.at(key);
}

inline double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw ConfigError(what + " must be a number");
  return j.get<double>();
}

inline std::vector<double> numbers(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : j) out.push_back(number(e, what));
  return out;
}

inline std::uint64_t count(const json& j, const std::string& what) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0) {
    throw ConfigError(what + " must be a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

}  // namespace detail

inline Vector vector_from_json(const json& j, const std::string& what = "vector") {
  const auto v = detail::numbers(j, what);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json(const LandscapeSpec& spec) {
  json j;
  j["kind"] = spec.kind();
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConvexQuadraticParams>) {
          j["eigenvalues"] = p.eigenvalues;
        } else if constexpr (std::is_same_v<P, ScalarFactorizationParams>) {
          j["a"] = p.a;
          j["c"] = p.c;
        } else if constexpr (std::is_same_v<P, OrthogonalModelParams>) {
          j["d"] = p.d;
          j["n"] = p.n;
          j["y"] = p.y;
          if (p.basis_seed) j["basis_seed"] = *p.basis_seed;
        }
      },
      spec.params);
  return j;
}

inline LandscapeSpec landscape_spec_from_json(const json& j) {
  const std::string where = "landscape";
  if (!j.is_object()) throw ConfigError("landscape must be an object");
  const json& kind_j = detail::require(j, "kind", where);
  if (!kind_j.is_string()) throw ConfigError("landscape.kind must be a string");
  const auto kind = kind_j.get<std::string>();
  LandscapeSpec spec;
  if (kind == "hyperbola") {
    spec.params = HyperbolaParams{};
  } else if (kind == "convex_quadratic") {
    spec.params = ConvexQuadraticParams{
        detail::numbers(detail::require(j, "eigenvalues", where), "landscape.eigenvalues")};
  } else if (kind == "scalar_factorization") {
    ScalarFactorizationParams p;
    p.a = detail::numbers(detail::require(j, "a", where), "landscape.a");
    p.c = j.contains("c") ? detail::number(j.at("c"), "landscape.c") : 1.0;
    spec.params = p;
  } else if (kind == "orthogonal_quadratic_model") {
    OrthogonalModelParams p;
    p.d = detail::count(detail::require(j, "d", where), "landscape.d");
    p.n = detail::count(detail::require(j, "n", where), "landscape.n");
    p.y = detail::numbers(detail::require(j, "y", where), "landscape.y");
    if (j.contains("basis_seed")) p.basis_seed = detail::count(j.at("basis_seed"), "landscape.basis_seed");
    spec.params = p;
  } else {
    throw ConfigError("unknown landscape kind '" + kind + "'");
  }
  return spec;
}

inline json to_json(const FlatnessCertificate& c) {
  return {{"x", to_json(c.x)},
          {"phi_x", to_json(c.phi_x)},
          {"dist", c.dist},
          {"flat_grad", to_json(c.flat_grad)},
          {"flat_grad_norm", c.flat_grad_norm},
          {"eps", c.eps},
          {"eps_prime", c.eps_prime},
          {"passed", c.passed}};
}

inline json to_json(const OracleReport& r) {
  return {{"name", r.name},
          {"samples", r.samples},
          {"measured", r.measured},
          {"reference", r.reference},
          {"relative_error", std::isfinite(r.relative_error) ? json(r.relative_error) : json("inf")},
          {"tolerance", r.tolerance},
          {"status", to_string(r.status)},
          {"detail", r.detail}};
}

inline json to_json(const Schedule& s) {
  json j = {{"eta", s.eta},     {"eta_prime", s.eta_prime}, {"rho", s.rho},
            {"eps0", s.eps0},   {"T", s.T},                 {"raw_T", s.raw_T},
            {"nu", optional_json(s.nu)}};
  j["constants"] = {{"c_eta", s.constants.c_eta},
                    {"c_rho", s.constants.c_rho},
                    {"c_eps0", s.constants.c_eps0},
                    {"c_T", s.constants.c_T},
                    {"budget_cap", s.constants.budget_cap}};
  return j;
}

inline json to_json(const IterateRecord& r) {
  json j = {{"t", r.t},
            {"branch", to_string(r.branch)},
            {"f", r.f},
            {"grad_norm", r.grad_norm},
            {"v_norm", optional_json(r.v_norm)},
            {"tr_phi", optional_json(r.tr_phi)},
            {"f_gap", optional_json(r.f_gap)}};
  if (r.x.size() > 0) j["x"] = to_json(r.x);
  return j;
}

inline json to_json(const Trajectory& t) {
  json records = json::array();
  for (const auto& r : t.records) records.push_back(to_json(r));
  return {{"algorithm", to_string(t.algorithm)},
          {"dim", t.dim},
          {"seed", t.seed},
          {"stream", t.stream},
          {"schedule", to_json(t.schedule)},
          {"returned_index", t.returned_index},
          {"returned_x", to_json(t.returned_x)},
          {"final_x", to_json(t.final_x)},
          {"final_f", t.final_f},
          {"final_tr_phi", optional_json(t.final_tr_phi)},
          {"records", std::move(records)}};
}

/// x columns are emitted only for d <= this.
inline constexpr std::size_t kCsvMaxCoordinates = 8;

inline void write_csv_header(std::ostream& os, std::size_t dim) {
  os << "t,branch,f,grad_norm,v_norm,tr_phi";
  if (dim <= kCsvMaxCoordinates) {
    for (std::size_t i = 0; i < dim; ++i) os << ",x" << i;
  }
  os << '\n';
}

/// One row per record; missing optional values are empty fields.
inline void write_csv(std::ostream& os, const Trajectory& traj) {
  write_csv_header(os, traj.dim);
  const bool coords = traj.dim <= kCsvMaxCoordinates;
  for (const auto& r : traj.records) {
    os << r.t << ',' << to_string(r.branch) << ',' << format_double(r.f) << ','
       << format_double(r.grad_norm) << ',';
    if (r.v_norm) os << format_double(*r.v_norm);
    os << ',';
    if (r.tr_phi) os << format_double(*r.tr_phi);
    if (coords) {
      for (std::size_t i = 0; i < traj.dim; ++i) {
        os << ',';
        if (r.x.size() > 0) os << format_double(r.x[static_cast<Eigen::Index>(i)]);
      }
    }
    os << '\n';
  }
}

}  // namespace flatmin
