#pragma once

// Config-driven batch runs: parsing, per-seed execution, artifacts, sweeps
// and the named verification suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flatmin/error.hpp"
#include "flatmin/flow.hpp"
#include "flatmin/io.hpp"
#include "flatmin/landscapes.hpp"
#include "flatmin/optimizers.hpp"
#include "flatmin/oracle.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/schedule.hpp"

namespace flatmin {

struct CertifyRequest {
  double eps = 0.0;
  double eps_prime = 0.0;
  /// Run refine() on the returned iterate before certifying.
  bool refine = false;
};

/// Explicit values that replace the computed schedule entries.
struct ScheduleOverride {
  std::optional<double> eta, eta_prime, rho, eps0;
  std::optional<std::uint64_t> T;
};

struct ExperimentConfig {
  LandscapeSpec landscape;
  Algorithm algorithm = Algorithm::RS;
  Vector x0;
  double eps = 0.0;
  double delta = 0.0;
  ScheduleConstants constants;
  ScheduleOverride overrides;
  std::vector<std::uint64_t> seeds;
  std::uint64_t log_cadence = 1;
  std::uint64_t tr_phi_cadence = 0;
  std::string output;
  std::optional<CertifyRequest> certify;
  std::optional<double> jitter;
  std::optional<double> beta_hat;
};

namespace detail {

/// 1-based line of byte offset `pos` in `text`.
inline std::size_t line_of_offset(const std::string& text, std::size_t pos) {
  pos = std::min(pos, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

/// Line of the first occurrence of "key" in the raw text, or 0.
inline std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

inline Algorithm parse_algorithm(const json& j) {
  if (!j.is_string()) throw ConfigError("algorithm must be a string");
  const auto s = j.get<std::string>();
  if (s == "RS" || s == "rs") return Algorithm::RS;
  if (s == "SA" || s == "sa") return Algorithm::SA;
  if (s == "GD" || s == "gd") return Algorithm::GD;
  throw ConfigError("unknown algorithm '" + s + "' (expected RS, SA or GD)");
}

}  // namespace detail

/// Builds a config from a parsed document. Errors name the offending field.
inline ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const char* known[] = {"landscape", "algorithm", "x0",        "eps",
                                "delta",     "constants", "schedule",  "seeds",
                                "log_cadence", "tr_phi_cadence", "output", "certify",
                                "jitter",    "beta_hat",  "sweep"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw ConfigError("unknown field '" + key + "'");
    }
  }
  const std::string where = "config";
  ExperimentConfig cfg;
  cfg.landscape = landscape_spec_from_json(detail::require(j, "landscape", where));
  cfg.algorithm = detail::parse_algorithm(detail::require(j, "algorithm", where));
  cfg.x0 = vector_from_json(detail::require(j, "x0", where), "x0");
  cfg.eps = detail::number(detail::require(j, "eps", where), "eps");
  cfg.delta = detail::number(detail::require(j, "delta", where), "delta");
  if (!(cfg.eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");

  const json& seeds = detail::require(j, "seeds", where);
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds must be a nonempty array");
  for (const auto& s : seeds) cfg.seeds.push_back(detail::count(s, "seeds"));

  if (j.contains("constants")) {
    const json& c = j.at("constants");
    if (!c.is_object()) throw ConfigError("constants must be an object");
    for (const auto& [key, val] : c.items()) {
      if (key == "c_eta") cfg.constants.c_eta = detail::number(val, "constants.c_eta");
      else if (key == "c_rho") cfg.constants.c_rho = detail::number(val, "constants.c_rho");
      else if (key == "c_eps0") cfg.constants.c_eps0 = detail::number(val, "constants.c_eps0");
      else if (key == "c_T") cfg.constants.c_T = detail::number(val, "constants.c_T");
      else if (key == "budget_cap") cfg.constants.budget_cap = detail::count(val, "constants.budget_cap");
      else throw ConfigError("unknown field 'constants." + key + "'");
    }
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    if (!s.is_object()) throw ConfigError("schedule must be an object");
    for (const auto& [key, val] : s.items()) {
      if (key == "eta") cfg.overrides.eta = detail::number(val, "schedule.eta");
      else if (key == "eta_prime") cfg.overrides.eta_prime = detail::number(val, "schedule.eta_prime");
      else if (key == "rho") cfg.overrides.rho = detail::number(val, "schedule.rho");
      else if (key == "eps0") cfg.overrides.eps0 = detail::number(val, "schedule.eps0");
      else if (key == "T") cfg.overrides.T = detail::count(val, "schedule.T");
      else throw ConfigError("unknown field 'schedule." + key + "'");
    }
  }
  if (j.contains("log_cadence")) {
    cfg.log_cadence = detail::count(j.at("log_cadence"), "log_cadence");
    if (cfg.log_cadence == 0) throw ConfigError("log_cadence must be positive");
  }
  if (j.contains("tr_phi_cadence")) cfg.tr_phi_cadence = detail::count(j.at("tr_phi_cadence"), "tr_phi_cadence");
  if (j.contains("output")) {
    if (!j.at("output").is_string()) throw ConfigError("output must be a string");
    cfg.output = j.at("output").get<std::string>();
  }
  if (j.contains("certify")) {
    const json& c = j.at("certify");
    CertifyRequest req;
    req.eps = detail::number(detail::require(c, "eps", "certify"), "certify.eps");
    req.eps_prime = detail::number(detail::require(c, "eps_prime", "certify"), "certify.eps_prime");
    if (c.contains("refine")) {
      if (!c.at("refine").is_boolean()) throw ConfigError("certify.refine must be a boolean");
      req.refine = c.at("refine").get<bool>();
    }
    if (!(req.eps > 0.0) || !(req.eps_prime > 0.0)) {
      throw ConfigError("certify.eps and certify.eps_prime must be positive");
    }
    cfg.certify = req;
  }
  if (j.contains("jitter")) cfg.jitter = detail::number(j.at("jitter"), "jitter");
  if (j.contains("beta_hat")) {
    cfg.beta_hat = detail::number(j.at("beta_hat"), "beta_hat");
    if (!(*cfg.beta_hat > 0.0)) throw ConfigError("beta_hat must be positive");
  }
  return cfg;
}

/// Parses a JSON document. Syntax errors carry the line of the failing byte;
/// field errors carry the line where the field appears, when it does.
inline json parse_config_document(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(),
                      detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1));
  }
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  const json doc = parse_config_document(text);
  try {
    return experiment_config_from_json(doc);
  } catch (const ConfigError& e) {
    if (e.line() != 0) throw;
    // Anchor to the first quoted name in the message that occurs in the text.
    const std::string msg = e.what();
    std::size_t line = 0;
    for (std::size_t a = msg.find('\''); a != std::string::npos && line == 0;
         a = msg.find('\'', msg.find('\'', a + 1) + 1)) {
      const std::size_t b = msg.find('\'', a + 1);
      if (b == std::string::npos) break;
      std::string key = msg.substr(a + 1, b - a - 1);
      if (const auto dot = key.rfind('.'); dot != std::string::npos) key = key.substr(dot + 1);
      line = detail::line_of_key(text, key);
    }
    if (line == 0) {
      // "<field> must ..." messages lead with the dotted field name.
      std::string key = msg.substr(0, msg.find(' '));
      if (const auto dot = key.rfind('.'); dot != std::string::npos) key = key.substr(dot + 1);
      line = detail::line_of_key(text, key);
    }
    throw ConfigError(msg, line == 0 ? 1 : line);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what(), 1);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Schedule for a config: the algorithm's default schedule, then overrides.
inline Schedule schedule_for(const ExperimentConfig& cfg, const Landscape& land) {
  const Objective& obj = land.objective;
  double beta = 0.0;
  if (cfg.beta_hat) beta = *cfg.beta_hat;
  else if (obj.lipschitz_grad_hint) beta = *obj.lipschitz_grad_hint;
  else throw ConfigError("beta_hat is required for this landscape");
  Schedule s = cfg.algorithm == Algorithm::SA
                   ? sa_schedule(cfg.eps, cfg.delta, obj.dim, beta, cfg.constants)
                   : rs_schedule(cfg.eps, cfg.delta, beta, cfg.constants);
  const auto& o = cfg.overrides;
  if (o.eta) s.eta = *o.eta;
  if (o.eta_prime) s.eta_prime = *o.eta_prime;
  if (o.rho) s.rho = *o.rho;
  if (o.eps0) s.eps0 = *o.eps0;
  if (o.T) s.T = *o.T;
  s.validate();
  return s;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<Trajectory> trajectory;
  std::optional<FlatnessCertificate> certificate;
  /// max(dist/eps, flat_grad_norm/eps'); <= 1 iff the certificate passed.
  std::optional<double> certificate_score;
  std::string error;
  int status = 0;
};

struct ExperimentResult {
  std::vector<SeedOutcome> seeds;
  json summary;
  /// 0 ok, 2 numerical failure in some seed.
  int exit_code = 0;
};

inline std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << body;
}

/// Runs every seed (on up to `threads` workers), certifies returned iterates
/// when requested and, when out_dir is nonempty, writes seed_<s>.csv,
/// seed_<s>.json and summary.json there.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                       unsigned threads = 1) {
  const Landscape land = build_landscape(cfg.landscape);
  const Objective& obj = land.objective;
  if (cfg.x0.size() != static_cast<Eigen::Index>(obj.dim)) {
    throw ConfigError("x0 has " + std::to_string(cfg.x0.size()) + " entries, landscape has dimension " +
                      std::to_string(obj.dim));
  }
  if (cfg.algorithm == Algorithm::SA && !land.samples) {
    throw ConfigError("algorithm SA needs a sample-sum landscape");
  }
  const Schedule sched = schedule_for(cfg, land);
  RunOptions opts;
  opts.log_cadence = cfg.log_cadence;
  opts.tr_phi_cadence = cfg.tr_phi_cadence;
  opts.jitter = cfg.jitter.value_or(default_jitter(cfg.eps));
  const double beta = cfg.beta_hat.value_or(obj.lipschitz_grad_hint.value_or(1.0));

  ExperimentResult result;
  result.seeds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), threads, [&](std::size_t k) {
    SeedOutcome& out = result.seeds[k];
    out.seed = cfg.seeds[k];
    const RngStream rng(out.seed, 0);
    try {
      out.trajectory = land.samples ? run(*land.samples, cfg.algorithm, cfg.x0, sched, rng, opts)
                                    : run(obj, cfg.algorithm, cfg.x0, sched, rng, opts);
      if (cfg.certify) {
        Vector x = out.trajectory->returned_x;
        if (cfg.certify->refine) x = refine(obj, x, cfg.certify->eps, beta).x;
        out.certificate = certify_flat(obj, x, cfg.certify->eps, cfg.certify->eps_prime);
        out.certificate_score = std::max(out.certificate->dist / cfg.certify->eps,
                                         out.certificate->flat_grad_norm / cfg.certify->eps_prime);
      }
    } catch (const DivergenceError& e) {
      out.trajectory = e.partial();
      out.error = e.what();
      out.status = 2;
    } catch (const Error& e) {
      out.error = e.what();
      out.status = 2;
    }
  });

  json per_seed = json::array();
  std::vector<double> finals;
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < result.seeds.size(); ++k) {
    const SeedOutcome& s = result.seeds[k];
    json e = {{"seed", s.seed}, {"status", s.status == 0 ? "ok" : "numerical_failure"}};
    if (!s.error.empty()) e["error"] = s.error;
    if (s.trajectory && s.status == 0) {
      const Trajectory& t = *s.trajectory;
      e["final_f"] = t.final_f;
      e["final_tr_phi"] = optional_json(t.final_tr_phi);
      e["returned_index"] = t.returned_index;
      e["returned_x"] = to_json(t.returned_x);
      if (t.final_tr_phi) finals.push_back(*t.final_tr_phi);
      bool monotone = true;
      for (std::size_t r = 1; r < t.records.size(); ++r) monotone = monotone && t.records[r].f <= t.records[r - 1].f;
      if (!t.records.empty()) monotone = monotone && t.final_f <= t.records.back().f;
      e["f_monotone"] = monotone;
    }
    if (s.certificate) {
      e["certificate"] = to_json(*s.certificate);
      if (!best || *s.certificate_score < *result.seeds[*best].certificate_score) best = k;
    }
    if (s.status != 0) result.exit_code = 2;
    per_seed.push_back(std::move(e));
  }

  json summary;
  summary["landscape"] = to_json(cfg.landscape);
  summary["algorithm"] = to_string(cfg.algorithm);
  summary["x0"] = to_json(cfg.x0);
  summary["eps"] = cfg.eps;
  summary["delta"] = cfg.delta;
  summary["schedule"] = to_json(sched);
  try {
    summary["initial_tr_phi"] = trace_at_limit(obj, cfg.x0);
  } catch (const Error&) {
    summary["initial_tr_phi"] = nullptr;
  }
  summary["median_final_tr_phi"] = optional_json(median(finals));
  summary["seeds"] = std::move(per_seed);
  if (best) {
    summary["best_certifying_seed"] = result.seeds[*best].seed;
    summary["best_certificate"] = to_json(*result.seeds[*best].certificate);
  }
  summary["status"] = result.exit_code == 0 ? "ok" : "numerical_failure";
  result.summary = summary;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    for (const auto& s : result.seeds) {
      if (!s.trajectory) continue;
      std::ostringstream csv;
      write_csv(csv, *s.trajectory);
      const std::string stem = "seed_" + std::to_string(s.seed);
      write_text_file(dir / (stem + ".csv"), csv.str());
      json tj = to_json(*s.trajectory);
      if (s.certificate) tj["certificate"] = to_json(*s.certificate);
      if (!s.error.empty()) tj["error"] = s.error;
      write_text_file(dir / (stem + ".json"), tj.dump(2) + "\n");
    }
    write_text_file(dir / "summary.json", result.summary.dump(2) + "\n");
  }
  return result;
}

/// Cartesian product over the "sweep" object of a config document. Keys are
/// dotted paths into the document ("eps", "constants.c_eta"), values are
/// arrays. Returns one (label, document) pair per combination.
inline std::vector<std::pair<std::string, json>> expand_sweep(const json& doc) {
  if (!doc.is_object() || !doc.contains("sweep")) throw ConfigError("sweep config needs a 'sweep' object");
  const json& sweep = doc.at("sweep");
  if (!sweep.is_object() || sweep.empty()) throw ConfigError("sweep must be a nonempty object");
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [key, vals] : sweep.items()) {
    if (!vals.is_array() || vals.empty()) throw ConfigError("sweep." + key + " must be a nonempty array");
    axes.emplace_back(key, std::vector<json>(vals.begin(), vals.end()));
  }
  json base = doc;
  base.erase("sweep");
  std::vector<std::pair<std::string, json>> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    json d = base;
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      std::string ptr = "/" + axes[a].first;
      std::replace(ptr.begin(), ptr.end(), '.', '/');
      d[json::json_pointer(ptr)] = axes[a].second[idx[a]];
      if (!label.empty()) label += "_";
      label += axes[a].first + "=" + axes[a].second[idx[a]].dump();
    }
    out.emplace_back(label, std::move(d));
    std::size_t a = 0;
    while (a < axes.size() && ++idx[a] == axes[a].second.size()) idx[a++] = 0;
    if (a == axes.size()) break;
  }
  return out;
}

/// Named verification checks with their default parameters. N = 0 uses each
/// check's default sample count.
struct VerifyOptions {
  std::uint64_t N = 0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

using VerifyCheck = std::function<OracleReport(const VerifyOptions&)>;

inline const std::map<std::string, VerifyCheck>& verify_registry() {
  static const std::map<std::string, VerifyCheck> reg = [] {
    std::map<std::string, VerifyCheck> m;
    auto n_or = [](const VerifyOptions& o, std::uint64_t def) { return o.N ? o.N : def; };
    m["sphere-moments"] = [n_or](const VerifyOptions& o) {
      return check_sphere_moments(5, n_or(o, 1'000'000), RngStream(o.seed, 0), o.threads);
    };
    m["rs-estimator"] = [n_or](const VerifyOptions& o) {
      Vector x(2);
      x << 1.2, 1.0 / 1.2;
      EstimatorOptions eo;
      eo.threads = o.threads;
      return check_rs_estimator(build_hyperbola(), x, 0.01, n_or(o, 1'000'000), RngStream(o.seed, 0), eo);
    };
    m["rs-decay"] = [n_or](const VerifyOptions& o) {
      Vector x(2);
      x << 1.2, 1.0 / 1.2;
      EstimatorOptions eo;
      eo.threads = o.threads;
      return check_rs_remainder_decay(build_hyperbola(), x, 0.02, n_or(o, 10'000'000),
                                      RngStream(o.seed, 0), 3.0, eo);
    };
    m["sa-dfactor"] = [n_or](const VerifyOptions& o) {
      const OrthogonalModelParams p{4, 2, {0.5, 0.5}, std::nullopt};
      return check_sa_dfactor(build_orthogonal_quadratic_model(p), orthogonal_model_minimum(p), 0.01,
                              n_or(o, 1'000'000), RngStream(o.seed, 0), 0.1, o.threads);
    };
    m["tangency"] = [n_or](const VerifyOptions& o) {
      const Objective obj = build_hyperbola();
      RngStream rng(o.seed, 0);
      std::vector<Vector> pts;
      for (std::uint64_t k = 0; k < n_or(o, 50); ++k) {
        const double s = 0.5 + 1.5 * rng.uniform();
        Vector x(2);
        x << s, 1.0 / s;
        x += 0.05 * sample_sphere(2, rng);
        pts.push_back(x);
      }
      return check_tangency(obj, pts, 1e-4);
    };
    m["flat-gradient"] = [](const VerifyOptions&) {
      return check_flat_gradient(build_hyperbola(), Vector::Ones(2), 1e-4);
    };
    m["hessian-decomposition"] = [](const VerifyOptions&) {
      const OrthogonalModelParams p{4, 2, {0.5, 0.5}, std::nullopt};
      return check_hessian_decomposition(build_orthogonal_quadratic_model(p), orthogonal_model_minimum(p));
    };
    m["derivatives"] = [n_or](const VerifyOptions& o) {
      const Objective obj = build_hyperbola();
      return check_objective_derivatives(
          obj,
          [](RngStream& r) {
            Vector x(2);
            for (int i = 0; i < 2; ++i) x[i] = -kTestRegionHalfWidth + 2.0 * kTestRegionHalfWidth * r.uniform();
            return x;
          },
          n_or(o, 100), RngStream(o.seed, 0));
    };
    return m;
  }();
  return reg;
}

}  // namespace flatmin
