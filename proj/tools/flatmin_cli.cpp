// flatmin: run, certify, verify and sweep from the command line.
//
// Exit codes: 0 ok, 1 usage or config error, 2 numerical failure,
// 3 certification failed cleanly.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flatmin/flatmin.hpp"

namespace {

using namespace flatmin;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitNotCertified = 3;

ExperimentConfig load_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path));
}

void report_seeds(const ExperimentResult& r) {
  for (const auto& s : r.seeds) {
    if (s.status != 0) std::cerr << "seed " << s.seed << ": " << s.error << '\n';
  }
}

int cmd_run(const std::string& config_path, std::string out, std::optional<std::uint64_t> seed,
            unsigned threads) {
  ExperimentConfig cfg = load_config(config_path);
  if (seed) cfg.seeds = {*seed};
  if (out.empty()) out = cfg.output;
  if (out.empty()) throw ConfigError("no output directory: pass --out or set 'output'");
  const ExperimentResult r = run_experiment(cfg, out, threads);
  report_seeds(r);
  const json& s = r.summary;
  std::cout << "seeds: " << cfg.seeds.size() << "  median final tr(Phi): "
            << (s["median_final_tr_phi"].is_null() ? std::string("n/a")
                                                   : format_double(s["median_final_tr_phi"].get<double>()))
            << '\n';
  if (s.contains("best_certifying_seed")) {
    std::cout << "best certifying seed: " << s["best_certifying_seed"].get<std::uint64_t>()
              << "  passed: " << (s["best_certificate"]["passed"].get<bool>() ? "yes" : "no") << '\n';
  }
  std::cout << "artifacts: " << out << '\n';
  return r.exit_code;
}

LandscapeSpec parse_landscape_arg(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') return landscape_spec_from_json(parse_config_document(arg));
  if (std::filesystem::exists(arg)) return landscape_spec_from_json(parse_config_document(read_text_file(arg)));
  return landscape_spec_from_json(json{{"kind", arg}});
}

int cmd_certify(const std::string& landscape_arg, const std::vector<double>& x, double eps,
                double eps_prime, const std::string& out) {
  const Landscape land = build_landscape(parse_landscape_arg(landscape_arg));
  if (x.size() != land.objective.dim) {
    throw ConfigError("--x has " + std::to_string(x.size()) + " entries, landscape has dimension " +
                      std::to_string(land.objective.dim));
  }
  if (!(eps > 0.0) || !(eps_prime > 0.0)) throw ConfigError("--eps and --eps-prime must be positive");
  const Vector xv = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  const FlatnessCertificate cert = certify_flat(land.objective, xv, eps, eps_prime);
  const std::string body = to_json(cert).dump(2) + "\n";
  std::cout << body;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_text_file(std::filesystem::path(out) / "certificate.json", body);
  }
  return cert.passed ? kExitOk : kExitNotCertified;
}

int cmd_verify(std::vector<std::string> names, const VerifyOptions& opts, const std::string& out) {
  const auto& reg = verify_registry();
  if (names.empty() || (names.size() == 1 && names[0] == "all")) {
    names.clear();
    for (const auto& [name, _] : reg) names.push_back(name);
  }
  for (const auto& n : names) {
    if (!reg.count(n)) {
      std::string known;
      for (const auto& [name, _] : reg) known += " " + name;
      throw ConfigError("unknown check '" + n + "'; known:" + known);
    }
  }
  json reports = json::array();
  bool ok = true;
  std::printf("%-24s %-15s %12s %12s %10s\n", "check", "status", "error", "tolerance", "N");
  for (const auto& n : names) {
    const OracleReport r = reg.at(n)(opts);
    ok = ok && r.status != OracleStatus::fail;
    std::printf("%-24s %-15s %12.4g %12.4g %10llu\n", r.name.c_str(), to_string(r.status).c_str(),
                r.relative_error, r.tolerance, static_cast<unsigned long long>(r.samples));
    reports.push_back(to_json(r));
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_text_file(std::filesystem::path(out) / "verify.json", reports.dump(2) + "\n");
  }
  return ok ? kExitOk : kExitNumerical;
}

int cmd_sweep(const std::string& config_path, std::string out, unsigned threads) {
  const std::string text = read_text_file(config_path);
  const json doc = parse_config_document(text);
  const auto combos = expand_sweep(doc);
  if (out.empty() && doc.contains("output") && doc["output"].is_string()) out = doc["output"];
  if (out.empty()) throw ConfigError("no output directory: pass --out or set 'output'");
  // Validate every combination before running any.
  std::vector<ExperimentConfig> cfgs;
  for (const auto& [label, d] : combos) {
    try {
      cfgs.push_back(experiment_config_from_json(d));
    } catch (const ConfigError& e) {
      throw ConfigError("combination " + label + ": " + e.what());
    }
  }
  json index = json::array();
  int code = kExitOk;
  for (std::size_t k = 0; k < cfgs.size(); ++k) {
    const std::string dir = (std::filesystem::path(out) / ("combo_" + std::to_string(k))).string();
    const ExperimentResult r = run_experiment(cfgs[k], dir, threads);
    report_seeds(r);
    if (r.exit_code != 0) code = r.exit_code;
    index.push_back({{"combination", combos[k].first},
                     {"directory", "combo_" + std::to_string(k)},
                     {"median_final_tr_phi", r.summary["median_final_tr_phi"]},
                     {"status", r.summary["status"]}});
    std::cout << combos[k].first << "  median final tr(Phi): " << r.summary["median_final_tr_phi"].dump()
              << '\n';
  }
  write_text_file(std::filesystem::path(out) / "sweep.json", index.dump(2) + "\n");
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Escape sharp minima with perturbed gradient methods and certify flat minima"};
  app.require_subcommand(1);

  std::string config, out, landscape;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;

  auto* run = app.add_subcommand("run", "Run every seed of an experiment config");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory (overrides 'output')");
  run->add_option("--seed", seed, "Run only this seed");
  run->add_option("--threads", threads, "Worker threads for seeds")->check(CLI::PositiveNumber);

  std::vector<double> x;
  double eps = 0.0, eps_prime = 0.0;
  auto* certify = app.add_subcommand("certify", "Check the (eps, eps')-flatness of a point");
  certify->add_option("--landscape", landscape, "Kind name, inline JSON object or JSON file")->required();
  certify->add_option("--x", x, "Point coordinates")->required()->delimiter(',');
  certify->add_option("--eps", eps, "Distance threshold")->required();
  certify->add_option("--eps-prime", eps_prime, "Flat-gradient threshold")->required();
  certify->add_option("--out", out, "Directory for certificate.json");

  std::vector<std::string> checks;
  VerifyOptions vopts;
  auto* verify = app.add_subcommand("verify", "Run oracle checks (default: all)");
  verify->add_option("checks", checks, "Check names, or 'all'");
  verify->add_option("--N", vopts.N, "Sample count override");
  verify->add_option("--seed", vopts.seed, "Seed");
  verify->add_option("--threads", vopts.threads, "Monte-Carlo worker threads")->check(CLI::PositiveNumber);
  verify->add_option("--out", out, "Directory for verify.json");

  auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of a config's 'sweep' lists");
  sweep->add_option("--config", config, "Sweep config (JSON)")->required();
  sweep->add_option("--out", out, "Output directory");
  sweep->add_option("--threads", threads, "Worker threads for seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(config, out, seed, threads);
    if (*certify) return cmd_certify(landscape, x, eps, eps_prime, out);
    if (*verify) return cmd_verify(checks, vopts, out);
    if (*sweep) return cmd_sweep(config, out, threads);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}
