// Command-line experiment runner.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "singulo/singulo.hpp"

namespace fs = std::filesystem;
using namespace singulo;

namespace {

enum Exit { ok = 0, io_failure = 1, assumption = 2, mismatch = 3, usage = 64 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  std::string command;
  std::string problem_path;
  std::string system = "";
  std::string out = "out";
  std::string grid;
  std::string eta_grid;
  unsigned jobs = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> tol;
  double rho = 2;
  int m_max = 64;
  bool reduced_inf = false;
  double sigma_rel = 0.15;

  Tolerances tolerances;
  std::string problem_text;

  /// Canonical text hashed into the provenance line; excludes --out and --jobs.
  std::string canonical() const {
    std::string s = command + "|system=" + system + "|grid=" + grid + "|eta=" + eta_grid + "|seed=" +
                    std::to_string(seed) + "|rho=" + io::format_double(rho) + "|m=" + std::to_string(m_max) +
                    "|reduced_inf=" + (reduced_inf ? "1" : "0") + "|sigma_rel=" + io::format_double(sigma_rel);
    for (const auto& t : tol) s += "|tol:" + t;
    return s + "|problem=" + problem_text;
  }
};

int exit_for(Errc c) {
  switch (c) {
    case Errc::io_error:
    case Errc::parse_error:
      return io_failure;
    case Errc::invalid_argument:
      return usage;
    default:
      return assumption;
  }
}

/// geom:a:b:k or list:v1,v2,...
std::vector<double> parse_grid(const std::string& spec) {
  if (spec.rfind("geom:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(spec.substr(5));
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw UsageError("grid '" + spec + "' must be geom:a:b:k");
    double a = 0, b = 0;
    long k = 0;
    try {
      a = std::stod(parts[0]);
      b = std::stod(parts[1]);
      k = std::stol(parts[2]);
    } catch (const std::exception&) {
      throw UsageError("grid '" + spec + "' has a malformed number");
    }
    if (k < 1 || !(a > 0) || !(b > 0)) throw UsageError("grid '" + spec + "' is empty or not positive");
    if (k == 1) return {a};
    if (a == b) throw UsageError("grid '" + spec + "' has ratio 1");
    std::vector<double> out;
    for (long i = 0; i < k; ++i) out.push_back(a * std::pow(b / a, static_cast<double>(i) / static_cast<double>(k - 1)));
    return out;
  }
  if (spec.rfind("list:", 0) == 0) {
    std::vector<double> out;
    std::stringstream ss(spec.substr(5));
    for (std::string p; std::getline(ss, p, ',');) {
      if (p.empty()) continue;
      try {
        out.push_back(std::stod(p));
      } catch (const std::exception&) {
        throw UsageError("grid '" + spec + "' has a malformed number");
      }
    }
    if (out.empty()) throw UsageError("grid '" + spec + "' is empty");
    return out;
  }
  throw UsageError("grid '" + spec + "' must start with geom: or list:");
}

std::vector<int> integer_grid(const std::string& spec) {
  std::vector<int> out;
  for (double v : parse_grid(spec)) {
    const int n = static_cast<int>(std::lround(v));
    if (n < 1) throw UsageError("grid '" + spec + "' needs positive integers");
    if (out.empty() || out.back() != n) out.push_back(n);
  }
  return out;
}

void apply_tolerances(Config& cfg) {
  std::map<std::string, double*> slots{{"psd", &cfg.tolerances.psd},
                                       {"asymmetry", &cfg.tolerances.asymmetry},
                                       {"comm_scale", &cfg.tolerances.comm_scale},
                                       {"bvp_scale", &cfg.tolerances.bvp_scale},
                                       {"zero_scale", &cfg.tolerances.zero_scale},
                                       {"jump_scale", &cfg.tolerances.jump_scale},
                                       {"cond_max", &cfg.tolerances.cond_max},
                                       {"blowup", &cfg.tolerances.blowup},
                                       {"sigma_rel", &cfg.sigma_rel}};
  for (const auto& t : cfg.tol) {
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError("--tol expects NAME=VAL, got '" + t + "'");
    auto it = slots.find(t.substr(0, eq));
    if (it == slots.end()) throw UsageError("unknown tolerance '" + t.substr(0, eq) + "'");
    try {
      *it->second = std::stod(t.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("bad tolerance value in '" + t + "'");
    }
  }
}

fs::path out_dir(const Config& cfg) {
  if (const char* env = std::getenv("SINGULO_OUT"); env && *env) return env;
  return cfg.out;
}

LQProblem load(Config& cfg) {
  if (cfg.problem_path.empty()) throw UsageError("--problem is required");
  cfg.problem_text = io::read_file(cfg.problem_path);
  std::vector<std::string> warnings;
  LQProblem p = load_problem(cfg.problem_path, &warnings, cfg.tolerances);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return p;
}

nlohmann::json read_json_problem(Config& cfg) {
  if (cfg.problem_path.empty()) return nlohmann::json::object();
  cfg.problem_text = io::read_file(cfg.problem_path);
  try {
    return nlohmann::json::parse(cfg.problem_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
}

ControlAffineSystem pick_system(const Config& cfg, const nlohmann::json& j, const std::string& fallback) {
  if (j.contains("system")) return system_from_json(j.at("system"));
  return builtin_system(cfg.system.empty() ? fallback : cfg.system);
}

// ---------------------------------------------------------------------------

int cmd_desingularize(Config& cfg) {
  const LQProblem p = load(cfg);
  const auto issues = validate(p, cfg.tolerances);
  if (!issues.empty()) throw Error(Errc::invalid_problem, issues.front());
  const DesingChain chain = run_chain(normalize_controls(p, cfg.tolerances), cfg.tolerances);
  io::write_json(out_dir(cfg) / "chain.json", chain_to_json(chain));
  std::cout << "r = " << chain.r << "\n";
  return ok;
}

std::vector<double> default_etas(double T) {
  std::vector<double> e;
  for (int i = 1; i <= 13; ++i) e.push_back(T * std::ldexp(1.0, -i));
  return e;
}

int cmd_sigma(Config& cfg) {
  const LQProblem p = load(cfg);
  const Analysis a = analyze(p, cfg.tolerances);
  const fs::path dir = out_dir(cfg);
  io::write_json(dir / "sigma_exact.json", sigma_report_json(a.exact, a.stratum, a.jumps));
  std::cout << "sigma_exact = " << io::format_double(a.exact.sigma) << "\n";
  if (a.jumps.infinite) return ok;

  const auto etas = cfg.grid.empty() ? default_etas(*p.T) : parse_grid(cfg.grid);
  const MinimizingFamily fam = analysis_family(a, etas, cfg.jobs, !cfg.reduced_inf);
  io::Csv csv("sigma", cfg.canonical(), {"eta", "cost", "endpoint_gap", "gap", "l2_norm"});
  for (const auto& e : fam.entries) csv.row({e.eta, e.cost, e.endpoint_gap, fam.gap(e), e.l2norm});
  io::write_file(dir / "family.csv", csv.str());

  nlohmann::json fitted;
  fitted["inf_estimate"] = fam.inf_estimate;
  fitted["inf_residual"] = fam.inf_residual;
  int code = ok;
  try {
    const SigmaReport rep = fit_sigma(fam);
    fitted["sigma"] = rep.sigma;
    fitted["stderr"] = rep.stderr_slope;
    fitted["band"] = {rep.band_lo, rep.band_hi};
    fitted["intercept"] = rep.intercept;
    fitted["points_used"] = rep.points_used;
    fitted["gap_decades"] = fitted_gap_decades(fam);
    std::cout << "sigma_fitted = " << io::format_double(rep.sigma) << "\n";
    if (std::isfinite(a.exact.sigma) && a.exact.sigma > 0 &&
        std::abs(rep.sigma - a.exact.sigma) > cfg.sigma_rel * a.exact.sigma) {
      std::cerr << "fitted and exact degree of singularity disagree\n";
      code = mismatch;
    }
  } catch (const Error& e) {
    fitted["sigma"] = nullptr;
    fitted["error"] = e.what();
    std::cout << "sigma_fitted unavailable: " << e.what() << "\n";
  }
  io::write_json(dir / "sigma_fitted.json", fitted);
  return code;
}

int cmd_regularize(Config& cfg) {
  const LQProblem p = load(cfg);
  const Analysis a = analyze(p, cfg.tolerances);
  if (a.jumps.infinite) throw Error(Errc::invalid_argument, "regularize needs a finite horizon");
  const auto etas = cfg.eta_grid.empty() ? default_etas(*p.T) : parse_grid(cfg.eta_grid);
  const MinimizingFamily fam = analysis_family(a, etas, cfg.jobs, !cfg.reduced_inf);
  const PenaltySpec rho = PenaltySpec::power_law(cfg.rho);
  const auto eps = cfg.grid.empty() ? parse_grid("geom:1:1e-8:17") : parse_grid(cfg.grid);
  const fs::path dir = out_dir(cfg);

  io::Csv sweep("regularize", cfg.canonical(), {"eps", "envelope", "envelope_minus_inf", "argmin_eta"});
  for (const auto& r : regularization_sweep(fam, rho, eps))
    sweep.row({r.eps, r.envelope, r.envelope - fam.inf_estimate, r.argmin_eta});
  io::write_file(dir / "sweep.csv", sweep.str());

  io::Csv sched("regularize", cfg.canonical(), {"m", "eta", "eps", "nu", "cost", "J_eps", "bound"});
  for (const auto& r : epsilon_schedule(fam, rho, cfg.m_max))
    sched.row({static_cast<double>(r.m), r.eta, r.eps, r.nu, r.cost, r.J_eps, fam.inf_estimate + 2.0 / r.m});
  io::write_file(dir / "schedule.csv", sched.str());
  return ok;
}

int cmd_driftless(Config& cfg) {
  const nlohmann::json j = read_json_problem(cfg);
  const ControlAffineSystem sys = pick_system(cfg, j, "scalar-integrator");
  const auto d = j.value("driftless", nlohmann::json::object());
  const Eigen::Index n = sys.n, k = sys.k;
  auto vec_or = [&](const char* key, double fill) {
    return d.contains(key) ? detail::json_vector(d.at(key), key) : Vec(Vec::Constant(n, fill));
  };
  const Vec x0 = vec_or("x0", 1), xT = vec_or("xT", 1), xhat = vec_or("xhat", 0);
  const Mat P = d.contains("P") ? detail::json_matrix(d.at("P"), "P") : Mat(Mat::Identity(n, n));
  const double alpha = d.value("alpha", 0.0);
  const double T = d.value("T", 1.0);
  auto steering = [&](const char* key, double fill) {
    if (d.contains(key)) {
      const Mat m = detail::json_matrix(d.at(key), key);
      return SampledSignal{m, 1.0};
    }
    return SampledSignal{Mat::Constant(k, 65, fill), 1.0};
  };
  const SampledSignal u0 = steering("u0", -1), uT = steering("uT", 1);
  const auto ns = integer_grid(cfg.grid.empty() ? "list:4,8,16,32,64,128,256,512,1024,2048,4096" : cfg.grid);
  const DriftlessFamily fam = driftless_family(sys, P, x0, xT, xhat, alpha, u0, uT, ns, T);

  io::Csv csv("driftless", cfg.canonical(),
              {"n", "eta", "cost", "norm_sq", "predicted_norm_sq", "endpoint_gap", "gap"});
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const auto& e = fam.family.entries[i];
    csv.row({static_cast<double>(ns[i]), e.eta, e.cost, fam.norm_sq[i], fam.predicted_norm_sq[i], e.endpoint_gap,
             fam.family.gap(e)});
  }
  io::write_file(out_dir(cfg) / "driftless.csv", csv.str());
  try {
    std::cout << "sigma_fitted = " << io::format_double(fit_sigma(fam.family).sigma) << "\n";
  } catch (const Error& e) {
    std::cout << "sigma_fitted unavailable: " << e.what() << "\n";
  }
  return ok;
}

int cmd_ex1(Config& cfg) {
  const auto Ns = integer_grid(cfg.grid.empty() ? "list:8,16,32,64,128" : cfg.grid);
  const Example1Family fam = example1_family(Ns);
  io::Csv csv("ex1", cfg.canonical(), {"N", "J", "J_minus_1", "x2_end", "x3_end", "u_norm"});
  for (std::size_t i = 0; i < Ns.size(); ++i)
    csv.row({static_cast<double>(Ns[i]), fam.J[i], fam.J[i] - 1, fam.x2_end[i], fam.x3_end[i],
             fam.family.entries[i].l2norm});
  io::write_file(out_dir(cfg) / "ex1.csv", csv.str());
  return ok;
}

int cmd_relax(Config& cfg) {
  const nlohmann::json j = read_json_problem(cfg);
  const ControlAffineSystem sys = pick_system(cfg, j, "oscillator");
  if (sys.k > 1) {
    const double defect = bracket_defect(sys, cfg.seed);
    if (defect > 1e-4) throw Error(Errc::flavor_mismatch, "input fields do not commute");
  }
  const auto r = j.value("relaxed", nlohmann::json::object());
  const double T = r.value("T", 1.0);
  const Vec x0 = r.contains("x0") ? detail::json_vector(r.at("x0"), "x0") : Vec(Vec::Unit(sys.n, 0));
  const Vec VT = r.contains("V_T") ? detail::json_vector(r.at("V_T"), "V_T") : Vec(Vec::Zero(sys.k));
  const Mat P = r.contains("P") ? detail::json_matrix(r.at("P"), "P") : Mat(Mat::Identity(sys.n, sys.n));
  std::vector<double> weights{0.5, 0.5};
  std::vector<Vec> atoms{Vec::Constant(sys.k, 1), Vec::Constant(sys.k, -1)};
  if (r.contains("weights")) weights = r.at("weights").get<std::vector<double>>();
  if (r.contains("atoms")) {
    const Mat A = detail::json_matrix(r.at("atoms"), "atoms");  // one atom per row
    atoms.clear();
    for (Eigen::Index i = 0; i < A.rows(); ++i) atoms.push_back(A.row(i).transpose());
  }
  if (weights.size() != atoms.size()) throw Error(Errc::parse_error, "weights and atoms differ in length");
  const RelaxedControl rc = constant_relaxed(weights, atoms, T);
  const auto eps = cfg.grid.empty() ? parse_grid("geom:0.2:0.0125:5") : parse_grid(cfg.grid);

  std::vector<P5Report> reps(eps.size());
  parallel_for(eps.size(), cfg.jobs, [&](std::size_t i) { reps[i] = p5_pipeline(sys, P, rc, eps[i], x0, VT); });
  io::Csv csv("relax", cfg.canonical(),
              {"eps", "N", "cost_relaxed", "cost_eps", "cost_gap", "y_sup_gap", "endpoint_gap", "deriv_norm_sq",
               "goh_cost_gap"});
  for (const auto& rep : reps)
    csv.row({rep.eps, static_cast<double>(rep.N), rep.cost_relaxed, rep.cost_eps, rep.cost_gap, rep.y_sup_gap,
             rep.endpoint_gap, rep.deriv_norm_sq, rep.goh_cost_gap});
  io::write_file(out_dir(cfg) / "relax.csv", csv.str());
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singular linear-quadratic control experiments"};
  app.require_subcommand(1);
  Config cfg;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--problem", cfg.problem_path, "Problem JSON file");
    sub->add_option("--out", cfg.out, "Output directory (SINGULO_OUT overrides)");
    sub->add_option("--grid", cfg.grid, "Sweep grid: geom:a:b:k or list:v1,v2,...");
    sub->add_option("--jobs", cfg.jobs, "Worker threads for sweeps")->check(CLI::PositiveNumber);
    sub->add_option("--seed", cfg.seed, "Seed for randomized probes");
    sub->add_option("--tol", cfg.tol, "Tolerance override NAME=VAL")->take_all();
  };

  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(Config&);
  };
  const std::vector<Cmd> cmds{
      {"desingularize", "Run the desingularization chain and write chain.json", cmd_desingularize},
      {"sigma", "Exact and fitted degree of singularity with the minimizing family", cmd_sigma},
      {"regularize", "Regularization sweep and epsilon schedule", cmd_regularize},
      {"driftless", "Boundary-layer family of a driftless system", cmd_driftless},
      {"ex1", "Oscillating family of the three-state example", cmd_ex1},
      {"relax", "Chattering, smoothing and Goh lift of a relaxed control", cmd_relax},
  };
  std::map<CLI::App*, const Cmd*> lookup;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    lookup[sub] = &c;
    const std::string name = c.name;
    if (name == "sigma" || name == "regularize") {
      sub->add_flag("--reduced-inf", cfg.reduced_inf, "Use the reduced optimal value as the infimum");
    }
    if (name == "regularize") {
      sub->add_option("--eta-grid", cfg.eta_grid, "Family eta grid");
      sub->add_option("--rho", cfg.rho, "Penalty exponent (|u|^rho)");
      sub->add_option("--m-max", cfg.m_max, "Largest schedule index");
    }
    if (name == "driftless" || name == "relax") sub->add_option("--system", cfg.system, "Built-in system name");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  const Cmd* cmd = nullptr;
  for (auto* sub : app.get_subcommands()) cmd = lookup.at(sub);
  cfg.command = cmd->name;
  try {
    apply_tolerances(cfg);
    return cmd->run(cfg);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: ParseError: " << e.what() << "\n";
    return io_failure;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: IoError: " << e.what() << "\n";
    return io_failure;
  }
}
