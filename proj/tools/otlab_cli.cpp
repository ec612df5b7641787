// Command-line front end: one-shot trials, resumable sweeps with summary and
// plot-data emission, the invariant verification suite, the stability suite,
// and a Hopf-Lax demonstration. Exit codes: 0 success, 2 usage/config error,
// 3 numerical failure.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "otlab/discrete_ot.hpp"
#include "otlab/experiments.hpp"
#include "otlab/hopflax.hpp"
#include "otlab/stability.hpp"

namespace {

using namespace otlab;

std::string default_out_dir() {
  const char* env = std::getenv("OTLAB_OUT");
  return env ? env : ".";
}

struct CommonOpts {
  std::string domain = "torus";
  int n = 256;
  std::uint64_t seed = 1;
  int N = 512;
  double alpha = 4.0;
  double tolMass = 1e-3;
  long long q = 0;
  std::string out = default_out_dir();
  int jobs = static_cast<int>(std::thread::hardware_concurrency());
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--domain", o.domain, "torus or square")
      ->check(CLI::IsMember({"torus", "square"}));
  cmd->add_option("--seed", o.seed, "base random seed");
  cmd->add_option("--grid", o.N, "grid resolution N");
  cmd->add_option("--alpha", o.alpha, "heat-time exponent: t = ln^alpha(n)/n");
  cmd->add_option("--tol-mass", o.tolMass, "mass tolerance for the dual ascent");
  cmd->add_option("--samples", o.q, "pushforward sample count (0 = 16 N^2)");
  cmd->add_option("--out", o.out, "output directory (default $OTLAB_OUT or .)");
  cmd->add_option("--jobs", o.jobs, "worker pool size");
}

TrialConfig make_config(const CommonOpts& o) {
  TrialConfig cfg;
  cfg.domain = o.domain;
  cfg.n = o.n;
  cfg.seed = o.seed;
  cfg.N = o.N;
  cfg.alpha = o.alpha;
  cfg.tolMass = o.tolMass;
  cfg.q = o.q;
  return cfg;
}

int cmd_trial(const CommonOpts& o) {
  TrialConfig cfg = make_config(o);
  TrialRecord rec = run_trial(cfg);
  if (rec.failed) {
    std::cerr << "trial failed at stage " << rec.failStage << "\n";
    return 3;
  }
  std::filesystem::create_directories(o.out);
  std::string path = o.out + "/trial-" + cfg.domain + "-n" +
                     std::to_string(cfg.n) + "-seed" + std::to_string(cfg.seed) +
                     ".jsonl";
  std::ofstream f(path);
  f << nlohmann::json(rec).dump() << "\n";
  std::cout << path << "\n";
  return 0;
}

void write_plot_files(const std::string& out,
                      const std::vector<SweepSummary>& sums,
                      const std::vector<TrialRecord>& recs) {
  auto open = [&](const std::string& name) {
    std::ofstream f(out + "/" + name);
    f.precision(17);
    return f;
  };
  {
    auto f = open("plot_r1.csv");
    f << "n,r1,ci_lo,ci_hi\n";
    for (const auto& s : sums)
      f << s.n << "," << s.r1 << "," << s.r1_lo << "," << s.r1_hi << "\n";
  }
  {
    auto f = open("plot_r2.csv");
    f << "n,r2,target_sqrt_lnln_over_ln\n";
    for (const auto& s : sums) f << s.n << "," << s.r2 << "," << s.r2_target << "\n";
  }
  {
    auto f = open("plot_r3.csv");
    f << "n,r3\n";
    for (const auto& s : sums) f << s.n << "," << s.r3 << "\n";
  }
  {
    auto f = open("plot_r4.csv");
    f << "n,r4\n";
    for (const auto& s : sums) f << s.n << "," << s.r4 << "\n";
  }
  {
    auto f = open("plot_grad_ratio.csv");
    f << "n,grad_ratio_excess_mean,ci\n";
    for (const auto& s : sums)
      f << s.n << "," << s.gradExcess.mean << "," << s.gradExcess.ci95 << "\n";
  }
  {
    auto f = open("plot_linf_exponent.csv");
    f << "n,w2sq_m_mun,linf_disp\n";
    for (const auto& r : recs)
      if (!r.failed)
        f << r.config.n << "," << r.w2sq_m_mun << "," << r.linf_disp << "\n";
    LinfFit fit = linf_exponent_report(recs);
    auto g = open("linf_fit.csv");
    g << "samples,violations,max_constant,slope\n";
    g << fit.samples << "," << fit.violations << "," << fit.maxConstant << ","
      << fit.slope << "\n";
  }
}

int cmd_sweep(const CommonOpts& o, const std::vector<int>& ns, int trials) {
  std::filesystem::create_directories(o.out);
  SweepOptions opt;
  opt.ns = ns;
  opt.trialsPerN = trials;
  opt.baseSeed = o.seed;
  opt.base = make_config(o);
  opt.jsonlPath = o.out + "/records.jsonl";
  opt.jobs = o.jobs;
  std::vector<TrialRecord> recs = sweep(opt);

  int failures = 0;
  for (const TrialRecord& r : recs)
    if (r.failed) {
      std::cerr << "failed trial n=" << r.config.n << " seed=" << r.config.seed
                << " stage=" << r.failStage << "\n";
      ++failures;
    }

  std::vector<SweepSummary> sums = summarize(recs);
  {
    std::ofstream f(o.out + "/summary.csv");
    f.precision(17);
    f << "schema_version,n,trials,failures,w2sq_mean,w2sq_ci,l2_mean,l2_ci,"
         "r1,r1_lo,r1_hi,r2,r2_target,r3,r4,grad_excess_mean,event_a_freq,"
         "linf_mean\n";
    for (const auto& s : sums)
      f << 1 << "," << s.n << "," << s.trials << "," << s.failures << ","
        << s.w2sq.mean << "," << s.w2sq.ci95 << "," << s.l2.mean << ","
        << s.l2.ci95 << "," << s.r1 << "," << s.r1_lo << "," << s.r1_hi << ","
        << s.r2 << "," << s.r2_target << "," << s.r3 << "," << s.r4 << ","
        << s.gradExcess.mean << "," << s.eventAFreq << "," << s.linf.mean
        << "\n";
  }
  write_plot_files(o.out, sums, recs);
  std::cout << recs.size() << " records, " << sums.size()
            << " summary rows -> " << o.out << "\n";
  return failures == 0 ? 0 : 3;
}

int cmd_stability(const CommonOpts& o) {
  Domain dom = (o.domain == "torus") ? Domain::torus() : Domain::square();
  Grid grid(dom, 128);
  ScalarField f = ScalarField::from_function(grid, [&](Point p) {
    if (dom.is_torus())
      return 0.004 * (std::cos(2 * M_PI * p.x1) + 0.5 * std::sin(2 * M_PI * p.x2));
    return 0.004 * (std::cos(M_PI * p.x1) + 0.5 * std::cos(2 * M_PI * p.x2));
  });
  PointCloud cloud2 = sample_cloud(dom, 64, derive_seed({o.seed, 7}));
  std::vector<StabilityReport> reps =
      perturbation_scaling(f, cloud2, {1.0, 0.5, 0.25, 0.125, 0.0}, o.seed);

  std::filesystem::create_directories(o.out);
  std::ofstream sink(o.out + "/stability.jsonl");
  bool ok = true;
  for (const StabilityReport& r : reps) {
    nlohmann::json j = {{"schema_version", 1},
                        {"lhs", r.lhs},
                        {"rhs_a", r.rhsA},
                        {"rhs_b", r.rhsB},
                        {"ratio", r.ratio},
                        {"bracket_width", r.w2BracketWidth},
                        {"admissible", r.admissible}};
    sink << j.dump() << "\n";
    std::cout << "ratio " << r.ratio << (r.admissible ? "" : " (inadmissible)")
              << "\n";
    if (r.admissible && r.ratio > config::kCStab) ok = false;
  }
  if (!ok) std::cerr << "stability ceiling exceeded\n";
  return ok ? 0 : 3;
}

int cmd_hopflax_demo(const CommonOpts& o) {
  Domain dom = (o.domain == "torus") ? Domain::torus() : Domain::square();
  Grid grid(dom, 256);
  ScalarField f = ScalarField::from_function(grid, [&](Point p) {
    if (dom.is_torus())
      return 0.02 * std::cos(2 * M_PI * p.x1) + 0.01 * std::sin(2 * M_PI * p.x2);
    return 0.02 * std::cos(M_PI * p.x1) + 0.01 * std::cos(2 * M_PI * p.x2);
  });
  double t = 0.5;
  HopfLaxResult exact = hopflax_grid(f, t);
  HopfLaxResult flow = hopflax_characteristics(f, t);
  double sup = 0;
  for (int i = 0; i < grid.resolution(); ++i)
    for (int j = 0; j < grid.resolution(); ++j)
      sup = std::max(sup, std::abs(exact.Qf.value_at_cell(i, j) -
                                   flow.Qf.value_at_cell(i, j)));
  std::cout << "Q_t f by envelope vs characteristics: sup difference = " << sup
            << " (h = " << grid.spacing() << ")\n";
  return sup <= 5 * grid.spacing() ? 0 : 3;
}

struct Invariant {
  std::string name;
  bool pass;
  std::string detail;
};

int cmd_verify(const CommonOpts& o, bool injectFailure) {
  std::vector<Invariant> results;
  auto check = [&](const std::string& name, auto&& fn) {
    try {
      auto [pass, detail] = fn();
      results.push_back({name, pass, detail});
    } catch (const std::exception& e) {
      results.push_back({name, false, e.what()});
    }
  };

  check("poisson.single_mode_exact", [] {
    Grid grid(Domain::torus(), 256);
    ScalarField rho = ScalarField::from_function(
        grid, [](Point p) { return 1.0 + std::cos(2 * M_PI * p.x1); });
    ScalarField f = solve_poisson(rho);
    double worst = 0;
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 256; ++j) {
        Point p = grid.center(i, j);
        double exact = std::cos(2 * M_PI * p.x1) / (4 * M_PI * M_PI);
        worst = std::max(worst, std::abs(f.value_at_cell(i, j) - exact));
      }
    return std::pair{worst < 1e-10 / (4 * M_PI * M_PI),
                     "sup error " + std::to_string(worst)};
  });

  check("semidiscrete.single_atom_sixth", [] {
    Grid grid(Domain::torus(), 64);
    PointCloud c{Domain::torus(), {{0.3, 0.7}}, 0};
    double w2 = solve_semidiscrete(c, grid).w2sq;
    return std::pair{std::abs(w2 - 1.0 / 6) < 0.005 / 6,
                     "w2sq " + std::to_string(w2)};
  });

  check("semidiscrete.symmetric_pair", [] {
    Grid grid(Domain::torus(), 256);
    PointCloud c{Domain::torus(), {{0.25, 0.5}, {0.75, 0.5}}, 0};
    double w2 = solve_semidiscrete(c, grid).w2sq;
    return std::pair{std::abs(w2 - 5.0 / 48) < 0.01 * 5 / 48,
                     "w2sq " + std::to_string(w2)};
  });

  check("discrete_ot.certificate", [] {
    Rng rng(8);
    WeightedAtoms a{Domain::torus(), {}, {}}, b = a;
    for (int i = 0; i < 50; ++i) {
      a.points.push_back({rng.uniform(), rng.uniform()});
      a.masses.push_back(1.0 / 50);
      b.points.push_back({rng.uniform(), rng.uniform()});
      b.masses.push_back(1.0 / 50);
    }
    DiscreteOtResult r = discrete_ot_exact(a, b);
    return std::pair{r.gap <= 1e-9, "gap " + std::to_string(r.gap)};
  });

  check("sinkhorn.identical_zero", [] {
    Grid grid(Domain::torus(), 64);
    ScalarField rho = ScalarField::from_function(
        grid, [](Point p) { return 1.0 + 0.2 * std::cos(2 * M_PI * p.x1); });
    SinkhornBracket br = sinkhorn_w2(rho, rho);
    return std::pair{br.lower == 0.0 && br.upper == 0.0, std::string("exact")};
  });

  check("stability.zero_anchor_ratio_one", [&] {
    Grid grid(Domain::torus(), 128);
    ScalarField zero = ScalarField::from_function(grid, [](Point) { return 0.0; });
    PointCloud c2 = sample_cloud(Domain::torus(), 64, 21);
    StabilityReport rep = stability_check(zero, c2, 5);
    return std::pair{std::abs(rep.ratio - 1.0) < 1e-6,
                     "ratio " + std::to_string(rep.ratio)};
  });

  check("experiments.trial_determinism", [] {
    TrialConfig cfg;
    cfg.n = 64;
    cfg.N = 64;
    cfg.seed = trial_seed(3, 64, 0);
    bool same = record_content_line(run_trial(cfg)) ==
                record_content_line(run_trial(cfg));
    return std::pair{same, std::string(same ? "byte-identical" : "diverged")};
  });

  check("hopflax.methods_agree", [&] {
    CommonOpts demo = o;
    demo.domain = "torus";
    return std::pair{cmd_hopflax_demo(demo) == 0, std::string("5h band")};
  });

  if (injectFailure)
    results.push_back({"selftest.injected_violation", false, "requested"});

  size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  bool allPass = true;
  for (const auto& r : results) {
    std::cout << r.name << std::string(width + 2 - r.name.size(), ' ')
              << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "\n";
    allPass = allPass && r.pass;
  }
  return allPass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for semi-discrete optimal transport"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags override");
  app.set_version_flag("--version", "otlab 1.0");

  CommonOpts trialOpts, sweepOpts, stabOpts, demoOpts, verifyOpts;
  std::vector<int> ns = {256, 1024, 4096};
  int trials = 32;
  bool injectFailure = false;

  CLI::App* trial = app.add_subcommand("trial", "run one seeded trial");
  trial->add_option("--n", trialOpts.n, "number of atoms")->required();
  add_common(trial, trialOpts);

  CLI::App* sw = app.add_subcommand("sweep", "run a resumable seeded sweep");
  sw->add_option("--ns", ns, "atom counts (increasing)");
  sw->add_option("--trials", trials, "trials per n");
  add_common(sw, sweepOpts);

  CLI::App* stab = app.add_subcommand("stability", "run the pinned stability suite");
  add_common(stab, stabOpts);

  CLI::App* demo = app.add_subcommand("hopflax-demo",
                                      "compare Hopf-Lax methods on a sample datum");
  add_common(demo, demoOpts);

  CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_flag("--inject-failure", injectFailure,
                   "add a deliberately failing row (reporting self-test)");
  add_common(verify, verifyOpts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (trial->parsed()) return cmd_trial(trialOpts);
    if (sw->parsed()) return cmd_sweep(sweepOpts, ns, trials);
    if (stab->parsed()) return cmd_stability(stabOpts);
    if (demo->parsed()) return cmd_hopflax_demo(demoOpts);
    if (verify->parsed()) return cmd_verify(verifyOpts, injectFailure);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
