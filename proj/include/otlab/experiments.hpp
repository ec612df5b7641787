// Monte Carlo harness: per-trial pipeline (empirical cloud -> heat-evolved
// potential -> exponential-map ansatz vs the exact semi-discrete map), seeded
// sweeps with resumable JSONL persistence, and the derived aggregate ratios.
#pragma once

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "otlab/config.hpp"
#include "otlab/semidiscrete.hpp"
#include "otlab/sinkhorn.hpp"

namespace otlab {

// t = ln^alpha(n) / n and xi = 1 / ln(n); natural logarithm throughout.
inline std::pair<double, double> schedule(int n, double alpha = 4.0) {
  if (n < 3) throw std::invalid_argument("schedule: n must be at least 3");
  double ln = std::log(static_cast<double>(n));
  return {std::pow(ln, alpha) / n, 1.0 / ln};
}

struct TrialConfig {
  std::string domain = "torus";  // "torus" or "square"
  int n = 256;
  std::uint64_t seed = 0;
  int N = 512;
  double alpha = 4.0;      // heat time exponent: t = ln^alpha(n)/n
  double tolMass = 1e-3;
  std::vector<double> epsSchedule = {1e-1, 1e-2, 1e-3, 1e-4};
  long long q = 0;         // pushforward samples; 0 means 16 N^2

  Domain make_domain() const {
    if (domain == "torus") return Domain::torus();
    if (domain == "square") return Domain::square();
    throw std::invalid_argument("unknown domain: " + domain);
  }
  long long samples() const { return q > 0 ? q : 16LL * N * N; }
};

struct Bracket {
  double lower = 0;
  double upper = 0;
  double mid() const { return 0.5 * (lower + upper); }
};

struct TrialRecord {
  int schemaVersion = 1;
  TrialConfig config;
  bool failed = false;
  std::string failStage;

  double t = 0, xi = 0;
  double w2sq_m_mun = 0;        // W2^2(m, mu^n): raster semi-discrete cost
  double dual_m_mun = 0;        // its certified dual lower bound
  double l2_T_vs_ansatz = 0;    // int d^2(T^n, exp(grad f^{n,t})) dm
  Bracket w2sq_mun_munt;        // W2^2(mu^n, mu^{n,t}): reweighted solve
  Bracket w2sq_m_munt;          // W2^2(m, mu^{n,t}): entropic bracket
  Bracket w2sq_munt_hat;        // W2^2(mu^{n,t}, hat mu^{n,t}): entropic
  Bracket w2sq_mun_hat;         // W2^2(mu^n, hat mu^{n,t}): reweighted solve
  Bracket w2sq_m_hat;           // W2^2(m, hat mu^{n,t}): entropic
  double heat_ceiling = 0;      // crude diffusion bound: W2^2 <= t, recorded
  double hess_sup = 0;
  bool eventA = false;          // hess_sup < xi
  double dirichlet = 0;
  double grad_ratio = 1;        // 1 + grad_ratio_excess (algebraic form)
  double grad_ratio_excess = 0; // (|g_t|^2 - 2<g_n, g_t>) / |g_n|^2
  double linf_disp = 0;
  bool cMonotone = false;       // 10^3-pair spot check on T^n
  double clampMass = 0;         // negative heat mass clipped
  double runtimeSeconds = 0;    // excluded from determinism comparisons
};

// Spot check of c-cyclical monotonicity on sampled cell pairs.
inline bool c_monotone_spot_check(const TransportMapGrid& t, std::uint64_t seed,
                                  int pairs = 1000, double tol = 1e-10) {
  const Grid& grid = t.grid;
  const Domain& dom = grid.domain();
  Rng rng(seed);
  for (int k = 0; k < pairs; ++k) {
    int s1 = static_cast<int>(rng.uniform_below(grid.size()));
    int s2 = static_cast<int>(rng.uniform_below(grid.size()));
    Point x = grid.center(s1), y = grid.center(s2);
    const Point& tx = t.target[s1];
    const Point& ty = t.target[s2];
    if (dom.dist_sq(x, tx) + dom.dist_sq(y, ty) >
        dom.dist_sq(x, ty) + dom.dist_sq(y, tx) + tol)
      return false;
  }
  return true;
}

// Admits a map's (linf, l2-vs-identity) pair into the exponent study only
// after the optimality spot check: the L-infinity bound of the theory holds
// for optimal maps, and synthetic non-monotone maps must be rejected.
struct ExponentSample {
  double linf = 0;
  double l2 = 0;
};

inline ExponentSample exponent_sample_from_map(const TransportMapGrid& t,
                                               std::uint64_t seed) {
  if (!c_monotone_spot_check(t, seed))
    throw SolverError("exponent study: map fails c-cyclical monotonicity");
  TransportMapGrid id = identity_map(t.grid);
  return {linf_map_distance(t), map_l2_distance(t, id)};
}

namespace detail {
constexpr std::uint64_t kStageCloud = 101;
constexpr std::uint64_t kStagePush = 102;
constexpr std::uint64_t kStageMono = 103;
}  // namespace detail

inline TrialRecord run_trial(const TrialConfig& cfg) {
  auto wall0 = std::chrono::steady_clock::now();
  TrialRecord rec;
  rec.config = cfg;
  Domain dom = cfg.make_domain();
  Grid grid(dom, cfg.N);
  std::tie(rec.t, rec.xi) = schedule(cfg.n, cfg.alpha);

  std::string stage = "setup";
  try {
    PointCloud cloud =
        sample_cloud(dom, cfg.n, derive_seed({cfg.seed, detail::kStageCloud}));

    stage = "semidiscrete";
    SemiDiscretePlan plan = solve_semidiscrete(cloud, grid, cfg.tolMass);
    rec.w2sq_m_mun = plan.w2sq;
    rec.dual_m_mun = plan.dualValue;
    TransportMapGrid tmap = plan_map(plan, grid);
    rec.linf_disp = linf_map_distance(tmap);
    rec.cMonotone =
        c_monotone_spot_check(tmap, derive_seed({cfg.seed, detail::kStageMono}));

    stage = "heat_poisson";
    HeatDiagnostics heatDiag;
    ScalarField munt = heat_evolve(cloud, rec.t, grid, &heatDiag);
    ScalarField f = solve_poisson(munt);
    VectorField gt = gradient(f);
    rec.clampMass = heatDiag.clamp_mass;
    rec.hess_sup = hessian_sup_norm(f);
    rec.eventA = rec.hess_sup < rec.xi;
    rec.dirichlet = dirichlet_energy(f);
    rec.heat_ceiling = rec.t;

    stage = "ansatz_compare";
    TransportMapGrid smap = exp_of_field(gt);
    rec.l2_T_vs_ansatz = map_l2_distance(tmap, smap);

    stage = "log_map";
    VectorField gn = grad_potential_from_map(tmap);
    // ratio = |g_n - g_t|^2 / |g_n|^2 expanded algebraically: the heat flow
    // leaves g_t many orders below g_n, and the excess keeps the comparison
    // meaningful where the naive quotient would round to 1 exactly.
    double den = 0, cross = 0, tt = 0;
    for (int i = 0; i < cfg.N; ++i)
      for (int j = 0; j < cfg.N; ++j) {
        TangentVector a = gn.at_cell(i, j), b = gt.at_cell(i, j);
        den += a.norm_sq();
        cross += a.v1 * b.v1 + a.v2 * b.v2;
        tt += b.norm_sq();
      }
    rec.grad_ratio_excess = (den > 0) ? (tt - 2 * cross) / den : 0.0;
    rec.grad_ratio = 1.0 + rec.grad_ratio_excess;

    stage = "w2_mun_munt";
    std::vector<double> muntMass(grid.size());
    for (int i = 0; i < cfg.N; ++i)
      for (int j = 0; j < cfg.N; ++j)
        muntMass[static_cast<size_t>(i) * cfg.N + j] =
            grid.cell_weight() * munt.value_at_cell(i, j);
    // The raster plan meets its marginals only to the granularity tolerance,
    // so its cost can sit slightly below the dual value; the certified
    // interval around the cost is the honest bracket.
    auto plan_bracket = [](const SemiDiscretePlan& p) {
      return Bracket{std::max(0.0, p.w2sq - p.gapBound), p.w2sq + p.gapBound};
    };
    SemiDiscretePlan planT =
        solve_semidiscrete_weighted(cloud, grid, muntMass, cfg.tolMass);
    rec.w2sq_mun_munt = plan_bracket(planT);

    stage = "w2_m_munt";
    ScalarField uniform =
        ScalarField::from_function(grid, [](Point) { return 1.0; });
    SinkhornBracket bm = sinkhorn_w2(uniform, munt, cfg.epsSchedule);
    rec.w2sq_m_munt = {bm.lower, bm.upper};

    stage = "pushforward";
    ScalarField muhat = pushforward_density(
        gt, grid, cfg.samples(), derive_seed({cfg.seed, detail::kStagePush}));

    stage = "w2_munt_hat";
    SinkhornBracket bh = sinkhorn_w2(munt, muhat, cfg.epsSchedule);
    rec.w2sq_munt_hat = {bh.lower, bh.upper};

    stage = "w2_mun_hat";
    std::vector<double> hatMass(grid.size());
    for (int i = 0; i < cfg.N; ++i)
      for (int j = 0; j < cfg.N; ++j)
        hatMass[static_cast<size_t>(i) * cfg.N + j] =
            grid.cell_weight() * muhat.value_at_cell(i, j);
    SemiDiscretePlan planH =
        solve_semidiscrete_weighted(cloud, grid, hatMass, cfg.tolMass);
    rec.w2sq_mun_hat = plan_bracket(planH);

    stage = "w2_m_hat";
    SinkhornBracket bmh = sinkhorn_w2(uniform, muhat, cfg.epsSchedule);
    rec.w2sq_m_hat = {bmh.lower, bmh.upper};
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failStage = stage + ": " + e.what();
  }

  rec.runtimeSeconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0)
          .count();
  return rec;
}

// ---------------------------------------------------------------------------
// Serialization (JSON lines, schema_version inside each record).

inline void to_json(nlohmann::json& j, const TrialConfig& c) {
  j = {{"domain", c.domain},     {"n", c.n},
       {"seed", c.seed},         {"N", c.N},
       {"alpha", c.alpha},       {"tol_mass", c.tolMass},
       {"eps_schedule", c.epsSchedule}, {"q", c.q}};
}

inline void from_json(const nlohmann::json& j, TrialConfig& c) {
  j.at("domain").get_to(c.domain);
  j.at("n").get_to(c.n);
  j.at("seed").get_to(c.seed);
  j.at("N").get_to(c.N);
  j.at("alpha").get_to(c.alpha);
  j.at("tol_mass").get_to(c.tolMass);
  j.at("eps_schedule").get_to(c.epsSchedule);
  j.at("q").get_to(c.q);
}

inline void to_json(nlohmann::json& j, const Bracket& b) {
  j = {{"lower", b.lower}, {"upper", b.upper}};
}

inline void from_json(const nlohmann::json& j, Bracket& b) {
  j.at("lower").get_to(b.lower);
  j.at("upper").get_to(b.upper);
}

inline void to_json(nlohmann::json& j, const TrialRecord& r) {
  j = {{"schema_version", r.schemaVersion},
       {"config", r.config},
       {"failed", r.failed},
       {"fail_stage", r.failStage},
       {"t", r.t},
       {"xi", r.xi},
       {"w2sq_m_mun", r.w2sq_m_mun},
       {"dual_m_mun", r.dual_m_mun},
       {"l2_T_vs_ansatz", r.l2_T_vs_ansatz},
       {"w2sq_mun_munt", r.w2sq_mun_munt},
       {"w2sq_m_munt", r.w2sq_m_munt},
       {"w2sq_munt_hat", r.w2sq_munt_hat},
       {"w2sq_mun_hat", r.w2sq_mun_hat},
       {"w2sq_m_hat", r.w2sq_m_hat},
       {"heat_ceiling", r.heat_ceiling},
       {"hess_sup", r.hess_sup},
       {"event_a", r.eventA},
       {"dirichlet", r.dirichlet},
       {"grad_ratio", r.grad_ratio},
       {"grad_ratio_excess", r.grad_ratio_excess},
       {"linf_disp", r.linf_disp},
       {"c_monotone", r.cMonotone},
       {"clamp_mass", r.clampMass},
       {"runtime_seconds", r.runtimeSeconds}};
}

inline void from_json(const nlohmann::json& j, TrialRecord& r) {
  j.at("schema_version").get_to(r.schemaVersion);
  j.at("config").get_to(r.config);
  j.at("failed").get_to(r.failed);
  j.at("fail_stage").get_to(r.failStage);
  j.at("t").get_to(r.t);
  j.at("xi").get_to(r.xi);
  j.at("w2sq_m_mun").get_to(r.w2sq_m_mun);
  j.at("dual_m_mun").get_to(r.dual_m_mun);
  j.at("l2_T_vs_ansatz").get_to(r.l2_T_vs_ansatz);
  j.at("w2sq_mun_munt").get_to(r.w2sq_mun_munt);
  j.at("w2sq_m_munt").get_to(r.w2sq_m_munt);
  j.at("w2sq_munt_hat").get_to(r.w2sq_munt_hat);
  j.at("w2sq_mun_hat").get_to(r.w2sq_mun_hat);
  j.at("w2sq_m_hat").get_to(r.w2sq_m_hat);
  j.at("heat_ceiling").get_to(r.heat_ceiling);
  j.at("hess_sup").get_to(r.hess_sup);
  j.at("event_a").get_to(r.eventA);
  j.at("dirichlet").get_to(r.dirichlet);
  j.at("grad_ratio").get_to(r.grad_ratio);
  j.at("grad_ratio_excess").get_to(r.grad_ratio_excess);
  j.at("linf_disp").get_to(r.linf_disp);
  j.at("c_monotone").get_to(r.cMonotone);
  j.at("clamp_mass").get_to(r.clampMass);
  j.at("runtime_seconds").get_to(r.runtimeSeconds);
}

// Canonical record line with the runtime stripped: the determinism contract
// covers everything except wall-clock measurements.
inline std::string record_content_line(const TrialRecord& r) {
  nlohmann::json j = r;
  j.erase("runtime_seconds");
  return j.dump();
}

// ---------------------------------------------------------------------------
// Sweep with resume.

struct SweepOptions {
  std::vector<int> ns = {256, 1024, 4096};
  int trialsPerN = 32;
  std::uint64_t baseSeed = 1;
  TrialConfig base;        // domain, N, alpha, tolMass, schedule, q template
  std::string jsonlPath;   // empty = in-memory only
  int jobs = 1;
};

inline std::uint64_t trial_seed(std::uint64_t baseSeed, int n, int trialIndex) {
  return derive_seed({baseSeed, static_cast<std::uint64_t>(n),
                      static_cast<std::uint64_t>(trialIndex)});
}

inline std::vector<TrialRecord> sweep(const SweepOptions& opt) {
  for (size_t k = 1; k < opt.ns.size(); ++k)
    if (opt.ns[k] <= opt.ns[k - 1])
      throw std::invalid_argument("sweep: ns must be increasing");

  // Work list in deterministic order.
  std::vector<TrialConfig> todo;
  for (int n : opt.ns)
    for (int k = 0; k < opt.trialsPerN; ++k) {
      TrialConfig cfg = opt.base;
      cfg.n = n;
      cfg.seed = trial_seed(opt.baseSeed, n, k);
      todo.push_back(cfg);
    }

  // Resume: drop work items whose (domain, n, seed, N, alpha) already has a
  // record in the sink file.
  std::vector<TrialRecord> records;
  if (!opt.jsonlPath.empty()) {
    std::ifstream in(opt.jsonlPath);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      TrialRecord r = nlohmann::json::parse(line).get<TrialRecord>();
      records.push_back(std::move(r));
    }
  }
  auto key = [](const TrialConfig& c) {
    std::ostringstream os;
    os << c.domain << '|' << c.n << '|' << c.seed << '|' << c.N << '|' << c.alpha;
    return os.str();
  };
  std::vector<TrialConfig> pending;
  {
    std::vector<std::string> have;
    for (const TrialRecord& r : records) have.push_back(key(r.config));
    for (const TrialConfig& c : todo) {
      bool done = false;
      for (const std::string& h : have)
        if (h == key(c)) {
          done = true;
          break;
        }
      if (!done) pending.push_back(c);
    }
  }

  std::ofstream out;
  std::mutex sink;
  if (!opt.jsonlPath.empty())
    out.open(opt.jsonlPath, std::ios::app);

  auto emit = [&](TrialRecord&& rec) {
    std::lock_guard<std::mutex> lock(sink);
    if (out.is_open()) {
      out << nlohmann::json(rec).dump() << '\n';
      out.flush();
    }
    records.push_back(std::move(rec));
  };

  int jobs = std::max(1, opt.jobs);
  if (jobs == 1) {
    for (const TrialConfig& cfg : pending) emit(run_trial(cfg));
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < pending.size();
             i = next.fetch_add(1))
          emit(run_trial(pending[i]));
      });
    for (std::thread& th : pool) th.join();
  }

  // Deterministic dataset order regardless of completion order.
  std::sort(records.begin(), records.end(),
            [](const TrialRecord& a, const TrialRecord& b) {
              if (a.config.n != b.config.n) return a.config.n < b.config.n;
              return a.config.seed < b.config.seed;
            });
  return records;
}

// ---------------------------------------------------------------------------
// Aggregates.

struct Moments {
  int count = 0;
  double mean = 0;
  double ci95 = 0;  // half-width, normal approximation
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.count = static_cast<int>(xs.size());
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= m.count;
  if (m.count > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.ci95 = 1.96 * std::sqrt(ss / (m.count - 1)) / std::sqrt(m.count);
  }
  return m;
}

struct SweepSummary {
  int n = 0;
  int trials = 0;
  int failures = 0;
  Moments w2sq;          // E[W2^2(m, mu^n)]
  Moments l2;            // E[l2_T_vs_ansatz]
  Moments gradExcess;    // E[grad_ratio_excess]
  Moments linf;
  double r1 = 0, r1_lo = 0, r1_hi = 0;  // 4 pi n E[W2^2] / ln n
  double r2 = 0;                        // E[l2] / (ln n / n)
  double r2_target = 0;                 // sqrt(ln ln n / ln n)
  double r3 = 0;  // E[mid W2^2(mu^n, mu^{n,t})] * n / ln ln n
  double r4 = 0;  // E[mid W2^2(mu^{n,t}, hat)] * n * ln n
  double eventAFreq = 0;
};

inline std::vector<SweepSummary> summarize(const std::vector<TrialRecord>& recs) {
  std::vector<int> ns;
  for (const TrialRecord& r : recs)
    if (std::find(ns.begin(), ns.end(), r.config.n) == ns.end())
      ns.push_back(r.config.n);
  std::sort(ns.begin(), ns.end());

  std::vector<SweepSummary> out;
  for (int n : ns) {
    SweepSummary s;
    s.n = n;
    std::vector<double> w2, l2, ge, li, r3v, r4v;
    int ok = 0, evA = 0;
    for (const TrialRecord& r : recs) {
      if (r.config.n != n) continue;
      ++s.trials;
      if (r.failed) {
        ++s.failures;
        continue;
      }
      ++ok;
      if (r.eventA) ++evA;
      w2.push_back(r.w2sq_m_mun);
      l2.push_back(r.l2_T_vs_ansatz);
      ge.push_back(r.grad_ratio_excess);
      li.push_back(r.linf_disp);
      r3v.push_back(r.w2sq_mun_munt.mid());
      r4v.push_back(r.w2sq_munt_hat.mid());
    }
    s.w2sq = moments(w2);
    s.l2 = moments(l2);
    s.gradExcess = moments(ge);
    s.linf = moments(li);
    double ln = std::log(static_cast<double>(n));
    double lnln = std::log(ln);
    s.r1 = 4 * M_PI * n * s.w2sq.mean / ln;
    s.r1_lo = 4 * M_PI * n * (s.w2sq.mean - s.w2sq.ci95) / ln;
    s.r1_hi = 4 * M_PI * n * (s.w2sq.mean + s.w2sq.ci95) / ln;
    s.r2 = s.l2.mean * n / ln;
    s.r2_target = std::sqrt(lnln / ln);
    s.r3 = moments(r3v).mean * n / lnln;
    s.r4 = moments(r4v).mean * n * ln;
    s.eventAFreq = (ok > 0) ? static_cast<double>(evA) / ok : 0.0;
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exponent study and displacement tails.

struct LinfFit {
  int samples = 0;
  int violations = 0;  // of linf <= kCFit * l2^{1/4}
  double maxConstant = 0;  // max over trials of linf / l2^{1/4}
  double slope = 0;        // log-log regression slope of linf on l2
};

inline LinfFit linf_exponent_report(const std::vector<TrialRecord>& recs) {
  LinfFit fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const TrialRecord& r : recs) {
    if (r.failed || !r.cMonotone) continue;  // optimality is a prerequisite
    if (r.linf_disp <= 0 || r.w2sq_m_mun <= 0) continue;
    ++fit.samples;
    double bound = config::kCFit * std::pow(r.w2sq_m_mun, 0.25);
    if (r.linf_disp > bound) ++fit.violations;
    fit.maxConstant = std::max(
        fit.maxConstant, r.linf_disp / std::pow(r.w2sq_m_mun, 0.25));
    double x = std::log(r.w2sq_m_mun), y = std::log(r.linf_disp);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (fit.samples > 1) {
    double d = fit.samples * sxx - sx * sx;
    if (d > 0) fit.slope = (fit.samples * sxy - sx * sy) / d;
  }
  return fit;
}

// Empirical frequency of {linf_disp > eps} per n.
inline std::vector<std::pair<int, double>> prob_large_displacement(
    const std::vector<TrialRecord>& recs, double eps) {
  if (eps < 0) throw std::invalid_argument("prob_large_displacement: eps < 0");
  std::vector<std::pair<int, double>> out;
  for (const SweepSummary& s : summarize(recs)) {
    int total = 0, hits = 0;
    for (const TrialRecord& r : recs) {
      if (r.config.n != s.n || r.failed) continue;
      ++total;
      if (r.linf_disp > eps) ++hits;
    }
    out.push_back({s.n, total ? static_cast<double>(hits) / total : 0.0});
  }
  return out;
}

}  // namespace otlab
