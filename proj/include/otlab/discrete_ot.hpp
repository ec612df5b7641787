// Exact discrete optimal transport between two weighted atom sets, solved as
// a transportation problem by successive shortest paths with Johnson
// potentials. Every solve is certified post-hoc: dual feasibility,
// complementary slackness on the support, exact marginals, and a vanishing
// primal-dual gap. Oracle scale only (a few thousand atoms).
#pragma once

#include <queue>

#include "otlab/geometry.hpp"
#include "otlab/heat_poisson.hpp"

namespace otlab {

struct WeightedAtoms {
  Domain domain;
  std::vector<Point> points;
  std::vector<double> masses;

  int size() const { return static_cast<int>(points.size()); }
};

struct DiscretePlanEntry {
  int source;
  int target;
  double mass;
};

struct DiscreteOtResult {
  double cost = 0;
  std::vector<DiscretePlanEntry> plan;
  std::vector<double> dualU, dualV;  // feasible duals: c_ij >= u_i + v_j
  double gap = 0;                    // |cost - dual objective|
};

inline DiscreteOtResult discrete_ot_exact(const WeightedAtoms& src,
                                          const WeightedAtoms& tgt) {
  const int ns = src.size(), nt = tgt.size();
  if (ns == 0 || nt == 0) throw std::invalid_argument("empty atom set");
  if (ns + nt > 5000) throw std::invalid_argument("oracle scale exceeded");
  if (src.domain.kind() != tgt.domain.kind())
    throw std::invalid_argument("domain mismatch");
  double sa = 0, sb = 0;
  for (double m : src.masses) sa += m;
  for (double m : tgt.masses) sb += m;
  if (std::abs(sa - sb) > 1e-12)
    throw std::invalid_argument("source/target mass mismatch");

  const Domain& dom = src.domain;
  std::vector<double> cost(static_cast<size_t>(ns) * nt);
  double cmax = 0;
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j) {
      double c = dom.dist_sq(src.points[i], tgt.points[j]);
      cost[static_cast<size_t>(i) * nt + j] = c;
      cmax = std::max(cmax, c);
    }

  // Node ids: sources 0..ns-1, targets ns..ns+nt-1.
  const int V = ns + nt;
  std::vector<double> supply(src.masses), demand(tgt.masses);
  std::vector<double> pot(V, 0.0);
  // flow stored per source as a small (target, mass) list
  std::vector<std::vector<std::pair<int, double>>> flow(ns);
  auto flow_at = [&](int i, int j) -> double* {
    for (auto& e : flow[i])
      if (e.first == j) return &e.second;
    return nullptr;
  };

  const double inf = std::numeric_limits<double>::infinity();
  const double eps = 1e-13 * std::max(1.0, cmax);
  double remaining = sa;
  while (remaining > 1e-15) {
    // Multi-source Dijkstra over reduced costs from all sources with supply.
    std::vector<double> dist(V, inf);
    std::vector<int> prev(V, -1);
    std::vector<char> done(V, 0);
    std::priority_queue<std::pair<double, int>,
                        std::vector<std::pair<double, int>>,
                        std::greater<>> pq;
    for (int i = 0; i < ns; ++i)
      if (supply[i] > 1e-15) {
        dist[i] = 0;
        pq.push({0.0, i});
      }
    int sink = -1;
    while (!pq.empty()) {
      auto [d, x] = pq.top();
      pq.pop();
      if (done[x]) continue;
      done[x] = 1;
      if (x >= ns && demand[x - ns] > 1e-15) {
        sink = x;
        break;
      }
      // Reduced cost of an arc tail->head is w + pot[tail] - pot[head].
      if (x < ns) {
        for (int j = 0; j < nt; ++j) {
          double rc = cost[static_cast<size_t>(x) * nt + j] + pot[x] - pot[ns + j];
          double nd = d + std::max(0.0, rc);
          if (nd < dist[ns + j] - 1e-18) {
            dist[ns + j] = nd;
            prev[ns + j] = x;
            pq.push({nd, ns + j});
          }
        }
      } else {
        int j = x - ns;
        for (int i = 0; i < ns; ++i) {
          double* f = flow_at(i, j);
          if (f == nullptr || *f <= 1e-15) continue;
          double rc = -cost[static_cast<size_t>(i) * nt + j] + pot[x] - pot[i];
          double nd = d + std::max(0.0, rc);
          if (nd < dist[i] - 1e-18) {
            dist[i] = nd;
            prev[i] = x;
            pq.push({nd, i});
          }
        }
      }
    }
    if (sink < 0) throw SolverError("discrete OT: no augmenting path");

    // Bottleneck along the alternating path.
    double amount = demand[sink - ns];
    for (int x = sink; prev[x] != -1; x = prev[x]) {
      int p = prev[x];
      if (x < ns) amount = std::min(amount, *flow_at(x, p - ns));  // residual arc
    }
    {
      int head = sink;
      while (prev[head] != -1) head = prev[head];
      amount = std::min(amount, supply[head]);
    }

    for (int x = sink; prev[x] != -1; x = prev[x]) {
      int p = prev[x];
      if (x >= ns) {  // forward arc p -> x
        double* f = flow_at(p, x - ns);
        if (f)
          *f += amount;
        else
          flow[p].push_back({x - ns, amount});
      } else {  // residual arc p(target) -> x(source)
        *flow_at(x, p - ns) -= amount;
      }
    }
    {
      int head = sink;
      while (prev[head] != -1) head = prev[head];
      supply[head] -= amount;
    }
    demand[sink - ns] -= amount;
    remaining -= amount;

    // Unreached nodes take the full sink distance: min(inf, dsink) = dsink.
    // Skipping them would leave tight arcs into re-priced targets with
    // negative reduced cost.
    double dsink = dist[sink];
    for (int x = 0; x < V; ++x) pot[x] += std::min(dist[x], dsink);
  }

  DiscreteOtResult res;
  res.dualU.assign(ns, 0);
  res.dualV.assign(nt, 0);
  for (int i = 0; i < ns; ++i) res.dualU[i] = pot[i];
  for (int j = 0; j < nt; ++j) res.dualV[j] = pot[ns + j];
  std::vector<double> rowMass(ns, 0), colMass(nt, 0);
  for (int i = 0; i < ns; ++i) {
    for (auto& [j, m] : flow[i]) {
      if (m <= 1e-15) continue;
      res.plan.push_back({i, j, m});
      res.cost += m * cost[static_cast<size_t>(i) * nt + j];
      rowMass[i] += m;
      colMass[j] += m;
    }
  }

  // Optimality certificate. u_i here is -pot_i so that c >= u + v reads as
  // the usual Kantorovich feasibility.
  for (double& u : res.dualU) u = -u;
  double dualObj = 0;
  for (int i = 0; i < ns; ++i) dualObj += res.dualU[i] * src.masses[i];
  for (int j = 0; j < nt; ++j) dualObj += res.dualV[j] * tgt.masses[j];
  for (int i = 0; i < ns; ++i)
    if (std::abs(rowMass[i] - src.masses[i]) > 1e-12)
      throw SolverError("discrete OT: source marginal violated");
  for (int j = 0; j < nt; ++j)
    if (std::abs(colMass[j] - tgt.masses[j]) > 1e-12)
      throw SolverError("discrete OT: target marginal violated");
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      if (cost[static_cast<size_t>(i) * nt + j] - res.dualU[i] - res.dualV[j] <
          -100 * eps)
        throw SolverError("discrete OT: dual infeasible");
  for (const auto& e : res.plan)
    if (std::abs(cost[static_cast<size_t>(e.source) * nt + e.target] -
                 res.dualU[e.source] - res.dualV[e.target]) > 100 * eps)
      throw SolverError("discrete OT: complementary slackness violated");
  res.gap = std::abs(res.cost - dualObj);
  if (res.gap > 1e-9 * std::max(1.0, res.cost))
    throw SolverError("discrete OT: duality gap " + std::to_string(res.gap));
  return res;
}

}  // namespace otlab
