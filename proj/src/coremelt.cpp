#include "offpath/coremelt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "offpath/host.hpp"

namespace offpath::coremelt {

namespace {

constexpr double kEps = 1e-9;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Strips comments and blank lines; yields (line number, content).
std::vector<std::pair<int, std::string>> content_lines(const std::string& text) {
  std::vector<std::pair<int, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (!line.empty()) out.emplace_back(n, line);
  }
  return out;
}

bool parse_as(const std::string& tok, As* out) {
  try {
    size_t used = 0;
    long long v = std::stoll(tok, &used);
    if (used != tok.size()) return false;
    *out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool parse_double(const std::string& tok, double* out) {
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size() || !std::isfinite(v)) return false;
    *out = v;
    return true;
  } catch (...) {
    return false;
  }
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

ParseError::ParseError(std::string f, int l, const std::string& msg)
    : std::runtime_error(f + ":" + std::to_string(l) + ": " + msg), file(std::move(f)), line(l) {}

// --- Graph -------------------------------------------------------------------

void AsGraph::add_node(As a) {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), a);
  if (it == nodes_.end() || *it != a) nodes_.insert(it, a);
}

bool AsGraph::has_node(As a) const { return std::binary_search(nodes_.begin(), nodes_.end(), a); }

EdgeId AsGraph::add_edge(As from, As to, double capacity) {
  if (from == to) throw std::invalid_argument("self loop at AS " + std::to_string(from));
  if (capacity < 0) throw std::invalid_argument("negative capacity");
  if (by_pair_.count({from, to}))
    throw std::invalid_argument("duplicate edge " + std::to_string(from) + "->" + std::to_string(to));
  add_node(from);
  add_node(to);
  EdgeId id = static_cast<EdgeId>(edges_.size());
  edges_.push_back(Edge{from, to, capacity});
  by_pair_[{from, to}] = id;
  return id;
}

std::optional<EdgeId> AsGraph::edge(As from, As to) const {
  auto it = by_pair_.find({from, to});
  if (it == by_pair_.end()) return std::nullopt;
  return it->second;
}

void AsGraph::add_route(As s, As d, const std::vector<As>& hops) {
  if (hops.size() < 2 || hops.front() != s || hops.back() != d)
    throw std::invalid_argument("route must run from " + std::to_string(s) + " to " + std::to_string(d));
  std::vector<EdgeId> path;
  for (size_t i = 0; i + 1 < hops.size(); ++i) {
    auto e = edge(hops[i], hops[i + 1]);
    if (!e) throw std::invalid_argument("route uses missing edge " + std::to_string(hops[i]) + "->" +
                                        std::to_string(hops[i + 1]));
    path.push_back(*e);
  }
  routes_[{s, d}] = std::move(path);
}

const std::vector<EdgeId>* AsGraph::route(As s, As d) const {
  auto it = routes_.find({s, d});
  return it == routes_.end() ? nullptr : &it->second;
}

void AsGraph::fill_shortest_routes() {
  std::map<As, std::vector<EdgeId>> out;
  for (EdgeId e = 0; e < static_cast<EdgeId>(edges_.size()); ++e) out[edges_[e].from].push_back(e);
  for (As s : nodes_) {
    std::map<As, EdgeId> via;
    std::deque<As> q{s};
    std::set<As> seen{s};
    while (!q.empty()) {
      As u = q.front();
      q.pop_front();
      for (EdgeId e : out[u]) {
        As v = edges_[e].to;
        if (seen.insert(v).second) {
          via[v] = e;
          q.push_back(v);
        }
      }
    }
    for (const auto& [d, last] : via) {
      if (routes_.count({s, d})) continue;
      std::vector<EdgeId> path;
      for (As at = d; at != s; at = edges_[via[at]].from) path.push_back(via[at]);
      std::reverse(path.begin(), path.end());
      (void)last;
      routes_[{s, d}] = std::move(path);
    }
  }
}

// --- Parsers -----------------------------------------------------------------

AsGraph parse_topology(const std::string& text, const std::string& name) {
  AsGraph g;
  for (const auto& [n, line] : content_lines(text)) {
    auto tok = split_ws(line);
    As a = 0, b = 0;
    double cap = 0;
    if (tok.size() != 3 || !parse_as(tok[0], &a) || !parse_as(tok[1], &b) || !parse_double(tok[2], &cap))
      throw ParseError(name, n, "expected 'src_as dst_as capacity_mbps'");
    try {
      g.add_edge(a, b, cap);
    } catch (const std::invalid_argument& e) {
      throw ParseError(name, n, e.what());
    }
  }
  return g;
}

void parse_routes(AsGraph& g, const std::string& text, const std::string& name) {
  for (const auto& [n, line] : content_lines(text)) {
    size_t colon = line.find(':');
    if (colon == std::string::npos) throw ParseError(name, n, "expected 'src dst: as1 ... asn'");
    auto head = split_ws(line.substr(0, colon));
    auto tail = split_ws(line.substr(colon + 1));
    As s = 0, d = 0;
    if (head.size() != 2 || !parse_as(head[0], &s) || !parse_as(head[1], &d))
      throw ParseError(name, n, "expected 'src dst' before ':'");
    std::vector<As> hops;
    for (const auto& t : tail) {
      As a = 0;
      if (!parse_as(t, &a)) throw ParseError(name, n, "bad AS number '" + t + "'");
      hops.push_back(a);
    }
    try {
      g.add_route(s, d, hops);
    } catch (const std::invalid_argument& e) {
      throw ParseError(name, n, e.what());
    }
  }
}

AttackResources parse_resources(const std::string& text, const std::string& name) {
  AttackResources r;
  bool have_victims = false, have_dests = false;
  for (const auto& [n, line] : content_lines(text)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(name, n, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto as_list = [&, n = n](std::vector<As>* out) {
      for (const auto& t : split_ws(val)) {
        As a = 0;
        if (!parse_as(t, &a)) throw ParseError(name, n, "bad AS number '" + t + "' in " + key);
        out->push_back(a);
      }
    };
    auto number = [&, n = n](double* out) {
      if (!parse_double(val, out) || *out < 0) throw ParseError(name, n, "bad non-negative number for " + key);
    };
    if (key == "attacker_as") {
      if (!parse_as(val, &r.attacker)) throw ParseError(name, n, "bad AS number for attacker_as");
    } else if (key == "alpha_A_mbps") {
      number(&r.alpha_attacker);
    } else if (key == "mu") {
      number(&r.mu);
    } else if (key == "victims") {
      as_list(&r.victims);
      have_victims = true;
    } else if (key == "destinations") {
      as_list(&r.destinations);
      have_dests = true;
    } else if (key == "alpha_a_mbps") {
      for (const auto& t : split_ws(val)) {
        size_t c = t.find(':');
        As a = 0;
        double bw = 0;
        if (c == std::string::npos || !parse_as(t.substr(0, c), &a) || !parse_double(t.substr(c + 1), &bw) || bw < 0)
          throw ParseError(name, n, "expected AS:mbps entries, got '" + t + "'");
        r.alpha[a] = bw;
      }
    } else {
      throw ParseError(name, n, "unknown key '" + key + "'");
    }
  }
  if (!have_victims) throw ParseError(name, 0, "missing key 'victims'");
  if (!have_dests) throw ParseError(name, 0, "missing key 'destinations'");
  return r;
}

AllocationPlan parse_plan(const std::string& text, const std::string& name) {
  AllocationPlan p;
  for (const auto& [n, line] : content_lines(text)) {
    auto tok = split_ws(line);
    As a = 0, b = 0;
    double x = 0;
    if (tok.size() != 4 || (tok[0] != "storm" && tok[0] != "optack") || !parse_as(tok[1], &a) ||
        !parse_as(tok[2], &b) || !parse_double(tok[3], &x))
      throw ParseError(name, n, "expected 'storm|optack as as mbps'");
    auto& m = tok[0] == "storm" ? p.storm : p.optack;
    if (m.count({a, b})) throw ParseError(name, n, "duplicate entry");
    m[{a, b}] = x;
  }
  return p;
}

std::string format_plan(const AllocationPlan& p) {
  std::string out;
  char buf[128];
  for (const auto& [k, x] : p.storm) {
    std::snprintf(buf, sizeof buf, "storm %lld %lld %.17g\n", static_cast<long long>(k.first),
                  static_cast<long long>(k.second), x);
    out += buf;
  }
  for (const auto& [k, x] : p.optack) {
    std::snprintf(buf, sizeof buf, "optack %lld %lld %.17g\n", static_cast<long long>(k.first),
                  static_cast<long long>(k.second), x);
    out += buf;
  }
  return out;
}

// --- Min cut -----------------------------------------------------------------

namespace {

class MaxFlow {
 public:
  explicit MaxFlow(int n) : adj_(static_cast<size_t>(n)), level_(static_cast<size_t>(n)), it_(static_cast<size_t>(n)) {}
  int add(int u, int v, double cap) {
    adj_[static_cast<size_t>(u)].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({v, cap});
    adj_[static_cast<size_t>(v)].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({u, 0});
    return static_cast<int>(arcs_.size()) - 2;
  }
  double run(int s, int t) {
    double total = 0;
    while (bfs(s, t)) {
      std::fill(it_.begin(), it_.end(), 0);
      while (double f = dfs(s, t, std::numeric_limits<double>::infinity())) total += f;
    }
    return total;
  }
  std::vector<bool> reachable(int s) const {
    std::vector<bool> seen(adj_.size(), false);
    std::deque<int> q{s};
    seen[static_cast<size_t>(s)] = true;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int a : adj_[static_cast<size_t>(u)]) {
        const Arc& arc = arcs_[static_cast<size_t>(a)];
        if (arc.cap > kEps && !seen[static_cast<size_t>(arc.to)]) {
          seen[static_cast<size_t>(arc.to)] = true;
          q.push_back(arc.to);
        }
      }
    }
    return seen;
  }

 private:
  struct Arc {
    int to;
    double cap;
  };
  bool bfs(int s, int t) {
    std::fill(level_.begin(), level_.end(), -1);
    std::deque<int> q{s};
    level_[static_cast<size_t>(s)] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int a : adj_[static_cast<size_t>(u)]) {
        const Arc& arc = arcs_[static_cast<size_t>(a)];
        if (arc.cap > kEps && level_[static_cast<size_t>(arc.to)] < 0) {
          level_[static_cast<size_t>(arc.to)] = level_[static_cast<size_t>(u)] + 1;
          q.push_back(arc.to);
        }
      }
    }
    return level_[static_cast<size_t>(t)] >= 0;
  }
  double dfs(int u, int t, double f) {
    if (u == t) return f;
    auto& i = it_[static_cast<size_t>(u)];
    for (; i < adj_[static_cast<size_t>(u)].size(); ++i) {
      int a = adj_[static_cast<size_t>(u)][i];
      Arc& arc = arcs_[static_cast<size_t>(a)];
      if (arc.cap > kEps && level_[static_cast<size_t>(arc.to)] == level_[static_cast<size_t>(u)] + 1) {
        double got = dfs(arc.to, t, std::min(f, arc.cap));
        if (got > 0) {
          arc.cap -= got;
          arcs_[static_cast<size_t>(a ^ 1)].cap += got;
          return got;
        }
      }
    }
    return 0;
  }

  std::vector<std::vector<int>> adj_;
  std::vector<Arc> arcs_;
  std::vector<int> level_;
  std::vector<size_t> it_;
};

}  // namespace

CutResult min_cut(const AsGraph& g, const std::vector<As>& sources, const std::vector<As>& sinks) {
  if (sources.empty() || sinks.empty()) throw std::invalid_argument("victim and destination sets must be non-empty");
  for (As v : sources)
    if (std::find(sinks.begin(), sinks.end(), v) != sinks.end())
      throw std::invalid_argument("AS " + std::to_string(v) + " is both victim and destination");
  const auto& nodes = g.nodes();
  auto index = [&](As a) {
    return static_cast<int>(std::lower_bound(nodes.begin(), nodes.end(), a) - nodes.begin());
  };
  int n = static_cast<int>(nodes.size());
  int S = n, T = n + 1;
  MaxFlow mf(n + 2);
  const double inf = std::numeric_limits<double>::infinity();
  for (const Edge& e : g.edges()) mf.add(index(e.from), index(e.to), e.capacity);
  for (As v : sources)
    if (g.has_node(v)) mf.add(S, index(v), inf);
  for (As d : sinks)
    if (g.has_node(d)) mf.add(index(d), T, inf);
  mf.run(S, T);
  auto side = mf.reachable(S);
  CutResult cut;
  for (EdgeId e = 0; e < static_cast<EdgeId>(g.edges().size()); ++e) {
    const Edge& ed = g.edges()[static_cast<size_t>(e)];
    if (ed.capacity > 0 && side[static_cast<size_t>(index(ed.from))] && !side[static_cast<size_t>(index(ed.to))]) {
      cut.edges.push_back(e);
      cut.capacity += ed.capacity;
    }
  }
  return cut;
}

std::optional<EdgeId> target_edge(const AsGraph& g, As v, As d, const CutResult& cut) {
  const auto* r = g.route(v, d);
  if (!r) return std::nullopt;
  std::optional<EdgeId> best;
  for (EdgeId e : *r) {
    if (std::find(cut.edges.begin(), cut.edges.end(), e) == cut.edges.end()) continue;
    double c = g.edges()[static_cast<size_t>(e)].capacity;
    if (!best || c < g.edges()[static_cast<size_t>(*best)].capacity ||
        (c == g.edges()[static_cast<size_t>(*best)].capacity && e < *best))
      best = e;
  }
  return best;
}

// --- Loads -------------------------------------------------------------------

namespace {

struct Var {
  bool storm;
  Pair key;
  std::vector<std::pair<EdgeId, double>> coef;  // contribution to T(e) per unit
};

void add_route_coef(std::map<EdgeId, double>& acc, const std::vector<EdgeId>* r, double w) {
  if (!r) return;
  for (EdgeId e : *r) acc[e] += w;
}

Var storm_var(const AsGraph& g, As a, As s) {
  std::map<EdgeId, double> acc;
  add_route_coef(acc, g.route(a, s), 1.0);
  add_route_coef(acc, g.route(s, a), 1.0);
  return Var{true, {a, s}, {acc.begin(), acc.end()}};
}

Var optack_var(const AsGraph& g, const AttackResources& r, As c, As s) {
  std::map<EdgeId, double> acc;
  add_route_coef(acc, g.route(s, c), r.mu);
  if (s != r.attacker) add_route_coef(acc, g.route(r.attacker, s), 1.0);
  return Var{false, {c, s}, {acc.begin(), acc.end()}};
}

// Every plan variable the model admits, in a fixed order.
std::vector<Var> enumerate_vars(const AsGraph& g, const AttackResources& r) {
  std::vector<Var> vars;
  for (const auto& [a, bw] : r.alpha) {
    if (bw <= 0) continue;
    for (As s : g.nodes())
      if (s != a && g.route(a, s)) vars.push_back(storm_var(g, a, s));
  }
  if (r.alpha_attacker > 0) {
    for (const auto& [c, bw] : r.alpha) {
      (void)bw;
      for (As s : g.nodes()) {
        if (s == c || !g.route(s, c)) continue;
        if (s != r.attacker && !g.route(r.attacker, s)) continue;
        vars.push_back(optack_var(g, r, c, s));
      }
    }
  }
  return vars;
}

}  // namespace

std::vector<double> link_loads(const AsGraph& g, const AttackResources& r, const AllocationPlan& p) {
  std::vector<double> T(g.edges().size(), 0.0);
  for (const auto& [k, x] : p.storm) {
    if (x == 0) continue;
    for (const auto& [e, w] : storm_var(g, k.first, k.second).coef) T[static_cast<size_t>(e)] += w * x;
  }
  for (const auto& [k, x] : p.optack) {
    if (x == 0) continue;
    for (const auto& [e, w] : optack_var(g, r, k.first, k.second).coef) T[static_cast<size_t>(e)] += w * x;
  }
  return T;
}

void validate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p, double tol) {
  std::map<As, double> used;
  for (const auto& [k, x] : p.storm) {
    if (x < -tol) throw PlanError("negative storm allocation " + std::to_string(k.first) + "->" + std::to_string(k.second));
    used[k.first] += x;
  }
  for (const auto& [a, u] : used) {
    auto it = r.alpha.find(a);
    double cap = it == r.alpha.end() ? 0 : it->second;
    if (u > cap * (1 + tol) + tol)
      throw PlanError("puppet bandwidth exceeded in AS " + std::to_string(a) + ": " + std::to_string(u) + " > " +
                      std::to_string(cap));
  }
  double total = 0;
  for (const auto& [k, x] : p.optack) {
    if (x < -tol) throw PlanError("negative opt-ack allocation " + std::to_string(k.first) + "," + std::to_string(k.second));
    total += x;
  }
  if (total > r.alpha_attacker * (1 + tol) + tol)
    throw PlanError("attacker bandwidth exceeded: " + std::to_string(total) + " > " + std::to_string(r.alpha_attacker));
  auto T = link_loads(g, r, p);
  for (size_t e = 0; e < T.size(); ++e) {
    const Edge& ed = g.edges()[e];
    if (T[e] > ed.capacity * (1 + tol) + tol)
      throw PlanError("capacity exceeded on edge " + std::to_string(ed.from) + "->" + std::to_string(ed.to) + ": " +
                      std::to_string(T[e]) + " > " + std::to_string(ed.capacity));
  }
}

Evaluation evaluate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p) {
  validate_plan(g, r, p);
  Evaluation ev;
  ev.loads = link_loads(g, r, p);
  std::vector<bool> sat(g.edges().size(), false);
  for (size_t e = 0; e < sat.size(); ++e) {
    if (ev.loads[e] >= g.edges()[e].capacity * (1 - 1e-9)) {
      sat[e] = true;
      ev.saturated.push_back(static_cast<EdgeId>(e));
    }
  }
  for (As v : r.victims) {
    for (As d : r.destinations) {
      const auto* route = g.route(v, d);
      if (!route) continue;
      ev.pairs++;
      if (std::any_of(route->begin(), route->end(), [&](EdgeId e) { return sat[static_cast<size_t>(e)]; }))
        ev.disconnected++;
    }
  }
  return ev;
}

// --- Simplex -----------------------------------------------------------------

LpResult simplex_max(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
                     const std::vector<double>& c) {
  size_t m = A.size(), n = c.size();
  size_t cols = n + m + 1;
  std::vector<std::vector<double>> t(m + 1, std::vector<double>(cols, 0.0));
  std::vector<size_t> basis(m);
  for (size_t i = 0; i < m; ++i) {
    if (b[i] < 0) throw std::invalid_argument("simplex needs b >= 0");
    for (size_t j = 0; j < n; ++j) t[i][j] = A[i][j];
    t[i][n + i] = 1;
    t[i][cols - 1] = b[i];
    basis[i] = n + i;
  }
  for (size_t j = 0; j < n; ++j) t[m][j] = -c[j];

  LpResult res;
  for (;;) {
    // Bland: lowest-index improving column, then lowest-index basic variable
    // among tied ratios.
    size_t enter = cols;
    for (size_t j = 0; j + 1 < cols; ++j)
      if (t[m][j] < -kEps) {
        enter = j;
        break;
      }
    if (enter == cols) break;
    size_t leave = m;
    double best = 0;
    for (size_t i = 0; i < m; ++i) {
      if (t[i][enter] <= kEps) continue;
      double ratio = t[i][cols - 1] / t[i][enter];
      if (leave == m || ratio < best - kEps || (std::abs(ratio - best) <= kEps && basis[i] < basis[leave])) {
        leave = i;
        best = ratio;
      }
    }
    if (leave == m) {
      res.status = LpResult::unbounded;
      return res;
    }
    double piv = t[leave][enter];
    for (double& v : t[leave]) v /= piv;
    for (size_t i = 0; i <= m; ++i) {
      if (i == leave) continue;
      double f = t[i][enter];
      if (f == 0) continue;
      for (size_t j = 0; j < cols; ++j) t[i][j] -= f * t[leave][j];
    }
    basis[leave] = enter;
    res.pivots++;
  }
  res.x.assign(n, 0.0);
  for (size_t i = 0; i < m; ++i)
    if (basis[i] < n) res.x[basis[i]] = std::max(0.0, t[i][cols - 1]);
  res.objective = 0;
  for (size_t j = 0; j < n; ++j) res.objective += c[j] * res.x[j];
  return res;
}

double plan_objective(const AsGraph& g, const AttackResources& r, const AllocationPlan& p,
                      const std::vector<EdgeId>& targets) {
  auto T = link_loads(g, r, p);
  double obj = 0;
  for (EdgeId e : targets) {
    double c = g.edges()[static_cast<size_t>(e)].capacity;
    if (c > 0) obj += T[static_cast<size_t>(e)] / c;
  }
  return obj;
}

Solution build_and_solve(const AsGraph& g, const AttackResources& r) {
  Solution sol;
  sol.cut = min_cut(g, r.victims, r.destinations);
  std::set<EdgeId> targets;
  for (As v : r.victims)
    for (As d : r.destinations)
      if (auto e = target_edge(g, v, d, sol.cut); e && g.edges()[static_cast<size_t>(*e)].capacity > 0)
        targets.insert(*e);
  sol.targets.assign(targets.begin(), targets.end());

  std::vector<Var> all = enumerate_vars(g, r);
  std::vector<Var> vars;
  std::vector<double> obj;
  for (Var& v : all) {
    double o = 0;
    for (const auto& [e, w] : v.coef)
      if (targets.count(e)) o += w / g.edges()[static_cast<size_t>(e)].capacity;
    if (o > 0) {
      vars.push_back(std::move(v));
      obj.push_back(o);
    }
  }
  size_t n = vars.size();
  std::vector<std::vector<double>> A;
  std::vector<double> b;
  // Puppet budgets.
  for (const auto& [a, bw] : r.alpha) {
    std::vector<double> row(n, 0.0);
    bool any = false;
    for (size_t j = 0; j < n; ++j)
      if (vars[j].storm && vars[j].key.first == a) {
        row[j] = 1;
        any = true;
      }
    if (any) {
      A.push_back(std::move(row));
      b.push_back(bw);
    }
  }
  // Attacker budget.
  {
    std::vector<double> row(n, 0.0);
    bool any = false;
    for (size_t j = 0; j < n; ++j)
      if (!vars[j].storm) {
        row[j] = 1;
        any = true;
      }
    if (any) {
      A.push_back(std::move(row));
      b.push_back(r.alpha_attacker);
    }
  }
  // Capacities.
  std::map<EdgeId, std::vector<double>> cap_rows;
  for (size_t j = 0; j < n; ++j)
    for (const auto& [e, w] : vars[j].coef) {
      auto& row = cap_rows[e];
      if (row.empty()) row.assign(n, 0.0);
      row[j] += w;
    }
  for (auto& [e, row] : cap_rows) {
    A.push_back(std::move(row));
    b.push_back(g.edges()[static_cast<size_t>(e)].capacity);
  }
  sol.variables = static_cast<int>(n);
  sol.constraints = static_cast<int>(A.size());
  if (n == 0) return sol;

  LpResult lp = simplex_max(A, b, obj);
  sol.pivots = lp.pivots;
  sol.objective = lp.objective;
  for (size_t j = 0; j < n; ++j) {
    if (lp.x[j] <= 0) continue;
    (vars[j].storm ? sol.plan.storm : sol.plan.optack)[vars[j].key] = lp.x[j];
  }
  return sol;
}

// --- Packet-level check ------------------------------------------------------

namespace {

struct FlowSpec {
  std::shared_ptr<const std::vector<LinkId>> route;
  NodeId src = 0;
  NodeId dst = 0;
  double mbps = 0;
};

struct Bench {
  Simulator sim;
  Network net;
  std::map<As, NodeId> node;
  std::vector<LinkId> link_of;  // by edge id
  std::map<NodeId, std::unique_ptr<TcpHost>> hosts;

  Bench(const AsGraph& g, const SimulateConfig& cfg) : sim(cfg.seed), net(sim) {
    for (As a : g.nodes()) node[a] = net.add_node("as" + std::to_string(a));
    for (const Edge& e : g.edges()) {
      LinkParams p;
      p.capacity_bps = e.capacity * 1e6;
      p.prop_delay = cfg.link_delay;
      p.queue_limit = cfg.queue;
      link_of.push_back(net.add_link(node[e.from], node[e.to], p));
    }
    net.compute_routes();
  }

  TcpHost& host(NodeId n) {
    auto& h = hosts[n];
    if (!h) h = std::make_unique<TcpHost>(net, n, TcpConfig{});
    return *h;
  }
};

void poisson(Bench& b, const FlowSpec& f, const SimulateConfig& cfg, Rng* rng,
             std::shared_ptr<const std::string> filler, SimTime end) {
  double mean_us = cfg.packet * 8.0 / f.mbps;
  SimTime gap = static_cast<SimTime>(std::llround(rng->exponential(mean_us)));
  if (b.sim.now() + gap > end) return;
  b.sim.after(gap, [&b, f, &cfg, rng, filler, end]() {
    Packet p;
    p.src = f.src;
    p.dst = f.dst;
    p.route = f.route;
    p.seg.payload.buf = filler;
    p.seg.payload.len = cfg.packet - 40;
    b.net.send(f.src, std::move(p));
    poisson(b, f, cfg, rng, filler, end);
  });
}

}  // namespace

SimulationReport simulate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p,
                               const SimulateConfig& cfg) {
  Evaluation ev = evaluate_plan(g, r, p);
  std::vector<bool> sat(g.edges().size(), false);
  for (EdgeId e : ev.saturated) sat[static_cast<size_t>(e)] = true;

  auto make_flows = [&](Bench& b) {
    std::vector<FlowSpec> flows;
    auto add = [&](As s, As d, double mbps) {
      const auto* route = g.route(s, d);
      if (!route || route->empty() || mbps <= 0) return;
      auto links = std::make_shared<std::vector<LinkId>>();
      for (EdgeId e : *route) links->push_back(b.link_of[static_cast<size_t>(e)]);
      flows.push_back(FlowSpec{links, b.node[s], b.node[d], mbps});
    };
    for (const auto& [k, x] : p.storm) {
      add(k.first, k.second, x);
      add(k.second, k.first, x);
    }
    for (const auto& [k, x] : p.optack) {
      add(k.second, k.first, r.mu * x);
      if (k.second != r.attacker) add(r.attacker, k.second, x);
    }
    return flows;
  };

  // Returns per-edge cross-traffic goodput in Mbps measured after warmup.
  auto run = [&](bool attack, std::vector<LinkStats>* stats) {
    Bench b(g, cfg);
    auto filler = std::make_shared<const std::string>(cfg.packet, 'x');
    std::vector<std::unique_ptr<Rng>> rngs;
    if (attack) {
      auto flows = make_flows(b);
      for (size_t i = 0; i < flows.size(); ++i) {
        rngs.push_back(std::make_unique<Rng>(b.sim.stream("flow" + std::to_string(i))));
        poisson(b, flows[i], cfg, rngs.back().get(), filler, cfg.duration);
      }
    }
    std::vector<double> bytes(g.edges().size(), 0.0);
    if (cfg.cross_traffic) {
      uint16_t port = 5000;
      for (EdgeId e = 0; e < static_cast<EdgeId>(g.edges().size()); ++e) {
        if (!sat[static_cast<size_t>(e)]) continue;
        const Edge& ed = g.edges()[static_cast<size_t>(e)];
        TcpHost& snd = b.host(b.node[ed.from]);
        TcpHost& rcv = b.host(b.node[ed.to]);
        uint16_t pt = port++;
        snd.listen(pt, [&snd](TcpHost::ConnId id) { snd.send_bulk(id, 1ull << 40); });
        rcv.connect(snd.addr(), pt, [&rcv, &bytes, &b, &cfg, e](TcpHost::ConnId id, bool ok) {
          if (!ok) return;
          TcpHost::Callbacks cb;
          cb.on_data = [&rcv, &bytes, &b, &cfg, e](TcpHost::ConnId x) {
            TcpConnection* c = rcv.get(x);
            if (!c) return;
            uint64_t n = c->app_rx_bytes();
            rcv.consume(x, n);
            if (b.sim.now() >= cfg.warmup) bytes[static_cast<size_t>(e)] += static_cast<double>(n);
          };
          rcv.set_callbacks(id, cb);
        });
      }
    }
    b.sim.run_until(cfg.duration);
    if (stats)
      for (LinkId l : b.link_of) stats->push_back(b.net.link(l).stats);
    double secs = static_cast<double>(cfg.duration - cfg.warmup) / 1e6;
    for (double& x : bytes) x = x * 8 / 1e6 / secs;
    return bytes;
  };

  std::vector<LinkStats> attacked_stats;
  std::vector<double> quiet = run(false, nullptr);
  std::vector<double> loud = run(true, &attacked_stats);

  SimulationReport rep;
  double secs = static_cast<double>(cfg.duration) / 1e6;
  for (EdgeId e = 0; e < static_cast<EdgeId>(g.edges().size()); ++e) {
    const LinkStats& s = attacked_stats[static_cast<size_t>(e)];
    EdgeMeasurement m;
    m.edge = e;
    m.capacity = g.edges()[static_cast<size_t>(e)].capacity;
    m.predicted = ev.loads[static_cast<size_t>(e)];
    m.saturated = sat[static_cast<size_t>(e)];
    m.offered_mbps = static_cast<double>(s.bytes_enqueued) * 8 / 1e6 / secs;
    m.loss_rate = s.enqueued ? static_cast<double>(s.dropped_loss + s.dropped_overflow) / static_cast<double>(s.enqueued) : 0;
    m.cross_baseline = quiet[static_cast<size_t>(e)];
    m.cross_attacked = loud[static_cast<size_t>(e)];
    m.collapse = m.cross_baseline > 0 ? 1 - m.cross_attacked / m.cross_baseline : 0;
    if (m.saturated && (m.loss_rate < 0.01 || (cfg.cross_traffic && m.collapse < 0.5))) rep.model_gaps++;
    rep.edges.push_back(m);
  }
  return rep;
}

}  // namespace offpath::coremelt
