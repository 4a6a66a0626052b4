#pragma once

// Placement of clogging traffic over an AS graph with fixed routes: min-cut,
// target edges, an LP over the allocation, and a packet-level check.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "offpath/simcore.hpp"

namespace offpath::coremelt {

using As = int64_t;
using EdgeId = int;
using Pair = std::pair<As, As>;

struct ParseError : std::runtime_error {
  ParseError(std::string file, int line, const std::string& msg);
  std::string file;
  int line;
};

struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Edge {
  As from = 0;
  As to = 0;
  double capacity = 0;  // Mbps
};

class AsGraph {
 public:
  EdgeId add_edge(As from, As to, double capacity);
  // Path given as AS hops, first = s, last = d; every hop must be an edge.
  void add_route(As s, As d, const std::vector<As>& hops);
  // Shortest-hop routes for every ordered pair lacking one; ties resolved by
  // lowest edge id.
  void fill_shortest_routes();

  const std::vector<As>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::optional<EdgeId> edge(As from, As to) const;
  const std::vector<EdgeId>* route(As s, As d) const;
  const std::map<Pair, std::vector<EdgeId>>& routes() const { return routes_; }
  bool has_node(As a) const;

 private:
  void add_node(As a);
  std::vector<As> nodes_;
  std::vector<Edge> edges_;
  std::map<Pair, EdgeId> by_pair_;
  std::map<Pair, std::vector<EdgeId>> routes_;
};

struct AttackResources {
  As attacker = 666;
  double alpha_attacker = 0;        // Mbps
  std::map<As, double> alpha;       // total puppet bandwidth per AS, Mbps
  std::vector<As> victims;
  std::vector<As> destinations;
  double mu = 78;
};

struct AllocationPlan {
  std::map<Pair, double> storm;   // (puppet AS a, server AS s)
  std::map<Pair, double> optack;  // (client AS c, server AS s), attacker-sent
};

// Text formats. Topology: "src dst capacity_mbps" per line. Routes:
// "src dst: as1 as2 ... asn". Resources: key = value lines.
AsGraph parse_topology(const std::string& text, const std::string& name = "topology");
void parse_routes(AsGraph& g, const std::string& text, const std::string& name = "routes");
AttackResources parse_resources(const std::string& text, const std::string& name = "resources");
// Plan: "storm a s mbps" and "optack c s mbps" lines.
AllocationPlan parse_plan(const std::string& text, const std::string& name = "plan");
std::string format_plan(const AllocationPlan& p);

struct CutResult {
  double capacity = 0;
  std::vector<EdgeId> edges;  // ascending
};
CutResult min_cut(const AsGraph& g, const std::vector<As>& sources, const std::vector<As>& sinks);

// Lowest-capacity edge of r(v,d) inside the cut; ties go to the lower id.
std::optional<EdgeId> target_edge(const AsGraph& g, As v, As d, const CutResult& cut);

// T(e) for every edge.
std::vector<double> link_loads(const AsGraph& g, const AttackResources& r, const AllocationPlan& p);

// Throws PlanError naming the first violated constraint.
void validate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p, double tol = 1e-9);

struct Evaluation {
  int disconnected = 0;
  int pairs = 0;
  std::vector<EdgeId> saturated;
  std::vector<double> loads;
};
Evaluation evaluate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p);

// Dense simplex for max c.x, A x <= b, x >= 0 with b >= 0, Bland's rule.
struct LpResult {
  enum Status { optimal, unbounded } status = optimal;
  std::vector<double> x;
  double objective = 0;
  int pivots = 0;
};
LpResult simplex_max(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
                     const std::vector<double>& c);

struct Solution {
  AllocationPlan plan;
  double objective = 0;
  std::vector<EdgeId> targets;
  CutResult cut;
  int variables = 0;
  int constraints = 0;
  int pivots = 0;
};
// Maximizes the sum of T(e)/c(e) over distinct target edges under the budget
// and capacity constraints.
Solution build_and_solve(const AsGraph& g, const AttackResources& r);
// Objective of an arbitrary plan against a target set.
double plan_objective(const AsGraph& g, const AttackResources& r, const AllocationPlan& p,
                      const std::vector<EdgeId>& targets);

struct SimulateConfig {
  uint64_t seed = 1;
  SimTime duration = 5 * kSec;
  SimTime warmup = 500 * kMsec;
  SimTime link_delay = 5 * kMsec;
  uint32_t queue = 20;
  uint32_t packet = 1500;
  bool cross_traffic = true;
};

struct EdgeMeasurement {
  EdgeId edge = 0;
  double capacity = 0;
  double predicted = 0;  // T(e)
  bool saturated = false;
  double offered_mbps = 0;
  double loss_rate = 0;
  // Cross-traffic goodput over the edge, quiet and under attack (Mbps).
  double cross_baseline = 0;
  double cross_attacked = 0;
  double collapse = 0;  // 1 - attacked/baseline
};

struct SimulationReport {
  std::vector<EdgeMeasurement> edges;
  // Saturated edges missing the loss or collapse bar; informational.
  int model_gaps = 0;
};
SimulationReport simulate_plan(const AsGraph& g, const AttackResources& r, const AllocationPlan& p,
                               const SimulateConfig& cfg);

}  // namespace offpath::coremelt
