#include "offpath/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace offpath {

LinkSpec* TopologySpec::find(const std::string& a, const std::string& b) {
  for (LinkSpec& l : links)
    if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return &l;
  return nullptr;
}

bool TopologySpec::has_node(const std::string& n) const {
  return std::find(nodes.begin(), nodes.end(), n) != nodes.end();
}

TopologySpec port_topology(double loss_on_attacker) {
  TopologySpec t;
  t.nodes = {"router", "client", "server", "attacker"};
  LinkSpec c{"client", "router", 1000, 2 * kMsec, 0, 0, 1000};
  // 2 * (2 ms + 23 ms) = 50 ms; +-2.5 ms one-way gives the +-5 ms RTT spread.
  LinkSpec s{"server", "router", 1000, 23 * kMsec, 2500, 0, 1000};
  LinkSpec a{"attacker", "router", 100, 5 * kMsec, 0, loss_on_attacker, 1000};
  t.links = {c, s, a};
  return t;
}

TopologySpec fig7_topology() {
  TopologySpec t;
  t.nodes = {"router", "attacker", "client", "server", "probe_client", "probe_server"};
  SimTime d = 12500;
  t.links = {
      {"attacker", "router", 10, d, 0, 0, 100},     {"client", "router", 10, d, 0, 0, 100},
      {"server", "router", 100, d, 0, 0, 100},      {"probe_client", "router", 10, d, 0, 0, 100},
      {"probe_server", "router", 100, d, 0, 0, 100},
  };
  return t;
}

World::World(WorldConfig cfg) : cfg_(std::move(cfg)), sim_(cfg_.seed), net_(sim_) {
  for (const std::string& n : cfg_.topo.nodes) net_.add_node(n);
  Rng jit = sim_.stream("topology");
  for (const LinkSpec& l : cfg_.topo.links) {
    if (!has(l.a) || !has(l.b)) throw std::invalid_argument("link references unknown node " + l.a + "-" + l.b);
    LinkParams p;
    p.capacity_bps = l.mbps * 1e6;
    p.prop_delay = l.delay;
    if (l.jitter > 0)
      p.prop_delay += static_cast<SimTime>(jit.uniform_int(0, 2 * static_cast<uint64_t>(l.jitter))) - l.jitter;
    p.prop_delay = std::max<SimTime>(0, p.prop_delay);
    p.loss_rate = l.loss;
    p.queue_limit = l.queue;
    net_.add_duplex(net_.node(l.a), net_.node(l.b), p);
  }
  net_.compute_routes();

  for (const char* role : {"client", "server", "attacker"})
    if (!has(role)) throw std::invalid_argument(std::string("topology lacks node '") + role + "'");

  const Defenses& d = cfg_.defenses;
  TcpConfig base = cfg_.tcp;
  base.sack_dupack_collapse = d.sack_collapse;
  base.inflight_validation = d.inflight_validation;
  TcpConfig scfg = base;
  scfg.per_conn_quota = d.server_quota_bps / 8.0;
  scfg.verify_every = d.server_verify_every;

  client_ = std::make_unique<TcpHost>(net_, node("client"), base, d.port_algorithm);
  server_ = std::make_unique<TcpHost>(net_, node("server"), scfg);

  BrowserConfig bc;
  bc.max_connections = cfg_.max_connections;
  bc.policy = d.browser_reset ? ParsePolicy::reset_connection : ParsePolicy::plaintext_wrap;
  bc.tls = d.tls;
  browser_ = std::make_unique<Browser>(*client_, bc);

  ServerConfig sc;
  sc.objects["/big"] = cfg_.big_object;
  for (const auto& [path, size] : cfg_.extra_objects) sc.objects[path] = size;
  sc.not_found_body_size = cfg_.not_found_size;
  sc.persistent = cfg_.server_persistent;
  sc.tls = d.tls;
  server_app_ = std::make_unique<ServerApp>(*server_, sc);

  if (has("probe_client") && has("probe_server")) {
    probe_client_ = std::make_unique<TcpHost>(net_, node("probe_client"), cfg_.tcp);
    probe_server_ = std::make_unique<TcpHost>(net_, node("probe_server"), cfg_.tcp);
  }

  attacker_ = std::make_unique<AttackerNode>(net_, node("attacker"));
  SimTime ch = cfg_.channel_delay > 0 ? cfg_.channel_delay : path_delay("attacker", "client");
  channel_ = std::make_unique<Channel>(sim_, ch);
  puppet_ = std::make_unique<PuppetApi>(sim_, *browser_, *channel_, node("server"),
                                        "mallory.example", cfg_.timer_granularity);
}

Target World::target() const {
  Target t;
  t.client = net_.node("client");
  t.server = net_.node("server");
  t.server_port = kHttpPort;
  return t;
}

TcpHost* World::host(const std::string& name) {
  if (name == "client") return client_.get();
  if (name == "server") return server_.get();
  if (name == "probe_client") return probe_client_.get();
  if (name == "probe_server") return probe_server_.get();
  return nullptr;
}

SimTime World::path_delay(const std::string& from, const std::string& to) const {
  SimTime total = 0;
  for (LinkId l : net_.path(net_.node(from), net_.node(to))) {
    const LinkParams& p = net_.link(l).params;
    total += p.prop_delay + static_cast<SimTime>(std::llround(40 * 8e6 / p.capacity_bps));
  }
  return total;
}

TcpConnection* World::client_conn(uint16_t client_port) {
  FourTuple t{client_->addr(), client_port, server_->addr(), kHttpPort};
  return client_->get(client_->find(t));
}

TcpConnection* World::server_conn(uint16_t client_port) {
  FourTuple t{server_->addr(), kHttpPort, client_->addr(), client_port};
  return server_->get(server_->find(t));
}

std::vector<uint16_t> World::client_ports() const {
  std::vector<uint16_t> out;
  for (uint32_t p = kEphemeralLo; p <= kEphemeralHi; ++p) {
    FourTuple t{client_->addr(), static_cast<uint16_t>(p), server_->addr(), kHttpPort};
    if (client_->find(t) != 0) out.push_back(static_cast<uint16_t>(p));
  }
  return out;
}

}  // namespace offpath
