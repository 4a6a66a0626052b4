#pragma once

// Assembles a runnable world: topology, TCP hosts, browser with puppet,
// web servers, the attacker machine, and ground-truth readouts for oracles.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "offpath/attacker.hpp"
#include "offpath/host.hpp"
#include "offpath/injection.hpp"
#include "offpath/puppet.hpp"
#include "offpath/web.hpp"

namespace offpath {

struct Defenses {
  bool sack_collapse = false;
  bool inflight_validation = false;
  PortAlgorithm port_algorithm = PortAlgorithm::simple_hash_based;
  bool browser_reset = false;
  double server_quota_bps = 0;  // 0 = off
  bool tls = false;
  uint32_t server_verify_every = 0;  // 0 = off
};

struct LinkSpec {
  std::string a;
  std::string b;
  double mbps = 100;
  SimTime delay = kMsec;
  // Each run draws the delay uniformly from [delay - jitter, delay + jitter].
  SimTime jitter = 0;
  double loss = 0;
  uint32_t queue = 1000;
};

struct TopologySpec {
  std::vector<std::string> nodes;
  std::vector<LinkSpec> links;

  LinkSpec* find(const std::string& a, const std::string& b);
  bool has_node(const std::string& n) const;
};

// Star around a router: client 2 ms, attacker 5 ms, server on a long haul
// making the client-server RTT 50 ms with +-5 ms drawn per run.
TopologySpec port_topology(double loss_on_attacker = 0.0);
// Mallory, C, S and the legitimate pair C*, S* around one router.
TopologySpec fig7_topology();

struct WorldConfig {
  uint64_t seed = 1;
  TopologySpec topo;
  Defenses defenses;
  TcpConfig tcp;
  uint64_t big_object = 100 * 1460;
  std::vector<std::pair<std::string, uint64_t>> extra_objects = {{"/huge", 8'000'000'000ull}};
  uint32_t not_found_size = 200;
  bool server_persistent = true;
  int max_connections = 32;
  SimTime timer_granularity = kMsec;
  // 0: attacker-client path delay.
  SimTime channel_delay = 0;
};

class World {
 public:
  explicit World(WorldConfig cfg);
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  Simulator& sim() { return sim_; }
  Network& net() { return net_; }
  const WorldConfig& config() const { return cfg_; }

  NodeId node(const std::string& name) const { return net_.node(name); }
  bool has(const std::string& name) const { return cfg_.topo.has_node(name); }

  TcpHost& client() { return *client_; }
  TcpHost& server() { return *server_; }
  Browser& browser() { return *browser_; }
  ServerApp& server_app() { return *server_app_; }
  AttackerNode& attacker() { return *attacker_; }
  Channel& channel() { return *channel_; }
  PuppetApi& puppet() { return *puppet_; }
  Target target() const;

  // Present only when the topology has the legitimate pair.
  TcpHost* probe_client() { return probe_client_.get(); }
  TcpHost* probe_server() { return probe_server_.get(); }
  // TCP host on a named node, or null.
  TcpHost* host(const std::string& name);

  // One-way propagation plus serialization of a 40 B packet along a path.
  SimTime path_delay(const std::string& from, const std::string& to) const;

  // Ground truth, for oracles only.
  TcpConnection* client_conn(uint16_t client_port);
  TcpConnection* server_conn(uint16_t client_port);
  std::vector<uint16_t> client_ports() const;

 private:
  WorldConfig cfg_;
  Simulator sim_;
  Network net_;
  std::unique_ptr<TcpHost> client_;
  std::unique_ptr<TcpHost> server_;
  std::unique_ptr<TcpHost> probe_client_;
  std::unique_ptr<TcpHost> probe_server_;
  std::unique_ptr<Browser> browser_;
  std::unique_ptr<ServerApp> server_app_;
  std::unique_ptr<AttackerNode> attacker_;
  std::unique_ptr<Channel> channel_;
  std::unique_ptr<PuppetApi> puppet_;
};

}  // namespace offpath
