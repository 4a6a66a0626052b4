#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace offpath {

// Virtual time in microseconds.
using SimTime = int64_t;
constexpr SimTime kUsec = 1;
constexpr SimTime kMsec = 1000;
constexpr SimTime kSec = 1000000;

using NodeId = uint32_t;
using Addr = uint32_t;
using LinkId = uint32_t;
constexpr LinkId kNoLink = UINT32_MAX;

uint64_t splitmix64(uint64_t& state);
uint64_t fnv1a(std::string_view s);

// mt19937_64 is specified bit-exactly by the standard; the distributions are
// not, so the mappings to doubles and ranges are done here.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}
  uint64_t next_u64() { return eng_(); }
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [lo, hi], inclusive.
  uint64_t uniform_int(uint64_t lo, uint64_t hi);
  bool bernoulli(double p) { return p > 0.0 && (p >= 1.0 || uniform01() < p); }
  double exponential(double mean);

 private:
  std::mt19937_64 eng_;
};

struct Payload {
  std::shared_ptr<const std::string> buf;
  uint32_t off = 0;
  uint32_t len = 0;
  // Integrity tag: nonzero when written by a peer holding the session key.
  uint64_t mac = 0;

  static Payload from(std::string s, uint64_t mac = 0);
  std::string_view view() const {
    return buf ? std::string_view(*buf).substr(off, len) : std::string_view();
  }
  Payload slice(uint32_t from, uint32_t n) const {
    Payload p = *this;
    p.off += from;
    p.len = n;
    return p;
  }
};

enum Flag : uint8_t { kSyn = 1, kAck = 2, kRst = 4, kFin = 8 };

struct SackBlock {
  uint32_t left = 0;
  uint32_t right = 0;
  bool operator==(const SackBlock&) const = default;
};

// Everything an endpoint's TCP logic may look at.
struct Segment {
  uint16_t src_port = 0;
  uint16_t dst_port = 0;
  uint32_t seq = 0;
  uint32_t ack = 0;
  uint8_t flags = 0;
  Payload payload;
  std::vector<SackBlock> sack;

  bool has(Flag f) const { return (flags & f) != 0; }
  // Sequence space consumed (payload plus SYN/FIN).
  uint32_t seq_len() const {
    return payload.len + (has(kSyn) ? 1 : 0) + (has(kFin) ? 1 : 0);
  }
};

struct Packet {
  Addr src = 0;
  Addr dst = 0;
  Segment seg;
  // Bookkeeping only; never handed to endpoint logic.
  NodeId spoofed_by = UINT32_MAX;
  // Optional explicit path (used for AS-level flows); hop indexes into it.
  std::shared_ptr<const std::vector<LinkId>> route;
  uint16_t hop = 0;
  uint32_t flow = 0;

  uint32_t wire_size() const {
    return 40 + seg.payload.len + 8 * static_cast<uint32_t>(seg.sack.size());
  }
};

struct LinkParams {
  double capacity_bps = 10e6;
  SimTime prop_delay = 0;
  double loss_rate = 0.0;
  uint32_t queue_limit = 1000;
};

struct LinkStats {
  uint64_t enqueued = 0;
  uint64_t delivered = 0;
  uint64_t dropped_loss = 0;
  uint64_t dropped_overflow = 0;
  uint64_t in_flight = 0;
  uint64_t bytes_enqueued = 0;
  uint64_t bytes_delivered = 0;
  // Serialization time spent, for utilization.
  SimTime busy_time = 0;
};

struct SimStats {
  SimTime now = 0;
  uint64_t events_processed = 0;
  uint64_t packets_sent = 0;
  uint64_t packets_delivered = 0;
  uint64_t packets_dropped = 0;
  uint64_t packets_in_flight = 0;
};

class Simulator {
 public:
  using EventId = uint64_t;

  explicit Simulator(uint64_t seed);
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  SimTime now() const { return now_; }
  uint64_t seed() const { return seed_; }

  EventId schedule(SimTime at, std::function<void()> fn);
  EventId after(SimTime dt, std::function<void()> fn) { return schedule(now_ + dt, std::move(fn)); }
  // Processes every event with timestamp <= t, then sets now to t.
  SimStats run_until(SimTime t);
  // Runs until the queue drains or stop() is called.
  SimStats run();
  void stop() { stopped_ = true; }
  bool idle() const { return heap_.empty(); }

  // Independent stream derived from the scenario seed and a stable name.
  Rng stream(std::string_view name) const;

  // Hook for packet accounting owned by the network.
  std::function<void(SimStats&)> stats_hook;

 private:
  struct Entry {
    SimTime at;
    EventId id;
    uint32_t slot;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.at != b.at ? a.at > b.at : a.id > b.id;
    }
  };
  void pop_and_fire();
  SimStats snapshot() const;

  uint64_t seed_;
  SimTime now_ = 0;
  EventId next_id_ = 0;
  uint64_t processed_ = 0;
  bool stopped_ = false;
  std::vector<Entry> heap_;
  std::vector<std::function<void()>> slots_;
  std::vector<uint32_t> free_slots_;
};

class Network;

struct Link {
  LinkId id = 0;
  NodeId from = 0;
  NodeId to = 0;
  LinkParams params;
  LinkStats stats;
  SimTime busy_until = 0;
  // Departure times of packets still waiting or being serialized.
  std::vector<SimTime> departures;
  size_t dep_head = 0;
  Rng rng;
  std::function<void(const Packet&, SimTime)> on_drop;

  size_t queued(SimTime now);
};

class Network {
 public:
  using Handler = std::function<void(Packet&&)>;

  explicit Network(Simulator& sim);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Simulator& sim() { return sim_; }

  NodeId add_node(const std::string& name);
  LinkId add_link(NodeId from, NodeId to, const LinkParams& p);
  // Two one-way links with identical parameters.
  std::pair<LinkId, LinkId> add_duplex(NodeId a, NodeId b, const LinkParams& p);
  // Shortest-hop next-hop tables; ties resolved by lowest link id.
  void compute_routes();

  void attach(NodeId node, Handler h);
  // Emits a packet from `from`. Routed by destination unless pkt.route is set.
  void send(NodeId from, Packet pkt);
  // Enqueues directly on a link (the link's source must be the sender).
  void transmit(Packet pkt, LinkId link);

  const Link& link(LinkId id) const { return links_.at(id); }
  Link& link_mut(LinkId id) { return links_.at(id); }
  size_t link_count() const { return links_.size(); }
  LinkId find_link(NodeId from, NodeId to) const;
  NodeId node(const std::string& name) const;
  const std::string& name(NodeId id) const { return names_.at(id); }
  size_t node_count() const { return names_.size(); }
  LinkId next_hop(NodeId at, NodeId dst) const;
  std::vector<LinkId> path(NodeId from, NodeId to) const;

  // Conservation identity over every link.
  bool conserved() const;
  SimStats totals() const;

 private:
  void arrive(LinkId link, Packet&& pkt);
  void forward(NodeId at, Packet&& pkt);

  Simulator& sim_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeId> by_name_;
  std::vector<Link> links_;
  std::vector<std::vector<LinkId>> out_links_;
  std::vector<std::vector<LinkId>> next_hop_;
  std::vector<Handler> handlers_;
};

}  // namespace offpath
