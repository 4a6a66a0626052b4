#include "offpath/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace offpath {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t Rng::uniform_int(uint64_t lo, uint64_t hi) {
  if (hi <= lo) return lo;
  uint64_t span = hi - lo;
  if (span == UINT64_MAX) return next_u64();
  uint64_t n = span + 1;
  // Rejection keeps the draw exactly uniform.
  uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + x % n;
}

double Rng::exponential(double mean) {
  double u = uniform01();
  return -mean * std::log1p(-u);
}

Payload Payload::from(std::string s, uint64_t mac) {
  Payload p;
  p.len = static_cast<uint32_t>(s.size());
  p.buf = std::make_shared<const std::string>(std::move(s));
  p.mac = mac;
  return p;
}

Simulator::Simulator(uint64_t seed) : seed_(seed) {}

Simulator::EventId Simulator::schedule(SimTime at, std::function<void()> fn) {
  if (at < now_) {
    throw std::logic_error("event scheduled in the past: at=" + std::to_string(at) +
                           " now=" + std::to_string(now_));
  }
  uint32_t slot;
  if (!free_slots_.empty()) {
    slot = free_slots_.back();
    free_slots_.pop_back();
    slots_[slot] = std::move(fn);
  } else {
    slot = static_cast<uint32_t>(slots_.size());
    slots_.push_back(std::move(fn));
  }
  EventId id = next_id_++;
  heap_.push_back({at, id, slot});
  std::push_heap(heap_.begin(), heap_.end(), Later{});
  return id;
}

void Simulator::pop_and_fire() {
  std::pop_heap(heap_.begin(), heap_.end(), Later{});
  Entry e = heap_.back();
  heap_.pop_back();
  now_ = e.at;
  std::function<void()> fn = std::move(slots_[e.slot]);
  slots_[e.slot] = nullptr;
  free_slots_.push_back(e.slot);
  ++processed_;
  fn();
}

SimStats Simulator::snapshot() const {
  SimStats s;
  s.now = now_;
  s.events_processed = processed_;
  if (stats_hook) stats_hook(s);
  return s;
}

SimStats Simulator::run_until(SimTime t) {
  stopped_ = false;
  while (!heap_.empty() && heap_.front().at <= t && !stopped_) pop_and_fire();
  if (!stopped_ && t > now_) now_ = t;
  return snapshot();
}

SimStats Simulator::run() {
  stopped_ = false;
  while (!heap_.empty() && !stopped_) pop_and_fire();
  return snapshot();
}

Rng Simulator::stream(std::string_view name) const {
  uint64_t st = seed_ ^ fnv1a(name);
  splitmix64(st);
  return Rng(splitmix64(st));
}

size_t Link::queued(SimTime now) {
  while (dep_head < departures.size() && departures[dep_head] <= now) ++dep_head;
  if (dep_head > 4096 && dep_head * 2 > departures.size()) {
    departures.erase(departures.begin(), departures.begin() + static_cast<long>(dep_head));
    dep_head = 0;
  }
  return departures.size() - dep_head;
}

Network::Network(Simulator& sim) : sim_(sim) {
  sim_.stats_hook = [this](SimStats& s) {
    SimStats t = totals();
    s.packets_sent = t.packets_sent;
    s.packets_delivered = t.packets_delivered;
    s.packets_dropped = t.packets_dropped;
    s.packets_in_flight = t.packets_in_flight;
  };
}

NodeId Network::add_node(const std::string& name) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate node: " + name);
  NodeId id = static_cast<NodeId>(names_.size());
  names_.push_back(name);
  by_name_[name] = id;
  out_links_.emplace_back();
  handlers_.emplace_back();
  return id;
}

LinkId Network::add_link(NodeId from, NodeId to, const LinkParams& p) {
  if (from >= names_.size() || to >= names_.size()) throw std::invalid_argument("unknown node");
  if (p.capacity_bps <= 0) throw std::invalid_argument("link capacity must be positive");
  Link l;
  l.id = static_cast<LinkId>(links_.size());
  l.from = from;
  l.to = to;
  l.params = p;
  l.rng = sim_.stream("link:" + names_[from] + ">" + names_[to]);
  links_.push_back(std::move(l));
  out_links_[from].push_back(links_.back().id);
  return links_.back().id;
}

std::pair<LinkId, LinkId> Network::add_duplex(NodeId a, NodeId b, const LinkParams& p) {
  return {add_link(a, b, p), add_link(b, a, p)};
}

void Network::compute_routes() {
  size_t n = names_.size();
  next_hop_.assign(n, std::vector<LinkId>(n, kNoLink));
  // Reverse BFS from every destination.
  std::vector<std::vector<LinkId>> in_links(n);
  for (const Link& l : links_) in_links[l.to].push_back(l.id);
  for (NodeId dst = 0; dst < n; ++dst) {
    std::vector<int> dist(n, -1);
    std::deque<NodeId> q;
    dist[dst] = 0;
    q.push_back(dst);
    while (!q.empty()) {
      NodeId v = q.front();
      q.pop_front();
      for (LinkId lid : in_links[v]) {
        NodeId u = links_[lid].from;
        if (dist[u] < 0) {
          dist[u] = dist[v] + 1;
          q.push_back(u);
        }
      }
    }
    for (NodeId u = 0; u < n; ++u) {
      if (u == dst || dist[u] < 0) continue;
      for (LinkId lid : out_links_[u]) {
        if (dist[links_[lid].to] == dist[u] - 1) {
          next_hop_[u][dst] = lid;
          break;
        }
      }
    }
  }
}

void Network::attach(NodeId node, Handler h) { handlers_.at(node) = std::move(h); }

LinkId Network::next_hop(NodeId at, NodeId dst) const {
  if (at >= next_hop_.size() || dst >= next_hop_[at].size()) return kNoLink;
  return next_hop_[at][dst];
}

std::vector<LinkId> Network::path(NodeId from, NodeId to) const {
  std::vector<LinkId> out;
  NodeId at = from;
  while (at != to) {
    LinkId l = next_hop(at, to);
    if (l == kNoLink) return {};
    out.push_back(l);
    at = links_[l].to;
  }
  return out;
}

LinkId Network::find_link(NodeId from, NodeId to) const {
  for (LinkId l : out_links_.at(from))
    if (links_[l].to == to) return l;
  return kNoLink;
}

NodeId Network::node(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("unknown node: " + name);
  return it->second;
}

void Network::send(NodeId from, Packet pkt) { forward(from, std::move(pkt)); }

void Network::forward(NodeId at, Packet&& pkt) {
  if (pkt.route) {
    if (pkt.hop >= pkt.route->size()) {
      if (handlers_[at]) handlers_[at](std::move(pkt));
      return;
    }
    LinkId l = (*pkt.route)[pkt.hop++];
    transmit(std::move(pkt), l);
    return;
  }
  if (pkt.dst == at) {
    if (handlers_[at]) handlers_[at](std::move(pkt));
    return;
  }
  LinkId l = next_hop(at, pkt.dst);
  if (l == kNoLink) return;  // unroutable: silently discarded
  transmit(std::move(pkt), l);
}

void Network::transmit(Packet pkt, LinkId lid) {
  Link& l = links_.at(lid);
  SimTime now = sim_.now();
  uint32_t size = pkt.wire_size();
  l.stats.enqueued++;
  l.stats.bytes_enqueued += size;
  if (l.queued(now) >= l.params.queue_limit) {
    l.stats.dropped_overflow++;
    if (l.on_drop) l.on_drop(pkt, now);
    return;
  }
  SimTime ser = static_cast<SimTime>(std::llround(size * 8.0 * 1e6 / l.params.capacity_bps));
  SimTime start = std::max(now, l.busy_until);
  SimTime depart = start + ser;
  l.busy_until = depart;
  l.stats.busy_time += ser;
  l.departures.push_back(depart);
  if (l.rng.bernoulli(l.params.loss_rate)) {
    // Corrupted on the wire: it still occupies the transmitter.
    l.stats.dropped_loss++;
    if (l.on_drop) l.on_drop(pkt, now);
    return;
  }
  l.stats.in_flight++;
  SimTime arrive_at = depart + l.params.prop_delay;
  auto holder = std::make_shared<Packet>(std::move(pkt));
  sim_.schedule(arrive_at, [this, lid, holder]() mutable { arrive(lid, std::move(*holder)); });
}

void Network::arrive(LinkId lid, Packet&& pkt) {
  Link& l = links_[lid];
  l.stats.in_flight--;
  l.stats.delivered++;
  l.stats.bytes_delivered += pkt.wire_size();
  forward(l.to, std::move(pkt));
}

bool Network::conserved() const {
  for (const Link& l : links_) {
    const LinkStats& s = l.stats;
    if (s.enqueued != s.delivered + s.dropped_loss + s.dropped_overflow + s.in_flight) return false;
  }
  return true;
}

SimStats Network::totals() const {
  SimStats t;
  for (const Link& l : links_) {
    t.packets_sent += l.stats.enqueued;
    t.packets_delivered += l.stats.delivered;
    t.packets_dropped += l.stats.dropped_loss + l.stats.dropped_overflow;
    t.packets_in_flight += l.stats.in_flight;
  }
  return t;
}

}  // namespace offpath
