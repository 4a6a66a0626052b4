#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <tuple>

#include "offpath/simcore.hpp"
#include "offpath/tcp.hpp"

namespace offpath {

// A node running TCP: demultiplexes segments, runs handshakes and timers.
class TcpHost {
 public:
  using ConnId = uint64_t;
  struct Callbacks {
    std::function<void(ConnId)> on_data;
    std::function<void(ConnId)> on_reset;
    std::function<void(ConnId)> on_fin;
  };
  using AcceptFn = std::function<void(ConnId)>;
  using EstablishedFn = std::function<void(ConnId, bool ok)>;

  TcpHost(Network& net, NodeId node, TcpConfig cfg, PortAlgorithm ports = PortAlgorithm::simple_hash_based);
  TcpHost(const TcpHost&) = delete;
  TcpHost& operator=(const TcpHost&) = delete;

  NodeId node() const { return node_; }
  Simulator& sim() { return net_.sim(); }
  SimTime now() { return net_.sim().now(); }
  Addr addr() const { return node_; }
  TcpConfig& config() { return cfg_; }

  void listen(uint16_t port, AcceptFn on_accept);
  ConnId connect(Addr dst, uint16_t dst_port, EstablishedFn done);

  TcpConnection* get(ConnId id);
  void set_callbacks(ConnId id, Callbacks cb);
  void send(ConnId id, Payload data);
  void send_bulk(ConnId id, uint64_t n, uint64_t mac = 0);
  // Graceful close; the TCB is forgotten immediately.
  void close_and_forget(ConnId id);
  void close(ConnId id);
  void abort(ConnId id);
  void consume(ConnId id, uint64_t n);

  // Test and oracle access only.
  ConnId find(const FourTuple& t) const;
  PortAllocator& ports() { return ports_; }
  size_t connection_count() const { return conns_.size(); }
  std::function<void(const Packet&)> on_unmatched;

 private:
  struct Entry {
    std::unique_ptr<TcpConnection> conn;
    Callbacks cb;
    SimTime timer_at = kNever;
  };
  struct Pending {
    FourTuple tuple;
    uint32_t iss;
    SimTime syn_at;
    int tries;
    EstablishedFn done;
  };
  using Key = std::tuple<uint16_t, Addr, uint16_t>;

  void on_packet(Packet&& p);
  void handle(ConnId id, TcpOutput&& out);
  void rearm(ConnId id);
  void send_syn(ConnId id);
  void transmit(const FourTuple& t, Segment s);
  void forget(ConnId id);

  Network& net_;
  NodeId node_;
  TcpConfig cfg_;
  PortAllocator ports_;
  Rng rng_;
  ConnId next_id_ = 1;
  std::map<uint16_t, AcceptFn> listeners_;
  std::map<Key, ConnId> demux_;
  std::map<ConnId, Entry> conns_;
  std::map<ConnId, Pending> pending_;
};

}  // namespace offpath
