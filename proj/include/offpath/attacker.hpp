#pragma once

#include <deque>
#include <functional>

#include "offpath/simcore.hpp"

namespace offpath {

// The off-path machine: forges source addresses, sees only traffic sent to it.
class AttackerNode {
 public:
  AttackerNode(Network& net, NodeId node);
  AttackerNode(const AttackerNode&) = delete;
  AttackerNode& operator=(const AttackerNode&) = delete;

  NodeId node() const { return node_; }
  Addr addr() const { return node_; }
  SimTime now() const { return net_.sim().now(); }
  Simulator& sim() { return net_.sim(); }

  // Sends immediately (may overflow the access queue if abused).
  void spoof(Addr src, Addr dst, Segment seg);
  // Queues behind earlier paced packets, released at access-link rate.
  void spoof_paced(Addr src, Addr dst, Segment seg);
  // Paced stream of `count` packets built on demand by gen(index).
  void spoof_stream(uint64_t count, std::function<Packet(uint64_t)> gen, std::function<void()> done = nullptr);
  // Runs fn once every paced packet queued so far has left the machine.
  void when_drained(std::function<void()> fn);
  bool pacing() const { return pumping_; }

  uint64_t packets_sent() const { return packets_; }
  uint64_t bytes_sent() const { return bytes_; }
  void reset_counters() { packets_ = bytes_ = 0; }

  std::function<void(const Packet&)> on_packet;

 private:
  void pump();

  struct Job {
    uint64_t count = 0;
    uint64_t next = 0;
    std::function<Packet(uint64_t)> gen;
    std::function<void()> done;
  };

  Network& net_;
  NodeId node_;
  double rate_bps_;
  std::deque<Job> jobs_;
  bool pumping_ = false;
  uint64_t packets_ = 0;
  uint64_t bytes_ = 0;
};

}  // namespace offpath
