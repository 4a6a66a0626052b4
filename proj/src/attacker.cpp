#include "offpath/attacker.hpp"

#include <cmath>

namespace offpath {

AttackerNode::AttackerNode(Network& net, NodeId node) : net_(net), node_(node), rate_bps_(0) {
  for (LinkId l = 0; l < net_.link_count(); ++l) {
    if (net_.link(l).from == node_) {
      rate_bps_ = net_.link(l).params.capacity_bps;
      break;
    }
  }
  net_.attach(node_, [this](Packet&& p) {
    if (on_packet) on_packet(p);
  });
}

void AttackerNode::spoof(Addr src, Addr dst, Segment seg) {
  Packet p;
  p.src = src;
  p.dst = dst;
  p.seg = std::move(seg);
  p.spoofed_by = node_;
  packets_++;
  bytes_ += p.wire_size();
  net_.send(node_, std::move(p));
}

void AttackerNode::spoof_paced(Addr src, Addr dst, Segment seg) {
  Packet p;
  p.src = src;
  p.dst = dst;
  p.seg = std::move(seg);
  auto holder = std::make_shared<Packet>(std::move(p));
  spoof_stream(1, [holder](uint64_t) { return std::move(*holder); });
}

void AttackerNode::spoof_stream(uint64_t count, std::function<Packet(uint64_t)> gen, std::function<void()> done) {
  Job j;
  j.count = count;
  j.gen = std::move(gen);
  j.done = std::move(done);
  jobs_.push_back(std::move(j));
  if (!pumping_) pump();
}

void AttackerNode::when_drained(std::function<void()> fn) { spoof_stream(0, nullptr, std::move(fn)); }

void AttackerNode::pump() {
  while (!jobs_.empty() && jobs_.front().next >= jobs_.front().count) {
    auto done = std::move(jobs_.front().done);
    jobs_.pop_front();
    if (done) net_.sim().after(0, std::move(done));
  }
  if (jobs_.empty()) {
    pumping_ = false;
    return;
  }
  pumping_ = true;
  Job& j = jobs_.front();
  Packet p = j.gen(j.next++);
  p.spoofed_by = node_;
  uint32_t size = p.wire_size();
  packets_++;
  bytes_ += size;
  net_.send(node_, std::move(p));
  SimTime gap = rate_bps_ > 0 ? static_cast<SimTime>(std::llround(size * 8.0 * 1e6 / rate_bps_)) : 0;
  net_.sim().after(gap, [this]() { pump(); });
}

}  // namespace offpath
