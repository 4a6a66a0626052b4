#include "offpath/host.hpp"

namespace offpath {

namespace {
constexpr SimTime kSynRetry = 1 * kSec;
constexpr int kSynTries = 4;
}  // namespace

TcpHost::TcpHost(Network& net, NodeId node, TcpConfig cfg, PortAlgorithm ports)
    : net_(net),
      node_(node),
      cfg_(cfg),
      ports_(ports, net.sim().stream("ports:" + net.name(node))),
      rng_(net.sim().stream("tcp:" + net.name(node))) {
  net_.attach(node_, [this](Packet&& p) { on_packet(std::move(p)); });
}

void TcpHost::listen(uint16_t port, AcceptFn on_accept) { listeners_[port] = std::move(on_accept); }

TcpHost::ConnId TcpHost::connect(Addr dst, uint16_t dst_port, EstablishedFn done) {
  uint16_t port = ports_.allocate(dst);
  Key key{port, dst, dst_port};
  if (demux_.count(key)) {
    // Four-tuple already in use (possible with a constant port choice).
    net_.sim().after(0, [done]() { done(0, false); });
    return 0;
  }
  ConnId id = next_id_++;
  demux_[key] = id;
  Pending p;
  p.tuple = FourTuple{node_, port, dst, dst_port};
  p.iss = static_cast<uint32_t>(rng_.next_u64());
  p.syn_at = net_.sim().now();
  p.tries = 0;
  p.done = std::move(done);
  pending_[id] = std::move(p);
  send_syn(id);
  return id;
}

void TcpHost::send_syn(ConnId id) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return;
  Pending& p = it->second;
  if (p.tries >= kSynTries) {
    EstablishedFn done = std::move(p.done);
    demux_.erase(Key{p.tuple.local_port, p.tuple.remote_addr, p.tuple.remote_port});
    pending_.erase(it);
    if (done) done(id, false);
    return;
  }
  p.tries++;
  p.syn_at = net_.sim().now();
  Segment s;
  s.src_port = p.tuple.local_port;
  s.dst_port = p.tuple.remote_port;
  s.seq = p.iss;
  s.flags = kSyn;
  transmit(p.tuple, std::move(s));
  int tries = p.tries;
  net_.sim().after(kSynRetry, [this, id, tries]() {
    auto jt = pending_.find(id);
    if (jt != pending_.end() && jt->second.tries == tries) send_syn(id);
  });
}

void TcpHost::transmit(const FourTuple& t, Segment s) {
  Packet p;
  p.src = t.local_addr;
  p.dst = t.remote_addr;
  p.seg = std::move(s);
  net_.send(node_, std::move(p));
}

void TcpHost::on_packet(Packet&& p) {
  const Segment& seg = p.seg;
  Key key{seg.dst_port, p.src, seg.src_port};
  SimTime now = net_.sim().now();
  auto it = demux_.find(key);
  if (it != demux_.end()) {
    ConnId id = it->second;
    auto pit = pending_.find(id);
    if (pit != pending_.end()) {
      Pending& pd = pit->second;
      if (!(seg.has(kSyn) && seg.has(kAck)) || seg.ack != pd.iss + 1) return;
      Entry e;
      e.conn = std::make_unique<TcpConnection>(pd.tuple, cfg_, pd.iss + 1, seg.seq + 1, now);
      e.conn->rtt_sample(now - pd.syn_at);
      EstablishedFn done = std::move(pd.done);
      pending_.erase(pit);
      conns_[id] = std::move(e);
      if (done) done(id, true);
      return;
    }
    auto cit = conns_.find(id);
    if (cit == conns_.end()) return;
    if (seg.has(kSyn) && !seg.has(kAck)) {
      // Retransmitted SYN: repeat the SYN-ACK.
      TcpConnection& c = *cit->second.conn;
      Segment s;
      s.src_port = seg.dst_port;
      s.dst_port = seg.src_port;
      s.seq = c.snd_una() - 1;
      s.ack = seg.seq + 1;
      s.flags = kSyn | kAck;
      if (c.snd_una() == c.snd_nxt()) transmit(c.tuple(), std::move(s));
      return;
    }
    TcpOutput out = cit->second.conn->on_segment(seg, now);
    handle(id, std::move(out));
    return;
  }
  if (seg.has(kSyn) && !seg.has(kAck)) {
    auto lit = listeners_.find(seg.dst_port);
    if (lit == listeners_.end()) return;
    FourTuple t{node_, seg.dst_port, p.src, seg.src_port};
    uint32_t iss = static_cast<uint32_t>(rng_.next_u64());
    ConnId id = next_id_++;
    Entry e;
    e.conn = std::make_unique<TcpConnection>(t, cfg_, iss + 1, seg.seq + 1, now);
    conns_[id] = std::move(e);
    demux_[key] = id;
    Segment s;
    s.src_port = seg.dst_port;
    s.dst_port = seg.src_port;
    s.seq = iss;
    s.ack = seg.seq + 1;
    s.flags = kSyn | kAck;
    transmit(t, std::move(s));
    lit->second(id);
    return;
  }
  if (on_unmatched) on_unmatched(p);
}

void TcpHost::handle(ConnId id, TcpOutput&& out) {
  auto it = conns_.find(id);
  if (it == conns_.end()) return;
  const FourTuple tuple = it->second.conn->tuple();
  for (Segment& s : out.emit) transmit(tuple, std::move(s));
  Callbacks cb = it->second.cb;
  if (out.reset) {
    forget(id);
    if (cb.on_reset) cb.on_reset(id);
    return;
  }
  if (out.delivered > 0 && cb.on_data) cb.on_data(id);
  if (out.fin_received && cb.on_fin) cb.on_fin(id);
  TcpConnection* c = get(id);
  if (c && c->closed()) {
    forget(id);
    return;
  }
  rearm(id);
}

void TcpHost::rearm(ConnId id) {
  auto it = conns_.find(id);
  if (it == conns_.end()) return;
  Entry& e = it->second;
  SimTime t = e.conn->next_timer();
  if (t == kNever || t >= e.timer_at) return;
  SimTime now = net_.sim().now();
  if (t < now) t = now;
  e.timer_at = t;
  net_.sim().schedule(t, [this, id, t]() {
    auto jt = conns_.find(id);
    if (jt == conns_.end() || jt->second.timer_at != t) return;
    jt->second.timer_at = kNever;
    SimTime now2 = net_.sim().now();
    if (jt->second.conn->next_timer() <= now2) {
      handle(id, jt->second.conn->on_timer(now2));
    } else {
      rearm(id);
    }
  });
}

TcpConnection* TcpHost::get(ConnId id) {
  auto it = conns_.find(id);
  return it == conns_.end() ? nullptr : it->second.conn.get();
}

void TcpHost::set_callbacks(ConnId id, Callbacks cb) {
  auto it = conns_.find(id);
  if (it != conns_.end()) it->second.cb = std::move(cb);
}

void TcpHost::send(ConnId id, Payload data) {
  if (TcpConnection* c = get(id)) handle(id, c->app_send(std::move(data), net_.sim().now()));
}

void TcpHost::send_bulk(ConnId id, uint64_t n, uint64_t mac) {
  if (TcpConnection* c = get(id)) handle(id, c->app_send_bulk(n, net_.sim().now(), mac));
}

void TcpHost::close(ConnId id) {
  if (TcpConnection* c = get(id)) handle(id, c->close(net_.sim().now()));
}

void TcpHost::close_and_forget(ConnId id) {
  TcpConnection* c = get(id);
  if (!c) return;
  TcpOutput out = c->close(net_.sim().now(), true);
  const FourTuple tuple = c->tuple();
  for (Segment& s : out.emit) transmit(tuple, std::move(s));
  forget(id);
}

void TcpHost::abort(ConnId id) {
  TcpConnection* c = get(id);
  if (!c) return;
  TcpOutput out = c->abort(net_.sim().now());
  const FourTuple tuple = c->tuple();
  for (Segment& s : out.emit) transmit(tuple, std::move(s));
  forget(id);
}

void TcpHost::consume(ConnId id, uint64_t n) {
  if (TcpConnection* c = get(id)) c->consume_rx(n);
}

void TcpHost::forget(ConnId id) {
  auto it = conns_.find(id);
  if (it == conns_.end()) return;
  const FourTuple& t = it->second.conn->tuple();
  demux_.erase(Key{t.local_port, t.remote_addr, t.remote_port});
  conns_.erase(it);
}

TcpHost::ConnId TcpHost::find(const FourTuple& t) const {
  auto it = demux_.find(Key{t.local_port, t.remote_addr, t.remote_port});
  return it == demux_.end() ? 0 : it->second;
}

}  // namespace offpath
