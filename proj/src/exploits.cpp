#include "offpath/exploits.hpp"

#include <algorithm>

namespace offpath {

const char* to_string(SeqSource s) { return s == SeqSource::oracle ? "oracle" : "pipeline"; }

const char* to_string(DegradationAttack a) {
  switch (a) {
    case DegradationAttack::none:
      return "none";
    case DegradationAttack::opt_ack:
      return "opt_ack";
    case DegradationAttack::ack_storm:
      return "ack_storm";
  }
  return "?";
}

namespace {

LinkId uplink(World& w, const std::string& from, const std::string& to) {
  return w.net().path(w.node(from), w.node(to)).front();
}

}  // namespace

// --- Opt-Ack -----------------------------------------------------------------

OptAckDrive::OptAckDrive(World& w, OptAckConfig cfg) : w_(w), cfg_(cfg) {}

void OptAckDrive::start(Done done) {
  done_ = std::move(done);
  running_ = true;
  auto names = std::make_shared<std::vector<std::string>>();
  *names = w_.puppet().open_connections(1, [this, names](int opened) {
    if (opened == 0) {
      finish();
      return;
    }
    const std::string host = names->front();
    w_.puppet().request(host, "/huge", nullptr);
    // Oracle readout of the numbers the attacker would otherwise have learned.
    TcpConnection* c = w_.client().get(w_.browser().conn_of(host));
    port_ = c->tuple().local_port;
    client_seq_ = c->snd_nxt();
    TcpConnection* s = w_.server_conn(port_);
    est_una_ = s->snd_nxt();
    w_.sim().after(w_.channel().delay() + cfg_.start_delay, [this]() { begin_acking(); });
  });
}

void OptAckDrive::begin_acking() {
  server_link_ = uplink(w_, "server", "client");
  const Link& l = w_.net().link(server_link_);
  link_bytes0_ = l.stats.bytes_enqueued;
  link_busy0_ = l.stats.busy_time;
  atk_bytes0_ = w_.attacker().bytes_sent();
  est_cwnd_ = static_cast<double>(w_.config().tcp.init_cwnd_segments) * w_.config().tcp.mss;
  rep_.started = w_.sim().now();
  end_at_ = rep_.started + cfg_.duration;
  tick();
}

void OptAckDrive::tick() {
  SimTime now = w_.sim().now();
  if (!rep_.detected && w_.server_conn(port_) == nullptr) {
    rep_.detected = true;
    rep_.detected_at = now;
  }
  if (now >= end_at_) {
    finish();
    return;
  }
  uint32_t mss = w_.config().tcp.mss;
  double window = std::min<double>(est_cwnd_, cfg_.window_cap);
  uint32_t adv = static_cast<uint32_t>(std::min<double>(cfg_.stride, window));
  est_una_ += adv;
  est_cwnd_ = std::min<double>(est_cwnd_ + std::min(adv, mss), cfg_.window_cap);

  Segment s;
  s.src_port = port_;
  s.dst_port = kHttpPort;
  s.seq = client_seq_;
  s.ack = est_una_;
  s.flags = kAck;
  Target t = w_.target();
  w_.attacker().spoof(t.client, t.server, std::move(s));
  rep_.acks_sent++;
  w_.sim().after(cfg_.interval, [this]() { tick(); });
}

void OptAckDrive::finish() {
  running_ = false;
  SimTime now = w_.sim().now();
  rep_.finished = now;
  if (rep_.started > 0 || rep_.acks_sent > 0) {
    const Link& l = w_.net().link(server_link_);
    rep_.server_bytes = l.stats.bytes_enqueued - link_bytes0_;
    SimTime span = now - rep_.started;
    rep_.server_link_utilization =
        span > 0 ? static_cast<double>(l.stats.busy_time - link_busy0_) / static_cast<double>(span) : 0;
    rep_.attacker_bytes = w_.attacker().bytes_sent() - atk_bytes0_;
    rep_.amplification =
        rep_.attacker_bytes > 0 ? static_cast<double>(rep_.server_bytes) / static_cast<double>(rep_.attacker_bytes) : 0;
    if (TcpConnection* s = w_.server_conn(port_)) rep_.future_acks_dropped = s->counters().future_acks_dropped;
  }
  if (done_) done_(rep_);
}

// --- Ack-Storm ---------------------------------------------------------------

AckStormDrive::AckStormDrive(World& w, AckStormConfig cfg) : w_(w), cfg_(cfg) {}

void AckStormDrive::start(Done done) {
  done_ = std::move(done);
  auto names = std::make_shared<std::vector<std::string>>();
  *names = w_.puppet().open_connections(1, [this, names](int opened) {
    if (opened == 0) {
      finish();
      return;
    }
    const std::string host = names->front();
    w_.sim().after(cfg_.settle, [this, host]() {
      TcpConnection* c = w_.client().get(w_.browser().conn_of(host));
      if (!c) {
        finish();
        return;
      }
      port_ = c->tuple().local_port;
      TcpConnection* s = w_.server_conn(port_);
      c_nxt_ = c->snd_nxt();
      s_nxt_ = s->snd_nxt();
      c_dup0_ = c->counters().dup_acks_sent;
      s_dup0_ = s->counters().dup_acks_sent;
      // Seed the client first and let its answer reach the server before the
      // server's own seed does; otherwise two ping-pongs start at once.
      stagger_ = cfg_.stagger >= 0 ? cfg_.stagger
                                   : std::max<SimTime>(0, w_.path_delay("attacker", "client") +
                                                              w_.path_delay("client", "server") -
                                                              w_.path_delay("attacker", "server") + kMsec);
      rep_.first_seed = w_.sim().now();
      rep_.ball_start = rep_.first_seed + stagger_ + w_.path_delay("attacker", "server");
      // Window is closed at both ends: an exchange landing exactly at the end counts.
      w_.sim().schedule(rep_.ball_start + cfg_.duration + 1, [this]() { finish(); });
      seed();
    });
  });
}

void AckStormDrive::seed() {
  int limit = cfg_.max_seedings > 0 ? cfg_.max_seedings : static_cast<int>(cfg_.duration / cfg_.interval);
  if (static_cast<int>(rep_.seedings) >= limit) return;
  rep_.seedings++;
  Target t = w_.target();
  Segment to_client;
  to_client.src_port = kHttpPort;
  to_client.dst_port = port_;
  to_client.seq = s_nxt_;
  to_client.ack = c_nxt_;
  to_client.flags = kAck | kFin;
  Segment to_server;
  to_server.src_port = port_;
  to_server.dst_port = kHttpPort;
  to_server.seq = c_nxt_;
  to_server.ack = s_nxt_;
  to_server.flags = kAck | kFin;
  AttackerNode& a = w_.attacker();
  a.spoof(t.server, t.client, std::move(to_client));
  rep_.attacker_packets++;
  rep_.attacker_bytes += 40;
  w_.sim().after(stagger_, [this, t, seg = std::move(to_server)]() mutable {
    w_.attacker().spoof(t.client, t.server, std::move(seg));
    rep_.attacker_packets++;
    rep_.attacker_bytes += 40;
  });
  w_.sim().after(cfg_.interval, [this]() { seed(); });
}

void AckStormDrive::sample(uint64_t* client_dupacks, uint64_t* server_dupacks) {
  TcpConnection* c = w_.client_conn(port_);
  TcpConnection* s = w_.server_conn(port_);
  *client_dupacks = c ? c->counters().dup_acks_sent - c_dup0_ : 0;
  *server_dupacks = s ? s->counters().dup_acks_sent - s_dup0_ : 0;
}

void AckStormDrive::finish() {
  rep_.finished = w_.sim().now();
  if (port_ != 0) {
    sample(&rep_.dupacks_client, &rep_.dupacks_server);
    rep_.storm_packets = rep_.dupacks_client + rep_.dupacks_server;
    rep_.storm_bytes = 40 * rep_.storm_packets;
  }
  if (done_) {
    auto d = std::move(done_);
    done_ = nullptr;
    d(rep_);
  }
}

// --- Cross traffic -----------------------------------------------------------

BulkTransfer::BulkTransfer(World& w, std::string sender, std::string receiver, uint64_t bytes, uint16_t port)
    : w_(w), sender_(std::move(sender)), receiver_(std::move(receiver)), bytes_(bytes), port_(port) {}

void BulkTransfer::start(std::function<void(SimTime)> done) {
  TcpHost* snd = w_.host(sender_);
  TcpHost* rcv = w_.host(receiver_);
  started_ = w_.sim().now();
  uint64_t n = bytes_;
  snd->listen(port_, [snd, n](TcpHost::ConnId id) { snd->send_bulk(id, n); });
  rcv->connect(snd->addr(), port_, [this, rcv, done](TcpHost::ConnId id, bool ok) {
    if (!ok) return;
    TcpHost::Callbacks cb;
    cb.on_data = [this, rcv, done](TcpHost::ConnId x) {
      TcpConnection* c = rcv->get(x);
      if (!c || complete_) return;
      uint64_t got = c->app_rx_bytes();
      rcv->consume(x, got);
      received_ += got;
      if (received_ >= bytes_) {
        complete_ = true;
        if (done) done(w_.sim().now() - started_);
      }
    };
    rcv->set_callbacks(id, cb);
  });
}

DegradationReport measure_degradation(const WorldConfig& wc, const DegradationConfig& cfg) {
  auto timed_run = [&](bool attack, SimTime limit) -> SimTime {
    World w(wc);
    std::unique_ptr<OptAckDrive> oa;
    std::unique_ptr<AckStormDrive> as;
    SimTime span = cfg.warmup + limit + kSec;
    if (attack && cfg.attack == DegradationAttack::opt_ack) {
      OptAckConfig c = cfg.opt_ack;
      c.duration = span;
      oa = std::make_unique<OptAckDrive>(w, c);
      oa->start();
    } else if (attack && cfg.attack == DegradationAttack::ack_storm) {
      AckStormConfig c = cfg.ack_storm;
      c.duration = span;
      as = std::make_unique<AckStormDrive>(w, c);
      as->start();
    }
    BulkTransfer bt(w, cfg.sender, cfg.receiver, cfg.transfer);
    SimTime elapsed = 0;
    w.sim().after(cfg.warmup, [&]() {
      bt.start([&](SimTime e) {
        elapsed = e;
        w.sim().stop();
      });
    });
    w.sim().run_until(cfg.warmup + limit);
    return elapsed;
  };

  DegradationReport rep;
  rep.baseline = timed_run(false, 3600 * kSec);
  if (rep.baseline == 0) {
    rep.slowdown = kSlowdownInfinite;
    return rep;
  }
  if (cfg.attack == DegradationAttack::none) {
    rep.attacked = rep.baseline;
  } else {
    rep.attacked = timed_run(true, 10 * rep.baseline);
  }
  rep.completed = rep.attacked > 0;
  rep.slowdown = rep.completed ? static_cast<double>(rep.attacked) / static_cast<double>(rep.baseline)
                               : kSlowdownInfinite;
  return rep;
}

}  // namespace offpath
