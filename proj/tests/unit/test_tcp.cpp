#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>

#include "offpath/host.hpp"
#include "offpath/tcp.hpp"

using namespace offpath;

namespace {

constexpr uint32_t kIss = 1000;
constexpr uint32_t kIrs = 5000;
constexpr uint32_t kMss = 1460;

TcpConnection make_conn(TcpConfig cfg = {}) {
  return TcpConnection(FourTuple{1, 40000, 2, 80}, cfg, kIss, kIrs, 0);
}

Segment data_seg(uint32_t seq, std::string bytes, uint32_t ack = kIss) {
  Segment s;
  s.src_port = 80;
  s.dst_port = 40000;
  s.seq = seq;
  s.ack = ack;
  s.flags = kAck;
  s.payload = Payload::from(std::move(bytes));
  return s;
}

Segment ack_seg(uint32_t ack, std::vector<SackBlock> sack = {}) {
  Segment s;
  s.src_port = 80;
  s.dst_port = 40000;
  s.seq = kIrs;
  s.ack = ack;
  s.flags = kAck;
  s.sack = std::move(sack);
  return s;
}

std::string app_stream(TcpConnection& c) {
  std::string out;
  for (const Payload& p : c.app_rx()) out += std::string(p.view());
  return out;
}

}  // namespace

// --- Ports -------------------------------------------------------------------

TEST(PortAllocator, SequentialPerDestination) {
  PortAllocator a(PortAlgorithm::simple_hash_based, Rng(3));
  uint16_t p = a.allocate(7);
  EXPECT_EQ(a.allocate(7), static_cast<uint16_t>(p + 1 > kEphemeralHi ? kEphemeralLo : p + 1));
  uint16_t q = a.allocate(7);
  EXPECT_EQ(q, static_cast<uint16_t>(p + 2 > kEphemeralHi ? kEphemeralLo + (p + 2 - kEphemeralHi - 1) : p + 2));
}

TEST(PortAllocator, WrapsAtTopOfRange) {
  PortAllocator a(PortAlgorithm::simple_hash_based, Rng(5));
  uint16_t p = a.allocate(9);
  for (int i = 0; i < 30000 && p != kEphemeralHi; ++i) p = a.allocate(9);
  ASSERT_EQ(p, kEphemeralHi);
  EXPECT_EQ(a.allocate(9), kEphemeralLo);
}

TEST(PortAllocator, FullyRandomPassesChiSquare) {
  PortAllocator a(PortAlgorithm::fully_random, Rng(17));
  const int bins = 50, draws = 10000;
  std::vector<int> count(bins, 0);
  const double range = kEphemeralHi - kEphemeralLo + 1;
  for (int i = 0; i < draws; ++i) {
    uint16_t p = a.allocate(1);
    ASSERT_GE(p, kEphemeralLo);
    ASSERT_LE(p, kEphemeralHi);
    count[static_cast<size_t>((p - kEphemeralLo) * bins / range)]++;
  }
  double chi = 0;
  for (int b = 0; b < bins; ++b) {
    double lo = std::ceil(b * range / bins), hi = std::ceil((b + 1) * range / bins);
    double expect = draws * (hi - lo) / range;
    chi += (count[static_cast<size_t>(b)] - expect) * (count[static_cast<size_t>(b)] - expect) / expect;
  }
  EXPECT_LT(chi, 74.92);  // chi-square, 49 dof, 1%
}

// --- Serial arithmetic -------------------------------------------------------

TEST(Serial, Basics) {
  EXPECT_TRUE(serial_lt(0, 1));
  EXPECT_FALSE(serial_lt(1, 0));
  EXPECT_TRUE(serial_lt(0xffffffffu, 0));
  EXPECT_FALSE(serial_lt(5, 5));
  EXPECT_TRUE(serial_le(5, 5));
}

TEST(Serial, HalfSpaceSplit) {
  Rng r(1);
  for (int t = 0; t < 64; ++t) {
    uint32_t x = static_cast<uint32_t>(r.next_u64());
    int ahead = 0;
    for (uint32_t k = 0; k < 65536; ++k)
      if (serial_lt(x, x + (k << 16))) ahead++;
    EXPECT_EQ(ahead, 32768);
    for (int i = 0; i < 2000; ++i) {
      uint32_t y = static_cast<uint32_t>(r.next_u64());
      ASSERT_NE(serial_lt(y, x), serial_lt(y, x + 0x80000000u)) << x << " " << y;
    }
  }
}

// --- Receive path ------------------------------------------------------------

TEST(Receive, OutOfWindowGetsOneDupAck) {
  TcpConnection c = make_conn();
  c.on_segment(data_seg(kIrs, "hello"), 0);
  AckRecord before = c.last_ack_sent();
  TcpOutput out = c.on_segment(data_seg(kIrs + 5 + (1u << 17), "zz"), 0);
  ASSERT_EQ(out.emit.size(), 1u);
  EXPECT_TRUE(out.dup_ack_sent);
  EXPECT_EQ(out.emit[0].ack, before.ack);
  EXPECT_EQ(out.emit[0].sack, before.sack);
  EXPECT_EQ(c.rcv_nxt(), kIrs + 5);
  EXPECT_EQ(c.counters().dup_acks_sent, 1u);
}

TEST(Receive, AckBoundaryAtSndNxt) {
  TcpConnection c = make_conn();
  c.app_send(Payload::from(std::string(1000, 'a')), 0);
  ASSERT_EQ(c.snd_nxt(), kIss + 1000);
  TcpOutput drop = c.on_segment(data_seg(kIrs, "x", kIss + 1001), 0);
  EXPECT_TRUE(drop.dropped);
  EXPECT_EQ(c.rcv_nxt(), kIrs);
  EXPECT_EQ(c.snd_una(), kIss);
  TcpOutput ok = c.on_segment(data_seg(kIrs, "x", kIss + 1000), 0);
  EXPECT_FALSE(ok.dropped);
  EXPECT_EQ(c.rcv_nxt(), kIrs + 1);
  EXPECT_EQ(c.snd_una(), kIss + 1000);
}

TEST(Receive, RstOnlyInsideWindow) {
  TcpConnection c = make_conn();
  Segment r = ack_seg(kIss);
  r.flags = kRst;
  r.seq = kIrs + 70000;
  EXPECT_FALSE(c.on_segment(r, 0).reset);
  EXPECT_FALSE(c.closed());
  r.seq = kIrs + 100;
  EXPECT_TRUE(c.on_segment(r, 0).reset);
  EXPECT_TRUE(c.closed());
}

TEST(Receive, OverlapsTakeLatestBytes) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    TcpConnection c = make_conn();
    const uint32_t span = 3000;
    std::string expect(span, '\0');
    std::vector<bool> written(span, false);
    int segs = 2 + static_cast<int>(rng.uniform_int(0, 8));
    for (int i = 0; i < segs; ++i) {
      uint32_t off = static_cast<uint32_t>(rng.uniform_int(1, span - 2));
      uint32_t len = static_cast<uint32_t>(rng.uniform_int(1, std::min<uint64_t>(600, span - off)));
      std::string bytes;
      for (uint32_t k = 0; k < len; ++k) bytes += static_cast<char>('A' + rng.uniform_int(0, 25));
      c.on_segment(data_seg(kIrs + off, bytes), 0);
      for (uint32_t k = 0; k < len; ++k) {
        expect[off + k] = bytes[k];
        written[off + k] = true;
      }
    }
    // Fill the hole at the front last; it delivers the contiguous prefix.
    uint32_t len0 = static_cast<uint32_t>(rng.uniform_int(1, 400));
    std::string head(len0, '0');
    c.on_segment(data_seg(kIrs, head), 0);
    for (uint32_t k = 0; k < len0; ++k) {
      expect[k] = '0';
      written[k] = true;
    }
    uint32_t prefix = 0;
    while (prefix < span && written[prefix]) prefix++;
    EXPECT_EQ(app_stream(c), expect.substr(0, prefix)) << "trial " << trial;
    EXPECT_EQ(c.rcv_nxt(), kIrs + prefix);
  }
}

TEST(Receive, ExactlyOneDupAckPerOutOfWindowSegment) {
  TcpConnection c = make_conn();
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    uint32_t off = static_cast<uint32_t>(rng.uniform_int(1u << 16, (1ull << 32) - 2000));
    TcpOutput out = c.on_segment(data_seg(kIrs + off, std::string(static_cast<size_t>(rng.uniform_int(0, 1000)), 'q')), 0);
    ASSERT_EQ(out.emit.size(), 1u);
    ASSERT_EQ(c.counters().dup_acks_sent, static_cast<uint64_t>(i + 1));
  }
  EXPECT_EQ(c.rcv_nxt(), kIrs);
}

TEST(Receive, FutureAcksNeverChangeState) {
  TcpConnection c = make_conn();
  c.app_send(Payload::from(std::string(20 * kMss, 'd')), 0);
  c.on_segment(data_seg(kIrs, "abc", kIss + kMss), 0);
  Rng rng(8);
  for (int i = 0; i < 300; ++i) {
    uint32_t before_una = c.snd_una(), before_nxt = c.snd_nxt(), before_rcv = c.rcv_nxt();
    double before_cwnd = c.cwnd();
    AckRecord before_ack = c.last_ack_sent();
    uint64_t before_sent = c.counters().segments_sent;
    uint32_t ahead = static_cast<uint32_t>(rng.uniform_int(1, 0x7fffffff));
    std::string body(static_cast<size_t>(rng.uniform_int(0, 100)), 'z');
    TcpOutput out = c.on_segment(data_seg(c.rcv_nxt(), body, c.snd_nxt() + ahead), 0);
    ASSERT_TRUE(out.dropped);
    ASSERT_TRUE(out.emit.empty());
    ASSERT_EQ(c.snd_una(), before_una);
    ASSERT_EQ(c.snd_nxt(), before_nxt);
    ASSERT_EQ(c.rcv_nxt(), before_rcv);
    ASSERT_EQ(c.cwnd(), before_cwnd);
    ASSERT_EQ(c.last_ack_sent(), before_ack);
    ASSERT_EQ(c.counters().segments_sent, before_sent);
  }
  EXPECT_EQ(c.counters().future_acks_dropped, 300u);
}

// --- Congestion control ------------------------------------------------------

TEST(Congestion, SlowStartGrowsOneMssPerAck) {
  TcpConfig cfg;
  cfg.init_cwnd_segments = 2;
  TcpConnection c = make_conn(cfg);
  EXPECT_EQ(c.cwnd(), 2.0 * kMss);
  c.on_ack_progress(kMss);
  EXPECT_EQ(c.cwnd(), 3.0 * kMss);
}

TEST(Congestion, AvoidanceGrowsAboutOneMssPerWindow) {
  TcpConfig cfg;
  cfg.init_ssthresh = 2 * kMss;
  TcpConnection c = make_conn(cfg);
  ASSERT_EQ(c.state(), CcState::congestion_avoidance);
  for (int i = 0; i < 10; ++i) c.on_ack_progress(kMss);
  EXPECT_NEAR(c.cwnd(), 11.0 * kMss, 0.1 * kMss);
}

TEST(Congestion, PerRoundTrajectoryMatchesClosedForm) {
  TcpConfig cfg;
  cfg.init_cwnd_segments = 1;
  cfg.init_ssthresh = 64 * kMss;
  cfg.rcv_wnd = 1u << 30;
  TcpConnection c = make_conn(cfg);
  // Acknowledge a full window per round, mss at a time: doubling up to ssthresh.
  for (int round = 0; round < 6; ++round) {
    int acks = static_cast<int>(c.cwnd() / kMss);
    for (int i = 0; i < acks; ++i) c.on_ack_progress(kMss);
    EXPECT_EQ(c.cwnd(), std::pow(2.0, round + 1) * kMss) << "round " << round;
  }
  // Past ssthresh: linear growth, roughly one segment per round.
  EXPECT_EQ(c.state(), CcState::congestion_avoidance);
  double w = c.cwnd();
  int acks = static_cast<int>(w / kMss);
  for (int i = 0; i < acks; ++i) c.on_ack_progress(kMss);
  EXPECT_NEAR(c.cwnd(), w + kMss, 0.05 * kMss);
}

namespace {

// Connection with 10 full segments in flight.
TcpConnection loaded(TcpConfig cfg) {
  TcpConnection c = make_conn(cfg);
  c.app_send(Payload::from(std::string(20 * kMss, 'p')), 0);
  return c;
}

}  // namespace

TEST(DupAck, ThreeHalveTheWindow) {
  TcpConnection c = loaded({});
  double w = c.cwnd();
  c.on_segment(ack_seg(kIss), 0);
  c.on_segment(ack_seg(kIss), 0);
  TcpOutput out = c.on_segment(ack_seg(kIss), 0);
  EXPECT_TRUE(out.loss_event);
  EXPECT_EQ(c.cwnd(), w / 2);
  EXPECT_EQ(c.ssthresh(), static_cast<uint32_t>(w / 2));
}

TEST(DupAck, IdenticalSackTripletCollapses) {
  TcpConfig cfg;
  cfg.sack_dupack_collapse = true;
  TcpConnection c = loaded(cfg);
  double w = c.cwnd();
  std::vector<SackBlock> sack{{kIss + 2 * kMss, kIss + 3 * kMss}};
  for (int i = 0; i < 3; ++i) c.on_segment(ack_seg(kIss, sack), 0);
  EXPECT_EQ(c.dup_ack_count(), 1);
  EXPECT_EQ(c.cwnd(), w);
  EXPECT_EQ(c.counters().loss_events, 0u);
}

TEST(DupAck, ValidationIgnoresEmptyFlight) {
  TcpConfig cfg;
  cfg.inflight_validation = true;
  TcpConnection c = make_conn(cfg);
  double w = c.cwnd();
  for (int i = 0; i < 3; ++i) c.on_segment(ack_seg(kIss), 0);
  EXPECT_EQ(c.cwnd(), w);
  EXPECT_EQ(c.counters().loss_events, 0u);
}

TEST(DupAck, ValidationStillReactsToRealLoss) {
  TcpConfig cfg;
  cfg.inflight_validation = true;
  TcpConnection c = loaded(cfg);
  for (int i = 0; i < 3; ++i) c.on_segment(ack_seg(kIss), 0);
  EXPECT_EQ(c.counters().loss_events, 1u);
}

namespace {

struct Step {
  uint32_t ack;
  std::vector<SackBlock> sack;
  bool injected;
};

std::vector<double> trajectory(const std::vector<Step>& trace, bool collapse, bool keep_injected) {
  TcpConfig cfg;
  cfg.sack_dupack_collapse = collapse;
  cfg.rcv_wnd = 1u << 30;
  TcpConnection c = make_conn(cfg);
  c.app_send(Payload::from(std::string(400 * kMss, 'v')), 0);
  std::vector<double> out;
  SimTime t = 0;
  for (const Step& s : trace) {
    if (s.injected && !keep_injected) continue;
    c.on_segment(ack_seg(s.ack, s.sack), t += 1000);
    if (!s.injected) out.push_back(c.cwnd());
  }
  return out;
}

// Genuine ACK stream with occasional real loss signals, interleaved with
// attacker triplets copying the last genuine ACK.
std::vector<Step> random_trace(uint64_t seed) {
  Rng rng(seed);
  std::vector<Step> trace;
  uint32_t ack = kIss;
  std::vector<SackBlock> sack;
  for (int i = 0; i < 150; ++i) {
    uint64_t roll = rng.uniform_int(0, 9);
    if (roll < 6) {
      ack += kMss * static_cast<uint32_t>(rng.uniform_int(1, 2));
      sack.clear();
      trace.push_back({ack, sack, false});
    } else if (roll < 8) {
      // Real dup-acks: each reports a new out-of-order segment.
      for (int k = 1; k <= 3; ++k) {
        sack = {{ack + kMss, ack + kMss * static_cast<uint32_t>(1 + k)}};
        trace.push_back({ack, sack, false});
      }
    } else if (!trace.empty()) {
      for (int k = 0; k < 3; ++k) trace.push_back({ack, sack, true});
    }
  }
  return trace;
}

}  // namespace

TEST(DupAck, CollapseMakesInjectedTripletsInvisible) {
  for (uint64_t seed = 1; seed <= 25; ++seed) {
    auto trace = random_trace(seed);
    EXPECT_EQ(trajectory(trace, true, true), trajectory(trace, true, false)) << "seed " << seed;
  }
  // Without the defense the triplets do change the trajectory.
  int differ = 0;
  for (uint64_t seed = 1; seed <= 25; ++seed) {
    auto trace = random_trace(seed);
    differ += trajectory(trace, false, true) != trajectory(trace, false, false);
  }
  EXPECT_GT(differ, 0);
}

TEST(DupAck, TrajectoryDeterministic) {
  auto trace = random_trace(77);
  EXPECT_EQ(trajectory(trace, false, true), trajectory(trace, false, true));
}

// --- Send path ---------------------------------------------------------------

TEST(Send, WindowLimitsSegmentsOnWire) {
  TcpConfig cfg;
  cfg.init_cwnd_segments = 2;
  TcpConnection c = make_conn(cfg);
  TcpOutput out = c.app_send(Payload::from(std::string(10 * kMss, 'w')), 0);
  EXPECT_EQ(out.emit.size(), 2u);
  EXPECT_EQ(c.snd_nxt(), kIss + 2 * kMss);
}

TEST(Send, QuotaCapsBytesOverTime) {
  TcpConfig cfg;
  cfg.per_conn_quota = 1e6 / 8;  // 1 Mbps
  TcpConnection c = make_conn(cfg);
  uint64_t sent = 0;
  auto account = [&](const TcpOutput& o) {
    for (const Segment& s : o.emit) sent += s.payload.len;
  };
  account(c.app_send_bulk(100'000'000, 0));
  SimTime now = 0;
  while (now < 10 * kSec) {
    // The peer acknowledges everything at once.
    account(c.on_segment(ack_seg(c.snd_nxt()), now));
    SimTime t = c.next_timer();
    now = t == kNever ? now + kMsec : std::max(now + 1, t);
    if (now > 10 * kSec) break;
    account(c.on_timer(now));
  }
  EXPECT_LE(sent, 1'250'000u);
  EXPECT_GT(sent, 1'150'000u);
}

TEST(Send, VerificationCatchesOptimisticAck) {
  TcpConfig cfg;
  cfg.verify_every = 3;
  TcpConnection c = make_conn(cfg);
  c.app_send_bulk(100 * kMss, 0);
  // Everything sent so far, including the withheld segment, acknowledged at once.
  TcpOutput out = c.on_segment(ack_seg(c.snd_nxt()), 0);
  EXPECT_TRUE(out.optack_detected);
  EXPECT_TRUE(c.closed());
}

// --- Hosts end to end --------------------------------------------------------

namespace {

struct Line {
  Simulator sim;
  Network net{sim};
  NodeId a, b;
  std::unique_ptr<TcpHost> ha, hb;

  Line(uint64_t seed, double mbps, SimTime one_way, TcpConfig cfg = {}) : sim(seed) {
    a = net.add_node("a");
    b = net.add_node("b");
    LinkParams p;
    p.capacity_bps = mbps * 1e6;
    p.prop_delay = one_way;
    p.queue_limit = 10000;
    net.add_duplex(a, b, p);
    net.compute_routes();
    ha = std::make_unique<TcpHost>(net, a, cfg);
    hb = std::make_unique<TcpHost>(net, b, cfg);
  }
};

}  // namespace

TEST(EndToEnd, ByteStreamArrivesIntact) {
  Line w(3, 20, 5 * kMsec);
  std::string sent;
  Rng rng(5);
  for (int i = 0; i < 300000; ++i) sent += static_cast<char>(rng.uniform_int(0, 255));
  w.hb->listen(8080, [&](TcpHost::ConnId id) {
    for (size_t off = 0; off < sent.size(); off += 7000)
      w.hb->send(id, Payload::from(sent.substr(off, 7000)));
  });
  std::string got;
  w.ha->connect(w.b, 8080, [&](TcpHost::ConnId id, bool ok) {
    ASSERT_TRUE(ok);
    TcpHost::Callbacks cb;
    cb.on_data = [&](TcpHost::ConnId x) {
      TcpConnection* c = w.ha->get(x);
      for (const Payload& p : c->app_rx()) got += std::string(p.view());
      w.ha->consume(x, c->app_rx_bytes());
    };
    w.ha->set_callbacks(id, cb);
  });
  w.sim.run_until(30 * kSec);
  EXPECT_EQ(got.size(), sent.size());
  EXPECT_EQ(fnv1a(got), fnv1a(sent));
}

TEST(EndToEnd, TransferTimeMatchesRoundModel) {
  const double mbps = 100;
  const SimTime one_way = 25 * kMsec;
  const uint64_t bytes = 1'000'000;
  Line w(1, mbps, one_way);
  SimTime t0 = -1, t1 = -1;
  w.hb->listen(9000, [&](TcpHost::ConnId id) {
    t0 = w.sim.now();
    w.hb->send_bulk(id, bytes);
  });
  uint64_t got = 0;
  w.ha->connect(w.b, 9000, [&](TcpHost::ConnId id, bool) {
    TcpHost::Callbacks cb;
    cb.on_data = [&](TcpHost::ConnId x) {
      uint64_t n = w.ha->get(x)->app_rx_bytes();
      w.ha->consume(x, n);
      got += n;
      if (got >= bytes && t1 < 0) t1 = w.sim.now();
    };
    w.ha->set_callbacks(id, cb);
  });
  w.sim.run_until(60 * kSec);
  ASSERT_GE(t1, 0);

  // Rounds of one RTT: IW10 doubling to ssthresh, then +1 mss, capped by the
  // receive window; the last round costs a one-way trip plus serialization.
  TcpConfig cfg;
  double rtt = 2.0 * one_way / 1e6;
  double window = cfg.init_cwnd_segments * double(kMss), left = double(bytes), t = 0;
  while (true) {
    double burst = std::min({window, left, double(cfg.rcv_wnd)});
    left -= burst;
    double ser = burst * (1500.0 / kMss) * 8 / (mbps * 1e6);
    if (left <= 0) {
      t += rtt / 2 + ser;
      break;
    }
    t += std::max(rtt, ser);
    window = window < cfg.init_ssthresh ? 2 * window : window + kMss;
  }
  double measured = double(t1 - t0) / 1e6;
  EXPECT_NEAR(measured, t, 0.1 * t) << "measured " << measured << " model " << t;
}
