#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "offpath/web.hpp"

using namespace offpath;

namespace {

// Client and server joined by one duplex link.
struct Rig {
  Simulator sim;
  Network net{sim};
  NodeId c, s;
  LinkParams lp;
  std::unique_ptr<TcpHost> ch, sh;
  std::unique_ptr<Browser> browser;

  explicit Rig(BrowserConfig bc = {}, double mbps = 100, SimTime one_way = 25 * kMsec, uint64_t seed = 1)
      : sim(seed) {
    c = net.add_node("client");
    s = net.add_node("server");
    lp.capacity_bps = mbps * 1e6;
    lp.prop_delay = one_way;
    net.add_duplex(c, s, lp);
    net.compute_routes();
    ch = std::make_unique<TcpHost>(net, c, TcpConfig{});
    sh = std::make_unique<TcpHost>(net, s, TcpConfig{});
    browser = std::make_unique<Browser>(*ch, bc);
  }

  std::vector<std::string> hosts(int n, int from = 0) {
    std::vector<std::string> out;
    for (int i = from; i < from + n; ++i) {
      out.push_back("h" + std::to_string(i) + ".test");
      browser->set_dns(out.back(), s);
    }
    return out;
  }

  uint16_t port_of(const std::string& h) {
    TcpConnection* conn = ch->get(browser->conn_of(h));
    return conn ? conn->tuple().local_port : 0;
  }
};

ServerConfig objects() {
  ServerConfig sc;
  sc.objects["/a"] = 1000;
  sc.objects["/b"] = 3000;
  sc.not_found_body_size = 200;
  return sc;
}

// Server that answers every request with fixed bytes, no HTTP framing.
struct RawServer {
  std::string reply;
  std::vector<TcpHost::ConnId> conns;
  int resets = 0;

  RawServer(TcpHost& h, std::string r) : reply(std::move(r)) {
    h.listen(kHttpPort, [this, &h](TcpHost::ConnId id) {
      conns.push_back(id);
      TcpHost::Callbacks cb;
      cb.on_data = [this, &h](TcpHost::ConnId x) {
        TcpConnection* c = h.get(x);
        c->consume_rx(c->app_rx_bytes());
        if (!reply.empty()) h.send(x, Payload::from(reply));
      };
      cb.on_reset = [this](TcpHost::ConnId) { resets++; };
      h.set_callbacks(id, cb);
    });
  }
};

}  // namespace

TEST(HttpFormat, HeaderRoundTrip) {
  std::string h = http_header(404, 200);
  EXPECT_EQ(h.size(), kHttpHeaderSize);
  int status = 0;
  uint64_t len = 0;
  EXPECT_EQ(check_header(h, &status, &len), HeaderCheck::valid);
  EXPECT_EQ(status, 404);
  EXPECT_EQ(len, 200u);
  EXPECT_EQ(check_header(h.substr(0, 20), nullptr, nullptr), HeaderCheck::incomplete);
  EXPECT_EQ(check_header("GARBAGE123", nullptr, nullptr), HeaderCheck::invalid);
  EXPECT_EQ(not_found_body(200).size(), 200u);
}

TEST(Browser, NotFoundBodySize) {
  Rig r;
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(1);
  HttpResponse got;
  r.browser->request(h[0], "/missing", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(5 * kSec);
  ASSERT_TRUE(got.ok);
  EXPECT_EQ(got.status, 404);
  EXPECT_EQ(got.body_size, 200u);
  EXPECT_EQ(got.body, not_found_body(200));
}

TEST(Browser, PipelinedResponsesInRequestOrder) {
  Rig r;
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(1);
  std::vector<std::pair<std::string, uint64_t>> order;
  bool opened = false;
  r.browser->open(h[0], [&](bool ok) { opened = ok; });
  r.sim.run_until(1 * kSec);
  ASSERT_TRUE(opened);
  for (const char* p : {"/b", "/a", "/nope", "/a", "/b"})
    r.browser->request(h[0], p, [&, p](const HttpResponse& x) { order.push_back({p, x.body_size}); });
  EXPECT_EQ(r.browser->pending(h[0]), 5u);
  r.sim.run_until(5 * kSec);
  ASSERT_EQ(order.size(), 5u);
  std::vector<std::pair<std::string, uint64_t>> expect{{"/b", 3000}, {"/a", 1000}, {"/nope", 200}, {"/a", 1000}, {"/b", 3000}};
  EXPECT_EQ(order, expect);
  EXPECT_EQ(r.browser->pending(h[0]), 0u);
}

TEST(Browser, UnparseableBytesWrappedAsResponse) {
  Rig r;
  RawServer srv(*r.sh, "GARBAGE123");
  auto h = r.hosts(1);
  HttpResponse got;
  r.browser->request(h[0], "/x", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(5 * kSec);
  ASSERT_TRUE(got.ok);
  EXPECT_TRUE(got.wrapped);
  EXPECT_EQ(got.status, 200);
  EXPECT_EQ(got.body, "GARBAGE123");
  EXPECT_TRUE(r.browser->has_connection(h[0]));
}

TEST(Browser, UnparseableBytesResetUnderDefense) {
  BrowserConfig bc;
  bc.policy = ParsePolicy::reset_connection;
  Rig r(bc);
  RawServer srv(*r.sh, "GARBAGE123");
  auto h = r.hosts(1);
  HttpResponse got;
  bool called = false;
  r.browser->request(h[0], "/x", [&](const HttpResponse& x) {
    got = x;
    called = true;
  });
  r.sim.run_until(5 * kSec);
  ASSERT_TRUE(called);
  EXPECT_FALSE(got.ok);
  EXPECT_TRUE(got.body.empty());
  EXPECT_FALSE(r.browser->has_connection(h[0]));
  EXPECT_EQ(srv.resets, 1);
}

TEST(Browser, EmptyBufferProducesNothing) {
  Rig r;
  RawServer srv(*r.sh, "");
  auto h = r.hosts(1);
  bool called = false;
  r.browser->request(h[0], "/x", [&](const HttpResponse&) { called = true; });
  r.sim.run_until(5 * kSec);
  EXPECT_FALSE(called);
  EXPECT_EQ(r.browser->pending(h[0]), 1u);
}

TEST(Browser, IdleBytesAreFlushed) {
  Rig r;
  auto h = r.hosts(1);
  // Answers each request with a response followed by stray bytes.
  RawServer srv(*r.sh, http_header(200, 4) + "BODYstray-bytes");
  std::vector<HttpResponse> got;
  r.browser->request(h[0], "/x", [&](const HttpResponse& x) { got.push_back(x); });
  r.sim.run_until(2 * kSec);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].body, "BODY");
  EXPECT_EQ(r.browser->flushed_bytes(), std::string("stray-bytes").size());
  // The next response parses cleanly: the stray bytes never reached the page.
  r.browser->request(h[0], "/y", [&](const HttpResponse& x) { got.push_back(x); });
  r.sim.run_until(4 * kSec);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_FALSE(got[1].wrapped);
  EXPECT_EQ(got[1].body, "BODY");
}

TEST(Browser, SameAddressDistinctEntries) {
  Rig r;
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(3);
  for (auto& x : h) r.browser->open(x, nullptr);
  r.sim.run_until(1 * kSec);
  EXPECT_EQ(r.browser->pool_size(), 3u);
  EXPECT_EQ(r.sh->connection_count(), 3u);
}

TEST(Browser, ConsecutivePortsAndLruEviction) {
  Rig r;
  ServerApp app(*r.sh, objects());
  auto first = r.hosts(32);
  for (auto& x : first) r.browser->open(x, nullptr);
  r.sim.run_until(1 * kSec);
  ASSERT_EQ(r.browser->pool_size(), 32u);
  auto next_port = [](uint16_t p) { return p == kEphemeralHi ? kEphemeralLo : static_cast<uint16_t>(p + 1); };
  uint16_t p0 = r.port_of(first[0]);
  for (int i = 1; i < 32; ++i) EXPECT_EQ(r.port_of(first[i]), next_port(r.port_of(first[i - 1])));

  auto second = r.hosts(32, 32);
  for (auto& x : second) r.browser->open(x, nullptr);
  r.sim.run_until(2 * kSec);
  EXPECT_EQ(r.browser->pool_size(), 32u);
  for (auto& x : first) EXPECT_FALSE(r.browser->has_connection(x));
  uint16_t expect = p0;
  for (int i = 0; i < 32; ++i) expect = next_port(expect);
  for (int i = 0; i < 32; ++i) {
    EXPECT_EQ(r.port_of(second[i]), expect);
    expect = next_port(expect);
  }
  EXPECT_EQ(r.ch->connection_count(), 32u);
}

TEST(Browser, SingleConnection) {
  Rig r;
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(1);
  r.browser->open(h[0], nullptr);
  r.sim.run_until(1 * kSec);
  EXPECT_EQ(r.browser->pool_size(), 1u);
  EXPECT_EQ(r.ch->connection_count(), 1u);
}

TEST(Browser, EvictionPrefersLeastRecentlyUsed) {
  BrowserConfig bc;
  bc.max_connections = 3;
  Rig r(bc);
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(4);
  for (int i = 0; i < 3; ++i) r.browser->open(h[i], nullptr);
  r.sim.run_until(1 * kSec);
  r.browser->request(h[0], "/a", nullptr);  // h1 is now the oldest
  r.sim.run_until(2 * kSec);
  r.browser->open(h[3], nullptr);
  r.sim.run_until(3 * kSec);
  EXPECT_TRUE(r.browser->has_connection(h[0]));
  EXPECT_FALSE(r.browser->has_connection(h[1]));
  EXPECT_TRUE(r.browser->has_connection(h[2]));
  EXPECT_TRUE(r.browser->has_connection(h[3]));
}

TEST(Browser, ResponseLatencyMatchesPathModel) {
  const double mbps = 100;
  const SimTime one_way = 25 * kMsec;
  Rig r({}, mbps, one_way);
  ServerApp app(*r.sh, objects());
  auto h = r.hosts(1);
  r.browser->open(h[0], nullptr);
  r.sim.run_until(1 * kSec);
  HttpResponse got;
  r.browser->request(h[0], "/a", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(2 * kSec);
  ASSERT_TRUE(got.ok);
  // Request out, response back: two propagation delays plus serialization of
  // both packets (40 B of headers each).
  double req = 40 + http_request(h[0], "/a").size();
  double resp = 40 + kHttpHeaderSize + 1000;
  double model = 2.0 * one_way + (req + resp) * 8e6 / (mbps * 1e6);
  double measured = static_cast<double>(got.completed - got.issued);
  EXPECT_NEAR(measured, model, 0.01 * model);
}

TEST(Server, NonPersistentClosesAfterResponse) {
  Rig r;
  ServerConfig sc = objects();
  sc.persistent = false;
  ServerApp app(*r.sh, sc);
  auto h = r.hosts(1);
  HttpResponse got;
  r.browser->request(h[0], "/a", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(5 * kSec);
  EXPECT_TRUE(got.ok);
  EXPECT_EQ(r.sh->connection_count(), 0u);
  EXPECT_EQ(app.response_size("/a"), kHttpHeaderSize + 1000);
}

TEST(Server, TlsRejectsUnkeyedBytes) {
  BrowserConfig bc;
  bc.tls = true;
  Rig r(bc);
  RawServer srv(*r.sh, http_header(200, 3) + "abc");
  auto h = r.hosts(1);
  HttpResponse got;
  r.browser->request(h[0], "/x", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(5 * kSec);
  EXPECT_FALSE(got.ok);
  EXPECT_TRUE(got.integrity_failure);
}

TEST(Server, TlsSessionWorksEndToEnd) {
  BrowserConfig bc;
  bc.tls = true;
  Rig r(bc);
  ServerConfig sc = objects();
  sc.tls = true;
  ServerApp app(*r.sh, sc);
  auto h = r.hosts(1);
  HttpResponse got;
  r.browser->request(h[0], "/b", [&](const HttpResponse& x) { got = x; });
  r.sim.run_until(5 * kSec);
  EXPECT_TRUE(got.ok);
  EXPECT_EQ(got.body_size, 3000u);
}
