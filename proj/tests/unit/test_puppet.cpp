#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <string>

#include "offpath/puppet.hpp"
#include "offpath/testbed.hpp"

using namespace offpath;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Strips comments so the scan only sees declarations.
std::string code_only(const std::string& src) {
  std::string out;
  std::istringstream in(src);
  std::string line;
  while (std::getline(in, line)) {
    size_t c = line.find("//");
    out += line.substr(0, c) + "\n";
  }
  return out;
}

WorldConfig quiet_world() {
  WorldConfig wc;
  wc.seed = 11;
  wc.topo = port_topology();
  return wc;
}

}  // namespace

TEST(PuppetBarrier, ApiExposesNoTransportIdentifiers) {
  std::string hdr = code_only(slurp(std::string(OFFPATH_SOURCE_DIR) + "/include/offpath/puppet.hpp"));
  ASSERT_FALSE(hdr.empty());
  std::regex banned(R"(\b(\w*_)?(port|seq|ack|tuple)\w*)", std::regex::icase);
  std::vector<std::string> hits;
  for (std::sregex_iterator it(hdr.begin(), hdr.end(), banned), end; it != end; ++it) hits.push_back(it->str());
  EXPECT_TRUE(hits.empty()) << "first hit: " << hits.front();
  // Only the simulator core is included: no TCP, host or browser internals.
  EXPECT_EQ(hdr.find("tcp.hpp"), std::string::npos);
  EXPECT_EQ(hdr.find("host.hpp"), std::string::npos);
  EXPECT_EQ(hdr.find("web.hpp"), std::string::npos);
}

TEST(PuppetBarrier, AttackSourcesDoNotTouchGroundTruth) {
  std::string src = code_only(slurp(std::string(OFFPATH_SOURCE_DIR) + "/src/injection.cpp"));
  ASSERT_FALSE(src.empty());
  for (const char* banned : {"client_conn", "server_conn", "client_ports", "TcpHost", "World"})
    EXPECT_EQ(src.find(banned), std::string::npos) << banned;
}

TEST(Channel, DeliversAfterConfiguredDelay) {
  Simulator sim(1);
  Channel ch(sim, 7 * kMsec);
  SimTime at_attacker = -1, at_puppet = -1;
  ch.attacker_rx = [&](const Message& m) {
    EXPECT_EQ(m.kind, "HI");
    at_attacker = sim.now();
  };
  ch.puppet_rx = [&](const Message&) { at_puppet = sim.now(); };
  ch.to_attacker({"HI", {1, 2}, ""});
  sim.after(kMsec, [&] { ch.to_puppet({"YO", {}, ""}); });
  sim.run();
  EXPECT_EQ(at_attacker, 7 * kMsec);
  EXPECT_EQ(at_puppet, 8 * kMsec);
  EXPECT_EQ(ch.messages(), 2u);
}

TEST(PuppetApi, OpensDistinctAliasesOfTarget) {
  World w(quiet_world());
  int opened = -1;
  auto names = w.puppet().open_connections(5, [&](int n) { opened = n; });
  w.sim().run_until(2 * kSec);
  EXPECT_EQ(opened, 5);
  EXPECT_EQ(names.size(), 5u);
  std::set<std::string> uniq(names.begin(), names.end());
  EXPECT_EQ(uniq.size(), 5u);
  EXPECT_EQ(w.server().connection_count(), 5u);
}

TEST(PuppetApi, TimesAreQuantized) {
  WorldConfig wc = quiet_world();
  wc.timer_granularity = 5 * kMsec;
  World w(wc);
  auto names = w.puppet().open_connections(1, nullptr);
  w.sim().run_until(1 * kSec);
  PuppetResponse got;
  w.puppet().request(names[0], "/big", [&](const PuppetResponse& r) { got = r; });
  w.sim().run_until(5 * kSec);
  ASSERT_TRUE(got.ok);
  EXPECT_GT(got.elapsed, 0);
  EXPECT_EQ(got.elapsed % (5 * kMsec), 0);
  EXPECT_EQ(got.size, wc.big_object);
  EXPECT_EQ(w.puppet().now() % (5 * kMsec), 0);
}

TEST(PuppetApi, InjectedIdleBytesNeverVisible) {
  World w(quiet_world());
  auto names = w.puppet().open_connections(1, nullptr);
  w.sim().run_until(1 * kSec);
  TcpConnection* c = w.client().get(w.browser().conn_of(names[0]));
  ASSERT_NE(c, nullptr);
  // In-window bytes spoofed from the server while nothing is pending.
  Segment seg;
  seg.src_port = kHttpPort;
  seg.dst_port = c->tuple().local_port;
  seg.seq = c->rcv_nxt();
  seg.ack = c->snd_nxt();
  seg.flags = kAck;
  seg.payload = Payload::from("SECRET-LEAK");
  w.attacker().spoof(w.node("server"), w.node("client"), seg);
  w.sim().run_until(2 * kSec);
  EXPECT_EQ(w.browser().flushed_bytes(), 11u);

  // The stream is now shifted by 11 bytes; whatever the page gets next, the
  // flushed bytes are not part of it.
  PuppetResponse got;
  bool answered = false;
  w.puppet().request(names[0], "/missing", [&](const PuppetResponse& r) {
    got = r;
    answered = true;
  });
  w.sim().run_until(10 * kSec);
  if (answered) EXPECT_EQ(got.body.find("SECRET"), std::string::npos);
}
