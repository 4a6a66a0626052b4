#include "offpath/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace offpath::harness {

ConfigError::ConfigError(const std::string& where, int l, const std::string& msg)
    : std::runtime_error(where + ":" + std::to_string(l) + ": " + msg), line(l) {}

const char* to_string(Attack a) {
  switch (a) {
    case Attack::port_derand:
      return "port_derand";
    case Attack::server_seq:
      return "server_seq";
    case Attack::client_seq:
      return "client_seq";
    case Attack::full_pipeline:
      return "full_pipeline";
    case Attack::opt_ack:
      return "opt_ack";
    case Attack::ack_storm:
      return "ack_storm";
    case Attack::degradation:
      return "degradation";
    case Attack::coremelt:
      return "coremelt";
  }
  return "?";
}

std::optional<Attack> parse_attack(const std::string& s) {
  for (Attack a : {Attack::port_derand, Attack::server_seq, Attack::client_seq, Attack::full_pipeline,
                   Attack::opt_ack, Attack::ack_storm, Attack::degradation, Attack::coremelt})
    if (s == to_string(a)) return a;
  return std::nullopt;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::blocked:
      return "blocked";
    case Verdict::degraded:
      return "degraded";
    case Verdict::unaffected:
      return "unaffected";
  }
  return "?";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// --- Scenario parsing --------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (...) {
  }
  throw ConfigError("bad number '" + v + "' for " + key);
}

double non_negative(const std::string& v, const std::string& key) {
  double d = to_double(v, key);
  if (d < 0) throw ConfigError(key + " must be >= 0");
  return d;
}

uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      unsigned long long x = std::stoull(v, &used, 0);
      if (used == v.size()) return x;
    }
  } catch (...) {
  }
  throw ConfigError("bad unsigned integer '" + v + "' for " + key);
}

int to_int(const std::string& v, const std::string& key, int lo) {
  uint64_t x = to_u64(v, key);
  if (x < static_cast<uint64_t>(lo) || x > 1'000'000'000ull) throw ConfigError(key + " out of range");
  return static_cast<int>(x);
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected on/off for " + key + ", got '" + v + "'");
}

SimTime seconds(const std::string& v, const std::string& key) {
  return static_cast<SimTime>(std::llround(non_negative(v, key) * kSec));
}

SimTime millis(const std::string& v, const std::string& key) {
  return static_cast<SimTime>(std::llround(non_negative(v, key) * kMsec));
}

std::string join_path(const std::string& dir, const std::string& p) {
  if (p.empty() || p[0] == '/' || dir.empty() || dir == ".") return p;
  return dir + "/" + p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void apply_link(Scenario& s, const std::string& v) {
  // a b mbps delay_ms [jitter_ms [loss [queue]]]
  auto w = words(v);
  if (w.size() < 4 || w.size() > 7) throw ConfigError("link expects 'a b mbps delay_ms [jitter_ms [loss [queue]]]'");
  TopologySpec& t = s.world.topo;
  for (int i = 0; i < 2; ++i)
    if (!t.has_node(w[static_cast<size_t>(i)])) throw ConfigError("link references undefined node '" + w[static_cast<size_t>(i)] + "'");
  if (w[0] == w[1]) throw ConfigError("link endpoints must differ");
  LinkSpec l{w[0], w[1], non_negative(w[2], "link mbps"), millis(w[3], "link delay"), 0, 0, 1000};
  if (l.mbps <= 0) throw ConfigError("link mbps must be > 0");
  if (w.size() > 4) l.jitter = millis(w[4], "link jitter");
  if (w.size() > 5) {
    l.loss = non_negative(w[5], "link loss");
    if (l.loss > 1) throw ConfigError("link loss must be <= 1");
  }
  if (w.size() > 6) l.queue = static_cast<uint32_t>(to_int(w[6], "link queue", 1));
  if (LinkSpec* old = t.find(l.a, l.b))
    *old = l;
  else
    t.links.push_back(l);
}

void set_loss(Scenario& s, double loss) {
  LinkSpec* l = s.world.topo.find("attacker", "router");
  if (!l) throw ConfigError("loss needs an attacker-router link");
  if (loss > 1) throw ConfigError("loss must be <= 1");
  l->loss = loss;
}

}  // namespace

Scenario preset(const std::string& name, uint64_t seed) {
  Scenario s;
  s.seed = seed;
  s.preset = name;
  s.world.seed = seed;
  if (name == "port" || name == "port-budget") {
    s.world.topo = port_topology(0);
    s.attack = Attack::port_derand;
  } else if (name == "fig7") {
    s.world.topo = fig7_topology();
    s.attack = Attack::opt_ack;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  s.name = name;
  return s;
}

void apply_override(Scenario& s, const std::string& key, const std::string& v) {
  Defenses& d = s.world.defenses;
  if (key == "name") {
    if (v.empty()) throw ConfigError("name must not be empty");
    s.name = v;
  } else if (key == "preset") {
    std::string keep = s.name;
    bool named = s.name != "scenario";
    Scenario p = preset(v, s.seed);
    p.repeat = s.repeat;
    if (named) p.name = keep;
    s = p;
  } else if (key == "attack") {
    auto a = parse_attack(v);
    if (!a) throw ConfigError("unknown attack '" + v + "'");
    s.attack = *a;
  } else if (key == "seed") {
    s.seed = to_u64(v, key);
    s.world.seed = s.seed;
  } else if (key == "repeat") {
    s.repeat = to_int(v, key, 1);
  } else if (key == "duration_s") {
    s.duration = seconds(v, key);
  } else if (key == "node") {
    if (v.empty() || words(v).size() != 1) throw ConfigError("node expects one name");
    if (!s.world.topo.has_node(v)) s.world.topo.nodes.push_back(v);
  } else if (key == "link") {
    apply_link(s, v);
  } else if (key == "loss") {
    set_loss(s, non_negative(v, key));
  } else if (key == "puppet_n") {
    s.puppet_n = to_int(v, key, 2);
  } else if (key == "timing") {
    if (v == "window")
      s.timing = ProbeTiming::window;
    else if (v == "early")
      s.timing = ProbeTiming::early;
    else
      throw ConfigError("timing is window or early");
  } else if (key == "retries") {
    s.retries = to_int(v, key, 0);
  } else if (key == "big_object") {
    s.world.big_object = to_u64(v, key);
  } else if (key == "not_found_size") {
    s.world.not_found_size = static_cast<uint32_t>(to_int(v, key, 0));
  } else if (key == "channel_delay_ms") {
    s.world.channel_delay = millis(v, key);
  } else if (key == "sack_collapse") {
    d.sack_collapse = to_bool(v, key);
  } else if (key == "inflight_validation") {
    d.inflight_validation = to_bool(v, key);
  } else if (key == "port_algorithm") {
    if (v == "simple_hash_based")
      d.port_algorithm = PortAlgorithm::simple_hash_based;
    else if (v == "fully_random")
      d.port_algorithm = PortAlgorithm::fully_random;
    else if (v == "constant")
      d.port_algorithm = PortAlgorithm::constant;
    else
      throw ConfigError("port_algorithm is simple_hash_based, fully_random or constant");
  } else if (key == "browser_reset") {
    d.browser_reset = to_bool(v, key);
  } else if (key == "server_quota_mbps") {
    d.server_quota_bps = non_negative(v, key) * 1e6;
  } else if (key == "tls") {
    d.tls = to_bool(v, key);
  } else if (key == "server_verify_every") {
    d.server_verify_every = static_cast<uint32_t>(to_int(v, key, 0));
  } else if (key == "opt_ack_interval_us") {
    s.opt_ack.interval = static_cast<SimTime>(to_int(v, key, 1));
  } else if (key == "opt_ack_stride") {
    s.opt_ack.stride = static_cast<uint32_t>(to_int(v, key, 1));
  } else if (key == "ack_storm_interval_ms") {
    s.ack_storm.interval = millis(v, key);
    if (s.ack_storm.interval <= 0) throw ConfigError("ack_storm_interval_ms must be > 0");
  } else if (key == "ack_storm_seedings") {
    s.ack_storm.max_seedings = to_int(v, key, 0);
  } else if (key == "degradation_attack") {
    if (v == "none")
      s.degradation.attack = DegradationAttack::none;
    else if (v == "opt_ack")
      s.degradation.attack = DegradationAttack::opt_ack;
    else if (v == "ack_storm")
      s.degradation.attack = DegradationAttack::ack_storm;
    else
      throw ConfigError("degradation_attack is none, opt_ack or ack_storm");
  } else if (key == "probe_sender") {
    s.degradation.sender = v;
  } else if (key == "probe_receiver") {
    s.degradation.receiver = v;
  } else if (key == "transfer_bytes") {
    s.degradation.transfer = to_u64(v, key);
    if (s.degradation.transfer == 0) throw ConfigError("transfer_bytes must be > 0");
  } else if (key == "warmup_s") {
    s.degradation.warmup = seconds(v, key);
  } else if (key == "cm_topology") {
    s.cm_topology = v;
  } else if (key == "cm_routes") {
    s.cm_routes = v;
  } else if (key == "cm_resources") {
    s.cm_resources = v;
  } else if (key == "cm_shortest_routes") {
    s.cm_shortest_routes = to_bool(v, key);
  } else if (key == "cm_simulate") {
    s.cm_simulate = to_bool(v, key);
  } else if (key == "cm_duration_s") {
    s.cm_sim.duration = seconds(v, key);
  } else if (key == "cm_queue") {
    s.cm_sim.queue = static_cast<uint32_t>(to_int(v, key, 1));
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

Scenario parse_scenario(const std::string& text, const std::string& name, const std::string& base_dir) {
  struct Line {
    int n;
    std::string key;
    std::string value;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(name, n, "expected 'key = value'");
    Line l{n, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (l.key.empty()) throw ConfigError(name, n, "empty key");
    lines.push_back(l);
  }

  Scenario s;
  bool have_seed = false;
  // The preset lays down the topology, so it goes first wherever it appears.
  for (const Line& l : lines) {
    if (l.key != "preset") continue;
    try {
      s = preset(l.value, 0);
    } catch (const ConfigError& e) {
      throw ConfigError(name, l.n, e.what());
    }
  }
  for (const Line& l : lines) {
    if (l.key == "preset") continue;
    if (l.key == "seed") have_seed = true;
    try {
      apply_override(s, l.key, l.value);
    } catch (const ConfigError& e) {
      throw ConfigError(name, l.n, e.what());
    }
  }
  if (!have_seed) throw ConfigError(name, 0, "missing required key 'seed'");
  if (s.attack == Attack::coremelt) {
    if (s.cm_topology.empty() || s.cm_routes.empty() || s.cm_resources.empty())
      throw ConfigError(name, 0, "coremelt needs cm_topology, cm_routes and cm_resources");
    s.cm_topology = join_path(base_dir, s.cm_topology);
    s.cm_routes = join_path(base_dir, s.cm_routes);
    s.cm_resources = join_path(base_dir, s.cm_resources);
  } else {
    for (const char* role : {"client", "server", "attacker"})
      if (!s.world.topo.has_node(role)) throw ConfigError(name, 0, std::string("topology lacks node '") + role + "'");
    for (const LinkSpec& l : s.world.topo.links)
      if (!s.world.topo.has_node(l.a) || !s.world.topo.has_node(l.b))
        throw ConfigError(name, 0, "link " + l.a + "-" + l.b + " references an undefined node");
  }
  if (s.attack == Attack::degradation) {
    for (const std::string& h : {s.degradation.sender, s.degradation.receiver})
      if (h != "client" && h != "server" && h != "probe_client" && h != "probe_server")
        throw ConfigError(name, 0, "probe endpoint '" + h + "' is not a TCP host");
    if (!s.world.topo.has_node("probe_client") || !s.world.topo.has_node("probe_server"))
      throw ConfigError(name, 0, "degradation needs probe_client and probe_server nodes");
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::string text = read_file(path);
  size_t slash = path.find_last_of('/');
  std::string dir = slash == std::string::npos ? "." : path.substr(0, slash);
  return parse_scenario(text, path, dir);
}

// --- Records -----------------------------------------------------------------

double PhaseRecord::metric(const std::string& name, double fallback) const {
  for (const Metric& m : metrics)
    if (m.name == name) return m.value;
  return fallback;
}

const PhaseRecord* RunRecord::phase(const std::string& name) const {
  for (const PhaseRecord& p : phases)
    if (p.phase == name) return &p;
  return nullptr;
}

namespace {

double ms(SimTime t) { return static_cast<double>(t) / kMsec; }

PhaseRecord from_trace(const PhaseTrace& t) {
  PhaseRecord p;
  p.phase = t.phase;
  p.success = t.success;
  p.virtual_ms = ms(t.finished - t.started);
  p.attacker_bytes = t.bytes;
  p.metrics.push_back({"attempts", static_cast<double>(t.attempts)});
  p.metrics.push_back({"attacker_packets", static_cast<double>(t.packets)});
  return p;
}

SimTime limit_of(const Scenario& s) { return s.duration > 0 ? s.duration : 3600 * kSec; }

PortSearchConfig port_config(const Scenario& s) {
  PortSearchConfig c;
  c.n = s.puppet_n;
  c.timing = s.timing;
  c.retries = s.retries;
  return c;
}

PuppetScriptConfig script_config(const Scenario& s) {
  PuppetScriptConfig c;
  c.n = s.puppet_n;
  c.not_found_size = s.world.not_found_size;
  return c;
}

void run_port(const Scenario& s, World& w, RunRecord& rec) {
  PuppetScript script(w.puppet(), script_config(s));
  PortSearch ps(w.attacker(), w.channel(), w.target(), port_config(s));
  PortSearchResult res;
  res.trace.phase = "port";
  ps.start([&](const PortSearchResult& r) {
    res = r;
    w.sim().stop();
  });
  w.sim().run_until(limit_of(s));
  bool truth = res.success && w.client_conn(res.port) != nullptr;
  PhaseRecord p = from_trace(res.trace);
  p.phase = "port";
  p.success = truth;
  p.metrics.push_back({"reported_success", res.success ? 1.0 : 0.0});
  p.metrics.push_back({"truth_match", truth ? 1.0 : 0.0});
  p.metrics.push_back({"iterations", static_cast<double>(res.iterations)});
  p.metrics.push_back({"probe_triplets", static_cast<double>(res.probe_triplets)});
  p.metrics.push_back({"last_attempt_triplets", static_cast<double>(res.last_attempt_triplets)});
  p.metrics.push_back({"port", static_cast<double>(res.port)});
  if (s.preset == "port-budget")
    p.metrics.push_back({"budget_ok", (truth && res.iterations == 15 && res.probe_triplets <= 883) ? 1.0 : 0.0});
  rec.phases.push_back(p);
}

// Lets the puppet open its connections and pick connection 0 as the victim,
// then hands over the victim's local port.
void choose_victim(World& w, PuppetScript& script, std::function<void(uint16_t)> go) {
  w.channel().attacker_rx = [&w, &script, go](const Message& m) {
    if (m.kind != "READY") return;
    w.channel().attacker_rx = nullptr;
    w.channel().to_puppet(Message{"VICTIM", {0}, ""});
    w.sim().after(10 * kMsec, [&w, &script, go]() {
      TcpConnection* c = w.client().get(w.browser().conn_of(script.victim_host()));
      go(c ? c->tuple().local_port : 0);
    });
  };
  w.channel().to_puppet(Message{"ROUND", {0, 0, 0}, ""});
}

void run_server_seq(const Scenario& s, World& w, RunRecord& rec) {
  PuppetScript script(w.puppet(), script_config(s));
  std::unique_ptr<ServerSeqSearch> ss;
  ServerSeqResult res;
  res.trace.phase = "server_seq";
  uint32_t truth = 0;
  uint16_t port = 0;
  ServerSeqConfig sc;
  sc.retries = s.retries;
  choose_victim(w, script, [&](uint16_t p) {
    port = p;
    if (p == 0) {
      w.sim().stop();
      return;
    }
    ss = std::make_unique<ServerSeqSearch>(w.attacker(), w.channel(), w.target(), port, sc);
    ss->start([&](const ServerSeqResult& r) {
      res = r;
      // Genuine responses overwrite the probe prefix, so the recovered value
      // is the client's expected sequence once the search settles.
      TcpConnection* c = w.client_conn(port);
      truth = c ? c->rcv_nxt() : 0;
      w.sim().stop();
    });
  });
  w.sim().run_until(limit_of(s));
  bool ok = res.success && res.next_seq == truth;
  PhaseRecord p = from_trace(res.trace);
  p.phase = "server_seq";
  p.success = ok;
  p.metrics.push_back({"reported_success", res.success ? 1.0 : 0.0});
  p.metrics.push_back({"truth_match", ok ? 1.0 : 0.0});
  p.metrics.push_back({"inject_packets", static_cast<double>(res.inject_packets)});
  p.metrics.push_back({"first_attempt_failed", res.first_attempt_failed ? 1.0 : 0.0});
  rec.phases.push_back(p);
}

void run_client_seq(const Scenario& s, World& w, RunRecord& rec) {
  PuppetScript script(w.puppet(), script_config(s));
  std::unique_ptr<ClientSeqSearch> cs;
  ClientSeqResult res;
  res.trace.phase = "client_seq";
  uint16_t port = 0;
  uint64_t violations = 0;
  ClientSeqConfig cc;
  cc.retries = s.retries;
  choose_victim(w, script, [&](uint16_t p) {
    port = p;
    TcpConnection* c = p ? w.client_conn(p) : nullptr;
    if (!c) {
      w.sim().stop();
      return;
    }
    // Port and server sequence come from the oracle; only the client's NXT
    // is searched.
    cs = std::make_unique<ClientSeqSearch>(w.attacker(), w.channel(), w.target(), port, c->rcv_nxt(), cc);
    cs->on_injected = [&](uint32_t low, uint64_t span) {
      TcpConnection* cc2 = w.client_conn(port);
      if (!cc2 || static_cast<uint32_t>(cc2->snd_nxt() - low) >= span) violations++;
    };
    cs->start([&](const ClientSeqResult& r) {
      res = r;
      w.sim().stop();
    });
  });
  w.sim().run_until(limit_of(s));
  TcpConnection* c = port ? w.client_conn(port) : nullptr;
  bool ok = res.success && c && res.client_nxt == c->snd_nxt();
  PhaseRecord p = from_trace(res.trace);
  p.phase = "client_seq";
  p.success = ok;
  p.metrics.push_back({"reported_success", res.success ? 1.0 : 0.0});
  p.metrics.push_back({"truth_match", ok ? 1.0 : 0.0});
  p.metrics.push_back({"iterations", static_cast<double>(res.iterations)});
  p.metrics.push_back({"injected_responses", static_cast<double>(res.injected_responses)});
  p.metrics.push_back({"invariant_violations", static_cast<double>(violations)});
  rec.phases.push_back(p);
}

void run_pipeline(const Scenario& s, World& w, RunRecord& rec) {
  PuppetScript script(w.puppet(), script_config(s));
  ServerSeqConfig sc;
  sc.retries = s.retries;
  ClientSeqConfig cc;
  cc.retries = s.retries;
  InjectionPipeline pipe(w.attacker(), w.channel(), w.target(), port_config(s), sc, cc);
  PipelineResult res;
  bool done = false;
  pipe.start([&](const PipelineResult& r) {
    res = r;
    done = true;
    w.sim().stop();
  });
  w.sim().run_until(limit_of(s));
  TcpConnection* c = res.port.success ? w.client_conn(res.port.port) : nullptr;
  bool port_ok = c != nullptr;
  bool seqs_ok = res.success && c && res.client.client_nxt == c->snd_nxt() && res.client.next_server_seq == c->rcv_nxt();

  PhaseRecord pp = from_trace(res.port.trace);
  pp.phase = "port";
  pp.success = port_ok;
  pp.metrics.push_back({"iterations", static_cast<double>(res.port.iterations)});
  pp.metrics.push_back({"probe_triplets", static_cast<double>(res.port.probe_triplets)});
  rec.phases.push_back(pp);
  if (res.port.success) {
    PhaseRecord sp = from_trace(res.server.trace);
    sp.phase = "server_seq";
    sp.metrics.push_back({"inject_packets", static_cast<double>(res.server.inject_packets)});
    rec.phases.push_back(sp);
  }
  if (res.server.success) {
    PhaseRecord cp = from_trace(res.client.trace);
    cp.phase = "client_seq";
    cp.success = seqs_ok;
    cp.metrics.push_back({"iterations", static_cast<double>(res.client.iterations)});
    cp.metrics.push_back({"injected_responses", static_cast<double>(res.client.injected_responses)});
    rec.phases.push_back(cp);
  }
  PhaseRecord all;
  all.phase = "pipeline";
  all.success = done && port_ok && seqs_ok;
  all.virtual_ms = ms(w.sim().now());
  for (const PhaseRecord& p : rec.phases) all.attacker_bytes += p.attacker_bytes;
  all.metrics.push_back({"truth_match", all.success ? 1.0 : 0.0});
  rec.phases.push_back(all);
}

void run_opt_ack(const Scenario& s, World& w, RunRecord& rec) {
  OptAckConfig c = s.opt_ack;
  if (s.duration > 0) c.duration = s.duration;
  OptAckDrive d(w, c);
  OptAckReport r;
  d.start([&](const OptAckReport& x) {
    r = x;
    w.sim().stop();
  });
  w.sim().run_until(c.duration + 3600 * kSec);
  PhaseRecord p;
  p.phase = "opt_ack";
  p.success = !r.detected && r.amplification > 1;
  p.virtual_ms = ms(r.finished - r.started);
  p.attacker_bytes = r.attacker_bytes;
  p.metrics = {{"amplification", r.amplification},
               {"server_link_utilization", r.server_link_utilization},
               {"acks_sent", static_cast<double>(r.acks_sent)},
               {"server_bytes", static_cast<double>(r.server_bytes)},
               {"future_acks_dropped", static_cast<double>(r.future_acks_dropped)},
               {"detected", r.detected ? 1.0 : 0.0},
               {"detected_at_ms", r.detected ? ms(r.detected_at - r.started) : 0.0}};
  rec.phases.push_back(p);
}

void run_ack_storm(const Scenario& s, World& w, RunRecord& rec) {
  AckStormConfig c = s.ack_storm;
  if (s.duration > 0) c.duration = s.duration;
  AckStormDrive d(w, c);
  AckStormReport r;
  d.start([&](const AckStormReport& x) {
    r = x;
    w.sim().stop();
  });
  w.sim().run_until(c.duration + 3600 * kSec);
  PhaseRecord p;
  p.phase = "ack_storm";
  p.success = r.storm_packets > 0;
  p.virtual_ms = ms(r.finished - r.ball_start);
  p.attacker_bytes = r.attacker_bytes;
  p.metrics = {{"storm_packets", static_cast<double>(r.storm_packets)},
               {"storm_bytes", static_cast<double>(r.storm_bytes)},
               {"dupacks_client", static_cast<double>(r.dupacks_client)},
               {"dupacks_server", static_cast<double>(r.dupacks_server)},
               {"seedings", static_cast<double>(r.seedings)},
               {"attacker_packets", static_cast<double>(r.attacker_packets)}};
  rec.phases.push_back(p);
}

void run_degradation(const Scenario& s, uint64_t seed, RunRecord& rec) {
  WorldConfig wc = s.world;
  wc.seed = seed;
  DegradationReport r = measure_degradation(wc, s.degradation);
  PhaseRecord p;
  p.phase = "degradation";
  p.success = r.slowdown >= 2;
  p.virtual_ms = ms(r.completed ? r.attacked : 10 * r.baseline);
  p.metrics = {{"baseline_ms", ms(r.baseline)},
               {"attacked_ms", ms(r.attacked)},
               {"slowdown", r.slowdown},
               {"completed", r.completed ? 1.0 : 0.0}};
  rec.phases.push_back(p);
}

void run_coremelt(const Scenario& s, uint64_t seed, RunRecord& rec) {
  using namespace coremelt;
  AsGraph g = parse_topology(read_file(s.cm_topology), s.cm_topology);
  parse_routes(g, read_file(s.cm_routes), s.cm_routes);
  if (s.cm_shortest_routes) g.fill_shortest_routes();
  AttackResources r = parse_resources(read_file(s.cm_resources), s.cm_resources);
  Solution sol = build_and_solve(g, r);
  Evaluation ev = evaluate_plan(g, r, sol.plan);

  double storm = 0, optack = 0;
  for (const auto& [k, x] : sol.plan.storm) storm += x;
  for (const auto& [k, x] : sol.plan.optack) optack += x;

  PhaseRecord plan;
  plan.phase = "coremelt_plan";
  plan.success = true;
  plan.metrics = {{"objective", sol.objective},
                  {"variables", static_cast<double>(sol.variables)},
                  {"constraints", static_cast<double>(sol.constraints)},
                  {"pivots", static_cast<double>(sol.pivots)},
                  {"cut_capacity", sol.cut.capacity},
                  {"targets", static_cast<double>(sol.targets.size())},
                  {"storm_mbps", storm},
                  {"optack_mbps", optack}};
  rec.phases.push_back(plan);

  PhaseRecord eval;
  eval.phase = "coremelt_evaluate";
  eval.success = ev.disconnected > 0;
  eval.metrics = {{"disconnected_pairs", static_cast<double>(ev.disconnected)},
                  {"pairs", static_cast<double>(ev.pairs)},
                  {"saturated_edges", static_cast<double>(ev.saturated.size())}};
  for (size_t e = 0; e < ev.loads.size(); ++e) {
    if (ev.loads[e] <= 0) continue;
    const Edge& ed = g.edges()[e];
    eval.metrics.push_back({"load[" + std::to_string(ed.from) + "->" + std::to_string(ed.to) + "]", ev.loads[e]});
  }
  rec.phases.push_back(eval);

  if (s.cm_simulate) {
    SimulateConfig sc = s.cm_sim;
    sc.seed = seed;
    SimulationReport sr = simulate_plan(g, r, sol.plan, sc);
    PhaseRecord sim;
    sim.phase = "coremelt_simulate";
    sim.success = sr.model_gaps == 0;
    sim.virtual_ms = ms(sc.duration);
    sim.metrics.push_back({"model_gaps", static_cast<double>(sr.model_gaps)});
    for (const EdgeMeasurement& m : sr.edges) {
      if (!m.saturated) continue;
      const Edge& ed = g.edges()[static_cast<size_t>(m.edge)];
      std::string tag = "[" + std::to_string(ed.from) + "->" + std::to_string(ed.to) + "]";
      sim.metrics.push_back({"loss" + tag, m.loss_rate});
      sim.metrics.push_back({"collapse" + tag, m.collapse});
    }
    rec.phases.push_back(sim);
  }
}

}  // namespace

RunRecord run_once(const Scenario& s, uint64_t seed) {
  RunRecord rec;
  rec.seed = seed;
  if (s.attack == Attack::degradation) {
    run_degradation(s, seed, rec);
    return rec;
  }
  if (s.attack == Attack::coremelt) {
    run_coremelt(s, seed, rec);
    return rec;
  }
  WorldConfig wc = s.world;
  wc.seed = seed;
  World w(wc);
  switch (s.attack) {
    case Attack::port_derand:
      run_port(s, w, rec);
      break;
    case Attack::server_seq:
      run_server_seq(s, w, rec);
      break;
    case Attack::client_seq:
      run_client_seq(s, w, rec);
      break;
    case Attack::full_pipeline:
      run_pipeline(s, w, rec);
      break;
    case Attack::opt_ack:
      run_opt_ack(s, w, rec);
      break;
    case Attack::ack_storm:
      run_ack_storm(s, w, rec);
      break;
    default:
      break;
  }
  return rec;
}

Report run(const Scenario& s) {
  Report r;
  r.scenario = s.name;
  r.attack = to_string(s.attack);
  for (int i = 0; i < s.repeat; ++i) r.runs.push_back(run_once(s, s.seed + static_cast<uint64_t>(i)));
  return r;
}

std::vector<SweepPoint> sweep(const Scenario& s, const std::string& key, const std::vector<std::string>& values) {
  std::vector<SweepPoint> out;
  for (const std::string& v : values) {
    Scenario x = s;
    apply_override(x, key, v);
    x.name = s.name + "[" + key + "=" + v + "]";
    out.push_back(SweepPoint{v, run(x)});
  }
  return out;
}

// --- Defense matrix ----------------------------------------------------------

Verdict classify(double success_rate, double ratio) {
  if (success_rate <= 0.05 || ratio <= 0.1) return Verdict::blocked;
  if (ratio < 0.95) return Verdict::degraded;
  return Verdict::unaffected;
}

namespace {

// The phase and metric a defense cell is judged by.
std::pair<std::string, std::string> headline(Attack a) {
  switch (a) {
    case Attack::port_derand:
      return {"port", ""};
    case Attack::server_seq:
      return {"server_seq", ""};
    case Attack::client_seq:
      return {"client_seq", ""};
    case Attack::full_pipeline:
      return {"pipeline", ""};
    case Attack::opt_ack:
      return {"opt_ack", "amplification"};
    case Attack::ack_storm:
      return {"ack_storm", "storm_packets"};
    case Attack::degradation:
      return {"degradation", "slowdown"};
    case Attack::coremelt:
      return {"coremelt_evaluate", "disconnected_pairs"};
  }
  return {"", ""};
}

struct Summary {
  double success_rate = 0;
  double value = 0;
};

Summary summarize(const Report& r, Attack a) {
  auto [phase, metric] = headline(a);
  Summary s;
  if (r.runs.empty()) return s;
  double ok = 0, sum = 0;
  for (const RunRecord& run : r.runs) {
    const PhaseRecord* p = run.phase(phase);
    bool success = p && p->success;
    ok += success ? 1 : 0;
    sum += metric.empty() ? (success ? 1 : 0) : (p ? p->metric(metric) : 0);
  }
  double n = static_cast<double>(r.runs.size());
  s.success_rate = ok / n;
  s.value = sum / n;
  return s;
}

}  // namespace

DefenseMatrix defense_matrix(const Scenario& base) {
  struct Toggle {
    const char* name;
    const char* key;
    const char* value;
  };
  static const Toggle toggles[] = {
      {"sack_collapse", "sack_collapse", "on"},
      {"inflight_validation", "inflight_validation", "on"},
      {"port_algorithm=fully_random", "port_algorithm", "fully_random"},
      {"browser_reset", "browser_reset", "on"},
      {"server_quota=10mbps", "server_quota_mbps", "10"},
      {"tls", "tls", "on"},
      {"server_verify_every=1000", "server_verify_every", "1000"},
  };
  DefenseMatrix m;
  m.scenario = base.name;
  m.attack = to_string(base.attack);
  Summary b = summarize(run(base), base.attack);
  m.baseline_success_rate = b.success_rate;
  for (const Toggle& t : toggles) {
    Scenario s = base;
    apply_override(s, t.key, t.value);
    Summary d = summarize(run(s), base.attack);
    MatrixCell c;
    c.defense = t.name;
    c.headline = headline(base.attack).second.empty() ? "success_rate" : headline(base.attack).second;
    c.baseline = b.value;
    c.defended = d.value;
    c.ratio = b.value > 0 ? d.value / b.value : (d.value > 0 ? kSlowdownInfinite : 1.0);
    c.success_rate = d.success_rate;
    c.verdict = classify(d.success_rate, c.ratio);
    m.cells.push_back(c);
  }
  return m;
}

// --- Emission ----------------------------------------------------------------

namespace {

const char* kCsvHeader = "scenario,seed,attack,phase,success,virtual_ms,attacker_bytes,metric_name,metric_value\n";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = mean_of(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Column {
  std::vector<double> success, virtual_ms, bytes, value;
};

// Keyed by (phase, metric) in first-seen order.
std::vector<std::pair<std::pair<std::string, std::string>, Column>> columns(const Report& r) {
  std::vector<std::pair<std::pair<std::string, std::string>, Column>> out;
  std::map<std::pair<std::string, std::string>, size_t> at;
  for (const RunRecord& run : r.runs)
    for (const PhaseRecord& p : run.phases)
      for (const Metric& m : p.metrics) {
        auto key = std::make_pair(p.phase, m.name);
        auto it = at.find(key);
        if (it == at.end()) {
          it = at.emplace(key, out.size()).first;
          out.push_back({key, Column{}});
        }
        Column& c = out[it->second].second;
        c.success.push_back(p.success ? 1 : 0);
        c.virtual_ms.push_back(p.virtual_ms);
        c.bytes.push_back(static_cast<double>(p.attacker_bytes));
        c.value.push_back(m.value);
      }
  return out;
}

}  // namespace

std::string to_csv(const Report& r) {
  std::string out = kCsvHeader;
  for (const RunRecord& run : r.runs)
    for (const PhaseRecord& p : run.phases)
      for (const Metric& m : p.metrics) {
        out += csv_field(r.scenario) + "," + std::to_string(run.seed) + "," + r.attack + "," + p.phase + "," +
               (p.success ? "1" : "0") + "," + format_number(p.virtual_ms) + "," + std::to_string(p.attacker_bytes) +
               "," + csv_field(m.name) + "," + format_number(m.value) + "\n";
      }
  for (const auto& [key, c] : columns(r)) {
    for (const char* kind : {"mean", "stddev"}) {
      auto f = std::string(kind) == "mean" ? mean_of : stddev_of;
      out += csv_field(r.scenario) + "," + kind + "," + r.attack + "," + key.first + "," + format_number(f(c.success)) +
             "," + format_number(f(c.virtual_ms)) + "," + format_number(f(c.bytes)) + "," + csv_field(key.second) + "," +
             format_number(f(c.value)) + "\n";
    }
  }
  return out;
}

std::vector<Aggregate> aggregate(const Report& r) {
  std::vector<Aggregate> out;
  for (const auto& [key, c] : columns(r))
    out.push_back(Aggregate{r.scenario, r.attack, key.first, key.second, c.value.size(), mean_of(c.value), stddev_of(c.value)});
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<Aggregate> aggregate_csv(const std::vector<std::string>& texts) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> vals;
  for (const std::string& text : texts) {
    std::istringstream in(text);
    std::string line;
    bool header = true;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (header) {
        if (line + "\n" != kCsvHeader) throw ConfigError("csv", n, "unexpected header");
        header = false;
        continue;
      }
      auto f = split_csv_line(line);
      if (f.size() != 9) throw ConfigError("csv", n, "expected 9 columns");
      if (f[1] == "mean" || f[1] == "stddev") continue;
      Key k{f[0], f[2], f[3], f[7]};
      if (!vals.count(k)) order.push_back(k);
      double v = f[8] == "inf" ? kSlowdownInfinite : to_double(f[8], "metric_value");
      vals[k].push_back(v);
    }
  }
  std::vector<Aggregate> out;
  for (const Key& k : order) {
    const auto& v = vals[k];
    out.push_back(Aggregate{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), v.size(), mean_of(v), stddev_of(v)});
  }
  return out;
}

namespace {

// JSON has no infinity; it is spelled as a string.
nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

}  // namespace

std::string to_json(const Report& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["attack"] = r.attack;
  j["runs"] = nlohmann::json::array();
  for (const RunRecord& run : r.runs) {
    nlohmann::json jr;
    jr["seed"] = run.seed;
    jr["phases"] = nlohmann::json::array();
    for (const PhaseRecord& p : run.phases) {
      nlohmann::json jp;
      jp["phase"] = p.phase;
      jp["success"] = p.success;
      jp["virtual_ms"] = number(p.virtual_ms);
      jp["attacker_bytes"] = p.attacker_bytes;
      nlohmann::json jm = nlohmann::json::object();
      for (const Metric& m : p.metrics) jm[m.name] = number(m.value);
      jp["metrics"] = jm;
      jr["phases"].push_back(jp);
    }
    j["runs"].push_back(jr);
  }
  nlohmann::json agg = nlohmann::json::array();
  for (const Aggregate& a : aggregate(r))
    agg.push_back({{"phase", a.phase}, {"metric", a.metric}, {"n", a.n}, {"mean", number(a.mean)}, {"stddev", number(a.stddev)}});
  j["aggregate"] = agg;
  std::map<std::string, std::pair<double, double>> rate;
  for (const RunRecord& run : r.runs)
    for (const PhaseRecord& p : run.phases) {
      rate[p.phase].first += p.success ? 1 : 0;
      rate[p.phase].second += 1;
    }
  nlohmann::json jr = nlohmann::json::object();
  for (const auto& [phase, c] : rate) jr[phase] = c.first / c.second;
  j["success_rate"] = jr;
  return j.dump(2) + "\n";
}

std::string to_csv(const DefenseMatrix& m) {
  std::string out = "scenario,attack,defense,headline,baseline,defended,ratio,success_rate,verdict\n";
  for (const MatrixCell& c : m.cells)
    out += csv_field(m.scenario) + "," + m.attack + "," + csv_field(c.defense) + "," + c.headline + "," +
           format_number(c.baseline) + "," + format_number(c.defended) + "," + format_number(c.ratio) + "," +
           format_number(c.success_rate) + "," + to_string(c.verdict) + "\n";
  return out;
}

std::string to_json(const DefenseMatrix& m) {
  nlohmann::json j;
  j["scenario"] = m.scenario;
  j["attack"] = m.attack;
  j["baseline_success_rate"] = m.baseline_success_rate;
  j["cells"] = nlohmann::json::array();
  for (const MatrixCell& c : m.cells)
    j["cells"].push_back({{"defense", c.defense},
                          {"headline", c.headline},
                          {"baseline", number(c.baseline)},
                          {"defended", number(c.defended)},
                          {"ratio", number(c.ratio)},
                          {"success_rate", number(c.success_rate)},
                          {"verdict", to_string(c.verdict)}});
  return j.dump(2) + "\n";
}

}  // namespace offpath::harness
