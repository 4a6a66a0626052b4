#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"
#include "offpath/harness.hpp"

using namespace offpath;
using namespace offpath::harness;

namespace {

const std::string kScenarios = std::string(OFFPATH_SOURCE_DIR) + "/scenarios";

Scenario coremelt_scenario(int repeat = 1) {
  std::string text =
      "name = cm\n"
      "attack = coremelt\n"
      "seed = 5\n"
      "repeat = " + std::to_string(repeat) + "\n"
      "cm_topology = coremelt/topology.txt\n"
      "cm_routes = coremelt/routes.txt\n"
      "cm_resources = coremelt/resources.txt\n";
  return parse_scenario(text, "cm", kScenarios);
}

Scenario storm_scenario(int repeat) {
  return parse_scenario("preset = fig7\nattack = ack_storm\nseed = 3\nduration_s = 1\nrepeat = " +
                        std::to_string(repeat) + "\n");
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int error_line(const std::string& text) {
  try {
    parse_scenario(text, "t");
  } catch (const ConfigError& e) {
    return e.line;
  }
  return -1;
}

}  // namespace

// --- Parsing -----------------------------------------------------------------

TEST(Scenario, Fig7PresetCapacities) {
  Scenario s = parse_scenario("preset = fig7\nseed = 1\n");
  const TopologySpec& t = s.world.topo;
  for (const char* n : {"attacker", "client", "probe_client"}) {
    bool seen = false;
    for (const LinkSpec& l : t.links)
      if (l.a == n || l.b == n) {
        EXPECT_DOUBLE_EQ(l.mbps, 10) << n;
        seen = true;
      }
    EXPECT_TRUE(seen) << n;
  }
  for (const char* n : {"server", "probe_server"})
    for (const LinkSpec& l : t.links)
      if (l.a == n || l.b == n) EXPECT_DOUBLE_EQ(l.mbps, 100) << n;
  EXPECT_EQ(s.attack, Attack::opt_ack);
}

TEST(Scenario, MissingSeedIsAnError) {
  EXPECT_THROW(parse_scenario("preset = port\n"), ConfigError);
  EXPECT_EQ(error_line("preset = port\nattack = server_seq\n"), 0);
}

TEST(Scenario, ErrorsNameTheLine) {
  EXPECT_EQ(error_line("preset = port\nseed = 1\n\n# c\nlink = client router 10\n"), 5);
  EXPECT_EQ(error_line("preset = port\nseed = 1\nbogus_key = 3\n"), 3);
  EXPECT_EQ(error_line("seed = 1\npreset = nowhere\n"), 2);
  EXPECT_EQ(error_line("preset = port\nseed = -4\n"), 2);
  EXPECT_EQ(error_line("preset = port\nseed = 1\nno equals sign\n"), 3);
  EXPECT_EQ(error_line("preset = port\nseed = 1\nlink = client mars 10 1\n"), 3);
  EXPECT_EQ(error_line("preset = port\nseed = 1\nloss = 1.5\n"), 3);
  try {
    parse_scenario("preset = port\nseed = 1\nbogus_key = 3\n", "x.scn");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("x.scn:3: ", 0), 0u) << e.what();
  }
}

TEST(Scenario, PresetAppliesBeforeOtherKeys) {
  Scenario s = parse_scenario("seed = 9\nloss = 0.01\nname = lossy\npreset = port\n");
  EXPECT_EQ(s.name, "lossy");
  EXPECT_EQ(s.seed, 9u);
  const LinkSpec* l = s.world.topo.find("attacker", "router");
  ASSERT_NE(l, nullptr);
  EXPECT_DOUBLE_EQ(l->loss, 0.01);
}

TEST(Scenario, CoremeltPathsResolveAgainstFile) {
  Scenario s = coremelt_scenario();
  EXPECT_EQ(s.cm_topology, kScenarios + "/coremelt/topology.txt");
  EXPECT_THROW(parse_scenario("attack = coremelt\nseed = 1\n"), ConfigError);
}

TEST(Scenario, ShippedFilesParse) {
  for (const char* f : {"port.scn", "port_lossy.scn", "port_budget.scn", "server_seq.scn", "client_seq.scn",
                        "pipeline.scn", "opt_ack.scn", "ack_storm.scn", "degradation.scn", "coremelt10.scn"})
    EXPECT_NO_THROW(load_scenario(kScenarios + "/" + f)) << f;
}

// --- Runs --------------------------------------------------------------------

TEST(Run, FullPipelineMatchesTruth) {
  Scenario s = parse_scenario("preset = port\nattack = full_pipeline\nseed = 2\n");
  Report r = run(s);
  ASSERT_EQ(r.runs.size(), 1u);
  const RunRecord& rec = r.runs[0];
  for (const char* phase : {"port", "server_seq", "client_seq", "pipeline"}) {
    const PhaseRecord* p = rec.phase(phase);
    ASSERT_NE(p, nullptr) << phase;
    EXPECT_TRUE(p->success) << phase;
    EXPECT_GT(p->attacker_bytes + (std::string(phase) == "pipeline" ? 1 : 0), 0u) << phase;
  }
  EXPECT_EQ(rec.phase("port")->metric("iterations"), 15);
  EXPECT_EQ(rec.phase("server_seq")->metric("inject_packets"), 131072);
  EXPECT_EQ(rec.phase("client_seq")->metric("iterations"), 32);
}

TEST(Run, SameSeedSameBytes) {
  Scenario s = parse_scenario("preset = port\nattack = port_derand\nseed = 6\n");
  Report a = run(s), b = run(s);
  EXPECT_EQ(to_csv(a), to_csv(b));
  EXPECT_EQ(to_json(a), to_json(b));
  Scenario st = storm_scenario(2);
  EXPECT_EQ(to_csv(run(st)), to_csv(run(st)));
}

TEST(Run, SeedsAdvancePerRepeat) {
  Report r = run(storm_scenario(3));
  ASSERT_EQ(r.runs.size(), 3u);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(r.runs[i].seed, 3 + i);
}

// --- Reports -----------------------------------------------------------------

TEST(Report, CsvHeaderAndRowShape) {
  std::string csv = to_csv(run(storm_scenario(2)));
  auto ls = lines(csv);
  ASSERT_GT(ls.size(), 1u);
  EXPECT_EQ(ls[0], "scenario,seed,attack,phase,success,virtual_ms,attacker_bytes,metric_name,metric_value");
  for (size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(fields(ls[i]).size(), 9u) << ls[i];
}

TEST(Report, AggregateRowsMatchRecomputation) {
  Report r = run(storm_scenario(4));
  std::string csv = to_csv(r);
  std::map<std::string, std::vector<double>> per;
  std::map<std::string, std::pair<double, double>> agg;
  for (const std::string& l : lines(csv)) {
    auto f = fields(l);
    if (f[0] == "scenario") continue;
    std::string key = f[3] + "/" + f[7];
    if (f[1] == "mean")
      agg[key].first = std::stod(f[8]);
    else if (f[1] == "stddev")
      agg[key].second = std::stod(f[8]);
    else
      per[key].push_back(std::stod(f[8]));
  }
  ASSERT_FALSE(per.empty());
  EXPECT_EQ(per.size(), agg.size());
  for (const auto& [key, v] : per) {
    ASSERT_EQ(v.size(), 4u) << key;
    double m = 0;
    for (double x : v) m += x;
    m /= 4;
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    double sd = std::sqrt(ss / 3);
    EXPECT_NEAR(agg[key].first, m, 1e-6 * std::max(1.0, std::abs(m))) << key;
    EXPECT_NEAR(agg[key].second, sd, 1e-6 * std::max(1.0, sd)) << key;
  }

  auto direct = aggregate(r);
  auto from_csv = aggregate_csv({csv});
  ASSERT_EQ(direct.size(), from_csv.size());
  for (size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(direct[i].phase, from_csv[i].phase);
    EXPECT_EQ(direct[i].metric, from_csv[i].metric);
    EXPECT_EQ(direct[i].n, 4u);
    EXPECT_NEAR(direct[i].mean, from_csv[i].mean, 1e-6 * std::max(1.0, std::abs(direct[i].mean)));
    EXPECT_NEAR(direct[i].stddev, from_csv[i].stddev, 1e-6 * std::max(1.0, direct[i].stddev));
  }
}

TEST(Report, AggregateAcrossFilesPoolsRuns) {
  Scenario a = storm_scenario(2);
  Scenario b = a;
  b.seed = 10;
  auto agg = aggregate_csv({to_csv(run(a)), to_csv(run(b))});
  ASSERT_FALSE(agg.empty());
  for (const Aggregate& x : agg) EXPECT_EQ(x.n, 4u);
  EXPECT_THROW(aggregate_csv({"not,a,header\n"}), ConfigError);
}

TEST(Report, FiftySeedsPlusAggregates) {
  Report r = run(coremelt_scenario(50));
  ASSERT_EQ(r.runs.size(), 50u);
  std::string csv = to_csv(r);
  std::map<std::string, int> seeds;
  int means = 0, stddevs = 0;
  for (const std::string& l : lines(csv)) {
    auto f = fields(l);
    if (f[0] == "scenario") continue;
    if (f[1] == "mean")
      means++;
    else if (f[1] == "stddev")
      stddevs++;
    else
      seeds[f[1]]++;
  }
  EXPECT_EQ(seeds.size(), 50u);
  EXPECT_GT(means, 0);
  EXPECT_EQ(means, stddevs);
  auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["runs"].size(), 50u);
  EXPECT_DOUBLE_EQ(j["success_rate"]["coremelt_evaluate"].get<double>(), 1.0);
}

TEST(Report, JsonCarriesInfinityAsString) {
  Report r;
  r.scenario = "x";
  r.attack = "degradation";
  RunRecord rec;
  rec.seed = 1;
  PhaseRecord p;
  p.phase = "degradation";
  p.metrics.push_back({"slowdown", INFINITY});
  rec.phases.push_back(p);
  r.runs.push_back(rec);
  auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["runs"][0]["phases"][0]["metrics"]["slowdown"], "inf");
  auto agg = aggregate_csv({to_csv(r)});
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_TRUE(std::isinf(agg[0].mean));
}

TEST(Report, CoremeltRunRecordsPlanAndEvaluation) {
  RunRecord rec = run_once(coremelt_scenario(), 5);
  const PhaseRecord* plan = rec.phase("coremelt_plan");
  const PhaseRecord* ev = rec.phase("coremelt_evaluate");
  ASSERT_NE(plan, nullptr);
  ASSERT_NE(ev, nullptr);
  EXPECT_NEAR(plan->metric("objective"), 2.0, 1e-6);
  EXPECT_EQ(ev->metric("disconnected_pairs"), 4);
}

// --- Sweeps and defenses -----------------------------------------------------

TEST(Sweep, OnePointPerValue) {
  auto pts = sweep(storm_scenario(1), "ack_storm_interval_ms", {"100", "200"});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].value, "100");
  EXPECT_NE(pts[0].report.scenario, pts[1].report.scenario);
  double fast = pts[0].report.runs[0].phase("ack_storm")->metric("seedings");
  double slow = pts[1].report.runs[0].phase("ack_storm")->metric("seedings");
  EXPECT_GT(fast, slow);
  EXPECT_THROW(sweep(storm_scenario(1), "nonsense", {"1"}), ConfigError);
}

TEST(Defenses, Classify) {
  EXPECT_EQ(classify(0.05, 1.0), Verdict::blocked);
  EXPECT_EQ(classify(0.9, 0.1), Verdict::blocked);
  EXPECT_EQ(classify(0.9, 0.5), Verdict::degraded);
  EXPECT_EQ(classify(0.9, 0.949), Verdict::degraded);
  EXPECT_EQ(classify(0.9, 0.95), Verdict::unaffected);
  EXPECT_EQ(classify(1.0, 3.0), Verdict::unaffected);
}

TEST(Defenses, PortSearchBlockedBySackCollapse) {
  Scenario s = parse_scenario("preset = port\nattack = port_derand\nseed = 1\nrepeat = 3\nsack_collapse = on\n");
  int ok = 0;
  for (const RunRecord& rec : run(s).runs) ok += rec.phase("port")->success ? 1 : 0;
  EXPECT_EQ(ok, 0);
}

TEST(Defenses, ServerSeqBlockedByBrowserReset) {
  Scenario s = parse_scenario("preset = port\nattack = server_seq\nseed = 1\nrepeat = 2\nbrowser_reset = on\n");
  for (const RunRecord& rec : run(s).runs) EXPECT_FALSE(rec.phase("server_seq")->success);
}

TEST(Defenses, MatrixForOptAck) {
  Scenario s = parse_scenario("preset = fig7\nattack = opt_ack\nseed = 1\nduration_s = 2\n");
  DefenseMatrix m = defense_matrix(s);
  ASSERT_EQ(m.cells.size(), 7u);
  std::map<std::string, Verdict> v;
  for (const MatrixCell& c : m.cells) {
    EXPECT_EQ(c.headline, "amplification");
    v[c.defense] = c.verdict;
  }
  EXPECT_EQ(v["tls"], Verdict::unaffected);
  EXPECT_EQ(v["sack_collapse"], Verdict::unaffected);
  EXPECT_EQ(v["server_verify_every=1000"], Verdict::blocked);
  EXPECT_NE(v["server_quota=10mbps"], Verdict::unaffected);
  auto csv = lines(to_csv(m));
  EXPECT_EQ(csv.size(), 8u);
  EXPECT_EQ(nlohmann::json::parse(to_json(m))["cells"].size(), 7u);
}
