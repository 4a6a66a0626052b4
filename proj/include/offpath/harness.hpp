#pragma once

// Scenarios, single runs, sweeps, the defense matrix and report emission.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "offpath/coremelt.hpp"
#include "offpath/exploits.hpp"

namespace offpath::harness {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& where, int line, const std::string& msg);
  ConfigError(const std::string& msg) : std::runtime_error(msg), line(0) {}
  int line;
};

enum class Attack { port_derand, server_seq, client_seq, full_pipeline, opt_ack, ack_storm, degradation, coremelt };
const char* to_string(Attack a);
std::optional<Attack> parse_attack(const std::string& s);

struct Scenario {
  std::string name = "scenario";
  std::string preset;  // port | fig7 | port-budget | "" (explicit topology)
  Attack attack = Attack::port_derand;
  uint64_t seed = 0;
  int repeat = 1;
  // Virtual time limit for injection phases; attack length for exploits.
  SimTime duration = 0;  // 0: per-attack default
  WorldConfig world;

  int puppet_n = 32;
  ProbeTiming timing = ProbeTiming::window;
  int retries = 3;

  OptAckConfig opt_ack;
  AckStormConfig ack_storm;
  DegradationConfig degradation;

  // Coremelt inputs, resolved relative to the scenario file.
  std::string cm_topology;
  std::string cm_routes;
  std::string cm_resources;
  bool cm_shortest_routes = false;  // fill routes missing from cm_routes
  bool cm_simulate = false;
  coremelt::SimulateConfig cm_sim;
};

// Strict key = value text. Unknown keys, malformed lines and a missing seed
// are errors naming the line.
Scenario parse_scenario(const std::string& text, const std::string& name = "scenario",
                        const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);
// Applies one "key = value" assignment on top of a parsed scenario.
void apply_override(Scenario& s, const std::string& key, const std::string& value);
Scenario preset(const std::string& name, uint64_t seed);

struct Metric {
  std::string name;
  double value = 0;
};

struct PhaseRecord {
  std::string phase;
  bool success = false;
  double virtual_ms = 0;
  uint64_t attacker_bytes = 0;
  std::vector<Metric> metrics;

  double metric(const std::string& name, double fallback = 0) const;
};

struct RunRecord {
  uint64_t seed = 0;
  std::vector<PhaseRecord> phases;
  const PhaseRecord* phase(const std::string& name) const;
};

struct Report {
  std::string scenario;
  std::string attack;
  std::vector<RunRecord> runs;
};

RunRecord run_once(const Scenario& s, uint64_t seed);
// repeat runs with seeds seed, seed+1, ...
Report run(const Scenario& s);

struct SweepPoint {
  std::string value;
  Report report;
};
std::vector<SweepPoint> sweep(const Scenario& s, const std::string& key, const std::vector<std::string>& values);

enum class Verdict { blocked, degraded, unaffected };
const char* to_string(Verdict v);

struct MatrixCell {
  std::string defense;
  std::string headline;  // metric compared against the undefended run
  double baseline = 0;
  double defended = 0;
  double ratio = 0;
  double success_rate = 0;
  Verdict verdict = Verdict::unaffected;
};

struct DefenseMatrix {
  std::string scenario;
  std::string attack;
  double baseline_success_rate = 0;
  std::vector<MatrixCell> cells;
};

// Blocked: success rate <= 0.05 or headline ratio <= 0.1. Degraded: ratio
// below 0.95. Unaffected otherwise.
Verdict classify(double success_rate, double ratio);
DefenseMatrix defense_matrix(const Scenario& base);

// Long-form CSV: one row per (run, phase, metric) plus mean and stddev rows.
std::string to_csv(const Report& r);
std::string to_json(const Report& r);
std::string to_csv(const DefenseMatrix& m);
std::string to_json(const DefenseMatrix& m);

struct Aggregate {
  std::string scenario;
  std::string attack;
  std::string phase;
  std::string metric;
  size_t n = 0;
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for a single run
};
std::vector<Aggregate> aggregate(const Report& r);
// Re-aggregates the per-run rows of previously written CSV reports.
std::vector<Aggregate> aggregate_csv(const std::vector<std::string>& csv_texts);

std::string format_number(double v);

}  // namespace offpath::harness
