// offpath command line: scenario runs, sweeps, the defense matrix, coremelt
// planning and report aggregation.
//
// Exit codes: 0 completed (attacks may still have failed), 2 configuration
// error, 3 I/O error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "offpath/harness.hpp"

namespace fs = std::filesystem;
using namespace offpath;
using namespace offpath::harness;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f || !(f << text)) throw IoError("cannot write " + out);
}

struct Common {
  std::optional<uint64_t> seed;
  std::optional<int> repeat;
  std::string out;
  std::string format = "csv";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "override the scenario seed");
  app->add_option("--repeat", c.repeat, "number of runs, seeds seed..seed+repeat-1")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "output file (default stdout)");
  app->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

Scenario load(const std::string& path, const Common& c) {
  if (!fs::exists(path)) throw IoError("no such scenario file: " + path);
  Scenario s = load_scenario(path);
  if (c.seed) apply_override(s, "seed", std::to_string(*c.seed));
  if (c.repeat) s.repeat = *c.repeat;
  return s;
}

std::string render(const Report& r, const std::string& format) { return format == "json" ? to_json(r) : to_csv(r); }

std::string render_aggregates(const std::vector<Aggregate>& v, const std::string& format) {
  if (format == "json") {
    nlohmann::json j = nlohmann::json::array();
    for (const Aggregate& a : v) {
      nlohmann::json e = {{"scenario", a.scenario}, {"attack", a.attack}, {"phase", a.phase},
                          {"metric", a.metric},     {"n", a.n}};
      e["mean"] = std::isfinite(a.mean) ? nlohmann::json(a.mean) : nlohmann::json(format_number(a.mean));
      e["stddev"] = std::isfinite(a.stddev) ? nlohmann::json(a.stddev) : nlohmann::json(format_number(a.stddev));
      j.push_back(e);
    }
    return j.dump(2) + "\n";
  }
  std::string out = "scenario,attack,phase,metric,n,mean,stddev\n";
  for (const Aggregate& a : v)
    out += a.scenario + "," + a.attack + "," + a.phase + "," + a.metric + "," + std::to_string(a.n) + "," +
           format_number(a.mean) + "," + format_number(a.stddev) + "\n";
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-path TCP injection and clogging simulator"};
  app.require_subcommand(1);

  Common run_c, sweep_c, def_c, rep_c, cm_c;

  std::string run_path;
  auto* run_cmd = app.add_subcommand("run", "run a scenario file");
  run_cmd->add_option("scenario", run_path)->required();
  add_common(run_cmd, run_c);

  std::string sweep_path, sweep_param;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a scenario over values of one key");
  sweep_cmd->add_option("scenario", sweep_path)->required();
  sweep_cmd->add_option("--param", sweep_param, "key=v1,v2,...")->required();
  add_common(sweep_cmd, sweep_c);

  std::string def_path;
  auto* def_cmd = app.add_subcommand("defenses", "toggle each defense against the scenario's attack");
  def_cmd->add_option("scenario", def_path)->required();
  add_common(def_cmd, def_c);

  std::string rep_dir;
  auto* rep_cmd = app.add_subcommand("report", "aggregate the CSV reports in a directory");
  rep_cmd->add_option("dir", rep_dir)->required();
  add_common(rep_cmd, rep_c);

  std::string cm_action, cm_topo, cm_routes, cm_res, cm_plan;
  bool cm_shortest = false;
  double cm_duration = 5;
  auto* cm_cmd = app.add_subcommand("coremelt", "plan, evaluate or simulate link-flooding allocations");
  cm_cmd->add_option("action", cm_action)->required()->check(CLI::IsMember({"plan", "evaluate", "simulate"}));
  cm_cmd->add_option("--topology", cm_topo)->required();
  cm_cmd->add_option("--routes", cm_routes);
  cm_cmd->add_option("--resources", cm_res)->required();
  cm_cmd->add_option("--plan", cm_plan, "plan file; solved from scratch when absent");
  cm_cmd->add_flag("--shortest-routes", cm_shortest, "fill missing routes with shortest paths");
  cm_cmd->add_option("--duration", cm_duration, "simulated seconds")->check(CLI::PositiveNumber);
  add_common(cm_cmd, cm_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) {
      Scenario s = load(run_path, run_c);
      emit(run_c.out, render(run(s), run_c.format));
    } else if (*sweep_cmd) {
      Scenario s = load(sweep_path, sweep_c);
      size_t eq = sweep_param.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 >= sweep_param.size())
        throw ConfigError("--param expects key=v1,v2,...");
      auto values = split(sweep_param.substr(eq + 1), ',');
      auto points = sweep(s, sweep_param.substr(0, eq), values);
      std::string text;
      if (sweep_c.format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const SweepPoint& p : points) j.push_back(nlohmann::json::parse(to_json(p.report)));
        text = j.dump(2) + "\n";
      } else {
        bool first = true;
        for (const SweepPoint& p : points) {
          std::string csv = to_csv(p.report);
          text += first ? csv : csv.substr(csv.find('\n') + 1);
          first = false;
        }
      }
      emit(sweep_c.out, text);
    } else if (*def_cmd) {
      Scenario s = load(def_path, def_c);
      DefenseMatrix m = defense_matrix(s);
      emit(def_c.out, def_c.format == "json" ? to_json(m) : to_csv(m));
    } else if (*rep_cmd) {
      if (!fs::is_directory(rep_dir)) throw IoError("not a directory: " + rep_dir);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(rep_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      std::vector<std::string> texts;
      for (const fs::path& f : files) texts.push_back(slurp(f.string()));
      emit(rep_c.out, render_aggregates(aggregate_csv(texts), rep_c.format));
    } else if (*cm_cmd) {
      using namespace offpath::coremelt;
      AsGraph g = parse_topology(slurp(cm_topo), cm_topo);
      if (!cm_routes.empty()) parse_routes(g, slurp(cm_routes), cm_routes);
      if (cm_shortest) g.fill_shortest_routes();
      AttackResources r = parse_resources(slurp(cm_res), cm_res);
      Solution sol;
      if (!cm_plan.empty()) {
        sol.plan = parse_plan(slurp(cm_plan), cm_plan);
      } else {
        sol = build_and_solve(g, r);
      }
      if (cm_action == "plan") {
        if (cm_c.format == "json") {
          nlohmann::json j;
          j["objective"] = sol.objective;
          j["cut_capacity"] = sol.cut.capacity;
          j["variables"] = sol.variables;
          j["constraints"] = sol.constraints;
          j["pivots"] = sol.pivots;
          j["plan"] = format_plan(sol.plan);
          emit(cm_c.out, j.dump(2) + "\n");
        } else {
          emit(cm_c.out, format_plan(sol.plan));
        }
        return 0;
      }
      Evaluation ev = evaluate_plan(g, r, sol.plan);
      if (cm_action == "evaluate") {
        nlohmann::json j;
        j["disconnected_pairs"] = ev.disconnected;
        j["pairs"] = ev.pairs;
        nlohmann::json loads = nlohmann::json::object();
        for (size_t e = 0; e < ev.loads.size(); ++e) {
          const Edge& ed = g.edges()[e];
          loads[std::to_string(ed.from) + "->" + std::to_string(ed.to)] = ev.loads[e];
        }
        j["loads"] = loads;
        nlohmann::json sat = nlohmann::json::array();
        for (EdgeId e : ev.saturated) {
          const Edge& ed = g.edges()[static_cast<size_t>(e)];
          sat.push_back(std::to_string(ed.from) + "->" + std::to_string(ed.to));
        }
        j["saturated"] = sat;
        if (cm_c.format == "json") {
          emit(cm_c.out, j.dump(2) + "\n");
        } else {
          std::string out = "edge,capacity,load,saturated\n";
          for (size_t e = 0; e < ev.loads.size(); ++e) {
            const Edge& ed = g.edges()[e];
            bool s = std::find(ev.saturated.begin(), ev.saturated.end(), static_cast<EdgeId>(e)) != ev.saturated.end();
            out += std::to_string(ed.from) + "->" + std::to_string(ed.to) + "," + format_number(ed.capacity) + "," +
                   format_number(ev.loads[e]) + "," + (s ? "1" : "0") + "\n";
          }
          out += "# disconnected " + std::to_string(ev.disconnected) + "/" + std::to_string(ev.pairs) + "\n";
          emit(cm_c.out, out);
        }
        return 0;
      }
      SimulateConfig sc;
      sc.seed = cm_c.seed.value_or(1);
      sc.duration = static_cast<SimTime>(cm_duration * kSec);
      if (sc.warmup >= sc.duration) sc.warmup = sc.duration / 10;
      SimulationReport rep = simulate_plan(g, r, sol.plan, sc);
      if (cm_c.format == "json") {
        nlohmann::json j;
        j["model_gaps"] = rep.model_gaps;
        j["edges"] = nlohmann::json::array();
        for (const EdgeMeasurement& m : rep.edges) {
          const Edge& ed = g.edges()[static_cast<size_t>(m.edge)];
          j["edges"].push_back({{"edge", std::to_string(ed.from) + "->" + std::to_string(ed.to)},
                                {"capacity", m.capacity},
                                {"predicted", m.predicted},
                                {"saturated", m.saturated},
                                {"offered_mbps", m.offered_mbps},
                                {"loss_rate", m.loss_rate},
                                {"cross_baseline", m.cross_baseline},
                                {"cross_attacked", m.cross_attacked},
                                {"collapse", m.collapse}});
        }
        emit(cm_c.out, j.dump(2) + "\n");
      } else {
        std::string out = "edge,capacity,predicted,saturated,offered_mbps,loss_rate,cross_baseline,cross_attacked,collapse\n";
        for (const EdgeMeasurement& m : rep.edges) {
          const Edge& ed = g.edges()[static_cast<size_t>(m.edge)];
          out += std::to_string(ed.from) + "->" + std::to_string(ed.to) + "," + format_number(m.capacity) + "," +
                 format_number(m.predicted) + "," + (m.saturated ? "1" : "0") + "," + format_number(m.offered_mbps) +
                 "," + format_number(m.loss_rate) + "," + format_number(m.cross_baseline) + "," +
                 format_number(m.cross_attacked) + "," + format_number(m.collapse) + "\n";
        }
        out += "# model_gaps " + std::to_string(rep.model_gaps) + "\n";
        emit(cm_c.out, out);
      }
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const coremelt::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const coremelt::PlanError& e) {
    std::cerr << "invalid plan: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
