#pragma once

// Attacker-side inference. Everything here is written against AttackerNode
// and the puppet channel only; ground truth never flows in.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "offpath/attacker.hpp"
#include "offpath/puppet.hpp"

namespace offpath {

// Public knowledge: who talks to whom, and on which well-known port.
struct Target {
  Addr client = 0;
  Addr server = 0;
  uint16_t server_port = 80;
};

struct PhaseTrace {
  std::string phase;
  bool success = false;
  uint64_t packets = 0;
  uint64_t bytes = 0;
  SimTime started = 0;
  SimTime finished = 0;
  int attempts = 0;
};

// ---------------------------------------------------------------------------
// Puppet side: one script object serves every phase.

struct PuppetScriptConfig {
  int n = 32;
  std::string big_path = "/big";
  std::string missing_prefix = "/nf";
  double slow_ratio = 2.2;
  uint32_t not_found_size = 200;
  SimTime response_timeout = 3 * kSec;
};

class PuppetScript {
 public:
  PuppetScript(PuppetApi& api, PuppetScriptConfig cfg);
  const std::string& victim_host() const { return victim_; }

 private:
  void on_message(const Message& m);
  void round(int64_t i, bool fetch, SimTime fetch_delay);
  void observe_fill();
  void cseq_request(int64_t iteration);
  void on_any_response(const PuppetResponse& r);
  std::string next_missing();

  PuppetApi& api_;
  PuppetScriptConfig cfg_;
  std::vector<std::string> names_;
  std::string victim_;
  uint64_t missing_counter_ = 0;
  // Observe-phase state.
  enum class Mode { idle, observe, cseq } mode_ = Mode::idle;
  bool paused_ = false;
  int outstanding_ = 0;
  int64_t cseq_iter_ = -1;
  uint64_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Port de-randomization by timing the fetches the puppet makes.

enum class ProbeTiming { window, early };

struct PortSearchConfig {
  int n = 32;
  uint16_t lo = 32768;
  uint16_t hi = 61000;
  int retries = 3;
  ProbeTiming timing = ProbeTiming::window;
  SimTime guard = 3 * kMsec;
  SimTime early_pad = 30 * kMsec;
  SimTime round_timeout = 20 * kSec;
};

struct PortSearchResult {
  bool success = false;
  uint16_t port = 0;
  int iterations = 0;         // search iterations of the successful (or last) attempt
  uint64_t probe_triplets = 0;  // over all attempts, verification included
  uint64_t last_attempt_triplets = 0;
  int attempts = 0;
  PhaseTrace trace;
};

class PortSearch {
 public:
  using Done = std::function<void(const PortSearchResult&)>;
  // Fires after each round with the candidate start indices still alive.
  using RoundHook = std::function<void(int iteration, const std::vector<std::pair<uint32_t, uint32_t>>&)>;

  PortSearch(AttackerNode& node, Channel& channel, Target target, PortSearchConfig cfg);
  void start(Done done);
  RoundHook on_round;

  // Unit arithmetic, public for tests.
  uint32_t range_size() const { return range_; }
  uint32_t unit_count() const { return units_total_; }
  uint32_t unit_first(uint32_t k) const;
  // Port index whose probe covers unit k in iteration i (1-based).
  uint32_t probe_index(uint32_t k, int iteration) const;
  int iteration_count() const { return iterations_; }

 private:
  void on_message(const Message& m);
  void begin_attempt();
  void send_round();
  void launch_probes(const std::vector<uint32_t>& indices);
  void report_round();
  void finish(bool ok);
  void arm_timeout();

  AttackerNode& node_;
  Channel& channel_;
  Target target_;
  PortSearchConfig cfg_;
  uint32_t range_;
  uint32_t units_total_;
  int iterations_;
  Done done_;
  Rng rng_;
  SimTime ping_at_ = 0;
  SimTime rtt_ch_ = 0;
  std::vector<uint32_t> units_;
  size_t probed_count_ = 0;
  int iter_ = 0;
  bool verifying_ = false;
  uint32_t candidate_ = 0;
  uint64_t epoch_ = 0;
  PortSearchResult res_;
  uint64_t pkt0_ = 0;
  uint64_t bytes0_ = 0;
};

// ---------------------------------------------------------------------------
// Server sequence number: window-sized guesses, read back through the puppet.

struct ServerSeqConfig {
  uint32_t wnd = 1u << 16;
  uint32_t padding = 247 + 1460;
  int retries = 3;
  SimTime settle = 100 * kMsec;
  SimTime observe_timeout = 15 * kSec;
};

struct ServerSeqResult {
  bool success = false;
  uint32_t next_seq = 0;
  uint64_t inject_packets = 0;  // last attempt
  int attempts = 0;
  bool first_attempt_failed = false;
  PhaseTrace trace;
};

class ServerSeqSearch {
 public:
  using Done = std::function<void(const ServerSeqResult&)>;
  ServerSeqSearch(AttackerNode& node, Channel& channel, Target target, uint16_t client_port, ServerSeqConfig cfg);
  void start(Done done);
  // Fires when the Inject step of an attempt has fully left the attacker.
  std::function<void()> on_injected;

  static std::string probe_payload(uint32_t seq, uint32_t padding);
  // Parses trailing decimal digits; empty when absent.
  static std::optional<uint64_t> trailing_number(const std::string& body, size_t* ndigits);

 private:
  void on_message(const Message& m);
  void attempt();
  void fail_attempt();

  AttackerNode& node_;
  Channel& channel_;
  Target target_;
  uint16_t cport_;
  ServerSeqConfig cfg_;
  Done done_;
  Rng rng_;
  uint32_t phi_ = 0;
  uint64_t epoch_ = 0;
  bool observing_ = false;
  ServerSeqResult res_;
  uint64_t inject0_ = 0;
  uint64_t pkt0_ = 0;
  uint64_t bytes0_ = 0;
};

// ---------------------------------------------------------------------------
// Client sequence number: binary search over the acknowledgment field.

struct ClientSeqConfig {
  uint32_t response_size = 247;
  int retries = 3;
  SimTime answer_timeout = 5 * kSec;
};

struct ClientSeqStep {
  int iteration = 0;
  uint32_t ack_low = 0;
  uint64_t span = 0;  // l, before halving
  bool r2 = false;
};

struct ClientSeqResult {
  bool success = false;
  uint32_t client_nxt = 0;
  uint32_t next_server_seq = 0;  // sigma after the last iteration
  int iterations = 0;
  uint64_t injected_responses = 0;
  int attempts = 0;
  PhaseTrace trace;
};

class ClientSeqSearch {
 public:
  using Done = std::function<void(const ClientSeqResult&)>;
  ClientSeqSearch(AttackerNode& node, Channel& channel, Target target, uint16_t client_port, uint32_t server_seq,
                  ClientSeqConfig cfg);
  void start(Done done);
  // Called right after the two responses of an iteration are injected, with
  // the interval the attacker believes holds the client's NXT.
  std::function<void(uint32_t ack_low, uint64_t span)> on_injected;
  std::function<void(const ClientSeqStep&)> on_step;

  static std::string response_bytes(const char* tag, uint32_t size);

 private:
  void on_message(const Message& m);
  void restart();
  void next_iteration();
  void inject(uint64_t request_bytes);

  AttackerNode& node_;
  Channel& channel_;
  Target target_;
  uint16_t cport_;
  ClientSeqConfig cfg_;
  Done done_;
  uint32_t ack_low_ = 0;
  uint64_t l_ = 1ull << 32;
  uint32_t sigma_;
  int iter_ = 0;
  uint64_t epoch_ = 0;
  bool awaiting_ = false;
  ClientSeqResult res_;
  uint64_t pkt0_ = 0;
  uint64_t bytes0_ = 0;
};

// ---------------------------------------------------------------------------

struct PipelineResult {
  PortSearchResult port;
  ServerSeqResult server;
  ClientSeqResult client;
  bool success = false;
};

class InjectionPipeline {
 public:
  using Done = std::function<void(const PipelineResult&)>;
  InjectionPipeline(AttackerNode& node, Channel& channel, Target target, PortSearchConfig pc, ServerSeqConfig sc,
                    ClientSeqConfig cc);
  void start(Done done);

 private:
  AttackerNode& node_;
  Channel& channel_;
  Target target_;
  PortSearchConfig pc_;
  ServerSeqConfig sc_;
  ClientSeqConfig cc_;
  std::unique_ptr<PortSearch> port_;
  std::unique_ptr<ServerSeqSearch> server_;
  std::unique_ptr<ClientSeqSearch> client_;
  PipelineResult res_;
};

}  // namespace offpath
