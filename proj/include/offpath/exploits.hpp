#pragma once

// Clogging exploits run over a hijacked client-server connection, and the
// cross-traffic degradation they cause.

#include <functional>
#include <limits>
#include <memory>
#include <string>

#include "offpath/testbed.hpp"

namespace offpath {

// Where the attacker's sequence numbers came from. The exploits run on a
// fresh connection, so in these drives they are read from simulator state.
enum class SeqSource { oracle, pipeline };
const char* to_string(SeqSource s);

struct OptAckConfig {
  SimTime interval = 240;      // between spoofed ACKs
  uint32_t stride = 2 * 1460;  // bytes acknowledged per ACK
  uint32_t window_cap = 65536;
  SimTime start_delay = 10 * kMsec;
  SimTime duration = 60 * kSec;
  uint64_t object_size = 8'000'000'000ull;
};

struct OptAckReport {
  SeqSource seq_source = SeqSource::oracle;
  uint64_t acks_sent = 0;
  uint64_t attacker_bytes = 0;
  uint64_t server_bytes = 0;
  double amplification = 0;
  double server_link_utilization = 0;
  uint64_t future_acks_dropped = 0;
  bool detected = false;  // server tore the connection down
  SimTime detected_at = 0;
  SimTime started = 0;
  SimTime finished = 0;
};

class OptAckDrive {
 public:
  using Done = std::function<void(const OptAckReport&)>;
  OptAckDrive(World& w, OptAckConfig cfg);
  // Puppet opens a connection and requests a large object; the attacker then
  // acknowledges ahead of delivery for cfg.duration.
  void start(Done done = nullptr);
  const OptAckReport& report() const { return rep_; }
  bool running() const { return running_; }

 private:
  void begin_acking();
  void tick();
  void finish();

  World& w_;
  OptAckConfig cfg_;
  Done done_;
  OptAckReport rep_;
  bool running_ = false;
  uint16_t port_ = 0;
  uint32_t client_seq_ = 0;
  uint32_t est_una_ = 0;
  double est_cwnd_ = 0;
  SimTime end_at_ = 0;
  uint64_t link_bytes0_ = 0;
  SimTime link_busy0_ = 0;
  uint64_t atk_bytes0_ = 0;
  LinkId server_link_ = 0;
};

struct AckStormConfig {
  SimTime interval = 100 * kMsec;
  SimTime duration = 60 * kSec;
  int max_seedings = 0;  // 0: one per interval for the whole duration
  SimTime stagger = -1;  // <0: derived from path delays
  SimTime settle = 200 * kMsec;
};

struct AckStormReport {
  SeqSource seq_source = SeqSource::oracle;
  uint64_t seedings = 0;
  uint64_t attacker_packets = 0;
  uint64_t attacker_bytes = 0;
  uint64_t dupacks_client = 0;
  uint64_t dupacks_server = 0;
  uint64_t storm_packets = 0;
  uint64_t storm_bytes = 0;
  SimTime first_seed = 0;
  // Virtual time at which the first ping-pong started bouncing.
  SimTime ball_start = 0;
  SimTime finished = 0;
};

class AckStormDrive {
 public:
  using Done = std::function<void(const AckStormReport&)>;
  AckStormDrive(World& w, AckStormConfig cfg);
  void start(Done done = nullptr);
  const AckStormReport& report() const { return rep_; }
  // Current dup-ack totals at each end (for lifetime measurements).
  void sample(uint64_t* client_dupacks, uint64_t* server_dupacks);

 private:
  void seed();
  void finish();

  World& w_;
  AckStormConfig cfg_;
  Done done_;
  AckStormReport rep_;
  uint16_t port_ = 0;
  uint32_t c_nxt_ = 0;
  uint32_t s_nxt_ = 0;
  SimTime stagger_ = 0;
  uint64_t c_dup0_ = 0;
  uint64_t s_dup0_ = 0;
};

// One bulk transfer between two TCP hosts of the world.
class BulkTransfer {
 public:
  BulkTransfer(World& w, std::string sender, std::string receiver, uint64_t bytes, uint16_t port = 9000);
  void start(std::function<void(SimTime elapsed)> done);
  bool complete() const { return complete_; }
  uint64_t received() const { return received_; }

 private:
  World& w_;
  std::string sender_;
  std::string receiver_;
  uint64_t bytes_;
  uint16_t port_;
  SimTime started_ = 0;
  uint64_t received_ = 0;
  bool complete_ = false;
};

enum class DegradationAttack { none, opt_ack, ack_storm };
const char* to_string(DegradationAttack a);

struct DegradationConfig {
  DegradationAttack attack = DegradationAttack::opt_ack;
  std::string sender = "server";
  std::string receiver = "probe_client";
  uint64_t transfer = 5'000'000;
  SimTime warmup = 2 * kSec;
  OptAckConfig opt_ack;
  AckStormConfig ack_storm;
};

constexpr double kSlowdownInfinite = std::numeric_limits<double>::infinity();

struct DegradationReport {
  SimTime baseline = 0;
  SimTime attacked = 0;  // 0 when it did not finish in time
  double slowdown = 1.0;
  bool completed = false;
};

// Times the transfer on a quiet world, then again under attack with the
// same seed. A transfer not done within 10x the baseline reports infinity.
DegradationReport measure_degradation(const WorldConfig& wc, const DegradationConfig& cfg);

}  // namespace offpath
