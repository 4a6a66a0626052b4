#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "offpath/simcore.hpp"

namespace offpath {

constexpr uint16_t kEphemeralLo = 32768;
constexpr uint16_t kEphemeralHi = 61000;
constexpr SimTime kNever = std::numeric_limits<SimTime>::max();

// a < b in 32-bit serial arithmetic: (b - a) mod 2^32 in [1, 2^31].
// With the closed upper end, exactly one of {x, x + 2^31} is ahead of any y.
inline bool serial_lt(uint32_t a, uint32_t b) {
  uint32_t d = b - a;
  return d != 0 && d <= 0x80000000u;
}
inline bool serial_le(uint32_t a, uint32_t b) { return a == b || serial_lt(a, b); }

enum class PortAlgorithm { simple_hash_based, fully_random, constant };

class PortAllocator {
 public:
  PortAllocator(PortAlgorithm alg, Rng rng, uint16_t lo = kEphemeralLo, uint16_t hi = kEphemeralHi);
  uint16_t allocate(Addr destination);
  PortAlgorithm algorithm() const { return alg_; }
  uint16_t lo() const { return lo_; }
  uint16_t hi() const { return hi_; }

 private:
  uint16_t draw() { return static_cast<uint16_t>(rng_.uniform_int(lo_, hi_)); }

  PortAlgorithm alg_;
  Rng rng_;
  uint16_t lo_;
  uint16_t hi_;
  std::map<Addr, uint16_t> next_;
  std::optional<uint16_t> constant_;
};

struct TcpConfig {
  uint32_t mss = 1460;
  uint32_t rcv_wnd = 1u << 16;
  uint32_t init_cwnd_segments = 10;
  uint32_t init_ssthresh = 64 * 1024;
  bool sack_enabled = true;
  bool inflight_validation = false;
  bool sack_dupack_collapse = false;
  // Bytes per second; 0 disables.
  double per_conn_quota = 0;
  // Server-induced verification: withhold every Nth new segment; 0 disables.
  uint32_t verify_every = 0;
  SimTime min_rto = 200 * kMsec;
  SimTime initial_rto = 1 * kSec;
};

enum class CcState { slow_start, congestion_avoidance };

struct FourTuple {
  Addr local_addr = 0;
  uint16_t local_port = 0;
  Addr remote_addr = 0;
  uint16_t remote_port = 0;
  bool operator==(const FourTuple&) const = default;
};

struct TcpOutput {
  std::vector<Segment> emit;
  uint32_t delivered = 0;
  bool dropped = false;
  bool dup_ack_sent = false;
  bool loss_event = false;
  bool reset = false;
  bool fin_received = false;
  bool optack_detected = false;
};

struct AckRecord {
  uint32_t ack = 0;
  std::vector<SackBlock> sack;
  bool operator==(const AckRecord&) const = default;
};

class TcpConnection {
 public:
  // Starts established: snd_una = snd_nxt = iss, rcv_nxt = irs.
  TcpConnection(FourTuple tuple, const TcpConfig& cfg, uint32_t iss, uint32_t irs, SimTime now);

  TcpOutput on_segment(const Segment& seg, SimTime now);
  TcpOutput app_send(Payload data, SimTime now);
  // Queues n bytes of filler content carrying integrity tag `mac`.
  TcpOutput app_send_bulk(uint64_t n, SimTime now, uint64_t mac = 0);
  TcpOutput on_timer(SimTime now);
  SimTime next_timer() const;
  // Graceful close: FIN goes out once queued data is acknowledged, or right
  // away when `immediate` (the caller then forgets the connection).
  TcpOutput close(SimTime now, bool immediate = false);
  // Abortive close: emits RST.
  TcpOutput abort(SimTime now);

  // Congestion-window primitives, public so they can be driven directly.
  void on_ack_progress(uint32_t acked_bytes);
  // Returns true when the duplicate triggered a loss event.
  bool on_dup_ack(const Segment& seg, SimTime now, TcpOutput* out);
  // External RTT sample (the handshake supplies the first one).
  void rtt_sample(SimTime sample);

  const FourTuple& tuple() const { return tuple_; }
  const TcpConfig& config() const { return cfg_; }
  uint32_t snd_una() const { return snd_una_; }
  uint32_t snd_nxt() const { return snd_nxt_; }
  uint32_t rcv_nxt() const { return rcv_nxt_; }
  double cwnd() const { return cwnd_; }
  uint32_t ssthresh() const { return ssthresh_; }
  CcState state() const { return state_; }
  int dup_ack_count() const { return dup_ack_count_; }
  const AckRecord& last_ack_sent() const { return last_ack_sent_; }
  uint32_t bytes_in_flight() const { return snd_ptr_ - snd_una_; }
  bool closed() const { return closed_; }
  bool fin_received() const { return fin_received_; }
  SimTime srtt() const { return srtt_; }
  SimTime rto() const;
  size_t ooo_ranges() const { return ooo_.size(); }

  std::deque<Payload>& app_rx() { return app_rx_; }
  uint64_t app_rx_bytes() const { return app_rx_bytes_; }
  void consume_rx(uint64_t n);

  struct Counters {
    uint64_t segments_sent = 0;
    uint64_t wire_bytes_sent = 0;
    uint64_t payload_bytes_sent = 0;
    uint64_t retransmits = 0;
    uint64_t dup_acks_sent = 0;
    uint64_t dup_acks_received = 0;
    uint64_t loss_events = 0;
    uint64_t timeouts = 0;
    uint64_t future_acks_dropped = 0;
  };
  const Counters& counters() const { return ctr_; }

 private:
  bool in_window(uint32_t seq, uint32_t len) const;
  void process_ack(const Segment& seg, SimTime now, TcpOutput* out);
  void accept_data(const Segment& seg, TcpOutput* out);
  std::vector<SackBlock> build_sack() const;
  Segment make_ack();
  void emit(TcpOutput* out, Segment s);
  void try_send(SimTime now, TcpOutput* out);
  void send_segment(uint32_t seq, uint32_t len, SimTime now, TcpOutput* out, bool retransmit);
  Payload cut(uint32_t seq, uint32_t len);
  void refill(uint64_t upto);
  uint64_t unsent_bytes() const;
  void loss_event(SimTime now, TcpOutput* out);
  void arm_rto(SimTime now);
  void close_with_rst(TcpOutput* out);

  FourTuple tuple_;
  TcpConfig cfg_;
  // Sender.
  uint32_t snd_una_;
  uint32_t snd_nxt_;  // highest sequence sent; never rewinds
  uint32_t snd_ptr_;  // next sequence to (re)transmit
  uint32_t recover_;
  double cwnd_;
  uint32_t ssthresh_;
  CcState state_ = CcState::slow_start;
  int dup_ack_count_ = 0;
  std::optional<AckRecord> last_ack_rcvd_;
  std::deque<Payload> sndbuf_;
  uint64_t sndbuf_bytes_ = 0;  // bytes in sndbuf_, starting at snd_una_
  uint64_t filler_pending_ = 0;
  uint64_t filler_mac_ = 0;
  bool fin_pending_ = false;
  std::map<uint32_t, uint32_t> withheld_;  // seq -> len
  uint64_t new_segments_ = 0;
  // Timers.
  SimTime rto_deadline_ = kNever;
  SimTime quota_wake_ = kNever;
  SimTime srtt_ = 0;
  bool timing_ = false;
  uint32_t timed_end_ = 0;
  SimTime timed_at_ = 0;
  SimTime quota_start_;
  uint64_t quota_used_ = 0;
  // Receiver.
  uint32_t rcv_nxt_;
  uint64_t rcv_abs_ = 0;
  std::map<uint64_t, Payload> ooo_;
  std::optional<uint64_t> fin_abs_;
  uint64_t last_rcvd_abs_ = 0;
  AckRecord last_ack_sent_;
  std::deque<Payload> app_rx_;
  uint64_t app_rx_bytes_ = 0;
  bool fin_received_ = false;
  bool closed_ = false;
  Counters ctr_;
};

}  // namespace offpath
