#include "offpath/tcp.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

namespace offpath {

PortAllocator::PortAllocator(PortAlgorithm alg, Rng rng, uint16_t lo, uint16_t hi)
    : alg_(alg), rng_(rng), lo_(lo), hi_(hi) {}

uint16_t PortAllocator::allocate(Addr destination) {
  switch (alg_) {
    case PortAlgorithm::fully_random:
      return draw();
    case PortAlgorithm::constant:
      if (!constant_) constant_ = draw();
      return *constant_;
    case PortAlgorithm::simple_hash_based:
      break;
  }
  auto it = next_.find(destination);
  if (it == next_.end()) it = next_.emplace(destination, draw()).first;
  uint16_t port = it->second;
  it->second = port >= hi_ ? lo_ : static_cast<uint16_t>(port + 1);
  return port;
}

namespace {

const std::shared_ptr<const std::string>& filler_block() {
  static const auto block = std::make_shared<const std::string>(size_t{1} << 20, 'x');
  return block;
}

}  // namespace

TcpConnection::TcpConnection(FourTuple tuple, const TcpConfig& cfg, uint32_t iss, uint32_t irs,
                             SimTime now)
    : tuple_(tuple),
      cfg_(cfg),
      snd_una_(iss),
      snd_nxt_(iss),
      snd_ptr_(iss),
      recover_(iss),
      cwnd_(static_cast<double>(cfg.init_cwnd_segments) * cfg.mss),
      ssthresh_(cfg.init_ssthresh),
      quota_start_(now),
      rcv_nxt_(irs) {
  if (cwnd_ < cfg_.mss) cwnd_ = cfg_.mss;
  if (cwnd_ >= ssthresh_) state_ = CcState::congestion_avoidance;
  last_ack_sent_.ack = irs;
}

SimTime TcpConnection::rto() const {
  if (srtt_ == 0) return cfg_.initial_rto;
  return std::max(cfg_.min_rto, 2 * srtt_);
}

void TcpConnection::rtt_sample(SimTime sample) {
  if (sample <= 0) sample = 1;
  srtt_ = srtt_ == 0 ? sample : (7 * srtt_ + sample) / 8;
}

bool TcpConnection::in_window(uint32_t seq, uint32_t len) const {
  uint32_t off = seq - rcv_nxt_;
  if (off < cfg_.rcv_wnd) return true;
  if (len == 0) return false;
  // Starts below rcv_nxt but reaches into the window.
  uint32_t behind = rcv_nxt_ - seq;
  return behind > 0 && behind < len;
}

TcpOutput TcpConnection::on_segment(const Segment& seg, SimTime now) {
  TcpOutput out;
  if (closed_) return out;

  if (seg.has(kRst)) {
    if (seg.seq - rcv_nxt_ < cfg_.rcv_wnd) {
      closed_ = true;
      out.reset = true;
    }
    return out;
  }
  if (seg.has(kSyn)) return out;

  if (!in_window(seg.seq, seg.seq_len())) {
    Segment d;
    d.src_port = tuple_.local_port;
    d.dst_port = tuple_.remote_port;
    d.seq = snd_nxt_;
    d.ack = last_ack_sent_.ack;
    d.flags = kAck;
    d.sack = last_ack_sent_.sack;
    emit(&out, std::move(d));
    ctr_.dup_acks_sent++;
    out.dup_ack_sent = true;
    return out;
  }

  if (seg.has(kAck) && serial_lt(snd_nxt_, seg.ack)) {
    ctr_.future_acks_dropped++;
    out.dropped = true;
    return out;
  }

  if (seg.seq_len() > 0) {
    accept_data(seg, &out);
    emit(&out, make_ack());
  }
  if (seg.has(kAck)) process_ack(seg, now, &out);
  if (!closed_) try_send(now, &out);
  return out;
}

void TcpConnection::accept_data(const Segment& seg, TcpOutput* out) {
  int64_t start = static_cast<int32_t>(seg.seq - rcv_nxt_);
  uint32_t skip = start < 0 ? static_cast<uint32_t>(-start) : 0;
  if (skip > 0) start = 0;
  uint64_t a = rcv_abs_ + static_cast<uint64_t>(start);

  if (seg.payload.len > skip) {
    uint64_t limit = rcv_abs_ + cfg_.rcv_wnd;
    uint64_t b = std::min<uint64_t>(a + (seg.payload.len - skip), limit);
    if (b > a) {
      Payload p = seg.payload.slice(skip, static_cast<uint32_t>(b - a));
      // Newer bytes replace anything already buffered in [a, b).
      auto it = ooo_.lower_bound(a);
      if (it != ooo_.begin()) {
        auto prev = std::prev(it);
        uint64_t pa = prev->first;
        uint64_t pe = pa + prev->second.len;
        if (pe > a) {
          Payload old = prev->second;
          prev->second = old.slice(0, static_cast<uint32_t>(a - pa));
          if (pe > b) ooo_.emplace(b, old.slice(static_cast<uint32_t>(b - pa), static_cast<uint32_t>(pe - b)));
        }
      }
      it = ooo_.lower_bound(a);
      while (it != ooo_.end() && it->first < b) {
        uint64_t pa = it->first;
        uint64_t pe = pa + it->second.len;
        if (pe > b) {
          Payload rest = it->second.slice(static_cast<uint32_t>(b - pa), static_cast<uint32_t>(pe - b));
          ooo_.erase(it);
          ooo_.emplace(b, rest);
          break;
        }
        it = ooo_.erase(it);
      }
      ooo_.emplace(a, p);
      last_rcvd_abs_ = a;
    }
  }
  if (seg.has(kFin) && !fin_abs_) {
    uint64_t end = rcv_abs_ + static_cast<uint64_t>(static_cast<int32_t>(seg.seq - rcv_nxt_)) + seg.payload.len;
    if (end >= rcv_abs_) fin_abs_ = end;
  }

  while (!ooo_.empty() && ooo_.begin()->first == rcv_abs_) {
    Payload p = ooo_.begin()->second;
    ooo_.erase(ooo_.begin());
    rcv_abs_ += p.len;
    rcv_nxt_ += p.len;
    app_rx_bytes_ += p.len;
    out->delivered += p.len;
    app_rx_.push_back(std::move(p));
  }
  if (fin_abs_ && *fin_abs_ == rcv_abs_ && !fin_received_) {
    rcv_abs_ += 1;
    rcv_nxt_ += 1;
    fin_received_ = true;
    out->fin_received = true;
  }
}

void TcpConnection::consume_rx(uint64_t n) {
  while (n > 0 && !app_rx_.empty()) {
    Payload& f = app_rx_.front();
    if (f.len <= n) {
      n -= f.len;
      app_rx_bytes_ -= f.len;
      app_rx_.pop_front();
    } else {
      f.off += static_cast<uint32_t>(n);
      f.len -= static_cast<uint32_t>(n);
      app_rx_bytes_ -= n;
      n = 0;
    }
  }
}

std::vector<SackBlock> TcpConnection::build_sack() const {
  std::vector<SackBlock> blocks;
  if (!cfg_.sack_enabled || ooo_.empty()) return blocks;
  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  for (const auto& [a, p] : ooo_) {
    if (!ranges.empty() && ranges.back().second == a)
      ranges.back().second = a + p.len;
    else
      ranges.emplace_back(a, a + p.len);
  }
  auto to_seq = [this](uint64_t abs) { return rcv_nxt_ + static_cast<uint32_t>(abs - rcv_abs_); };
  size_t first = ranges.size();
  for (size_t i = 0; i < ranges.size(); ++i)
    if (last_rcvd_abs_ >= ranges[i].first && last_rcvd_abs_ < ranges[i].second) first = i;
  if (first < ranges.size()) blocks.push_back({to_seq(ranges[first].first), to_seq(ranges[first].second)});
  for (size_t i = ranges.size(); i-- > 0 && blocks.size() < 3;) {
    if (i == first) continue;
    blocks.push_back({to_seq(ranges[i].first), to_seq(ranges[i].second)});
  }
  return blocks;
}

Segment TcpConnection::make_ack() {
  Segment s;
  s.src_port = tuple_.local_port;
  s.dst_port = tuple_.remote_port;
  s.seq = snd_nxt_;
  s.ack = rcv_nxt_;
  s.flags = kAck;
  s.sack = build_sack();
  return s;
}

void TcpConnection::emit(TcpOutput* out, Segment s) {
  if (!s.has(kRst)) {
    last_ack_sent_.ack = s.ack;
    last_ack_sent_.sack = s.sack;
  }
  ctr_.segments_sent++;
  ctr_.wire_bytes_sent += 40 + s.payload.len + 8 * s.sack.size();
  ctr_.payload_bytes_sent += s.payload.len;
  out->emit.push_back(std::move(s));
}

void TcpConnection::process_ack(const Segment& seg, SimTime now, TcpOutput* out) {
  uint32_t ack = seg.ack;
  if (serial_lt(snd_una_, ack)) {
    for (const auto& [wseq, wlen] : withheld_) {
      if (serial_le(wseq + wlen, ack)) {
        out->optack_detected = true;
        close_with_rst(out);
        return;
      }
    }
    uint32_t acked = ack - snd_una_;
    uint64_t drop = acked;
    // A FIN we sent occupies sequence space but no buffer.
    if (drop > sndbuf_bytes_ + filler_pending_) drop = sndbuf_bytes_ + filler_pending_;
    refill(drop);
    uint64_t n = drop;
    while (n > 0 && !sndbuf_.empty()) {
      Payload& f = sndbuf_.front();
      if (f.len <= n) {
        n -= f.len;
        sndbuf_bytes_ -= f.len;
        sndbuf_.pop_front();
      } else {
        f.off += static_cast<uint32_t>(n);
        f.len -= static_cast<uint32_t>(n);
        sndbuf_bytes_ -= n;
        n = 0;
      }
    }
    snd_una_ = ack;
    if (serial_lt(snd_ptr_, snd_una_)) snd_ptr_ = snd_una_;
    if (timing_ && serial_le(timed_end_, ack)) {
      rtt_sample(now - timed_at_);
      timing_ = false;
    }
    dup_ack_count_ = 0;
    on_ack_progress(acked);
    rto_deadline_ = snd_una_ == snd_nxt_ ? kNever : now + rto();
  } else if (ack == snd_una_ && seg.payload.len == 0 && !seg.has(kFin)) {
    ctr_.dup_acks_received++;
    on_dup_ack(seg, now, out);
  }
  last_ack_rcvd_ = AckRecord{ack, seg.sack};
}

void TcpConnection::on_ack_progress(uint32_t acked_bytes) {
  if (state_ == CcState::slow_start) {
    cwnd_ += std::min<double>(acked_bytes, cfg_.mss);
    if (cwnd_ >= ssthresh_) state_ = CcState::congestion_avoidance;
  } else {
    cwnd_ += static_cast<double>(cfg_.mss) * cfg_.mss / cwnd_;
  }
}

bool TcpConnection::on_dup_ack(const Segment& seg, SimTime now, TcpOutput* out) {
  if (cfg_.sack_dupack_collapse && last_ack_rcvd_ && last_ack_rcvd_->ack == seg.ack &&
      last_ack_rcvd_->sack == seg.sack) {
    return false;
  }
  if (++dup_ack_count_ < 3) return false;
  dup_ack_count_ = 0;
  uint32_t outstanding = snd_nxt_ - snd_una_;
  if (cfg_.inflight_validation && outstanding < 3 * cfg_.mss) return false;
  if (serial_lt(snd_una_, recover_)) return false;
  loss_event(now, out);
  return true;
}

void TcpConnection::loss_event(SimTime now, TcpOutput* out) {
  ssthresh_ = static_cast<uint32_t>(std::max(cwnd_ / 2, 2.0 * cfg_.mss));
  cwnd_ = ssthresh_;
  state_ = CcState::congestion_avoidance;
  recover_ = snd_nxt_;
  ctr_.loss_events++;
  if (out) out->loss_event = true;
  uint32_t outstanding = snd_nxt_ - snd_una_;
  if (outstanding > 0 && out) {
    uint32_t len = std::min(cfg_.mss, outstanding);
    if (static_cast<uint64_t>(len) > sndbuf_bytes_ + filler_pending_)
      len = static_cast<uint32_t>(sndbuf_bytes_ + filler_pending_);
    if (len > 0) {
      timing_ = false;
      send_segment(snd_una_, len, now, out, true);
    }
  }
}

uint64_t TcpConnection::unsent_bytes() const {
  uint64_t total = sndbuf_bytes_ + filler_pending_;
  uint32_t sent = snd_ptr_ - snd_una_;
  return total > sent ? total - sent : 0;
}

void TcpConnection::refill(uint64_t upto) {
  while (sndbuf_bytes_ < upto && filler_pending_ > 0) {
    uint64_t chunk = std::min<uint64_t>(filler_pending_, filler_block()->size());
    Payload p;
    p.buf = filler_block();
    p.len = static_cast<uint32_t>(chunk);
    p.mac = filler_mac_;
    sndbuf_.push_back(p);
    sndbuf_bytes_ += chunk;
    filler_pending_ -= chunk;
  }
}

Payload TcpConnection::cut(uint32_t seq, uint32_t len) {
  uint64_t off = seq - snd_una_;
  refill(off + len);
  for (const Payload& p : sndbuf_) {
    if (off >= p.len) {
      off -= p.len;
      continue;
    }
    if (off + len <= p.len) return p.slice(static_cast<uint32_t>(off), len);
    break;
  }
  // Spans several buffers: copy.
  std::string s;
  s.reserve(len);
  uint64_t mac = 0;
  bool first = true;
  bool same_mac = true;
  off = seq - snd_una_;
  for (const Payload& p : sndbuf_) {
    if (s.size() >= len) break;
    if (off >= p.len) {
      off -= p.len;
      continue;
    }
    uint32_t take = std::min<uint32_t>(p.len - static_cast<uint32_t>(off), len - static_cast<uint32_t>(s.size()));
    s.append(p.view().substr(off, take));
    if (first) {
      mac = p.mac;
      first = false;
    } else if (p.mac != mac) {
      same_mac = false;
    }
    off = 0;
  }
  return Payload::from(std::move(s), same_mac ? mac : 0);
}

void TcpConnection::send_segment(uint32_t seq, uint32_t len, SimTime now, TcpOutput* out,
                                 bool retransmit) {
  Segment s;
  s.src_port = tuple_.local_port;
  s.dst_port = tuple_.remote_port;
  s.seq = seq;
  s.ack = rcv_nxt_;
  s.flags = kAck;
  s.payload = cut(seq, len);
  s.sack = build_sack();
  if (retransmit) {
    ctr_.retransmits++;
    withheld_.erase(seq);
  }
  if (cfg_.per_conn_quota > 0) quota_used_ += len;
  emit(out, std::move(s));
  if (rto_deadline_ == kNever) arm_rto(now);
}

void TcpConnection::arm_rto(SimTime now) { rto_deadline_ = now + rto(); }

void TcpConnection::try_send(SimTime now, TcpOutput* out) {
  while (!closed_) {
    uint32_t outstanding = snd_ptr_ - snd_una_;
    double wnd = std::min<double>(cwnd_, cfg_.rcv_wnd);
    uint64_t remaining = unsent_bytes();
    if (remaining == 0) {
      if (fin_pending_ && snd_una_ == snd_nxt_) {
        Segment s = make_ack();
        s.flags |= kFin;
        emit(out, std::move(s));
        snd_nxt_ += 1;
        closed_ = true;
      }
      break;
    }
    uint32_t len = static_cast<uint32_t>(std::min<uint64_t>(cfg_.mss, remaining));
    if (outstanding + len > wnd) break;
    if (cfg_.per_conn_quota > 0) {
      double allowed = cfg_.per_conn_quota * static_cast<double>(now - quota_start_) / 1e6;
      if (static_cast<double>(quota_used_ + len) > allowed) {
        double need_us = static_cast<double>(quota_used_ + len) * 1e6 / cfg_.per_conn_quota;
        quota_wake_ = quota_start_ + static_cast<SimTime>(std::ceil(need_us));
        if (quota_wake_ <= now) quota_wake_ = now + 1;
        break;
      }
    }
    uint32_t seq = snd_ptr_;
    bool fresh = seq == snd_nxt_;
    if (fresh) {
      ++new_segments_;
      if (cfg_.verify_every > 0 && new_segments_ % cfg_.verify_every == 0) {
        // Counted as sent but held back until the peer's ACKs force a retransmission.
        withheld_[seq] = len;
        snd_ptr_ += len;
        snd_nxt_ = snd_ptr_;
        if (cfg_.per_conn_quota > 0) quota_used_ += len;
        if (rto_deadline_ == kNever) arm_rto(now);
        continue;
      }
      if (!timing_) {
        timing_ = true;
        timed_end_ = seq + len;
        timed_at_ = now;
      }
    }
    send_segment(seq, len, now, out, !fresh);
    snd_ptr_ += len;
    if (serial_lt(snd_nxt_, snd_ptr_)) snd_nxt_ = snd_ptr_;
  }
}

TcpOutput TcpConnection::app_send(Payload data, SimTime now) {
  TcpOutput out;
  if (closed_ || data.len == 0) return out;
  if (filler_pending_ > 0) {
    // Keep stream order: materialize pending filler first.
    refill(sndbuf_bytes_ + filler_pending_);
  }
  sndbuf_bytes_ += data.len;
  sndbuf_.push_back(std::move(data));
  try_send(now, &out);
  return out;
}

TcpOutput TcpConnection::app_send_bulk(uint64_t n, SimTime now, uint64_t mac) {
  TcpOutput out;
  if (closed_ || n == 0) return out;
  if (filler_pending_ > 0 && mac != filler_mac_) refill(sndbuf_bytes_ + filler_pending_);
  filler_mac_ = mac;
  filler_pending_ += n;
  try_send(now, &out);
  return out;
}

TcpOutput TcpConnection::on_timer(SimTime now) {
  TcpOutput out;
  if (closed_) return out;
  if (quota_wake_ <= now) quota_wake_ = kNever;
  if (rto_deadline_ <= now) {
    if (snd_nxt_ == snd_una_) {
      rto_deadline_ = kNever;
    } else {
      ctr_.timeouts++;
      uint32_t flight = snd_nxt_ - snd_una_;
      ssthresh_ = std::max<uint32_t>(flight / 2, 2 * cfg_.mss);
      cwnd_ = cfg_.mss;
      state_ = CcState::slow_start;
      snd_ptr_ = snd_una_;
      dup_ack_count_ = 0;
      recover_ = snd_nxt_;
      timing_ = false;
      rto_deadline_ = now + rto();
    }
  }
  try_send(now, &out);
  return out;
}

SimTime TcpConnection::next_timer() const {
  if (closed_) return kNever;
  return std::min(rto_deadline_, quota_wake_);
}

TcpOutput TcpConnection::close(SimTime now, bool immediate) {
  TcpOutput out;
  if (closed_) return out;
  if (immediate) {
    Segment s = make_ack();
    s.flags |= kFin;
    emit(&out, std::move(s));
    snd_nxt_ += 1;
    closed_ = true;
    return out;
  }
  fin_pending_ = true;
  try_send(now, &out);
  return out;
}

void TcpConnection::close_with_rst(TcpOutput* out) {
  Segment s;
  s.src_port = tuple_.local_port;
  s.dst_port = tuple_.remote_port;
  s.seq = snd_nxt_;
  s.ack = rcv_nxt_;
  s.flags = kRst | kAck;
  emit(out, std::move(s));
  closed_ = true;
  out->reset = true;
}

TcpOutput TcpConnection::abort(SimTime /*now*/) {
  TcpOutput out;
  if (!closed_) close_with_rst(&out);
  return out;
}

}  // namespace offpath
