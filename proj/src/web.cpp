#include "offpath/web.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace offpath {

namespace {
constexpr std::string_view kHeaderTemplate = "HTTP/1.1 000 XX\r\nContent-Length: 0000000000\r\n\r\n";
constexpr uint64_t kInlineLimit = 4u << 20;

bool is_digit_pos(size_t i) { return (i >= 9 && i < 12) || (i >= 33 && i < 43); }
bool is_reason_pos(size_t i) { return i == 13 || i == 14; }

uint64_t key_of(const FourTuple& t, bool client_side) {
  return client_side ? session_key(t.local_addr, t.local_port, t.remote_addr, t.remote_port)
                     : session_key(t.remote_addr, t.remote_port, t.local_addr, t.local_port);
}
}  // namespace

std::string http_header(int status, uint64_t content_length) {
  char buf[64];
  const char* reason = status == 200 ? "OK" : status == 404 ? "NF" : "XX";
  std::snprintf(buf, sizeof buf, "HTTP/1.1 %03d %s\r\nContent-Length: %010llu\r\n\r\n", status, reason,
                static_cast<unsigned long long>(content_length));
  return buf;
}

std::string http_request(std::string_view host, std::string_view path) {
  std::string s = "GET ";
  s.append(path);
  s.append(" HTTP/1.1\r\nHost: ");
  s.append(host);
  s.append("\r\n\r\n");
  return s;
}

std::string not_found_body(uint32_t size) {
  std::string s = "NOT FOUND";
  if (s.size() > size) return s.substr(0, size);
  s.resize(size, '.');
  return s;
}

HeaderCheck check_header(std::string_view prefix, int* status, uint64_t* length) {
  size_t n = std::min(prefix.size(), kHeaderTemplate.size());
  for (size_t i = 0; i < n; ++i) {
    unsigned char c = static_cast<unsigned char>(prefix[i]);
    if (is_digit_pos(i)) {
      if (!std::isdigit(c)) return HeaderCheck::invalid;
    } else if (is_reason_pos(i)) {
      if (!std::isalpha(c)) return HeaderCheck::invalid;
    } else if (c != static_cast<unsigned char>(kHeaderTemplate[i])) {
      return HeaderCheck::invalid;
    }
  }
  if (prefix.size() < kHeaderTemplate.size()) return HeaderCheck::incomplete;
  if (status) *status = std::stoi(std::string(prefix.substr(9, 3)));
  if (length) *length = std::stoull(std::string(prefix.substr(33, 10)));
  return HeaderCheck::valid;
}

uint64_t session_key(Addr client, uint16_t client_port, Addr server, uint16_t server_port) {
  uint64_t st = (static_cast<uint64_t>(client) << 32) ^ (static_cast<uint64_t>(client_port) << 16) ^
                (static_cast<uint64_t>(server) << 40) ^ server_port ^ 0x7153c0deULL;
  return splitmix64(st) | 1;
}

// --- Browser ---------------------------------------------------------------

Browser::Browser(TcpHost& host, BrowserConfig cfg) : host_(host), cfg_(cfg) {}

size_t Browser::pending(const std::string& hostname) const {
  auto it = pool_.find(hostname);
  return it == pool_.end() ? 0 : it->second.pending.size();
}

TcpHost::ConnId Browser::conn_of(const std::string& hostname) const {
  auto it = pool_.find(hostname);
  return it == pool_.end() ? 0 : it->second.id;
}

void Browser::evict_if_full() {
  while (static_cast<int>(pool_.size()) >= cfg_.max_connections && !pool_.empty()) {
    auto victim = std::min_element(pool_.begin(), pool_.end(),
                                   [](const auto& a, const auto& b) { return a.second.lru < b.second.lru; });
    drop_entry(victim->first, "evicted", false, false);
  }
}

void Browser::open(const std::string& hostname, std::function<void(bool)> done) {
  auto it = pool_.find(hostname);
  if (it != pool_.end()) {
    it->second.lru = ++clock_;
    if (it->second.established) {
      if (done) done(true);
    } else if (done) {
      it->second.on_open.push_back(std::move(done));
    }
    return;
  }
  auto dit = dns_.find(hostname);
  if (dit == dns_.end()) {
    if (done) done(false);
    return;
  }
  evict_if_full();
  Entry& e = pool_[hostname];
  e.lru = ++clock_;
  if (done) e.on_open.push_back(std::move(done));
  TcpHost::ConnId id = host_.connect(dit->second, cfg_.server_port, [this, hostname](TcpHost::ConnId cid, bool ok) {
    auto jt = pool_.find(hostname);
    if (jt == pool_.end() || jt->second.id != cid) return;
    Entry& en = jt->second;
    if (!ok) {
      auto waiters = std::move(en.on_open);
      drop_entry(hostname, "connect failed", false, false);
      for (auto& w : waiters) w(false);
      return;
    }
    en.established = true;
    by_conn_[cid] = hostname;
    TcpHost::Callbacks cb;
    cb.on_data = [this](TcpHost::ConnId x) {
      auto kt = by_conn_.find(x);
      if (kt != by_conn_.end()) on_data(kt->second);
    };
    cb.on_reset = [this](TcpHost::ConnId x) {
      auto kt = by_conn_.find(x);
      if (kt == by_conn_.end()) return;
      std::string h = kt->second;
      by_conn_.erase(kt);
      auto pt = pool_.find(h);
      if (pt == pool_.end()) return;
      auto pend = std::move(pt->second.pending);
      pool_.erase(pt);
      for (auto& p : pend) {
        HttpResponse r;
        r.error = "connection reset";
        r.issued = p.issued;
        r.completed = host_.now();
        if (p.cb) p.cb(r);
      }
    };
    host_.set_callbacks(cid, cb);
    uint64_t mac = cfg_.tls ? key_of(host_.get(cid)->tuple(), true) : 0;
    auto unsent = std::move(en.unsent);
    auto waiters = std::move(en.on_open);
    for (auto& req : unsent) host_.send(cid, Payload::from(std::move(req), mac));
    for (auto& w : waiters) w(true);
  });
  auto jt = pool_.find(hostname);
  if (jt != pool_.end()) jt->second.id = id;
}

void Browser::request(const std::string& hostname, const std::string& path, ResponseFn cb) {
  if (!pool_.count(hostname)) open(hostname, nullptr);
  auto it = pool_.find(hostname);
  if (it == pool_.end()) {
    HttpResponse r;
    r.error = "unresolvable host";
    if (cb) cb(r);
    return;
  }
  Entry& e = it->second;
  e.lru = ++clock_;
  e.pending.push_back(Pending{path, std::move(cb), host_.now()});
  std::string req = http_request(hostname, path);
  TcpConnection* c = e.established ? host_.get(e.id) : nullptr;
  if (!c) {
    e.unsent.push_back(std::move(req));
    return;
  }
  uint64_t mac = cfg_.tls ? key_of(c->tuple(), true) : 0;
  bool has_rx = c->app_rx_bytes() > 0;
  host_.send(e.id, Payload::from(std::move(req), mac));
  if (has_rx) on_data(hostname);
}

std::string Browser::peek(TcpConnection& c, size_t n) const {
  std::string s;
  s.reserve(std::min<size_t>(n, c.app_rx_bytes()));
  for (const Payload& p : c.app_rx()) {
    if (s.size() >= n) break;
    std::string_view v = p.view();
    s.append(v.substr(0, n - s.size()));
  }
  return s;
}

void Browser::complete(Entry& e, HttpResponse r) {
  Pending p = std::move(e.pending.front());
  e.pending.pop_front();
  e.in_body = false;
  e.body.clear();
  e.body_size = 0;
  e.remaining = 0;
  r.issued = p.issued;
  r.completed = host_.now();
  if (p.cb) p.cb(r);
}

void Browser::drop_entry(const std::string& hostname, const std::string& why, bool integrity, bool rst) {
  auto it = pool_.find(hostname);
  if (it == pool_.end()) return;
  TcpHost::ConnId id = it->second.id;
  auto pend = std::move(it->second.pending);
  pool_.erase(it);
  by_conn_.erase(id);
  if (id != 0) {
    if (rst)
      host_.abort(id);
    else
      host_.close_and_forget(id);
  }
  for (auto& p : pend) {
    HttpResponse r;
    r.error = why;
    r.integrity_failure = integrity;
    r.issued = p.issued;
    r.completed = host_.now();
    if (p.cb) p.cb(r);
  }
}

void Browser::on_data(const std::string& hostname) {
  for (;;) {
    auto it = pool_.find(hostname);
    if (it == pool_.end()) return;
    Entry& e = it->second;
    TcpConnection* c = host_.get(e.id);
    if (!c || c->app_rx_bytes() == 0) return;

    if (cfg_.tls) {
      uint64_t key = key_of(c->tuple(), true);
      for (const Payload& p : c->app_rx()) {
        if (p.mac != key) {
          drop_entry(hostname, "integrity failure", true, true);
          return;
        }
      }
    }
    if (e.pending.empty()) {
      if (cfg_.flush_rx_when_idle) {
        flushed_ += c->app_rx_bytes();
        c->consume_rx(c->app_rx_bytes());
      }
      return;
    }
    if (!e.in_body) {
      std::string head = peek(*c, kHttpHeaderSize);
      int status = 0;
      uint64_t length = 0;
      HeaderCheck hc = check_header(head, &status, &length);
      if (hc == HeaderCheck::incomplete) return;
      if (hc == HeaderCheck::invalid) {
        if (cfg_.policy == ParsePolicy::reset_connection) {
          drop_entry(hostname, "unparseable response", false, true);
          return;
        }
        // Everything readable is handed over as if it were one 200 response.
        HttpResponse r;
        r.ok = true;
        r.wrapped = true;
        r.status = 200;
        r.body_size = c->app_rx_bytes();
        r.body = peek(*c, cfg_.body_cap);
        c->consume_rx(c->app_rx_bytes());
        complete(e, std::move(r));
        continue;
      }
      c->consume_rx(kHttpHeaderSize);
      e.in_body = true;
      e.status = status;
      e.remaining = length;
    }
    uint64_t take = std::min<uint64_t>(e.remaining, c->app_rx_bytes());
    if (e.body.size() < cfg_.body_cap && take > 0) {
      e.body += peek(*c, std::min<uint64_t>(take, cfg_.body_cap - e.body.size()));
    }
    c->consume_rx(take);
    e.remaining -= take;
    e.body_size += take;
    if (e.remaining == 0) {
      HttpResponse r;
      r.ok = true;
      r.status = e.status;
      r.body = std::move(e.body);
      r.body_size = e.body_size;
      complete(e, std::move(r));
      continue;
    }
    return;
  }
}

// --- ServerApp -------------------------------------------------------------

ServerApp::ServerApp(TcpHost& host, ServerConfig cfg) : host_(host), cfg_(std::move(cfg)) {
  host_.listen(cfg_.port, [this](TcpHost::ConnId id) {
    TcpHost::Callbacks cb;
    cb.on_data = [this](TcpHost::ConnId x) { on_data(x); };
    cb.on_reset = [this](TcpHost::ConnId x) { rx_.erase(x); };
    host_.set_callbacks(id, cb);
  });
}

uint64_t ServerApp::response_size(const std::string& path) const {
  auto it = cfg_.objects.find(path);
  return kHttpHeaderSize + (it == cfg_.objects.end() ? cfg_.not_found_body_size : it->second);
}

void ServerApp::on_data(TcpHost::ConnId id) {
  TcpConnection* c = host_.get(id);
  if (!c) return;
  std::string& buf = rx_[id];
  uint64_t key = cfg_.tls ? key_of(c->tuple(), false) : 0;
  for (const Payload& p : c->app_rx()) {
    if (cfg_.tls && p.mac != key) {
      rx_.erase(id);
      host_.abort(id);
      return;
    }
    buf.append(p.view());
  }
  c->consume_rx(c->app_rx_bytes());
  for (;;) {
    size_t end = buf.find("\r\n\r\n");
    if (end == std::string::npos) break;
    std::string req = buf.substr(0, end);
    buf.erase(0, end + 4);
    std::string path = "/";
    if (req.rfind("GET ", 0) == 0) {
      size_t sp = req.find(' ', 4);
      path = req.substr(4, sp == std::string::npos ? std::string::npos : sp - 4);
    }
    respond(id, path);
    if (!host_.get(id)) return;
  }
}

void ServerApp::respond(TcpHost::ConnId id, const std::string& path) {
  TcpConnection* c = host_.get(id);
  if (!c) return;
  uint64_t mac = cfg_.tls ? key_of(c->tuple(), false) : 0;
  served_++;
  auto it = cfg_.objects.find(path);
  bool found = it != cfg_.objects.end();
  uint64_t size = found ? it->second : cfg_.not_found_body_size;
  if (size <= kInlineLimit) {
    auto& cached = cache_[path];
    if (!cached) {
      std::string s = http_header(found ? 200 : 404, size);
      if (found)
        s.append(size, 'o');
      else
        s += not_found_body(cfg_.not_found_body_size);
      cached = std::make_shared<const std::string>(std::move(s));
    }
    Payload p;
    p.buf = cached;
    p.len = static_cast<uint32_t>(cached->size());
    p.mac = mac;
    host_.send(id, p);
  } else {
    host_.send(id, Payload::from(http_header(200, size), mac));
    host_.send_bulk(id, size, mac);
  }
  if (!cfg_.persistent) host_.close(id);
}

}  // namespace offpath
