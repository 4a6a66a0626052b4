#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "offpath/host.hpp"

namespace offpath {

// Fixed-format HTTP: "HTTP/1.1 SSS RR\r\nContent-Length: DDDDDDDDDD\r\n\r\n".
constexpr size_t kHttpHeaderSize = 47;
constexpr uint16_t kHttpPort = 80;

std::string http_header(int status, uint64_t content_length);
std::string http_request(std::string_view host, std::string_view path);
std::string not_found_body(uint32_t size);

enum class HeaderCheck { valid, incomplete, invalid };
// Checks the first bytes of a response. status/length are set when valid.
HeaderCheck check_header(std::string_view prefix, int* status, uint64_t* length);

// Integrity key shared by the two ends of a TLS session.
uint64_t session_key(Addr client, uint16_t client_port, Addr server, uint16_t server_port);

enum class ParsePolicy { plaintext_wrap, reset_connection };

struct BrowserConfig {
  int max_connections = 32;
  ParsePolicy policy = ParsePolicy::plaintext_wrap;
  bool flush_rx_when_idle = true;
  bool tls = false;
  uint16_t server_port = kHttpPort;
  size_t body_cap = 1 << 20;
};

struct HttpResponse {
  bool ok = false;
  bool wrapped = false;
  bool integrity_failure = false;
  int status = 0;
  std::string body;  // truncated at body_cap
  uint64_t body_size = 0;
  SimTime issued = 0;
  SimTime completed = 0;
  std::string error;
};

class Browser {
 public:
  using ResponseFn = std::function<void(const HttpResponse&)>;

  Browser(TcpHost& host, BrowserConfig cfg);

  void set_dns(const std::string& name, Addr addr) { dns_[name] = addr; }
  // Opens (or reuses) the pool entry for a hostname.
  void open(const std::string& hostname, std::function<void(bool)> done);
  void request(const std::string& hostname, const std::string& path, ResponseFn cb);

  size_t pool_size() const { return pool_.size(); }
  bool has_connection(const std::string& hostname) const { return pool_.count(hostname) != 0; }
  size_t pending(const std::string& hostname) const;
  const BrowserConfig& config() const { return cfg_; }
  uint64_t flushed_bytes() const { return flushed_; }

  // Oracle access for tests and ground-truth readouts.
  TcpHost::ConnId conn_of(const std::string& hostname) const;
  TcpHost& host() { return host_; }

 private:
  struct Pending {
    std::string path;
    ResponseFn cb;
    SimTime issued;
  };
  struct Entry {
    TcpHost::ConnId id = 0;
    bool established = false;
    uint64_t lru = 0;
    std::vector<std::function<void(bool)>> on_open;
    std::vector<std::string> unsent;
    std::deque<Pending> pending;
    // Parser state for the response at the head of `pending`.
    bool in_body = false;
    int status = 0;
    uint64_t remaining = 0;
    std::string body;
    uint64_t body_size = 0;
  };

  void evict_if_full();
  void on_data(const std::string& hostname);
  void drop_entry(const std::string& hostname, const std::string& why, bool integrity, bool rst);
  void complete(Entry& e, HttpResponse r);
  std::string peek(TcpConnection& c, size_t n) const;

  TcpHost& host_;
  BrowserConfig cfg_;
  std::map<std::string, Addr> dns_;
  std::map<std::string, Entry> pool_;
  std::map<TcpHost::ConnId, std::string> by_conn_;
  uint64_t clock_ = 0;
  uint64_t flushed_ = 0;
};

struct ServerConfig {
  uint16_t port = kHttpPort;
  std::map<std::string, uint64_t> objects;
  uint32_t not_found_body_size = 200;
  bool persistent = true;
  bool tls = false;
};

class ServerApp {
 public:
  ServerApp(TcpHost& host, ServerConfig cfg);
  uint64_t requests_served() const { return served_; }
  const ServerConfig& config() const { return cfg_; }
  // Response size in bytes (header plus body) for a path.
  uint64_t response_size(const std::string& path) const;

 private:
  void on_data(TcpHost::ConnId id);
  void respond(TcpHost::ConnId id, const std::string& path);

  TcpHost& host_;
  ServerConfig cfg_;
  std::map<TcpHost::ConnId, std::string> rx_;
  std::map<std::string, std::shared_ptr<const std::string>> cache_;
  uint64_t served_ = 0;
};

}  // namespace offpath
