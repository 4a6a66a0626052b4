#include "offpath/puppet.hpp"

#include <memory>

#include "offpath/web.hpp"

namespace offpath {

void Channel::to_attacker(Message m) {
  count_++;
  sim_.after(delay_, [this, m = std::move(m)]() {
    // A handler may replace itself; run a copy.
    if (auto f = attacker_rx) f(m);
  });
}

void Channel::to_puppet(Message m) {
  count_++;
  sim_.after(delay_, [this, m = std::move(m)]() {
    if (auto f = puppet_rx) f(m);
  });
}

PuppetApi::PuppetApi(Simulator& sim, Browser& browser, Channel& channel, Addr target, std::string domain,
                     SimTime timer_granularity)
    : sim_(sim),
      browser_(browser),
      channel_(channel),
      target_(target),
      domain_(std::move(domain)),
      gran_(timer_granularity > 0 ? timer_granularity : 1) {}

std::vector<std::string> PuppetApi::open_connections(int n, std::function<void(int)> done) {
  std::vector<std::string> names;
  auto left = std::make_shared<int>(n);
  auto opened = std::make_shared<int>(0);
  for (int i = 0; i < n; ++i) {
    std::string name = "a" + std::to_string(alias_counter_++) + "." + domain_;
    browser_.set_dns(name, target_);
    names.push_back(name);
  }
  if (n == 0) {
    sim_.after(0, [done]() {
      if (done) done(0);
    });
    return names;
  }
  for (const std::string& name : names) {
    browser_.open(name, [left, opened, done](bool ok) {
      if (ok) ++*opened;
      if (--*left == 0 && done) done(*opened);
    });
  }
  return names;
}

void PuppetApi::request(const std::string& hostname, const std::string& path, ResponseFn cb) {
  SimTime g = gran_;
  browser_.request(hostname, path, [cb = std::move(cb), g](const HttpResponse& r) {
    PuppetResponse pr;
    pr.ok = r.ok;
    pr.status = r.status;
    pr.body = r.body;
    pr.size = r.body_size;
    pr.elapsed = ((r.completed - r.issued) / g) * g;
    if (cb) cb(pr);
  });
}

uint64_t PuppetApi::request_size(const std::string& hostname, const std::string& path) {
  return http_request(hostname, path).size();
}

void PuppetApi::report(Message m) { channel_.to_attacker(std::move(m)); }

void PuppetApi::on_message(std::function<void(const Message&)> fn) { channel_.puppet_rx = std::move(fn); }

void PuppetApi::after(SimTime dt, std::function<void()> fn) { sim_.after(dt, std::move(fn)); }

SimTime PuppetApi::now() const { return (sim_.now() / gran_) * gran_; }

}  // namespace offpath
