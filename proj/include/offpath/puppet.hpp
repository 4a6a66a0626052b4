#pragma once

// What a script running inside the victim's browser can do. Nothing here
// exposes transport internals: the script sees hostnames, response bodies,
// coarse timing, and its message channel to the attacker.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "offpath/simcore.hpp"

namespace offpath {

class Browser;

struct Message {
  std::string kind;
  std::vector<int64_t> values;
  std::string text;
};

// Unrestricted bidirectional message path between puppet and attacker.
class Channel {
 public:
  Channel(Simulator& sim, SimTime one_way) : sim_(sim), delay_(one_way) {}
  void to_attacker(Message m);
  void to_puppet(Message m);
  std::function<void(const Message&)> attacker_rx;
  std::function<void(const Message&)> puppet_rx;
  SimTime delay() const { return delay_; }
  uint64_t messages() const { return count_; }

 private:
  Simulator& sim_;
  SimTime delay_;
  uint64_t count_ = 0;
};

struct PuppetResponse {
  bool ok = false;
  int status = 0;
  std::string body;
  uint64_t size = 0;
  // Quantized to the browser timer granularity.
  SimTime elapsed = 0;
};

class PuppetApi {
 public:
  using ResponseFn = std::function<void(const PuppetResponse&)>;

  PuppetApi(Simulator& sim, Browser& browser, Channel& channel, Addr target, std::string domain,
            SimTime timer_granularity = kMsec);

  // Registers n fresh aliases of the target (the attacker controls their DNS)
  // and opens one connection per alias; done(opened) fires when all settle.
  std::vector<std::string> open_connections(int n, std::function<void(int)> done);
  void request(const std::string& hostname, const std::string& path, ResponseFn cb);
  // Bytes of the request the browser will send; the script knows its own URLs.
  static uint64_t request_size(const std::string& hostname, const std::string& path);
  void report(Message m);
  void on_message(std::function<void(const Message&)> fn);
  void after(SimTime dt, std::function<void()> fn);
  SimTime now() const;

 private:
  Simulator& sim_;
  Browser& browser_;
  Channel& channel_;
  Addr target_;
  std::string domain_;
  SimTime gran_;
  uint64_t alias_counter_ = 0;
};

}  // namespace offpath
