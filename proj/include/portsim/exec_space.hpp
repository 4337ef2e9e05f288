#pragma once

#include <string>

namespace portsim {

/// Where a computation runs: the rank's host CPU or one of its simulated
/// accelerators.
struct ExecSpace {
  enum class Kind { Host, Device };

  Kind kind = Kind::Host;
  int device = 0;

  static constexpr ExecSpace host() { return {Kind::Host, 0}; }
  static constexpr ExecSpace on_device(int id = 0) { return {Kind::Device, id}; }

  constexpr bool is_host() const { return kind == Kind::Host; }
  constexpr bool is_device() const { return kind == Kind::Device; }

  friend constexpr bool operator==(ExecSpace a, ExecSpace b) {
    return a.kind == b.kind && (a.kind == Kind::Host || a.device == b.device);
  }

  std::string str() const {
    return is_host() ? std::string("host") : "device" + std::to_string(device);
  }
};

}  // namespace portsim
