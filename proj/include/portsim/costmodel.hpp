#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "portsim/exec_space.hpp"

namespace portsim {

/// Affine latency/bandwidth pair for one class of network link.
struct LinkParams {
  double latency = 0.0;    // seconds
  double bandwidth = 1.0;  // bytes/second
};

enum class LinkKind { IntraNode, InterNode };

/// Calibrated machine parameters. All times in seconds, bandwidths in
/// bytes/second. A default-constructed object carries the calibrated defaults
/// (see calibration.cpp for how the network numbers are derived).
struct CostParams {
  double t_launch;
  double t_stream_sync;
  double t_device_sync;
  double t_memtype_query;
  double t_sf_overhead;
  double net_latency_small;  // intra-node link
  double bw_net;
  double net_latency_inter;  // inter-node link
  double bw_net_inter;
  double bw_h2d;
  double pinned_speedup;
  double bw_device_mem;
  double bw_host_mem;
  double host_kernel_overhead;
  double oversubscription;  // multiplies device kernel durations

  CostParams();

  LinkParams link(LinkKind kind) const {
    return kind == LinkKind::IntraNode ? LinkParams{net_latency_small, bw_net}
                                       : LinkParams{net_latency_inter, bw_net_inter};
  }

  /// Throws ConfigError when a field is negative or a bandwidth is not positive.
  void validate() const;

  /// Missing keys keep their calibrated defaults; unknown keys are rejected.
  static CostParams from_json(const nlohmann::json& doc);
  static CostParams load(const std::string& path);
  nlohmann::json to_json() const;
};

enum class TransferKind { H2D, D2H, Net };

/// Bandwidth-bound kernel time. The flop count is accepted for interface
/// stability but does not contribute.
double kernel_duration(double bytes_moved, double flops, ExecSpace space, const CostParams& params);

double transfer_duration(double bytes, TransferKind kind, bool pinned, const CostParams& params,
                         LinkKind link = LinkKind::IntraNode);

enum class EventKind {
  Kernel,
  H2D,
  D2H,
  NetSend,
  NetRecv,
  Sync,
  Pack,
  Unpack,
  LocalScatter,
  Stage,
};

const char* to_string(EventKind kind);

/// One timed activity. `stream` is -1 for host-side activity; `stage` is the
/// innermost stage label active when the event was recorded.
struct Event {
  int rank = 0;
  EventKind kind = EventKind::Kernel;
  int stream = -1;
  double start = 0.0;
  double duration = 0.0;
  double bytes = 0.0;
  std::string label;
  std::string stage;
  std::string detail;

  bool operator==(const Event&) const = default;
};

class EventLog {
 public:
  void append(Event e) { records_.push_back(std::move(e)); }
  void append(const EventLog& other);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Event& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }
  const std::vector<Event>& records() const { return records_; }

  std::size_t count(EventKind kind) const;
  std::size_t count_label(std::string_view label) const;
  EventLog filter(EventKind kind) const;
  EventLog for_rank(int rank) const;

  void write_csv(std::ostream& os) const;

  bool operator==(const EventLog&) const = default;

 private:
  std::vector<Event> records_;
};

enum class GroupBy { Kind, Label, Stage };

struct SummaryRow {
  std::string group;
  std::size_t count = 0;
  double total_seconds = 0.0;
  double total_bytes = 0.0;

  bool operator==(const SummaryRow&) const = default;
};

/// Totals per group, ordered by group key.
std::vector<SummaryRow> summarize(const EventLog& log, GroupBy group_by);
void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows);

/// Host clock plus per-stream completion times for one rank/device.
struct RankClock {
  double host = 0.0;
  std::vector<double> stream_done;
};

/// Least-squares y = intercept + slope * x.
struct AffineFit {
  double intercept = 0.0;
  double slope = 0.0;
};
AffineFit fit_affine(std::span<const double> x, std::span<const double> y);

namespace calibration {

/// Ping-pong message sizes (bytes) and measured one-way latencies (seconds)
/// between two GPUs of one node, raw MPI.
std::span<const double> pingpong_sizes();
std::span<const double> pingpong_raw_latency();

/// Intra-node link fitted to the raw ping-pong series.
LinkParams fit_intra_link();

/// Inter-node link: latency scaled by the ratio of the remote parts of the
/// all-inter-node and mixed stencil latencies, bandwidth chosen so that the
/// two link curves cross at `crossover_bytes`.
LinkParams derive_inter_link(const LinkParams& intra, double pipeline_overhead,
                             double crossover_bytes = 128.0 * 1024.0);

}  // namespace calibration

}  // namespace portsim
