#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "portsim/costmodel.hpp"
#include "portsim/exec.hpp"

namespace portsim {

/// Assignment of ranks to compute nodes. Pairs on the same node use the
/// intra-node link parameters.
class Topology {
 public:
  Topology() = default;
  explicit Topology(std::vector<int> node_of) : node_of_(std::move(node_of)) {}

  static Topology single_node(int nranks);
  static Topology one_rank_per_node(int nranks);
  /// Consecutive blocks of `per_node` ranks share a node.
  static Topology blocked(int nranks, int per_node);

  int size() const { return static_cast<int>(node_of_.size()); }
  int node_of(int rank) const { return node_of_.at(static_cast<std::size_t>(rank)); }
  LinkKind link(int a, int b) const {
    return node_of(a) == node_of(b) ? LinkKind::IntraNode : LinkKind::InterNode;
  }

 private:
  std::vector<int> node_of_;
};

class Scheduler;

namespace detail {
struct RequestState;
}

/// Handle to a pending send or receive.
class Request {
 public:
  Request() = default;
  bool valid() const { return state_ != nullptr; }
  bool complete() const;
  /// Modeled completion time; only meaningful once complete.
  double completion_time() const;
  /// Received bytes for receives posted without a destination buffer.
  const std::vector<std::byte>& payload() const;
  double bytes() const;

 private:
  friend class Communicator;
  explicit Request(std::shared_ptr<detail::RequestState> s) : state_(std::move(s)) {}
  std::shared_ptr<detail::RequestState> state_;
};

/// Memory type of a message buffer as seen by the transport. When `known` is
/// false the transport pays a query, as GPU-aware MPI does for raw pointers.
struct MemTag {
  MemType type = MemType::HostPinned;
  bool known = true;
};

/// One rank's endpoint. Only the owning rank program may use it.
class Communicator {
 public:
  Communicator(Scheduler& sched, ExecContext& ctx, const Topology& topo, int rank, int quantum);

  int rank() const { return rank_; }
  int size() const { return topology_->size(); }
  const Topology& topology() const { return *topology_; }
  ExecContext& ctx() { return *ctx_; }

  /// `data` may be null for cost-only messages; `bytes` is the modeled size.
  Request isend(int dest, int tag, const void* data, double bytes, MemTag mem = {});
  /// `dest` may be null: the payload is then kept in the request. A null
  /// `dest` with `capacity` 0 accepts any size.
  Request irecv(int source, int tag, void* dest, std::size_t capacity, MemTag mem = {});
  void wait_all(std::span<Request> requests);
  void wait(Request& r) { wait_all(std::span<Request>(&r, 1)); }

  /// Give the baton to the next runnable rank.
  void yield();

  std::vector<std::vector<std::byte>> allgather_bytes(std::span<const std::byte> mine);

  template <class T>
  std::vector<T> allgather(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto parts = allgather_bytes(std::as_bytes(std::span<const T>(&value, 1)));
    std::vector<T> out(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) std::memcpy(&out[i], parts[i].data(), sizeof(T));
    return out;
  }

  template <class T>
  std::vector<std::vector<T>> allgatherv(std::span<const T> mine) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto parts = allgather_bytes(std::as_bytes(mine));
    std::vector<std::vector<T>> out(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out[i].resize(parts[i].size() / sizeof(T));
      if (!out[i].empty()) std::memcpy(out[i].data(), parts[i].data(), parts[i].size());
    }
    return out;
  }

  /// Sums are taken in ascending rank order so every rank gets the same bits.
  double allreduce_sum(double v);
  double allreduce_max(double v);
  long long allreduce_sum(long long v);
  bool allreduce_or(bool v);
  void barrier();

  /// Personalized exchange: `outgoing[d]` goes to rank d; returns what each
  /// rank sent here. Empty parts are not sent.
  std::vector<std::vector<std::byte>> exchange(const std::vector<std::vector<std::byte>>& outgoing);

  /// Fresh tag for an object created collectively (same value on every rank
  /// when objects are created in the same order).
  int new_object_tag() { return next_object_tag_--; }

 private:
  void count_op();
  void progress();

  Scheduler* sched_;
  ExecContext* ctx_;
  const Topology* topology_;
  int rank_;
  int quantum_;
  int ops_since_yield_ = 0;
  int next_object_tag_ = -1000;
  std::vector<std::shared_ptr<detail::RequestState>> posted_;
};

/// Everything a rank program sees.
struct RankEnv {
  ExecContext& ctx;
  Communicator& comm;
  int rank() const { return comm.rank(); }
  int size() const { return comm.size(); }
  const CostParams& params() const { return ctx.params(); }
};

struct RunOptions {
  CostParams params;
  Topology topology;  // empty: all ranks on one node
  int num_devices = 1;
  bool cost_only = false;
  /// Yield after this many transport operations; 0 yields only when blocked.
  int quantum = 0;
};

struct RunResult {
  EventLog log;                        // merged in rank order
  std::vector<double> host_time;       // final host clock per rank
  std::vector<double> completion_time; // max(host, streams) per rank
};

using RankProgram = std::function<void(RankEnv&)>;

/// Execute `program` on `nranks` logically concurrent ranks. Exactly one rank
/// runs at a time; control passes round-robin when a rank blocks or its
/// quantum expires. The first exception thrown by any rank is rethrown;
/// DeadlockError if every unfinished rank waits on a message never sent.
RunResult run(int nranks, const RankProgram& program, const RunOptions& options = {});

}  // namespace portsim
