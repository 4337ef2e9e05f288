#include "portsim/transport.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

namespace portsim {

namespace {

constexpr int kCollectiveTag = -1;
constexpr int kExchangeTag = -2;

struct Message {
  std::vector<std::byte> payload;
  double bytes = 0.0;
  double send_time = 0.0;
  double arrival = 0.0;
};

struct Aborted {};

}  // namespace

namespace detail {
struct RequestState {
  bool is_send = false;
  int peer = 0;
  int tag = 0;
  void* dest = nullptr;
  std::size_t capacity = 0;
  std::vector<std::byte> payload;
  double bytes = 0.0;
  double post_time = 0.0;
  double completion = 0.0;
  bool done = false;
};
}  // namespace detail

/// Baton-passing scheduler. Every rank program runs on its own thread but only
/// the holder of the baton executes; the others sleep on the condition
/// variable.
class Scheduler {
 public:
  explicit Scheduler(int n)
      : state_(static_cast<std::size_t>(n), State::Runnable),
        waiting_(static_cast<std::size_t>(n)),
        mailbox_(static_cast<std::size_t>(n)) {}

  void wait_turn(int r) {
    std::unique_lock lk(m_);
    wait_locked(lk, r);
  }

  void yield(int r) {
    std::unique_lock lk(m_);
    state_[idx(r)] = State::Runnable;
    handoff_locked(r);
    wait_locked(lk, r);
  }

  void block(int r, std::string what) {
    std::unique_lock lk(m_);
    state_[idx(r)] = State::Blocked;
    waiting_[idx(r)] = std::move(what);
    handoff_locked(r);
    wait_locked(lk, r);
  }

  void finish(int r) {
    std::unique_lock lk(m_);
    state_[idx(r)] = State::Done;
    if (!aborted_) handoff_locked(r);
  }

  void fail(int r, std::exception_ptr e) {
    std::unique_lock lk(m_);
    state_[idx(r)] = State::Done;
    if (!error_) error_ = e;
    aborted_ = true;
    cv_.notify_all();
  }

  void deliver(int dst, int src, int tag, Message msg) {
    std::unique_lock lk(m_);
    mailbox_[idx(dst)][{src, tag}].push_back(std::move(msg));
    if (state_[idx(dst)] == State::Blocked) state_[idx(dst)] = State::Runnable;
  }

  bool take(int r, int src, int tag, Message& out) {
    std::unique_lock lk(m_);
    auto& box = mailbox_[idx(r)];
    auto it = box.find({src, tag});
    if (it == box.end() || it->second.empty()) return false;
    out = std::move(it->second.front());
    it->second.pop_front();
    return true;
  }

  std::exception_ptr error() const { return error_; }

 private:
  enum class State { Runnable, Blocked, Done };

  static std::size_t idx(int r) { return static_cast<std::size_t>(r); }

  void wait_locked(std::unique_lock<std::mutex>& lk, int r) {
    cv_.wait(lk, [&] { return current_ == r || aborted_; });
    if (aborted_) throw Aborted{};
  }

  void handoff_locked(int from) {
    const int n = static_cast<int>(state_.size());
    for (int i = 1; i <= n; ++i) {
      const int c = (from + i) % n;
      if (state_[idx(c)] == State::Runnable) {
        current_ = c;
        cv_.notify_all();
        return;
      }
    }
    std::string msg;
    for (int r = 0; r < n; ++r) {
      if (state_[idx(r)] == State::Blocked) {
        msg += (msg.empty() ? "" : "; ") + ("rank " + std::to_string(r) + " waits on " + waiting_[idx(r)]);
      }
    }
    if (!msg.empty()) {
      if (!error_) error_ = std::make_exception_ptr(DeadlockError("deadlock: " + msg));
      aborted_ = true;
    }
    current_ = -1;
    cv_.notify_all();
  }

  std::mutex m_;
  std::condition_variable cv_;
  int current_ = 0;
  bool aborted_ = false;
  std::exception_ptr error_;
  std::vector<State> state_;
  std::vector<std::string> waiting_;
  std::vector<std::map<std::pair<int, int>, std::deque<Message>>> mailbox_;
};

Topology Topology::single_node(int nranks) { return Topology(std::vector<int>(static_cast<std::size_t>(nranks), 0)); }

Topology Topology::one_rank_per_node(int nranks) { return blocked(nranks, 1); }

Topology Topology::blocked(int nranks, int per_node) {
  if (per_node <= 0) throw ConfigError("ranks per node must be positive");
  std::vector<int> nodes(static_cast<std::size_t>(nranks));
  for (int r = 0; r < nranks; ++r) nodes[static_cast<std::size_t>(r)] = r / per_node;
  return Topology(std::move(nodes));
}

bool Request::complete() const { return state_ && state_->done; }
double Request::completion_time() const { return state_->completion; }
const std::vector<std::byte>& Request::payload() const { return state_->payload; }
double Request::bytes() const { return state_->bytes; }

Communicator::Communicator(Scheduler& sched, ExecContext& ctx, const Topology& topo, int rank, int quantum)
    : sched_(&sched), ctx_(&ctx), topology_(&topo), rank_(rank), quantum_(quantum) {}

void Communicator::count_op() {
  if (quantum_ > 0 && ++ops_since_yield_ >= quantum_) {
    ops_since_yield_ = 0;
    yield();
  }
}

void Communicator::yield() { sched_->yield(rank_); }

Request Communicator::isend(int dest, int tag, const void* data, double bytes, MemTag mem) {
  if (dest < 0 || dest >= size()) throw UsageError("isend to rank " + std::to_string(dest) + " out of range");
  if (dest == rank_) throw UsageError("self-messages are not allowed");
  if (bytes < 0) throw UsageError("negative message size");
  if (!mem.known) ctx_->charge_memtype_query();
  if (mem.type == MemType::Device && ctx_->has_unsynced_work()) ctx_->sync_device(0);

  const CostParams& p = ctx_->params();
  Message msg;
  if (data != nullptr) {
    const auto* b = static_cast<const std::byte*>(data);
    msg.payload.assign(b, b + static_cast<std::size_t>(bytes));
  }
  msg.bytes = bytes;
  msg.send_time = ctx_->now();
  const double dur = transfer_duration(bytes, TransferKind::Net, true, p, topology_->link(rank_, dest));
  msg.arrival = msg.send_time + dur;
  ctx_->record({rank_, EventKind::NetSend, -1, msg.send_time, dur, bytes,
                "send to " + std::to_string(dest), {}, to_string(mem.type)});
  sched_->deliver(dest, rank_, tag, std::move(msg));

  auto st = std::make_shared<detail::RequestState>();
  st->is_send = true;
  st->peer = dest;
  st->tag = tag;
  st->bytes = bytes;
  st->post_time = st->completion = ctx_->now();
  st->done = true;
  count_op();
  return Request(std::move(st));
}

Request Communicator::irecv(int source, int tag, void* dest, std::size_t capacity, MemTag mem) {
  if (source < 0 || source >= size()) throw UsageError("irecv from rank " + std::to_string(source) + " out of range");
  if (source == rank_) throw UsageError("self-messages are not allowed");
  if (!mem.known) ctx_->charge_memtype_query();
  auto st = std::make_shared<detail::RequestState>();
  st->peer = source;
  st->tag = tag;
  st->dest = dest;
  st->capacity = capacity;
  st->post_time = ctx_->now();
  posted_.push_back(st);
  count_op();
  return Request(std::move(st));
}

void Communicator::progress() {
  for (auto& st : posted_) {
    Message msg;
    if (!sched_->take(rank_, st->peer, st->tag, msg)) continue;
    if (!msg.payload.empty()) {
      if (st->dest != nullptr) {
        if (msg.payload.size() > st->capacity) {
          throw UsageError("message of " + std::to_string(msg.payload.size()) + " bytes from rank " +
                           std::to_string(st->peer) + " overflows a " + std::to_string(st->capacity) +
                           "-byte receive");
        }
        std::memcpy(st->dest, msg.payload.data(), msg.payload.size());
      } else {
        st->payload = std::move(msg.payload);
      }
    }
    st->bytes = msg.bytes;
    st->completion = std::max(st->post_time, msg.arrival);
    st->done = true;
    ctx_->record({rank_, EventKind::NetRecv, -1, msg.send_time, st->completion - msg.send_time, msg.bytes,
                  "recv from " + std::to_string(st->peer), {}, {}});
  }
  std::erase_if(posted_, [](const auto& st) { return st->done; });
}

void Communicator::wait_all(std::span<Request> requests) {
  for (;;) {
    progress();
    const detail::RequestState* missing = nullptr;
    for (const Request& r : requests) {
      if (r.valid() && !r.state_->done) {
        missing = r.state_.get();
        break;
      }
    }
    if (missing == nullptr) break;
    sched_->block(rank_, "(source " + std::to_string(missing->peer) + ", tag " + std::to_string(missing->tag) + ")");
  }
  for (const Request& r : requests)
    if (r.valid()) ctx_->wait_until(r.state_->completion);
  count_op();
}

namespace {

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  const auto* b = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), b, b + sizeof v);
}

std::uint64_t get_u64(const std::vector<std::byte>& in, std::size_t& pos) {
  std::uint64_t v = 0;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace

std::vector<std::vector<std::byte>> Communicator::allgather_bytes(std::span<const std::byte> mine) {
  const int p = size();
  std::vector<std::vector<std::byte>> have;
  have.emplace_back(mine.begin(), mine.end());
  // Dissemination: after the round with distance k, this rank holds the
  // blocks of ranks rank..rank+2k-1.
  for (int k = 1; k < p; k *= 2) {
    const int cnt = std::min(k, p - k);
    std::vector<std::byte> out;
    put_u64(out, static_cast<std::uint64_t>(cnt));
    for (int i = 0; i < cnt; ++i) {
      put_u64(out, have[static_cast<std::size_t>(i)].size());
      out.insert(out.end(), have[static_cast<std::size_t>(i)].begin(), have[static_cast<std::size_t>(i)].end());
    }
    Request reqs[2] = {irecv((rank_ + k) % p, kCollectiveTag, nullptr, 0),
                       isend((rank_ - k + p) % p, kCollectiveTag, out.data(), static_cast<double>(out.size()))};
    wait_all(reqs);
    const auto& in = reqs[0].payload();
    std::size_t pos = 0;
    const auto n = get_u64(in, pos);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto len = get_u64(in, pos);
      have.emplace_back(in.begin() + static_cast<std::ptrdiff_t>(pos),
                        in.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  }
  std::vector<std::vector<std::byte>> result(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) result[static_cast<std::size_t>((rank_ + i) % p)] = std::move(have[static_cast<std::size_t>(i)]);
  return result;
}

double Communicator::allreduce_sum(double v) {
  double s = 0.0;
  for (double x : allgather(v)) s += x;
  return s;
}

double Communicator::allreduce_max(double v) {
  auto all = allgather(v);
  return *std::max_element(all.begin(), all.end());
}

long long Communicator::allreduce_sum(long long v) {
  long long s = 0;
  for (long long x : allgather(v)) s += x;
  return s;
}

bool Communicator::allreduce_or(bool v) {
  for (char x : allgather(static_cast<char>(v)))
    if (x != 0) return true;
  return false;
}

void Communicator::barrier() { allgather_bytes({}); }

std::vector<std::vector<std::byte>> Communicator::exchange(const std::vector<std::vector<std::byte>>& outgoing) {
  const int p = size();
  if (static_cast<int>(outgoing.size()) != p) throw UsageError("exchange needs one part per rank");
  std::vector<std::uint64_t> sizes(static_cast<std::size_t>(p));
  for (int d = 0; d < p; ++d) sizes[static_cast<std::size_t>(d)] = outgoing[static_cast<std::size_t>(d)].size();
  const auto all = allgatherv<std::uint64_t>(sizes);

  std::vector<std::vector<std::byte>> incoming(static_cast<std::size_t>(p));
  std::vector<Request> recvs(static_cast<std::size_t>(p));
  std::vector<Request> reqs;
  for (int s = 0; s < p; ++s) {
    if (s != rank_ && all[static_cast<std::size_t>(s)][static_cast<std::size_t>(rank_)] > 0) {
      recvs[static_cast<std::size_t>(s)] = irecv(s, kExchangeTag, nullptr, 0);
      reqs.push_back(recvs[static_cast<std::size_t>(s)]);
    }
  }
  for (int d = 0; d < p; ++d) {
    const auto& part = outgoing[static_cast<std::size_t>(d)];
    if (d != rank_ && !part.empty())
      reqs.push_back(isend(d, kExchangeTag, part.data(), static_cast<double>(part.size())));
  }
  wait_all(reqs);
  for (int s = 0; s < p; ++s) {
    if (s == rank_) {
      incoming[static_cast<std::size_t>(s)] = outgoing[static_cast<std::size_t>(s)];
    } else if (recvs[static_cast<std::size_t>(s)].valid()) {
      incoming[static_cast<std::size_t>(s)] = recvs[static_cast<std::size_t>(s)].payload();
    }
  }
  return incoming;
}

RunResult run(int nranks, const RankProgram& program, const RunOptions& options) {
  if (nranks < 1) throw ConfigError("need at least one rank");
  const Topology topo = options.topology.size() == 0 ? Topology::single_node(nranks) : options.topology;
  if (topo.size() != nranks) throw ConfigError("topology size does not match rank count");

  Scheduler sched(nranks);
  std::vector<std::unique_ptr<ExecContext>> ctxs;
  std::vector<std::unique_ptr<Communicator>> comms;
  for (int r = 0; r < nranks; ++r) {
    ctxs.push_back(std::make_unique<ExecContext>(options.params, r, options.num_devices, options.cost_only));
    comms.push_back(std::make_unique<Communicator>(sched, *ctxs.back(), topo, r, options.quantum));
  }

  std::vector<std::thread> threads;
  for (int r = 0; r < nranks; ++r) {
    threads.emplace_back([&, r] {
      try {
        sched.wait_turn(r);
        RankEnv env{*ctxs[static_cast<std::size_t>(r)], *comms[static_cast<std::size_t>(r)]};
        program(env);
        sched.finish(r);
      } catch (const Aborted&) {
      } catch (...) {
        sched.fail(r, std::current_exception());
      }
    });
  }
  for (auto& t : threads) t.join();
  if (auto e = sched.error()) std::rethrow_exception(e);

  RunResult res;
  for (const auto& c : ctxs) {
    res.log.append(c->log());
    res.host_time.push_back(c->now());
    res.completion_time.push_back(c->completion_time());
  }
  return res;
}

}  // namespace portsim
