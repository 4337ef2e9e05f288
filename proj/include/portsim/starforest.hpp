#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "portsim/transport.hpp"

namespace portsim {

enum class ReduceOp { Replace, Sum, Min, Max };
const char* to_string(ReduceOp op);

template <class T>
T apply_op(ReduceOp op, T target, T value) {
  switch (op) {
    case ReduceOp::Replace: return value;
    case ReduceOp::Sum: return target + value;
    case ReduceOp::Min: return std::min(target, value);
    case ReduceOp::Max: return std::max(target, value);
  }
  return value;
}

struct RemotePoint {
  int rank = 0;
  std::int64_t offset = 0;
  bool operator==(const RemotePoint&) const = default;
};

/// Points of a rectangular subdomain: index(i, j) = (x + i) * sx + (y + j) * sy
/// for i < nx, j < ny, enumerated with i fastest.
struct Box {
  std::int64_t x = 0, y = 0;
  std::int64_t nx = 1, ny = 1;
  std::int64_t sx = 1, sy = 0;

  std::int64_t count() const { return nx * ny; }
  std::int64_t first() const { return x * sx + y * sy; }
  std::int64_t last() const { return (x + nx - 1) * sx + (y + ny - 1) * sy; }
  std::vector<std::int64_t> indices() const;
  template <class F>
  void for_each(F&& f) const {
    for (std::int64_t j = 0; j < ny; ++j)
      for (std::int64_t i = 0; i < nx; ++i) f((x + i) * sx + (y + j) * sy);
  }
  std::string str() const;
};

/// Local edges given only by geometry: the k-th point of `root` feeds the
/// k-th point of `leaf`.
struct LocalBlock {
  Box root;
  Box leaf;
};

/// Structured descriptions of the per-neighbor index lists, supplied by grid
/// constructors. Keys are neighbor ranks. Local blocks add edges beyond the
/// explicit leaf arrays without storing their indices.
struct SfHints {
  std::map<int, std::vector<Box>> leaf_boxes;
  std::map<int, std::vector<Box>> root_boxes;
  std::vector<LocalBlock> local_blocks;
};

/// Edges to or from one neighbor rank.
struct SfPart {
  int rank = 0;
  std::vector<std::int64_t> indices;
  bool contiguous = false;
  std::vector<Box> boxes;
};

/// Result of setup-time analysis of a star forest on one rank.
struct CommPlan {
  std::vector<std::int64_t> local_roots;
  std::vector<std::int64_t> local_leaves;
  std::vector<LocalBlock> local_blocks;
  /// Leaves on this rank grouped by root owner, ascending; indices are leaf
  /// indices in leaf-array order.
  std::vector<SfPart> leaf_parts;
  /// Roots on this rank referenced from other ranks, grouped by leaf owner,
  /// ascending; indices are root offsets in that owner's leaf-array order.
  std::vector<SfPart> root_parts;
  /// Some root on any rank has two or more leaves.
  bool duplicate_targets = false;

  std::size_t remote_leaf_edges() const;
  std::size_t remote_root_edges() const;
  std::int64_t local_edges() const;
  bool empty() const { return local_edges() == 0 && leaf_parts.empty() && root_parts.empty(); }
};

bool is_contiguous(std::span<const std::int64_t> idx);

/// A star forest: each local leaf names the (rank, offset) of its root.
/// Construction is local; setup() and all operations are collective.
class StarForest {
 public:
  StarForest(Communicator& comm, std::int64_t nroots, std::vector<std::int64_t> leaf_local,
             std::vector<RemotePoint> leaf_remote, SfHints hints = {});
  /// Leaf i is leaf index i.
  StarForest(Communicator& comm, std::int64_t nroots, std::vector<RemotePoint> leaf_remote, SfHints hints = {});

  StarForest(const StarForest&) = delete;
  StarForest& operator=(const StarForest&) = delete;

  std::int64_t nroots() const { return nroots_; }
  std::int64_t nleaves() const { return static_cast<std::int64_t>(leaf_local_.size()) + block_edges_; }
  /// One past the largest leaf index (minimum leaf array length).
  std::int64_t leaf_extent() const { return leaf_extent_; }
  const std::vector<std::int64_t>& leaf_local() const { return leaf_local_; }
  const std::vector<RemotePoint>& leaf_remote() const { return leaf_remote_; }
  Communicator& comm() { return *comm_; }

  /// Analyze the graph. Throws ValidationError on every rank when any rank's
  /// graph is malformed.
  const CommPlan& setup();
  bool is_setup() const { return setup_done_; }
  const CommPlan& plan() const;
  bool busy() const { return static_cast<bool>(pending_); }

  /// leaf <- op(leaf, root) for every edge.
  template <class T>
  void bcast_begin(std::span<const T> rootdata, MemTag root_mem, std::span<T> leafdata, MemTag leaf_mem,
                   ReduceOp op = ReduceOp::Replace);
  /// root <- op(root, leaf) for every edge, leaves combined in ascending
  /// (leaf rank, leaf position) order.
  template <class T>
  void reduce_begin(std::span<const T> leafdata, MemTag leaf_mem, std::span<T> rootdata, MemTag root_mem,
                    ReduceOp op);
  void bcast_end() { finish(true); }
  void reduce_end() { finish(false); }

  template <class T>
  void bcast(std::span<const T> rootdata, MemTag root_mem, std::span<T> leafdata, MemTag leaf_mem,
             ReduceOp op = ReduceOp::Replace) {
    bcast_begin<T>(rootdata, root_mem, leafdata, leaf_mem, op);
    bcast_end();
  }
  template <class T>
  void reduce(std::span<const T> leafdata, MemTag leaf_mem, std::span<T> rootdata, MemTag root_mem, ReduceOp op) {
    reduce_begin<T>(leafdata, leaf_mem, rootdata, root_mem, op);
    reduce_end();
  }

 private:
  struct Pending {
    bool is_bcast = true;
    std::vector<Request> recvs;
    std::function<void()> apply;
    double unpack_bytes = 0.0;
    ExecSpace dest_space;
    std::string unpack_detail;
    bool indexed_unpack = false;
    bool joined_aux = false;
  };

  template <class T>
  void begin(bool is_bcast, std::span<const T> src, MemTag src_mem, std::span<T> dst, MemTag dst_mem, ReduceOp op);
  void finish(bool is_bcast);

  /// Host/device space implied by a memory tag.
  static ExecSpace space_of(MemTag m) {
    return m.type == MemType::Device ? ExecSpace::on_device(0) : ExecSpace::host();
  }
  void charge_overhead(const MemTag& a, const MemTag& b);
  void charge_indices(ExecSpace space, const std::vector<const SfPart*>& parts);
  static std::string describe(const std::vector<const SfPart*>& parts);

  Communicator* comm_;
  std::int64_t nroots_;
  std::vector<std::int64_t> leaf_local_;
  std::vector<RemotePoint> leaf_remote_;
  std::int64_t leaf_extent_ = 0;
  std::int64_t block_edges_ = 0;
  SfHints hints_;
  int tag_;
  bool setup_done_ = false;
  bool indices_on_device_ = false;
  CommPlan plan_;
  std::unique_ptr<Pending> pending_;
};

template <class T>
void StarForest::bcast_begin(std::span<const T> rootdata, MemTag root_mem, std::span<T> leafdata, MemTag leaf_mem,
                             ReduceOp op) {
  begin<T>(true, rootdata, root_mem, leafdata, leaf_mem, op);
}

template <class T>
void StarForest::reduce_begin(std::span<const T> leafdata, MemTag leaf_mem, std::span<T> rootdata, MemTag root_mem,
                              ReduceOp op) {
  begin<T>(false, leafdata, leaf_mem, rootdata, root_mem, op);
}

template <class T>
void StarForest::begin(bool is_bcast, std::span<const T> src, MemTag src_mem, std::span<T> dst, MemTag dst_mem,
                       ReduceOp op) {
  if (pending_) throw UsageError("star forest already has an outstanding operation");
  setup();
  if (!is_bcast && op == ReduceOp::Replace && plan_.duplicate_targets)
    throw UsageError("reduce with Replace is nondeterministic when roots have several leaves");

  ExecContext& ctx = comm_->ctx();
  const bool functional = !ctx.cost_only();
  const std::int64_t src_need = is_bcast ? nroots_ : leaf_extent_;
  const std::int64_t dst_need = is_bcast ? leaf_extent_ : nroots_;
  if (functional && (static_cast<std::int64_t>(src.size()) < src_need ||
                     static_cast<std::int64_t>(dst.size()) < dst_need))
    throw UsageError("star forest data shorter than the graph requires");

  auto pend = std::make_unique<Pending>();
  pend->is_bcast = is_bcast;
  if (plan_.empty()) {
    pending_ = std::move(pend);
    return;
  }

  const std::vector<SfPart>& send_parts = is_bcast ? plan_.root_parts : plan_.leaf_parts;
  const std::vector<SfPart>& recv_parts = is_bcast ? plan_.leaf_parts : plan_.root_parts;
  const std::vector<std::int64_t>& local_src = is_bcast ? plan_.local_roots : plan_.local_leaves;
  const std::vector<std::int64_t>& local_dst = is_bcast ? plan_.local_leaves : plan_.local_roots;
  const ExecSpace src_space = space_of(src_mem);
  const ExecSpace dst_space = space_of(dst_mem);
  constexpr double sz = sizeof(T);

  charge_overhead(src_mem, dst_mem);
  const MemTag src_tag{src_mem.type, true};
  const MemTag dst_tag{dst_mem.type, true};

  // Receives: direct into the destination only when contiguous and the op is
  // a plain overwrite; otherwise into a staging buffer unpacked at end.
  auto staging = std::make_shared<std::vector<std::vector<T>>>(recv_parts.size());
  std::vector<const SfPart*> staged;
  for (std::size_t i = 0; i < recv_parts.size(); ++i) {
    const SfPart& part = recv_parts[i];
    const double bytes = sz * static_cast<double>(part.indices.size());
    if (functional) (*staging)[i].resize(part.indices.size());
    void* where = functional ? (*staging)[i].data() : nullptr;
    pend->recvs.push_back(comm_->irecv(part.rank, tag_, where, static_cast<std::size_t>(bytes), dst_tag));
    if (!(part.contiguous && op == ReduceOp::Replace)) staged.push_back(&part);
  }

  // Pack every noncontiguous outgoing part with one kernel.
  std::vector<const SfPart*> packed;
  double pack_elems = 0;
  for (const SfPart& part : send_parts) {
    if (!part.contiguous) {
      packed.push_back(&part);
      pack_elems += static_cast<double>(part.indices.size());
    }
  }
  std::vector<std::vector<T>> sendbufs(send_parts.size());
  if (functional) {
    for (std::size_t i = 0; i < send_parts.size(); ++i) {
      const auto& idx = send_parts[i].indices;
      sendbufs[i].resize(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) sendbufs[i][k] = src[static_cast<std::size_t>(idx[k])];
    }
  }
  if (!packed.empty()) {
    charge_indices(src_space, packed);
    ctx.run(src_space, "sf_pack", 2 * sz * pack_elems, EventKind::Pack, describe(packed));
  }
  if (!send_parts.empty() && src_space.is_device()) ctx.sync_stream(0);
  for (std::size_t i = 0; i < send_parts.size(); ++i) {
    const double bytes = sz * static_cast<double>(send_parts[i].indices.size());
    comm_->isend(send_parts[i].rank, tag_, functional ? sendbufs[i].data() : nullptr, bytes, src_tag);
  }

  // Local edges: one scatter kernel on a secondary stream, overlapping the
  // remote transfers.
  const auto nlocal = plan_.local_edges();
  if (nlocal > 0) {
    const double bytes = sz * static_cast<double>(nlocal) * (op == ReduceOp::Replace ? 2.0 : 3.0);
    std::string detail;
    for (const LocalBlock& b : plan_.local_blocks) detail += (detail.empty() ? "" : " ") + b.root.str() + "->" + b.leaf.str();
    if (!plan_.local_roots.empty()) detail += detail.empty() ? "indexed" : " indexed";
    if (dst_space.is_device()) {
      const int aux = ctx.aux_stream(0);
      ctx.stream_wait(aux, 0);
      ctx.launch(aux, "sf_scatter", bytes, 0.0, EventKind::LocalScatter, detail);
      pend->joined_aux = true;
    } else {
      ctx.host_op("sf_scatter", bytes, EventKind::LocalScatter, detail);
    }
  }

  if (!staged.empty()) {
    double elems = 0;
    for (const SfPart* p : staged) elems += static_cast<double>(p->indices.size());
    pend->unpack_bytes = sz * elems * (op == ReduceOp::Replace ? 2.0 : 3.0);
    pend->unpack_detail = describe(staged);
    pend->indexed_unpack = std::any_of(staged.begin(), staged.end(), [](const SfPart* p) {
      return !p->contiguous && p->boxes.empty();
    });
  }
  pend->dest_space = dst_space;

  if (functional) {
    // Local source values are read at begin, as the scatter kernel would.
    std::vector<T> local_vals;
    local_vals.reserve(static_cast<std::size_t>(nlocal));
    for (auto k : local_src) local_vals.push_back(src[static_cast<std::size_t>(k)]);
    for (const LocalBlock& b : plan_.local_blocks)
      (is_bcast ? b.root : b.leaf).for_each([&](std::int64_t k) { local_vals.push_back(src[static_cast<std::size_t>(k)]); });
    const int me = comm_->rank();
    pend->apply = [staging, &recv_parts, &local_dst, &blocks = plan_.local_blocks, is_bcast,
                   local_vals = std::move(local_vals), dst, op, me] {
      bool local_done = false;
      auto do_local = [&] {
        std::size_t k = 0;
        auto put = [&](std::int64_t at) {
          T& d = dst[static_cast<std::size_t>(at)];
          d = apply_op(op, d, local_vals[k++]);
        };
        for (auto at : local_dst) put(at);
        for (const LocalBlock& b : blocks) (is_bcast ? b.leaf : b.root).for_each(put);
        local_done = true;
      };
      for (std::size_t i = 0; i < recv_parts.size(); ++i) {
        if (!local_done && recv_parts[i].rank > me) do_local();
        const auto& idx = recv_parts[i].indices;
        const auto& buf = (*staging)[i];
        for (std::size_t k = 0; k < idx.size(); ++k) {
          T& d = dst[static_cast<std::size_t>(idx[k])];
          d = apply_op(op, d, buf[k]);
        }
      }
      if (!local_done) do_local();
    };
  }
  pending_ = std::move(pend);
}

/// Whole-forest description in the plain-text fixture format.
struct SfGraph {
  int nranks = 0;
  std::vector<std::int64_t> nroots;
  std::vector<std::vector<std::int64_t>> leaf_local;
  std::vector<std::vector<RemotePoint>> leaf_remote;

  /// Lines "leaf_rank leaf_index root_rank root_offset"; optional
  /// "ranks N" and "nroots rank n" directives; '#' starts a comment.
  static SfGraph parse(std::istream& in);
  static SfGraph load(const std::string& path);
  void write(std::ostream& out) const;

  std::unique_ptr<StarForest> make(Communicator& comm) const;
};

}  // namespace portsim
