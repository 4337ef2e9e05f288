#include "portsim/starforest.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace portsim {

const char* to_string(ReduceOp op) {
  switch (op) {
    case ReduceOp::Replace: return "replace";
    case ReduceOp::Sum: return "sum";
    case ReduceOp::Min: return "min";
    case ReduceOp::Max: return "max";
  }
  return "?";
}

std::vector<std::int64_t> Box::indices() const {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(count(), 0)));
  for (std::int64_t j = 0; j < ny; ++j)
    for (std::int64_t i = 0; i < nx; ++i) out.push_back((x + i) * sx + (y + j) * sy);
  return out;
}

std::string Box::str() const {
  std::ostringstream os;
  os << "box(" << x << "," << y << ";" << nx << "x" << ny << ";" << sx << "," << sy << ")";
  return os.str();
}

bool is_contiguous(std::span<const std::int64_t> idx) {
  if (idx.empty()) return false;
  for (std::size_t k = 1; k < idx.size(); ++k)
    if (idx[k] != idx[0] + static_cast<std::int64_t>(k)) return false;
  return true;
}

std::int64_t CommPlan::local_edges() const {
  std::int64_t n = static_cast<std::int64_t>(local_roots.size());
  for (const auto& b : local_blocks) n += b.root.count();
  return n;
}

std::size_t CommPlan::remote_leaf_edges() const {
  std::size_t n = 0;
  for (const auto& p : leaf_parts) n += p.indices.size();
  return n;
}

std::size_t CommPlan::remote_root_edges() const {
  std::size_t n = 0;
  for (const auto& p : root_parts) n += p.indices.size();
  return n;
}

namespace {
std::vector<std::int64_t> iota_leaves(std::size_t n) {
  std::vector<std::int64_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int64_t>(i);
  return v;
}
}  // namespace

StarForest::StarForest(Communicator& comm, std::int64_t nroots, std::vector<std::int64_t> leaf_local,
                       std::vector<RemotePoint> leaf_remote, SfHints hints)
    : comm_(&comm),
      nroots_(nroots),
      leaf_local_(std::move(leaf_local)),
      leaf_remote_(std::move(leaf_remote)),
      hints_(std::move(hints)),
      tag_(comm.new_object_tag()) {
  if (leaf_local_.size() != leaf_remote_.size())
    throw UsageError("leaf_local and leaf_remote differ in length");
  if (nroots_ < 0) throw UsageError("negative root count");
  for (auto l : leaf_local_) leaf_extent_ = std::max(leaf_extent_, l + 1);
  for (const auto& b : hints_.local_blocks) {
    if (b.root.count() != b.leaf.count() || b.root.nx < 0 || b.root.ny < 0 || b.leaf.nx < 0 || b.leaf.ny < 0)
      throw UsageError("local block " + b.root.str() + " -> " + b.leaf.str() + " has mismatched shape");
    if (b.leaf.count() > 0) leaf_extent_ = std::max(leaf_extent_, b.leaf.last() + 1);
    block_edges_ += b.leaf.count();
  }
}

StarForest::StarForest(Communicator& comm, std::int64_t nroots, std::vector<RemotePoint> leaf_remote, SfHints hints)
    : StarForest(comm, nroots, iota_leaves(leaf_remote.size()), leaf_remote, std::move(hints)) {}

namespace {

std::vector<std::byte> to_bytes(const std::vector<std::int64_t>& v) {
  std::vector<std::byte> out(v.size() * sizeof(std::int64_t));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<std::int64_t> from_bytes(const std::vector<std::byte>& b) {
  std::vector<std::int64_t> out(b.size() / sizeof(std::int64_t));
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

void check_boxes(const char* side, int rank, const std::vector<Box>& boxes, const std::vector<std::int64_t>& idx) {
  std::vector<std::int64_t> flat;
  for (const Box& b : boxes) {
    auto part = b.indices();
    flat.insert(flat.end(), part.begin(), part.end());
  }
  if (flat != idx)
    throw UsageError(std::string(side) + " box hints for rank " + std::to_string(rank) + " do not match the graph");
}

}  // namespace

const CommPlan& StarForest::setup() {
  if (setup_done_) return plan_;

  const int me = comm_->rank();
  const int p = comm_->size();
  std::string err;
  auto fail = [&](const std::string& what) {
    if (err.empty()) err = "rank " + std::to_string(me) + ": " + what;
  };

  std::vector<std::uint8_t> seen(static_cast<std::size_t>(leaf_extent_), 0);
  std::map<int, SfPart> by_rank;
  std::vector<std::vector<std::int64_t>> offsets(static_cast<std::size_t>(p));
  CommPlan plan;
  for (std::size_t i = 0; i < leaf_local_.size(); ++i) {
    const std::int64_t leaf = leaf_local_[i];
    const RemotePoint rp = leaf_remote_[i];
    if (leaf < 0) fail("negative leaf index " + std::to_string(leaf));
    else if (seen[static_cast<std::size_t>(leaf)]++) fail("leaf index " + std::to_string(leaf) + " appears twice");
    if (rp.rank < 0 || rp.rank >= p) {
      fail("root rank " + std::to_string(rp.rank) + " out of range");
      continue;
    }
    if (rp.rank == me) {
      if (rp.offset < 0 || rp.offset >= nroots_) fail("root offset " + std::to_string(rp.offset) + " out of range");
      plan.local_roots.push_back(rp.offset);
      plan.local_leaves.push_back(leaf);
    } else {
      SfPart& part = by_rank[rp.rank];
      part.rank = rp.rank;
      part.indices.push_back(leaf);
      offsets[static_cast<std::size_t>(rp.rank)].push_back(rp.offset);
    }
  }
  for (auto& [r, part] : by_rank) plan.leaf_parts.push_back(std::move(part));
  for (const LocalBlock& b : hints_.local_blocks) {
    if (b.leaf.count() == 0) continue;
    if (b.leaf.first() < 0 || b.root.first() < 0 || b.root.last() >= nroots_) {
      fail("local block " + b.root.str() + " -> " + b.leaf.str() + " out of range");
      continue;
    }
    b.leaf.for_each([&](std::int64_t l) {
      if (seen[static_cast<std::size_t>(l)]++) fail("leaf index " + std::to_string(l) + " appears twice");
    });
    plan.local_blocks.push_back(b);
  }

  std::vector<std::vector<std::byte>> out(static_cast<std::size_t>(p));
  for (int r = 0; r < p; ++r) out[static_cast<std::size_t>(r)] = to_bytes(offsets[static_cast<std::size_t>(r)]);
  const auto in = comm_->exchange(out);
  for (int r = 0; r < p; ++r) {
    if (r == me || in[static_cast<std::size_t>(r)].empty()) continue;
    SfPart part;
    part.rank = r;
    part.indices = from_bytes(in[static_cast<std::size_t>(r)]);
    for (auto off : part.indices)
      if (off < 0 || off >= nroots_)
        fail("rank " + std::to_string(r) + " references root offset " + std::to_string(off) + " of " +
             std::to_string(nroots_));
    plan.root_parts.push_back(std::move(part));
  }

  if (comm_->allreduce_or(!err.empty()))
    throw ValidationError(err.empty() ? "invalid star forest on another rank" : err);

  std::vector<std::uint8_t> indegree(static_cast<std::size_t>(nroots_), 0);
  bool dup = false;
  auto bump = [&](std::int64_t r) {
    auto& d = indegree[static_cast<std::size_t>(r)];
    dup |= d > 0;
    d = 1;
  };
  for (auto r : plan.local_roots) bump(r);
  for (const auto& b : plan.local_blocks) b.root.for_each(bump);
  for (const auto& part : plan.root_parts)
    for (auto r : part.indices) bump(r);
  plan.duplicate_targets = comm_->allreduce_or(dup);

  for (auto& part : plan.leaf_parts) {
    part.contiguous = is_contiguous(part.indices);
    if (auto it = hints_.leaf_boxes.find(part.rank); it != hints_.leaf_boxes.end()) {
      check_boxes("leaf", part.rank, it->second, part.indices);
      part.boxes = it->second;
    }
  }
  for (auto& part : plan.root_parts) {
    part.contiguous = is_contiguous(part.indices);
    if (auto it = hints_.root_boxes.find(part.rank); it != hints_.root_boxes.end()) {
      check_boxes("root", part.rank, it->second, part.indices);
      part.boxes = it->second;
    }
  }

  plan_ = std::move(plan);
  setup_done_ = true;
  return plan_;
}

const CommPlan& StarForest::plan() const {
  if (!setup_done_) throw UsageError("star forest not set up");
  return plan_;
}

void StarForest::charge_overhead(const MemTag& a, const MemTag& b) {
  ExecContext& ctx = comm_->ctx();
  ctx.advance(ctx.params().t_sf_overhead);
  // Both pointer arguments are resolved by one attribute query.
  if (!a.known || !b.known) ctx.charge_memtype_query();
}

void StarForest::charge_indices(ExecSpace space, const std::vector<const SfPart*>& parts) {
  if (!space.is_device() || indices_on_device_) return;
  double n = 0;
  for (const SfPart* p : parts)
    if (!p->contiguous && p->boxes.empty()) n += static_cast<double>(p->indices.size());
  if (n == 0) return;
  comm_->ctx().transfer(TransferKind::H2D, n * sizeof(std::int64_t), true, "sf_indices");
  indices_on_device_ = true;
}

std::string StarForest::describe(const std::vector<const SfPart*>& parts) {
  std::string out;
  for (const SfPart* p : parts) {
    if (!out.empty()) out += ' ';
    if (p->contiguous) {
      out += "contiguous";
    } else if (p->boxes.empty()) {
      out += "indexed";
    } else {
      for (std::size_t i = 0; i < p->boxes.size(); ++i) out += (i ? "+" : "") + p->boxes[i].str();
    }
  }
  return out;
}

void StarForest::finish(bool is_bcast) {
  if (!pending_ || pending_->is_bcast != is_bcast)
    throw UsageError(is_bcast ? "bcast_end without bcast_begin" : "reduce_end without reduce_begin");
  auto pend = std::move(pending_);
  ExecContext& ctx = comm_->ctx();
  comm_->wait_all(pend->recvs);
  if (pend->apply) pend->apply();
  if (pend->unpack_bytes > 0) {
    if (pend->indexed_unpack && pend->dest_space.is_device() && !indices_on_device_) {
      std::vector<const SfPart*> parts;
      for (const auto& p : is_bcast ? plan_.leaf_parts : plan_.root_parts) parts.push_back(&p);
      charge_indices(pend->dest_space, parts);
    }
    ctx.run(pend->dest_space, "sf_unpack", pend->unpack_bytes, EventKind::Unpack, pend->unpack_detail);
  }
  if (pend->joined_aux) ctx.stream_wait(0, ctx.aux_stream(0));
}

SfGraph SfGraph::parse(std::istream& in) {
  SfGraph g;
  std::map<int, std::int64_t> declared;
  struct Edge {
    int leaf_rank;
    std::int64_t leaf;
    int root_rank;
    std::int64_t offset;
  };
  std::vector<Edge> edges;
  int declared_ranks = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    auto bad = [&] { return ValidationError("star forest graph line " + std::to_string(lineno) + ": " + line); };
    if (first == "ranks") {
      if (!(ls >> declared_ranks) || declared_ranks < 1) throw bad();
    } else if (first == "nroots") {
      int r;
      std::int64_t n;
      if (!(ls >> r >> n) || r < 0 || n < 0) throw bad();
      declared[r] = n;
    } else {
      Edge e{};
      try {
        e.leaf_rank = std::stoi(first);
      } catch (const std::exception&) {
        throw bad();
      }
      if (!(ls >> e.leaf >> e.root_rank >> e.offset) || e.leaf_rank < 0 || e.root_rank < 0) throw bad();
      std::string extra;
      if (ls >> extra) throw bad();
      edges.push_back(e);
    }
  }
  int nranks = declared_ranks;
  for (const auto& e : edges) nranks = std::max({nranks, e.leaf_rank + 1, e.root_rank + 1});
  for (const auto& [r, n] : declared) nranks = std::max(nranks, r + 1);
  if (nranks < 1) nranks = 1;
  if (declared_ranks > 0 && nranks > declared_ranks) throw ValidationError("star forest graph uses more ranks than declared");

  g.nranks = nranks;
  g.nroots.assign(static_cast<std::size_t>(nranks), 0);
  g.leaf_local.resize(static_cast<std::size_t>(nranks));
  g.leaf_remote.resize(static_cast<std::size_t>(nranks));
  for (const auto& e : edges) {
    auto& n = g.nroots[static_cast<std::size_t>(e.root_rank)];
    n = std::max(n, e.offset + 1);
    g.leaf_local[static_cast<std::size_t>(e.leaf_rank)].push_back(e.leaf);
    g.leaf_remote[static_cast<std::size_t>(e.leaf_rank)].push_back({e.root_rank, e.offset});
  }
  for (const auto& [r, n] : declared) g.nroots[static_cast<std::size_t>(r)] = n;
  return g;
}

SfGraph SfGraph::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open star forest graph " + path);
  return parse(in);
}

void SfGraph::write(std::ostream& out) const {
  out << "ranks " << nranks << "\n";
  for (int r = 0; r < nranks; ++r) out << "nroots " << r << " " << nroots[static_cast<std::size_t>(r)] << "\n";
  for (int r = 0; r < nranks; ++r) {
    const auto& ll = leaf_local[static_cast<std::size_t>(r)];
    const auto& lr = leaf_remote[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < ll.size(); ++i) out << r << " " << ll[i] << " " << lr[i].rank << " " << lr[i].offset << "\n";
  }
}

std::unique_ptr<StarForest> SfGraph::make(Communicator& comm) const {
  if (comm.size() != nranks)
    throw ConfigError("graph has " + std::to_string(nranks) + " ranks, communicator " + std::to_string(comm.size()));
  const auto r = static_cast<std::size_t>(comm.rank());
  return std::make_unique<StarForest>(comm, nroots[r], leaf_local[r], leaf_remote[r]);
}

}  // namespace portsim
