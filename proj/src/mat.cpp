#include "portsim/mat.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

namespace portsim {

namespace {

struct StashEntry {
  std::int64_t row;
  std::int64_t col;
  double value;
  std::int32_t add;
};

template <class T>
std::vector<std::byte> pack_pod(const std::vector<T>& v) {
  std::vector<std::byte> out(v.size() * sizeof(T));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <class T>
std::vector<T> unpack_pod(const std::vector<std::byte>& b) {
  std::vector<T> out(b.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

constexpr double kIndexBytes = 4.0;  // 32-bit local indices on the device

}  // namespace

void DeviceRowWriter::set(std::int64_t col, double value, InsertMode mode) {
  auto it = std::lower_bound(cols_.begin(), cols_.end(), col);
  if (it == cols_.end() || *it != col)
    throw UsageError("device insertion at (" + std::to_string(row_) + "," + std::to_string(col) +
                     ") is outside the preallocated pattern");
  double& slot = vals_[static_cast<std::size_t>(it - cols_.begin())];
  slot = mode == InsertMode::Insert ? value : slot + value;
  ++writes_;
}

CsrMatrix::CsrMatrix(Communicator& comm, Layout rows, Layout cols, ExecSpace space)
    : comm_(&comm), rows_(std::move(rows)), cols_(std::move(cols)), space_(space) {
  if (rows_.nranks() != comm.size() || cols_.nranks() != comm.size())
    throw UsageError("matrix layouts do not match the communicator");
  if (comm.ctx().cost_only()) throw UsageError("matrices require functional execution");
  if (space.is_device()) comm.ctx().require_device(space.device);
  building_.resize(static_cast<std::size_t>(local_rows()));
  rowptr_.assign(static_cast<std::size_t>(local_rows()) + 1, 0);
  values_ = std::make_unique<MirroredBuffer<double>>(0, MemType::HostPinned, space.device);
}

void CsrMatrix::set_space(ExecSpace s) {
  if (s.is_device()) ctx().require_device(s.device);
  space_ = s;
}

void CsrMatrix::require_building() const {
  if (state_ != State::Building) throw UsageError("matrix is assembled; call reopen() before inserting values");
}

void CsrMatrix::require_assembled(const char* what) const {
  if (state_ != State::Assembled) throw UsageError(std::string(what) + " needs an assembled matrix");
}

void CsrMatrix::add_local(std::int64_t row, std::int64_t col, double v, InsertMode mode) {
  double& slot = building_[static_cast<std::size_t>(row - row_start())][col];
  slot = mode == InsertMode::Insert ? v : slot + v;
}

void CsrMatrix::set_values(std::span<const std::int64_t> rows, std::span<const std::int64_t> cols,
                           std::span<const double> values, InsertMode mode) {
  require_building();
  if (values.size() != rows.size() * cols.size()) throw UsageError("value block size does not match rows x cols");
  const int me = comm_->rank();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::int64_t i = rows[r];
    if (i < 0 || i >= rows_.global_size()) throw UsageError("row " + std::to_string(i) + " out of range");
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const std::int64_t j = cols[c];
      if (j < 0 || j >= cols_.global_size()) throw UsageError("column " + std::to_string(j) + " out of range");
      const double v = values[r * cols.size() + c];
      if (rows_.owner(i) == me) {
        add_local(i, j, v, mode);
      } else {
        stash_.push_back({mode, {i, j, v}});
      }
    }
  }
  ctx().host_op("MatSetValues", 24.0 * static_cast<double>(values.size()));
}

void CsrMatrix::assembly_begin() {
  if (state_ == State::Assembled) return;
}

void CsrMatrix::assembly_end() {
  if (state_ == State::Assembled) return;
  const int p = comm_->size();
  std::vector<std::vector<StashEntry>> out(static_cast<std::size_t>(p));
  for (const auto& [mode, t] : stash_)
    out[static_cast<std::size_t>(rows_.owner(t.row))].push_back({t.row, t.col, t.value, mode == InsertMode::Add});
  std::vector<std::vector<std::byte>> bytes(static_cast<std::size_t>(p));
  for (int r = 0; r < p; ++r) bytes[static_cast<std::size_t>(r)] = pack_pod(out[static_cast<std::size_t>(r)]);
  const auto in = comm_->exchange(bytes);
  stash_.clear();
  for (int s = 0; s < p; ++s) {
    if (s == comm_->rank()) continue;
    for (const StashEntry& e : unpack_pod<StashEntry>(in[static_cast<std::size_t>(s)]))
      add_local(e.row, e.col, e.value, e.add ? InsertMode::Add : InsertMode::Insert);
  }
  finalize_from_rows();
}

void CsrMatrix::finalize_from_rows() {
  std::vector<std::int64_t> rowptr{0}, colidx;
  std::vector<double> vals;
  for (const auto& row : building_) {
    for (const auto& [c, v] : row) {
      colidx.push_back(c);
      vals.push_back(v);
    }
    rowptr.push_back(static_cast<std::int64_t>(colidx.size()));
  }
  building_.assign(building_.size(), {});
  set_pattern(std::move(rowptr), std::move(colidx));
  {
    auto v = values_->access(ctx(), ExecSpace::host(), AccessMode::Write);
    std::copy(vals.begin(), vals.end(), v.data().begin());
  }
  ctx().host_op("MatAssemblyEnd", 16.0 * static_cast<double>(vals.size()));
  state_ = State::Assembled;
  rebuild_ghosts();
}

void CsrMatrix::set_pattern(std::vector<std::int64_t> rowptr, std::vector<std::int64_t> colidx) {
  const bool same = rowptr == rowptr_ && colidx == colidx_ && values_->size() == colidx.size();
  rowptr_ = std::move(rowptr);
  colidx_ = std::move(colidx);
  if (!same) {
    ++pattern_id_;
    structure_on_device_ = false;
    values_ = std::make_unique<MirroredBuffer<double>>(colidx_.size(), MemType::HostPinned, space_.device);
  }
}

void CsrMatrix::reopen() {
  if (state_ == State::Building) return;
  const auto vals = local_values();
  building_.assign(static_cast<std::size_t>(local_rows()), {});
  for (std::size_t r = 0; r < building_.size(); ++r)
    for (auto k = rowptr_[r]; k < rowptr_[r + 1]; ++k)
      building_[r][colidx_[static_cast<std::size_t>(k)]] = vals[static_cast<std::size_t>(k)];
  state_ = State::Building;
}

void CsrMatrix::rebuild_ghosts() {
  const int me = comm_->rank();
  const std::int64_t cs = cols_.start(me), ce = cols_.end(me), nloc = ce - cs;
  std::vector<std::int64_t> ghosts;
  for (auto c : colidx_)
    if (c < cs || c >= ce) ghosts.push_back(c);
  std::sort(ghosts.begin(), ghosts.end());
  ghosts.erase(std::unique(ghosts.begin(), ghosts.end()), ghosts.end());

  local_col_.resize(colidx_.size());
  for (std::size_t k = 0; k < colidx_.size(); ++k) {
    const auto c = colidx_[k];
    local_col_[k] = (c >= cs && c < ce) ? c - cs
                                        : nloc + (std::lower_bound(ghosts.begin(), ghosts.end(), c) - ghosts.begin());
  }

  const bool changed = comm_->allreduce_or(!ghost_sf_ || ghosts != ghost_cols_);
  ghost_cols_ = std::move(ghosts);
  if (!changed) return;
  std::vector<RemotePoint> remote;
  remote.reserve(ghost_cols_.size());
  for (auto c : ghost_cols_) {
    const int owner = cols_.owner(c);
    remote.push_back({owner, c - cols_.start(owner)});
  }
  ghost_sf_ = std::make_unique<StarForest>(*comm_, nloc, std::move(remote));
  ghost_sf_->setup();
  ghost_buf_ = std::make_unique<MirroredBuffer<double>>(ghost_cols_.size(), MemType::HostPinned, space_.device);
}

void CsrMatrix::preallocate(const std::vector<std::vector<std::int64_t>>& row_cols) {
  if (static_cast<std::int64_t>(row_cols.size()) != local_rows())
    throw UsageError("preallocation needs one column list per owned row");
  std::vector<std::int64_t> rowptr{0}, colidx;
  for (const auto& cols : row_cols) {
    std::vector<std::int64_t> sorted(cols);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (auto c : sorted) {
      if (c < 0 || c >= cols_.global_size()) throw UsageError("preallocated column out of range");
      colidx.push_back(c);
    }
    rowptr.push_back(static_cast<std::int64_t>(colidx.size()));
  }
  building_.assign(building_.size(), {});
  stash_.clear();
  set_pattern(std::move(rowptr), std::move(colidx));
  state_ = State::Assembled;
  zero_entries();
  rebuild_ghosts();
}

void CsrMatrix::zero_entries() {
  require_assembled("zero_entries");
  {
    auto v = values_->access(ctx(), space_, AccessMode::Write);
    std::fill(v.data().begin(), v.data().end(), 0.0);
  }
  ctx().run(space_, "MatZeroEntries", 8.0 * static_cast<double>(colidx_.size()));
}

void CsrMatrix::ensure_structure_on(ExecSpace s) const {
  if (!s.is_device() || structure_on_device_) return;
  const double bytes = kIndexBytes * static_cast<double>(colidx_.size() + rowptr_.size());
  ctx().transfer(TransferKind::H2D, bytes, true, "csr_structure", s.device);
  structure_on_device_ = true;
}

CooPlan CsrMatrix::coo_preprocess(std::span<const std::int64_t> i, std::span<const std::int64_t> j) {
  const int me = comm_->rank();
  const int p = comm_->size();
  std::string err;
  if (i.size() != j.size()) err = "COO row and column arrays differ in length";
  for (std::size_t k = 0; k < std::min(i.size(), j.size()) && err.empty(); ++k) {
    if (i[k] < 0 || j[k] < 0) err = "negative COO index at entry " + std::to_string(k);
    else if (i[k] >= rows_.global_size() || j[k] >= cols_.global_size())
      err = "COO entry " + std::to_string(k) + " outside the matrix";
  }
  if (comm_->allreduce_or(!err.empty())) throw UsageError(err.empty() ? "invalid COO entries on another rank" : err);

  CooPlan plan;
  plan.nlocal_input_ = i.size();
  std::vector<std::vector<std::int64_t>> to(static_cast<std::size_t>(p));
  for (std::size_t k = 0; k < i.size(); ++k) {
    const int owner = rows_.owner(i[k]);
    if (owner == me) plan.own_input_.push_back(static_cast<std::int64_t>(k));
    else to[static_cast<std::size_t>(owner)].push_back(static_cast<std::int64_t>(k));
  }

  std::vector<std::int64_t> counts(static_cast<std::size_t>(p));
  std::vector<std::vector<std::byte>> out(static_cast<std::size_t>(p));
  for (int d = 0; d < p; ++d) {
    const auto& ks = to[static_cast<std::size_t>(d)];
    counts[static_cast<std::size_t>(d)] = static_cast<std::int64_t>(ks.size());
    std::vector<std::int64_t> pairs;
    for (auto k : ks) {
      pairs.push_back(i[static_cast<std::size_t>(k)]);
      pairs.push_back(j[static_cast<std::size_t>(k)]);
    }
    out[static_cast<std::size_t>(d)] = pack_pod(pairs);
  }
  const auto matrix = comm_->allgatherv<std::int64_t>(counts);
  const auto in = comm_->exchange(out);

  // Receive slots at each owner are laid out by ascending source rank.
  std::vector<std::int64_t> leaf_local;
  std::vector<RemotePoint> leaf_remote;
  for (int d = 0; d < p; ++d) {
    if (d == me) continue;
    std::int64_t base = 0;
    for (int s = 0; s < me; ++s)
      if (s != d) base += matrix[static_cast<std::size_t>(s)][static_cast<std::size_t>(d)];
    const auto& ks = to[static_cast<std::size_t>(d)];
    for (std::size_t t = 0; t < ks.size(); ++t) {
      leaf_local.push_back(ks[t]);
      leaf_remote.push_back({d, base + static_cast<std::int64_t>(t)});
    }
  }

  std::vector<std::pair<std::int64_t, std::int64_t>> combined;
  for (auto k : plan.own_input_) combined.emplace_back(i[static_cast<std::size_t>(k)], j[static_cast<std::size_t>(k)]);
  for (int s = 0; s < p; ++s) {
    if (s == me) continue;
    const auto pairs = unpack_pod<std::int64_t>(in[static_cast<std::size_t>(s)]);
    for (std::size_t t = 0; t + 1 < pairs.size(); t += 2) combined.emplace_back(pairs[t], pairs[t + 1]);
  }
  plan.nreceived_ = combined.size() - plan.own_input_.size();

  plan.sf_ = std::make_shared<StarForest>(*comm_, static_cast<std::int64_t>(plan.nreceived_), std::move(leaf_local),
                                          std::move(leaf_remote));
  plan.sf_->setup();

  std::vector<std::vector<std::int64_t>> row_cols(static_cast<std::size_t>(local_rows()));
  for (const auto& [r, c] : combined) row_cols[static_cast<std::size_t>(r - row_start())].push_back(c);
  std::vector<std::int64_t> rowptr{0}, colidx;
  for (auto& cols : row_cols) {
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    colidx.insert(colidx.end(), cols.begin(), cols.end());
    rowptr.push_back(static_cast<std::int64_t>(colidx.size()));
  }
  building_.assign(building_.size(), {});
  stash_.clear();
  set_pattern(std::move(rowptr), std::move(colidx));
  state_ = State::Assembled;

  plan.perm_.reserve(combined.size());
  plan.repeats_.assign(colidx_.size(), 0);
  for (const auto& [r, c] : combined) {
    const auto lr = static_cast<std::size_t>(r - row_start());
    const auto b = colidx_.begin() + rowptr_[lr], e = colidx_.begin() + rowptr_[lr + 1];
    const auto slot = std::lower_bound(b, e, c) - colidx_.begin();
    plan.perm_.push_back(slot);
    ++plan.repeats_[static_cast<std::size_t>(slot)];
  }
  ctx().host_op("MatCOOPreprocess", 32.0 * static_cast<double>(combined.size()));
  if (space_.is_device())
    ctx().transfer(TransferKind::H2D, kIndexBytes * static_cast<double>(combined.size()), true, "coo_plan", space_.device);
  zero_entries();
  rebuild_ghosts();
  plan.pattern_id_ = pattern_id_;
  return plan;
}

void CsrMatrix::coo_set_values(const CooPlan& plan, std::span<const double> values, MemType values_mem) {
  require_assembled("coo_set_values");
  if (plan.pattern_id_ != pattern_id_) throw UsageError("COO plan does not match the matrix pattern");
  if (values.size() != plan.nlocal_input_) throw UsageError("COO value count does not match the preprocessed pattern");
  const ExecSpace s = space_;
  const double in_bytes = 8.0 * static_cast<double>(values.size());
  MemType mem = values_mem;
  if (s.is_device() && values_mem != MemType::Device) {
    ctx().transfer(TransferKind::H2D, in_bytes, values_mem != MemType::HostPageable, "coo_values", s.device);
    mem = MemType::Device;
  } else if (s.is_host() && values_mem == MemType::Device) {
    ctx().transfer(TransferKind::D2H, in_bytes, true, "coo_values", 0);
    mem = MemType::HostPinned;
  }

  std::vector<double> recv(plan.nreceived_, 0.0);
  plan.sf_->reduce<double>(values, {mem, true}, recv, {mem, true}, ReduceOp::Replace);

  ensure_structure_on(s);
  {
    auto v = values_->access(ctx(), s, AccessMode::Write);
    std::fill(v.data().begin(), v.data().end(), 0.0);
    std::size_t e = 0;
    for (auto k : plan.own_input_) {
      double& slot = v[static_cast<std::size_t>(plan.perm_[e++])];
      slot += values[static_cast<std::size_t>(k)];
    }
    for (double r : recv) {
      double& slot = v[static_cast<std::size_t>(plan.perm_[e++])];
      slot += r;
    }
  }
  const double ncomb = static_cast<double>(plan.perm_.size());
  ctx().run(s, "MatSetValuesCOO", 12.0 * ncomb + 8.0 * static_cast<double>(colidx_.size()));
}

void CsrMatrix::set_values_device(std::int64_t row_begin, std::int64_t row_end,
                                  const std::function<void(std::int64_t, DeviceRowWriter&)>& fill) {
  require_assembled("set_values_device");
  const std::int64_t rs = row_start();
  if (row_begin < rs || row_end > rs + local_rows() || row_begin > row_end)
    throw UsageError("device assembly rows must be owned by this rank");
  if (row_begin == row_end) return;
  ensure_structure_on(space_);
  std::size_t writes = 0;
  {
    auto v = values_->access(ctx(), space_, AccessMode::ReadWrite);
    DeviceRowWriter w;
    for (std::int64_t r = row_begin; r < row_end; ++r) {
      const auto lr = static_cast<std::size_t>(r - rs);
      const auto b = static_cast<std::size_t>(rowptr_[lr]), e = static_cast<std::size_t>(rowptr_[lr + 1]);
      w.row_ = r;
      w.cols_ = std::span<const std::int64_t>(colidx_).subspan(b, e - b);
      w.vals_ = v.data().subspan(b, e - b);
      fill(r, w);
    }
    writes = w.writes_;
  }
  ctx().run(space_, "MatSetValuesDevice", (8.0 + kIndexBytes) * static_cast<double>(writes));
}

void CsrMatrix::gather_ghosts(const DistVec& x, ExecSpace s) const {
  const MemTag tag{s.is_device() ? MemType::Device : MemType::HostPinned, true};
  auto xv = x.access(s, AccessMode::Read);
  auto gv = ghost_buf_->access(ctx(), s, AccessMode::Write);
  ghost_sf_->bcast<double>(xv.data(), tag, gv.data(), tag, ReduceOp::Replace);
}

void CsrMatrix::mult(const DistVec& x, DistVec& y) const {
  require_assembled("mult");
  if (!(x.layout() == cols_) || !(y.layout() == rows_)) throw UsageError("vector layouts do not match the matrix");
  if (&x == &y) throw UsageError("mult cannot work in place");
  const ExecSpace s = y.space();
  ensure_structure_on(s);
  gather_ghosts(x, s);
  const auto nloc = static_cast<std::int64_t>(x.local_size());
  {
    auto a = values_->access(ctx(), s, AccessMode::Read);
    auto xv = x.access(s, AccessMode::Read);
    auto gv = ghost_buf_->access(ctx(), s, AccessMode::Read);
    auto yv = y.access(s, AccessMode::Write);
    for (std::size_t r = 0; r + 1 < rowptr_.size(); ++r) {
      double sum = 0.0;
      for (auto k = static_cast<std::size_t>(rowptr_[r]); k < static_cast<std::size_t>(rowptr_[r + 1]); ++k) {
        const auto lc = local_col_[k];
        sum += a[k] * (lc < nloc ? xv[static_cast<std::size_t>(lc)] : gv[static_cast<std::size_t>(lc - nloc)]);
      }
      yv[r] = sum;
    }
  }
  const double nnz = static_cast<double>(colidx_.size());
  const double touched = static_cast<double>(local_rows() + nloc) + static_cast<double>(ghost_cols_.size());
  if (s.is_device()) {
    ctx().enqueue_kernel(0, "MatMult", 12.0 * nnz + 8.0 * touched, 2.0 * nnz, {values_.get(), &y.buffer()}, s.device);
  } else {
    ctx().host_op("MatMult", 12.0 * nnz + 8.0 * touched);
  }
}

void CsrMatrix::mult_transpose(const DistVec& x, DistVec& y) const {
  require_assembled("mult_transpose");
  if (!(x.layout() == rows_) || !(y.layout() == cols_)) throw UsageError("vector layouts do not match the matrix");
  if (&x == &y) throw UsageError("mult_transpose cannot work in place");
  const ExecSpace s = y.space();
  ensure_structure_on(s);
  const auto nloc = static_cast<std::int64_t>(y.local_size());
  {
    auto a = values_->access(ctx(), s, AccessMode::Read);
    auto xv = x.access(s, AccessMode::Read);
    auto gv = ghost_buf_->access(ctx(), s, AccessMode::Write);
    auto yv = y.access(s, AccessMode::Write);
    std::fill(yv.data().begin(), yv.data().end(), 0.0);
    std::fill(gv.data().begin(), gv.data().end(), 0.0);
    for (std::size_t r = 0; r + 1 < rowptr_.size(); ++r) {
      for (auto k = static_cast<std::size_t>(rowptr_[r]); k < static_cast<std::size_t>(rowptr_[r + 1]); ++k) {
        const auto lc = local_col_[k];
        double& t = lc < nloc ? yv[static_cast<std::size_t>(lc)] : gv[static_cast<std::size_t>(lc - nloc)];
        t += a[k] * xv[r];
      }
    }
  }
  const double nnz = static_cast<double>(colidx_.size());
  const double touched = static_cast<double>(local_rows() + nloc) + static_cast<double>(ghost_cols_.size());
  if (s.is_device()) {
    ctx().enqueue_kernel(0, "MatMultTranspose", 12.0 * nnz + 8.0 * touched, 2.0 * nnz, {values_.get(), &y.buffer()},
                         s.device);
  } else {
    ctx().host_op("MatMultTranspose", 12.0 * nnz + 8.0 * touched);
  }
  const MemTag tag{s.is_device() ? MemType::Device : MemType::HostPinned, true};
  auto gv = ghost_buf_->access(ctx(), s, AccessMode::Read);
  auto yv = y.access(s, AccessMode::ReadWrite);
  ghost_sf_->reduce<double>(gv.data(), tag, yv.data(), tag, ReduceOp::Sum);
}

DistVec CsrMatrix::get_diagonal() const {
  DistVec d(*comm_, rows_, space_);
  get_diagonal(d);
  return d;
}

void CsrMatrix::get_diagonal(DistVec& d) const {
  require_assembled("get_diagonal");
  if (!(rows_ == cols_)) throw UsageError("diagonal of a non-square matrix");
  if (!(d.layout() == rows_)) throw UsageError("diagonal vector layout does not match the matrix");
  const ExecSpace s = d.space();
  ensure_structure_on(s);
  {
    auto a = values_->access(ctx(), s, AccessMode::Read);
    auto dv = d.access(s, AccessMode::Write);
    const std::int64_t rs = row_start();
    for (std::size_t r = 0; r + 1 < rowptr_.size(); ++r) {
      const auto b = colidx_.begin() + rowptr_[r], e = colidx_.begin() + rowptr_[r + 1];
      const auto it = std::lower_bound(b, e, rs + static_cast<std::int64_t>(r));
      dv[r] = (it != e && *it == rs + static_cast<std::int64_t>(r)) ? a[static_cast<std::size_t>(it - colidx_.begin())] : 0.0;
    }
  }
  d.charge("MatGetDiagonal", 16.0 * static_cast<double>(local_rows()), 0);
}

std::vector<double> CsrMatrix::local_values() const {
  auto v = values_->access(ctx(), ExecSpace::host(), AccessMode::Read);
  return {v.data().begin(), v.data().end()};
}

std::int64_t CsrMatrix::global_nnz() const { return comm_->allreduce_sum(static_cast<long long>(local_nnz())); }

std::vector<Triplet> CsrMatrix::gather_triplets() const {
  require_assembled("gather_triplets");
  const auto vals = local_values();
  std::vector<Triplet> mine;
  for (std::size_t r = 0; r + 1 < rowptr_.size(); ++r)
    for (auto k = static_cast<std::size_t>(rowptr_[r]); k < static_cast<std::size_t>(rowptr_[r + 1]); ++k)
      mine.push_back({row_start() + static_cast<std::int64_t>(r), colidx_[k], vals[k]});
  std::vector<Triplet> all;
  for (const auto& part : comm_->allgatherv<Triplet>(mine)) all.insert(all.end(), part.begin(), part.end());
  return all;
}

CsrMatrix CsrMatrix::from_triplets(Communicator& comm, Layout rows, Layout cols, std::span<const Triplet> all,
                                   ExecSpace space) {
  CsrMatrix a(comm, std::move(rows), std::move(cols), space);
  const int me = comm.rank();
  for (const Triplet& t : all) {
    if (t.row < 0 || t.row >= a.rows_.global_size()) throw UsageError("triplet row out of range");
    if (a.rows_.owner(t.row) == me) a.set_value(t.row, t.col, t.value, InsertMode::Add);
  }
  a.assemble();
  return a;
}

MatrixMarket MatrixMarket::read(std::istream& in) {
  MatrixMarket m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0)
    throw ValidationError("missing MatrixMarket banner");
  std::istringstream banner(line);
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  if (object != "matrix" || format != "coordinate" || (field != "real" && field != "integer") || symmetry != "general")
    throw ValidationError("only 'matrix coordinate real general' is supported");
  std::int64_t nnz = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '%') continue;
    std::istringstream ls(line);
    if (nnz < 0) {
      if (!(ls >> m.rows >> m.cols >> nnz) || m.rows < 0 || m.cols < 0 || nnz < 0)
        throw ValidationError("bad MatrixMarket size line");
      continue;
    }
    Triplet t;
    if (!(ls >> t.row >> t.col >> t.value)) throw ValidationError("bad MatrixMarket entry: " + line);
    --t.row;
    --t.col;
    if (t.row < 0 || t.row >= m.rows || t.col < 0 || t.col >= m.cols)
      throw ValidationError("MatrixMarket entry out of range: " + line);
    m.entries.push_back(t);
  }
  if (nnz < 0 || static_cast<std::int64_t>(m.entries.size()) != nnz)
    throw ValidationError("MatrixMarket entry count mismatch");
  return m;
}

void MatrixMarket::write(std::ostream& out) const {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << rows << " " << cols << " " << entries.size() << "\n";
  const auto old = out.precision(17);
  for (const auto& t : entries) out << t.row + 1 << " " << t.col + 1 << " " << t.value << "\n";
  out.precision(old);
}

}  // namespace portsim
