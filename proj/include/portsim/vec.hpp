#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "portsim/exec.hpp"
#include "portsim/transport.hpp"

namespace portsim {

/// Contiguous ownership ranges: rank r owns [start(r), end(r)).
class Layout {
 public:
  Layout() : starts_{0} {}
  /// `starts` has nranks+1 non-decreasing entries beginning at 0.
  explicit Layout(std::vector<std::int64_t> starts);

  /// Near-even split: the first n % p ranks get one extra entry.
  static Layout uniform(std::int64_t n, int nranks);
  /// Collective: every rank contributes its local size.
  static Layout from_local(Communicator& comm, std::int64_t nlocal);

  int nranks() const { return static_cast<int>(starts_.size()) - 1; }
  std::int64_t global_size() const { return starts_.back(); }
  std::int64_t start(int r) const { return starts_[static_cast<std::size_t>(r)]; }
  std::int64_t end(int r) const { return starts_[static_cast<std::size_t>(r) + 1]; }
  std::int64_t local_size(int r) const { return end(r) - start(r); }
  /// Rank owning global index i.
  int owner(std::int64_t i) const;
  const std::vector<std::int64_t>& starts() const { return starts_; }

  bool operator==(const Layout&) const = default;

 private:
  std::vector<std::int64_t> starts_;
};

/// Distributed vector of doubles. Operations execute in the output vector's
/// preferred space; inputs are brought there through the lazy mirror.
class DistVec {
 public:
  DistVec(Communicator& comm, Layout layout, ExecSpace space = ExecSpace::host());
  /// Same layout and space, zero-initialized.
  DistVec duplicate() const;

  DistVec(DistVec&&) = default;
  DistVec& operator=(DistVec&&) = default;

  const Layout& layout() const { return layout_; }
  std::int64_t local_size() const { return layout_.local_size(comm_->rank()); }
  std::int64_t global_size() const { return layout_.global_size(); }
  std::int64_t start() const { return layout_.start(comm_->rank()); }
  ExecSpace space() const { return space_; }
  void set_space(ExecSpace s);

  Communicator& comm() const { return *comm_; }
  ExecContext& ctx() const { return comm_->ctx(); }
  MirroredBuffer<double>& buffer() const { return buf_; }

  View<double> access(AccessMode mode) const { return buf_.access(ctx(), space_, mode); }
  View<double> access(ExecSpace s, AccessMode mode) const { return buf_.access(ctx(), s, mode); }
  MemTag memtag() const { return {space_.is_device() ? MemType::Device : buf_.host_memtype(), true}; }

  /// Host-side copy of the owned values.
  std::vector<double> local_values() const;
  /// Overwrite owned values from host data.
  void set_local_values(std::span<const double> values);
  /// Collective: all global values on every rank (for oracles and output).
  std::vector<double> gather() const;

  /// Charge one elementwise kernel in this vector's space.
  void charge(const char* label, double bytes, double flops) const;

 private:
  Communicator* comm_;
  Layout layout_;
  ExecSpace space_;
  mutable MirroredBuffer<double> buf_;
};

void axpy(DistVec& y, double alpha, const DistVec& x);
/// y = x + beta * y
void aypx(DistVec& y, double beta, const DistVec& x);
/// w = alpha * x + y
void waxpy(DistVec& w, double alpha, const DistVec& x, const DistVec& y);
void copy(const DistVec& src, DistVec& dst);
void scale(DistVec& x, double alpha);
void set_scalar(DistVec& x, double value);
/// w = x .* y
void pointwise_mult(DistVec& w, const DistVec& x, const DistVec& y);
/// w = x ./ y
void pointwise_divide(DistVec& w, const DistVec& x, const DistVec& y);
void reciprocal(DistVec& x);

/// Partial sums in index order, combined in rank order: identical on every
/// rank and bitwise reproducible.
double dot(const DistVec& x, const DistVec& y);
double norm2(const DistVec& x);

}  // namespace portsim
