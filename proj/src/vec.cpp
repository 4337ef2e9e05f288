#include "portsim/vec.hpp"

#include <algorithm>
#include <cmath>

namespace portsim {

Layout::Layout(std::vector<std::int64_t> starts) : starts_(std::move(starts)) {
  if (starts_.size() < 2 || starts_.front() != 0) throw UsageError("layout needs nranks+1 starts beginning at 0");
  for (std::size_t i = 1; i < starts_.size(); ++i)
    if (starts_[i] < starts_[i - 1]) throw UsageError("layout starts must be non-decreasing");
}

Layout Layout::uniform(std::int64_t n, int nranks) {
  if (nranks < 1 || n < 0) throw UsageError("bad uniform layout");
  std::vector<std::int64_t> s(static_cast<std::size_t>(nranks) + 1, 0);
  for (int r = 0; r < nranks; ++r) {
    const std::int64_t len = n / nranks + (r < n % nranks ? 1 : 0);
    s[static_cast<std::size_t>(r) + 1] = s[static_cast<std::size_t>(r)] + len;
  }
  return Layout(std::move(s));
}

Layout Layout::from_local(Communicator& comm, std::int64_t nlocal) {
  const auto sizes = comm.allgather(nlocal);
  std::vector<std::int64_t> s{0};
  for (auto n : sizes) s.push_back(s.back() + n);
  return Layout(std::move(s));
}

int Layout::owner(std::int64_t i) const {
  if (i < 0 || i >= global_size()) throw UsageError("global index " + std::to_string(i) + " out of range");
  auto it = std::upper_bound(starts_.begin(), starts_.end(), i);
  return static_cast<int>(it - starts_.begin()) - 1;
}

DistVec::DistVec(Communicator& comm, Layout layout, ExecSpace space)
    : comm_(&comm),
      layout_(std::move(layout)),
      space_(space),
      buf_(static_cast<std::size_t>(layout_.local_size(comm.rank())), MemType::HostPinned, space.device,
           comm.ctx().cost_only()) {
  if (layout_.nranks() != comm.size()) throw UsageError("layout rank count differs from communicator size");
  if (space.is_device()) comm.ctx().require_device(space.device);
}

DistVec DistVec::duplicate() const { return DistVec(*comm_, layout_, space_); }

void DistVec::set_space(ExecSpace s) {
  if (s.is_device()) {
    ctx().require_device(s.device);
    if (s.device != buf_.device()) throw UsageError("vector bound to another device");
  }
  space_ = s;
}

std::vector<double> DistVec::local_values() const {
  auto v = buf_.access(ctx(), ExecSpace::host(), AccessMode::Read);
  return {v.data().begin(), v.data().end()};
}

void DistVec::set_local_values(std::span<const double> values) {
  if (!ctx().cost_only() && static_cast<std::int64_t>(values.size()) != local_size())
    throw UsageError("local value count does not match layout");
  auto v = buf_.access(ctx(), ExecSpace::host(), AccessMode::Write);
  std::copy(values.begin(), values.end(), v.data().begin());
}

std::vector<double> DistVec::gather() const {
  const auto mine = local_values();
  const auto parts = comm_->allgatherv<double>(mine);
  std::vector<double> all;
  for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

void DistVec::charge(const char* label, double bytes, double flops) const {
  if (space_.is_device()) {
    ctx().enqueue_kernel(0, label, bytes, flops, {&buf_}, space_.device);
  } else {
    ctx().host_op(label, bytes);
  }
}

namespace {

void same_layout(const DistVec& a, const DistVec& b) {
  if (!(a.layout() == b.layout())) throw UsageError("vector layouts differ");
}

double n_of(const DistVec& v) { return static_cast<double>(v.local_size()); }

// Run `body` over views of `out` (written) and inputs (read), handling aliasing.
template <class Body>
void binary(DistVec& out, AccessMode out_mode, const DistVec& x, Body body) {
  const ExecSpace s = out.space();
  if (&x == &out) {
    auto o = out.access(s, AccessMode::ReadWrite);
    body(o.data(), std::span<const double>(o.data()));
  } else {
    auto xv = x.access(s, AccessMode::Read);
    auto o = out.access(s, out_mode);
    body(o.data(), std::span<const double>(xv.data()));
  }
}

template <class Body>
void ternary(DistVec& w, const DistVec& x, const DistVec& y, Body body) {
  const ExecSpace s = w.space();
  const bool x_is_w = &x == &w, y_is_w = &y == &w;
  View<double> xv, yv;
  if (!x_is_w) xv = x.access(s, AccessMode::Read);
  if (!y_is_w && &y != &x) yv = y.access(s, AccessMode::Read);
  auto wv = w.access(s, (x_is_w || y_is_w) ? AccessMode::ReadWrite : AccessMode::Write);
  std::span<const double> xs = x_is_w ? std::span<const double>(wv.data()) : std::span<const double>(xv.data());
  std::span<const double> ys = y_is_w ? std::span<const double>(wv.data())
                               : (&y == &x ? xs : std::span<const double>(yv.data()));
  body(wv.data(), xs, ys);
}

}  // namespace

void axpy(DistVec& y, double alpha, const DistVec& x) {
  same_layout(y, x);
  binary(y, AccessMode::ReadWrite, x, [&](std::span<double> o, std::span<const double> xs) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * xs[i] + o[i];
  });
  y.charge("VecAXPY", 24 * n_of(y), 2 * n_of(y));
}

void aypx(DistVec& y, double beta, const DistVec& x) {
  same_layout(y, x);
  binary(y, AccessMode::ReadWrite, x, [&](std::span<double> o, std::span<const double> xs) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] + beta * o[i];
  });
  y.charge("VecAYPX", 24 * n_of(y), 2 * n_of(y));
}

void waxpy(DistVec& w, double alpha, const DistVec& x, const DistVec& y) {
  same_layout(w, x);
  same_layout(w, y);
  ternary(w, x, y, [&](std::span<double> o, std::span<const double> xs, std::span<const double> ys) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * xs[i] + ys[i];
  });
  w.charge("VecWAXPY", 24 * n_of(w), 2 * n_of(w));
}

void copy(const DistVec& src, DistVec& dst) {
  same_layout(src, dst);
  if (&src == &dst) return;
  binary(dst, AccessMode::Write, src, [&](std::span<double> o, std::span<const double> xs) {
    std::copy(xs.begin(), xs.end(), o.begin());
  });
  dst.charge("VecCopy", 16 * n_of(dst), 0);
}

void scale(DistVec& x, double alpha) {
  {
    auto v = x.access(AccessMode::ReadWrite);
    for (double& e : v.data()) e *= alpha;
  }
  x.charge("VecScale", 16 * n_of(x), n_of(x));
}

void set_scalar(DistVec& x, double value) {
  {
    auto v = x.access(AccessMode::Write);
    std::fill(v.data().begin(), v.data().end(), value);
  }
  x.charge("VecSet", 8 * n_of(x), 0);
}

void pointwise_mult(DistVec& w, const DistVec& x, const DistVec& y) {
  same_layout(w, x);
  same_layout(w, y);
  ternary(w, x, y, [&](std::span<double> o, std::span<const double> xs, std::span<const double> ys) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] * ys[i];
  });
  w.charge("VecPointwiseMult", 24 * n_of(w), n_of(w));
}

void pointwise_divide(DistVec& w, const DistVec& x, const DistVec& y) {
  same_layout(w, x);
  same_layout(w, y);
  ternary(w, x, y, [&](std::span<double> o, std::span<const double> xs, std::span<const double> ys) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] / ys[i];
  });
  w.charge("VecPointwiseDivide", 24 * n_of(w), n_of(w));
}

void reciprocal(DistVec& x) {
  {
    auto v = x.access(AccessMode::ReadWrite);
    for (double& e : v.data()) e = e != 0.0 ? 1.0 / e : 0.0;
  }
  x.charge("VecReciprocal", 16 * n_of(x), n_of(x));
}

namespace {

double reduce_partial(const DistVec& x, double partial, double bytes, const char* label) {
  ExecContext& ctx = x.ctx();
  if (x.space().is_device()) {
    ctx.enqueue_kernel(0, label, bytes, 0, {&x.buffer()}, x.space().device);
    ctx.sync_stream(0, x.space().device);
  } else {
    ctx.host_op(label, bytes);
  }
  return x.comm().allreduce_sum(partial);
}

}  // namespace

double dot(const DistVec& x, const DistVec& y) {
  same_layout(x, y);
  const ExecSpace s = x.space();
  double partial = 0.0;
  {
    auto xv = x.access(s, AccessMode::Read);
    if (&x == &y) {
      for (double a : xv.data()) partial += a * a;
    } else {
      auto yv = y.access(s, AccessMode::Read);
      for (std::size_t i = 0; i < xv.size(); ++i) partial += xv[i] * yv[i];
    }
  }
  return reduce_partial(x, partial, 16 * n_of(x), "VecDot");
}

double norm2(const DistVec& x) {
  double partial = 0.0;
  {
    auto xv = x.access(AccessMode::Read);
    for (double a : xv.data()) partial += a * a;
  }
  return std::sqrt(reduce_partial(x, partial, 8 * n_of(x), "VecNorm"));
}

}  // namespace portsim
