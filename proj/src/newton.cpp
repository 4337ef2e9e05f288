#include <cmath>
#include <sstream>

#include "portsim/solve.hpp"

namespace portsim {

NewtonResult newton_solve(const NonlinearProblem& problem, DistVec& x, const NewtonConfig& config) {
  if (!problem.function || !problem.jacobian || !problem.jacobian_matrix)
    throw UsageError("nonlinear problem needs Function and Jacobian callbacks");
  if (!(config.rtol > 0) || !(config.atol > 0) || config.max_it < 1) throw UsageError("invalid Newton settings");
  CsrMatrix& j = *problem.jacobian_matrix;
  DistVec r = x.duplicate(), dx = x.duplicate(), rhs = x.duplicate();
  NewtonResult result;
  problem.function(x, r);
  const double f0 = norm2(r);
  result.history.push_back(f0);
  const double tol = std::max(config.rtol * f0, config.atol);
  if (f0 <= tol) {
    result.converged = true;
    return result;
  }
  for (int k = 1; k <= config.max_it; ++k) {
    problem.jacobian(x, j);
    copy(r, rhs);
    scale(rhs, -1.0);
    set_scalar(dx, 0.0);
    const KspResult inner = ksp_solve(config.ksp, j, rhs, dx);
    if (!inner.converged)
      throw SolverError("linear solve did not converge in Newton step " + std::to_string(k), k);
    axpy(x, 1.0, dx);
    problem.function(x, r);
    const double fn = norm2(r);
    result.history.push_back(fn);
    result.iterations = k;
    if (!std::isfinite(fn)) throw SolverError("Newton diverged", k);
    if (fn <= tol) {
      result.converged = true;
      return result;
    }
    if (config.stol > 0 && norm2(dx) <= config.stol * norm2(x)) {
      result.converged = true;
      return result;
    }
  }
  throw SolverError("Newton did not converge in " + std::to_string(config.max_it) + " iterations", config.max_it);
}

Function stub_compare(Function reference, Function candidate, double tol) {
  return [reference = std::move(reference), candidate = std::move(candidate), tol](const DistVec& x, DistVec& r) {
    reference(x, r);
    DistVec rk = r.duplicate();
    candidate(x, rk);
    axpy(rk, -1.0, r);
    const double norm = norm2(rk);
    if (norm > tol) {
      std::ostringstream os;
      os << "stub comparison failed: norm = " << norm << " > " << tol;
      throw ComparisonError(os.str(), norm);
    }
  };
}

Listing2Problem::Listing2Problem(StructuredGrid& grid, double d, ExecSpace space)
    : grid_(&grid), d_(d), space_(space), f_(grid.create_global(space)) {
  if (grid.dim() != 1 || !grid.spec().periodic_x) throw UsageError("the model problem lives on a periodic 1D grid");
  xl_host_ = std::make_unique<LocalVec>(grid.create_local(ExecSpace::host()));
  if (grid.ctx().has_device()) xl_device_ = std::make_unique<LocalVec>(grid.create_local(ExecSpace::on_device(0)));
  set_scalar(f_, 0.0);
}

void Listing2Problem::manufacture(const DistVec& x) {
  set_scalar(f_, 0.0);
  DistVec r = f_.duplicate();
  function_host(x, r);
  copy(r, f_);
}

namespace {

void residual_loop(std::span<const double> xl, std::span<double> r, std::span<const double> f, std::int64_t offset,
                   double d) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    const std::size_t li = i + static_cast<std::size_t>(offset);
    r[i] = d * (xl[li - 1] - 2 * xl[li] + xl[li + 1]) + xl[li] * xl[li] - f[i];
  }
}

}  // namespace

void Listing2Problem::function_host(const DistVec& x, DistVec& r) {
  const ExecSpace h = ExecSpace::host();
  grid_->global_to_local(x, *xl_host_);
  const Corners o = grid_->corners(), g = grid_->ghost_corners();
  {
    auto xl = xl_host_->access(h, AccessMode::Read);
    auto f = f_.access(h, AccessMode::Read);
    auto rv = r.access(h, AccessMode::Write);
    residual_loop(xl.data(), rv.data(), f.data(), o.xs - g.xs, d_);
  }
  grid_->ctx().host_op("Function", 32.0 * static_cast<double>(o.xm));
}

void Listing2Problem::function_device(const DistVec& x, DistVec& r) {
  if (!xl_device_) throw ConfigError("device Function on a rank without a device");
  const ExecSpace dv = ExecSpace::on_device(0);
  grid_->global_to_local(x, *xl_device_);
  const Corners o = grid_->corners(), g = grid_->ghost_corners();
  {
    auto xl = xl_device_->access(dv, AccessMode::Read);
    auto f = f_.access(dv, AccessMode::Read);
    auto rv = r.access(dv, AccessMode::Write);
    residual_loop(xl.data(), rv.data(), f.data(), o.xs - g.xs, d_);
  }
  grid_->ctx().run(dv, "KokkosFunction", 32.0 * static_cast<double>(o.xm));
}

void Listing2Problem::jacobian_host(const DistVec& x, CsrMatrix& j) {
  if (j.assembled()) j.reopen();
  const Corners o = grid_->corners();
  const auto xv = x.local_values();
  for (std::int64_t i = o.xs; i < o.xs + o.xm; ++i) {
    const std::int64_t row[] = {grid_->global_index(i)};
    const std::int64_t cols[] = {grid_->global_index(i - 1), row[0], grid_->global_index(i + 1)};
    const double vals[] = {d_, -2 * d_ + 2 * xv[static_cast<std::size_t>(i - o.xs)], d_};
    j.set_values(row, cols, vals, InsertMode::Insert);
  }
  j.assemble();
}

void Listing2Problem::jacobian_device(const DistVec& x, CsrMatrix& j) {
  const Corners o = grid_->corners();
  auto xv = x.access(ExecSpace::on_device(0), AccessMode::Read);
  j.set_values_device(o.xs, o.xs + o.xm, [&](std::int64_t i, DeviceRowWriter& w) {
    w.set(grid_->global_index(i - 1), d_);
    w.set(i, -2 * d_ + 2 * xv[static_cast<std::size_t>(i - o.xs)]);
    w.set(grid_->global_index(i + 1), d_);
  });
}

NonlinearProblem Listing2Problem::problem(CsrMatrix& j, bool device) {
  NonlinearProblem p;
  if (device) {
    p.function = [this](const DistVec& x, DistVec& r) { function_device(x, r); };
    p.jacobian = [this](const DistVec& x, CsrMatrix& m) { jacobian_device(x, m); };
  } else {
    p.function = [this](const DistVec& x, DistVec& r) { function_host(x, r); };
    p.jacobian = [this](const DistVec& x, CsrMatrix& m) { jacobian_host(x, m); };
  }
  p.jacobian_matrix = &j;
  return p;
}

}  // namespace portsim
