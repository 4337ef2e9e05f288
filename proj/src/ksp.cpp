#include <cmath>
#include <sstream>

#include "portsim/solve.hpp"

namespace portsim {

DenseLu::DenseLu(std::size_t n, std::vector<double> a) : n_(n), lu_(std::move(a)), piv_(n) {
  if (lu_.size() != n * n) throw UsageError("dense matrix size mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu_[i * n + k]) > std::abs(lu_[p * n + k])) p = i;
    if (lu_[p * n + k] == 0.0) throw SolverError("singular matrix in dense LU", static_cast<int>(k));
    piv_[k] = p;
    if (p != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(lu_[k * n + j], lu_[p * n + j]);
    const double inv = 1.0 / lu_[k * n + k];
    for (std::size_t i = k + 1; i < n; ++i) {
      double& l = lu_[i * n + k];
      if (l == 0.0) continue;
      l *= inv;
      for (std::size_t j = k + 1; j < n; ++j) lu_[i * n + j] -= l * lu_[k * n + j];
    }
  }
}

std::vector<double> DenseLu::solve(std::span<const double> b) const {
  if (b.size() != n_) throw UsageError("dense solve size mismatch");
  std::vector<double> x(b.begin(), b.end());
  for (std::size_t k = 0; k < n_; ++k) std::swap(x[k], x[piv_[k]]);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < i; ++j) x[i] -= lu_[i * n_ + j] * x[j];
  for (std::size_t i = n_; i-- > 0;) {
    for (std::size_t j = i + 1; j < n_; ++j) x[i] -= lu_[i * n_ + j] * x[j];
    x[i] /= lu_[i * n_ + i];
  }
  return x;
}

DistVec inverse_diagonal(const CsrMatrix& a) {
  DistVec d = a.get_diagonal();
  reciprocal(d);
  return d;
}

JacobiPc::JacobiPc(const CsrMatrix& a) : dinv_(portsim::inverse_diagonal(a)) {}

void JacobiPc::apply(const DistVec& r, DistVec& z) { pointwise_mult(z, dinv_, r); }

LuPc::LuPc(const CsrMatrix& a) {
  if (!(a.row_layout() == a.col_layout())) throw UsageError("LU needs a square matrix");
  const auto n = static_cast<std::size_t>(a.row_layout().global_size());
  std::vector<double> dense(n * n, 0.0);
  for (const Triplet& t : a.gather_triplets())
    dense[static_cast<std::size_t>(t.row) * n + static_cast<std::size_t>(t.col)] += t.value;
  a.ctx().host_op("MatLUFactor", 8.0 * static_cast<double>(n * n));
  lu_ = DenseLu(n, std::move(dense));
}

void LuPc::apply(const DistVec& r, DistVec& z) {
  const auto all = r.gather();
  const auto x = lu_.solve(all);
  const auto n = static_cast<double>(lu_.size());
  z.ctx().host_op("MatSolve", 16.0 * n * n);
  z.set_local_values(std::span<const double>(x).subspan(static_cast<std::size_t>(z.start()),
                                                        static_cast<std::size_t>(z.local_size())));
}

std::shared_ptr<Preconditioner> make_pc(PcType type, const CsrMatrix& a) {
  switch (type) {
    case PcType::None: return std::make_shared<IdentityPc>();
    case PcType::Jacobi: return std::make_shared<JacobiPc>(a);
    case PcType::Lu: return std::make_shared<LuPc>(a);
    case PcType::Mg: throw UsageError("multigrid preconditioners are built from a hierarchy");
  }
  return nullptr;
}

const char* to_string(KspType t) {
  switch (t) {
    case KspType::CG: return "cg";
    case KspType::BiCGstab: return "bcgs";
    case KspType::Chebyshev: return "chebyshev";
    case KspType::Richardson: return "richardson";
  }
  return "?";
}

const char* to_string(PcType t) {
  switch (t) {
    case PcType::None: return "none";
    case PcType::Jacobi: return "jacobi";
    case PcType::Lu: return "lu";
    case PcType::Mg: return "mg";
  }
  return "?";
}

void KrylovConfig::validate() const {
  if (!(rtol > 0) || !(atol > 0)) throw UsageError("solver tolerances must be positive");
  if (max_it < 1) throw UsageError("max iterations must be at least 1");
  if (type == KspType::Chebyshev && (cheb_lo != 0 || cheb_hi != 0) && !(0 < cheb_lo && cheb_lo < cheb_hi))
    throw UsageError("Chebyshev bounds need 0 < lo < hi");
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

struct Tracker {
  const KrylovConfig& config;
  KspResult result;
  double tol;

  bool record(int k, double rn, const DistVec& r) {
    result.history.push_back(rn);
    result.iterations = k;
    if (config.monitor) config.monitor(k, rn, r);
    if (!std::isfinite(rn)) throw SolverError("residual norm is not finite", k);
    result.converged = rn <= tol;
    return result.converged;
  }
};

void residual(const CsrMatrix& a, const DistVec& b, const DistVec& x, DistVec& r) {
  a.mult(x, r);
  aypx(r, -1.0, b);
}

void run_cg(const CsrMatrix& a, const DistVec& b, DistVec& x, Preconditioner& pc, Tracker& tr) {
  DistVec r = x.duplicate(), z = x.duplicate(), p = x.duplicate(), q = x.duplicate();
  residual(a, b, x, r);
  if (tr.record(0, norm2(r), r)) return;
  pc.apply(r, z);
  copy(z, p);
  double rz = dot(r, z);
  for (int k = 1; k <= tr.config.max_it; ++k) {
    a.mult(p, q);
    const double pq = dot(p, q);
    if (!(pq > 0)) throw SolverError("indefinite operator in CG: p'Ap = " + fmt(pq), k);
    const double alpha = rz / pq;
    axpy(x, alpha, p);
    axpy(r, -alpha, q);
    if (tr.record(k, norm2(r), r)) return;
    pc.apply(r, z);
    const double rz_new = dot(r, z);
    aypx(p, rz_new / rz, z);
    rz = rz_new;
  }
}

void run_bicgstab(const CsrMatrix& a, const DistVec& b, DistVec& x, Preconditioner& pc, Tracker& tr) {
  DistVec r = x.duplicate(), rhat = x.duplicate(), p = x.duplicate(), v = x.duplicate(), phat = x.duplicate(),
          s = x.duplicate(), shat = x.duplicate(), t = x.duplicate();
  residual(a, b, x, r);
  double rn = norm2(r);
  if (tr.record(0, rn, r)) return;
  copy(r, rhat);
  const double rhat_norm = rn;
  double rho_old = 1.0, alpha = 1.0, omega = 1.0;
  for (int k = 1; k <= tr.config.max_it; ++k) {
    const double rho = dot(rhat, r);
    if (std::abs(rho) <= 1e-30 * rhat_norm * rn) throw SolverError("BiCGstab breakdown: rho = " + fmt(rho), k);
    if (k == 1) {
      copy(r, p);
    } else {
      axpy(p, -omega, v);
      aypx(p, (rho / rho_old) * (alpha / omega), r);
    }
    pc.apply(p, phat);
    a.mult(phat, v);
    const double rv = dot(rhat, v);
    if (std::abs(rv) <= 1e-30 * rhat_norm * norm2(v)) throw SolverError("BiCGstab breakdown: rhat'v = " + fmt(rv), k);
    alpha = rho / rv;
    waxpy(s, -alpha, v, r);
    const double sn = norm2(s);
    if (sn <= tr.tol) {
      axpy(x, alpha, phat);
      copy(s, r);
      tr.record(k, sn, r);
      return;
    }
    pc.apply(s, shat);
    a.mult(shat, t);
    const double tt = dot(t, t);
    if (!(tt > 0)) throw SolverError("BiCGstab breakdown: t = 0", k);
    omega = dot(t, s) / tt;
    axpy(x, alpha, phat);
    axpy(x, omega, shat);
    waxpy(r, -omega, t, s);
    rn = norm2(r);
    if (tr.record(k, rn, r)) return;
    if (omega == 0.0) throw SolverError("BiCGstab breakdown: omega = 0", k);
    rho_old = rho;
  }
}

/// Chebyshev recurrence state for M^{-1}A with spectrum in [lo, hi].
struct ChebState {
  double theta, delta, sigma, rho;
  explicit ChebState(EigBounds e)
      : theta(0.5 * (e.hi + e.lo)), delta(0.5 * (e.hi - e.lo)), sigma(theta / delta), rho(1.0 / sigma) {}
  /// d <- rho1 * rho * d + (2 rho1 / delta) z
  void next(DistVec& d, const DistVec& z) {
    const double rho1 = 1.0 / (2.0 * sigma - rho);
    scale(d, rho1 * rho);
    axpy(d, 2.0 * rho1 / delta, z);
    rho = rho1;
  }
};

void check_bounds(EigBounds e) {
  if (!(0 < e.lo && e.lo < e.hi)) throw UsageError("Chebyshev bounds need 0 < lo < hi");
}

void run_chebyshev(const CsrMatrix& a, const DistVec& b, DistVec& x, Preconditioner& pc, EigBounds e, Tracker& tr) {
  check_bounds(e);
  DistVec r = x.duplicate(), z = x.duplicate(), d = x.duplicate(), t = x.duplicate();
  residual(a, b, x, r);
  if (tr.record(0, norm2(r), r)) return;
  ChebState st(e);
  pc.apply(r, z);
  copy(z, d);
  scale(d, 1.0 / st.theta);
  for (int k = 1; k <= tr.config.max_it; ++k) {
    axpy(x, 1.0, d);
    a.mult(d, t);
    axpy(r, -1.0, t);
    if (tr.record(k, norm2(r), r)) return;
    pc.apply(r, z);
    st.next(d, z);
  }
}

void run_richardson(const CsrMatrix& a, const DistVec& b, DistVec& x, Preconditioner& pc, Tracker& tr) {
  DistVec r = x.duplicate(), z = x.duplicate();
  residual(a, b, x, r);
  if (tr.record(0, norm2(r), r)) return;
  for (int k = 1; k <= tr.config.max_it; ++k) {
    pc.apply(r, z);
    axpy(x, tr.config.richardson_scale, z);
    residual(a, b, x, r);
    if (tr.record(k, norm2(r), r)) return;
  }
}

}  // namespace

KspResult ksp_solve(const KrylovConfig& config, const CsrMatrix& a, const DistVec& b, DistVec& x) {
  config.validate();
  if (!a.assembled()) throw UsageError("solve needs an assembled operator");
  if (!(a.row_layout() == a.col_layout())) throw UsageError("solve needs a square operator");
  if (!(b.layout() == a.row_layout()) || !(x.layout() == a.col_layout()))
    throw UsageError("vector layouts do not match the operator");
  std::shared_ptr<Preconditioner> pc = config.pc ? config.pc : make_pc(config.pc_type, a);
  Tracker tr{config, {}, 0.0};
  tr.tol = std::max(config.rtol * norm2(b), config.atol);
  switch (config.type) {
    case KspType::CG: run_cg(a, b, x, *pc, tr); break;
    case KspType::BiCGstab: run_bicgstab(a, b, x, *pc, tr); break;
    case KspType::Richardson: run_richardson(a, b, x, *pc, tr); break;
    case KspType::Chebyshev: {
      EigBounds e{config.cheb_lo, config.cheb_hi};
      if (e.lo == 0 && e.hi == 0) {
        auto* jac = dynamic_cast<JacobiPc*>(pc.get());
        if (!jac && !dynamic_cast<IdentityPc*>(pc.get()))
          throw UsageError("Chebyshev eigenvalue estimation supports only none or Jacobi preconditioning");
        e = estimate_eigs(a, jac ? &jac->inverse_diagonal() : nullptr);
      }
      run_chebyshev(a, b, x, *pc, e, tr);
      break;
    }
  }
  return tr.result;
}

EigBounds estimate_eigs(const CsrMatrix& a, const DistVec* dinv) {
  DistVec v(a.comm(), a.row_layout(), a.space()), w(a.comm(), a.row_layout(), a.space());
  DistVec t(a.comm(), a.row_layout(), a.space());
  {
    // Hashed start vector: independent of the partition, rich in every mode.
    std::vector<double> start(static_cast<std::size_t>(v.local_size()));
    for (std::size_t i = 0; i < start.size(); ++i) {
      std::uint64_t z = static_cast<std::uint64_t>(v.start()) + i + 0x9e3779b97f4a7c15ull;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z ^= z >> 31;
      start[i] = static_cast<double>(z >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }
    v.set_local_values(start);
  }
  scale(v, 1.0 / norm2(v));
  double lambda = 0.0;
  for (int k = 1; k <= 10; ++k) {
    if (dinv) {
      a.mult(v, t);
      pointwise_mult(w, *dinv, t);
    } else {
      a.mult(v, w);
    }
    lambda = norm2(w);
    if (!(lambda > 0)) throw SolverError("eigenvalue estimate of a zero operator", k);
    copy(w, v);
    scale(v, 1.0 / lambda);
  }
  return {0.1 * lambda, 1.1 * lambda};
}

void chebyshev_smooth(const CsrMatrix& a, const DistVec& dinv, const DistVec& b, DistVec& x, int sweeps,
                      EigBounds bounds) {
  check_bounds(bounds);
  if (sweeps <= 0) return;
  DistVec r = x.duplicate(), d = x.duplicate(), t = x.duplicate();
  ChebState st(bounds);
  residual(a, b, x, r);
  pointwise_mult(d, dinv, r);
  scale(d, 1.0 / st.theta);
  for (int k = 1; k <= sweeps; ++k) {
    axpy(x, 1.0, d);
    if (k == sweeps) break;
    a.mult(d, t);
    axpy(r, -1.0, t);
    pointwise_mult(t, dinv, r);
    st.next(d, t);
  }
}

}  // namespace portsim
