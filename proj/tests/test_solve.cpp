#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "portsim/solve.hpp"

using namespace portsim;

namespace {
const ExecSpace H = ExecSpace::host();
const ExecSpace D = ExecSpace::on_device(0);

CsrMatrix diagonal(Communicator& comm, const std::vector<double>& d, ExecSpace s = H) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < d.size(); ++i) t.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), d[i]});
  const Layout l = Layout::uniform(static_cast<std::int64_t>(d.size()), comm.size());
  return CsrMatrix::from_triplets(comm, l, l, t, s);
}

DistVec filled(const CsrMatrix& a, double (*f)(std::int64_t), ExecSpace s = H) {
  DistVec v(a.comm(), a.row_layout(), s);
  std::vector<double> vals;
  for (std::int64_t i = v.start(); i < v.start() + v.local_size(); ++i) vals.push_back(f(i));
  v.set_local_values(vals);
  return v;
}

double rhs_fn(std::int64_t i) { return std::cos(0.3 * static_cast<double>(i)) + 0.5; }

/// Dense LU oracle from the gathered matrix.
Eigen::VectorXd dense_solve(const CsrMatrix& a, const std::vector<double>& b) {
  const auto n = static_cast<Eigen::Index>(a.row_layout().global_size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (const Triplet& t : a.gather_triplets()) m(t.row, t.col) += t.value;
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), n);
  return m.partialPivLu().solve(rhs);
}

double max_diff(const std::vector<double>& x, const Eigen::VectorXd& y) {
  double e = 0;
  for (std::size_t i = 0; i < x.size(); ++i) e = std::max(e, std::abs(x[i] - y(static_cast<Eigen::Index>(i))));
  return e;
}

GridSpec square(std::int64_t m) { return {.dim = 2, .mx = m, .my = m}; }
}  // namespace

TEST_CASE("dense LU") {
  DenseLu lu(3, {0, 2, 1, 1, 1, 1, 4, 0, 3});
  const auto x = lu.solve(std::vector<double>{5, 6, 10});
  Eigen::Matrix3d m;
  m << 0, 2, 1, 1, 1, 1, 4, 0, 3;
  const Eigen::Vector3d ref = m.partialPivLu().solve(Eigen::Vector3d(5, 6, 10));
  for (int i = 0; i < 3; ++i) CHECK(x[static_cast<std::size_t>(i)] == doctest::Approx(ref(i)).epsilon(1e-14));
  CHECK_THROWS_AS(DenseLu(2, {1, 2, 2, 4}), SolverError);
}

TEST_CASE("CG on diagonal systems") {
  run(2, [](RankEnv& env) {
    CsrMatrix id = diagonal(env.comm, std::vector<double>(6, 1.0));
    DistVec b = filled(id, rhs_fn), x = b.duplicate();
    KrylovConfig cfg;
    auto r = ksp_solve(cfg, id, b, x);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(r.history.size() == 2);

    // Three distinct eigenvalues: exact in three steps.
    CsrMatrix a = diagonal(env.comm, {1, 2, 4, 1, 2, 4});
    set_scalar(x, 0.0);
    cfg.rtol = 1e-12;
    r = ksp_solve(cfg, a, b, x);
    CHECK(r.converged);
    CHECK(r.iterations == 3);
    const auto xv = x.gather(), bv = b.gather();
    const double d[] = {1, 2, 4, 1, 2, 4};
    for (std::size_t i = 0; i < 6; ++i) CHECK(xv[i] == doctest::Approx(bv[i] / d[i]).epsilon(1e-12));

    // Jacobi makes it the identity.
    set_scalar(x, 0.0);
    cfg.pc_type = PcType::Jacobi;
    r = ksp_solve(cfg, a, b, x);
    CHECK(r.iterations == 1);
  });
}

TEST_CASE("zero right-hand side converges immediately") {
  run(1, [](RankEnv& env) {
    CsrMatrix a = diagonal(env.comm, {1, 2, 3});
    DistVec b(env.comm, a.row_layout()), x = b.duplicate();
    KrylovConfig cfg;
    cfg.atol = 1e-30;
    const auto r = ksp_solve(cfg, a, b, x);
    CHECK(r.converged);
    CHECK(r.iterations == 0);
    CHECK(r.history.size() == 1);
  });
}

TEST_CASE("Jacobi-CG Poisson matches dense LU") {
  for (int np : {1, 4}) {
    for (ExecSpace s : {H, D}) {
      run(np, [s](RankEnv& env) {
        StructuredGrid g(env.comm, square(32));
        CsrMatrix a = poisson2d(g, s);
        DistVec b = filled(a, rhs_fn, s), x = b.duplicate();
        KrylovConfig cfg;
        cfg.rtol = 1e-10;
        cfg.pc_type = PcType::Jacobi;
        const auto r = ksp_solve(cfg, a, b, x);
        CHECK(r.converged);
        const auto ref = dense_solve(a, b.gather());
        CHECK(max_diff(x.gather(), ref) < 1e-8);
      });
    }
  }
}

TEST_CASE("BiCGstab on convection-diffusion") {
  run(4, [](RankEnv& env) {
    StructuredGrid g(env.comm, square(32));
    CsrMatrix a = convection_diffusion2d(g, 20.0, -10.0, D);
    DistVec b = filled(a, rhs_fn, D), x = b.duplicate();
    KrylovConfig cfg;
    cfg.type = KspType::BiCGstab;
    cfg.pc_type = PcType::Jacobi;
    cfg.rtol = 1e-10;
    const auto r = ksp_solve(cfg, a, b, x);
    CHECK(r.converged);
    CHECK(r.history.back() <= 1e-10 * norm2(b));
    CHECK(max_diff(x.gather(), dense_solve(a, b.gather())) < 1e-8);
  });
}

TEST_CASE("CG residuals are mutually orthogonal") {
  run(2, [](RankEnv& env) {
    StructuredGrid g(env.comm, square(12));
    CsrMatrix a = poisson2d(g);
    DistVec b = filled(a, rhs_fn), x = b.duplicate();
    std::vector<std::vector<double>> res;
    KrylovConfig cfg;
    cfg.max_it = 8;
    cfg.rtol = 1e-14;
    cfg.monitor = [&](int, double, const DistVec& r) { res.push_back(r.gather()); };
    try {
      ksp_solve(cfg, a, b, x);
    } catch (const SolverError&) {
    }
    REQUIRE(res.size() >= 6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        double d = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < res[i].size(); ++k) {
          d += res[i][k] * res[j][k];
          ni += res[i][k] * res[i][k];
          nj += res[j][k] * res[j][k];
        }
        CHECK(std::abs(d) / std::sqrt(ni * nj) < 1e-8);
      }
  });
}

TEST_CASE("breakdowns are reported") {
  run(1, [](RankEnv& env) {
    const Layout l = Layout::uniform(2, 1);
    const std::vector<Triplet> swap = {{0, 1, 1.0}, {1, 0, 1.0}};
    CsrMatrix a = CsrMatrix::from_triplets(env.comm, l, l, swap);
    DistVec b(env.comm, l), x = b.duplicate();
    b.set_local_values(std::vector<double>{1.0, 0.0});
    KrylovConfig cfg;
    CHECK_THROWS_AS(ksp_solve(cfg, a, b, x), SolverError);
    // r0 = (1,0), A r0 = (0,1): r̂'v = 0.
    set_scalar(x, 0.0);
    cfg.type = KspType::BiCGstab;
    CHECK_THROWS_AS(ksp_solve(cfg, a, b, x), SolverError);

    CsrMatrix neg = diagonal(env.comm, {1.0, -1.0});
    b.set_local_values(std::vector<double>{0.0, 1.0});
    set_scalar(x, 0.0);
    cfg.type = KspType::CG;
    CHECK_THROWS_AS(ksp_solve(cfg, neg, b, x), SolverError);
  });
}

TEST_CASE("non-convergence within max_it") {
  run(1, [](RankEnv& env) {
    StructuredGrid g(env.comm, square(16));
    CsrMatrix a = poisson2d(g);
    DistVec b = filled(a, rhs_fn), x = b.duplicate();
    KrylovConfig cfg;
    cfg.max_it = 3;
    const auto r = ksp_solve(cfg, a, b, x);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 3);
    CHECK(r.history.size() == 4);
    cfg.max_it = 0;
    CHECK_THROWS_AS(ksp_solve(cfg, a, b, x), UsageError);
  });
}

TEST_CASE("Chebyshev") {
  run(1, [](RankEnv& env) {
    // Single eigenvalue of D^{-1}A at the interval centre: one sweep is exact.
    CsrMatrix a = diagonal(env.comm, {2, 3, 5});
    DistVec dinv = inverse_diagonal(a);
    DistVec b = filled(a, rhs_fn), x = b.duplicate();
    chebyshev_smooth(a, dinv, b, x, 1, {0.5, 1.5});
    const auto xv = x.gather(), bv = b.gather();
    CHECK(xv[0] == doctest::Approx(bv[0] / 2));
    CHECK(xv[2] == doctest::Approx(bv[2] / 5));

    // Zero right-hand side and guess stay zero.
    DistVec z = b.duplicate(), zb = b.duplicate();
    chebyshev_smooth(a, dinv, zb, z, 3, {0.5, 2.0});
    CHECK(norm2(z) == 0.0);
  });
  run(1, [](RankEnv& env) {
    // Error contracts by at most the Chebyshev bound 2 / (T_k(σ)) for
    // σ = (hi + lo) / (hi - lo), with eigenvalues inside [lo, hi].
    std::vector<double> d;
    for (int i = 0; i < 20; ++i) d.push_back(1.0 + 9.0 * i / 19.0);
    CsrMatrix a = diagonal(env.comm, d);
    DistVec dinv(env.comm, a.row_layout());
    set_scalar(dinv, 1.0);
    DistVec b(env.comm, a.row_layout()), x = b.duplicate();
    x.set_local_values(std::vector<double>(20, 1.0));
    const int k = 6;
    chebyshev_smooth(a, dinv, b, x, k, {1.0, 10.0});
    const double sigma = 11.0 / 9.0;
    const double tk = std::cosh(k * std::acosh(sigma));
    CHECK(norm2(x) <= std::sqrt(20.0) / tk * (1 + 1e-12));
    CHECK(norm2(x) >= 0.1 * std::sqrt(20.0) / tk);
  });
}

TEST_CASE("eigenvalue estimate") {
  run(2, [](RankEnv& env) {
    CsrMatrix a = diagonal(env.comm, {1, 1, 1, 1});
    const EigBounds e = estimate_eigs(a, nullptr);
    CHECK(e.hi == doctest::Approx(1.1));
    CHECK(e.lo == doctest::Approx(0.1));
    CsrMatrix d4 = diagonal(env.comm, {1, 2, 3, 4});
    CHECK(estimate_eigs(d4, nullptr).hi / 1.1 == doctest::Approx(4.0).epsilon(0.05));
    CsrMatrix d40 = diagonal(env.comm, {10, 20, 30, 40});
    CHECK(estimate_eigs(d40, nullptr).hi == doctest::Approx(10 * estimate_eigs(d4, nullptr).hi));
    StructuredGrid g(env.comm, square(17));
    CsrMatrix p = poisson2d(g);
    DistVec dinv = inverse_diagonal(p);
    const EigBounds q = estimate_eigs(p, &dinv);
    // Power iteration underestimates; the safety factor brings it near 2.
    CHECK(q.hi > 1.8);
    CHECK(q.hi < 2.2);
  });
}

TEST_CASE("one-level multigrid is a direct solve") {
  run(2, [](RankEnv& env) {
    StructuredGrid g(env.comm, square(9));
    MgHierarchy h(g, [](const StructuredGrid& gr, ExecSpace s) { return poisson2d(gr, s); }, {});
    DistVec b = g.create_global(), x = g.create_global();
    b.set_local_values(std::vector<double>(static_cast<std::size_t>(b.local_size()), 1.0));
    h.cycle(b, x);
    CHECK(max_diff(x.gather(), dense_solve(h.finest_op(), b.gather())) < 1e-12);
  });
}

TEST_CASE("W-cycle visits") {
  run(1, [](RankEnv& env) {
    StructuredGrid g(env.comm, square(33));
    MgConfig cfg;
    cfg.levels = 4;
    cfg.cycle = CycleType::W;
    MgHierarchy h(g, [](const StructuredGrid& gr, ExecSpace s) { return poisson2d(gr, s); }, cfg);
    CHECK(h.grid(0).mx() == 5);
    DistVec b = g.create_global(), x = g.create_global();
    set_scalar(b, 1.0);
    const std::size_t before = env.ctx.log().size();
    h.cycle(b, x);
    std::map<std::string, int> visits;
    for (std::size_t i = before; i < env.ctx.log().size(); ++i) {
      const Event& e = env.ctx.log()[i];
      if (e.kind == EventKind::Stage && e.detail == "cycle") ++visits[e.label];
    }
    CHECK(visits["level-3"] == 1);
    CHECK(visits["level-2"] == 2);
    CHECK(visits["level-1"] == 4);
    CHECK(visits["level-0"] == 8);
  });
}

TEST_CASE("multigrid bindings agree") {
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> migrations;
  for (const std::string bind : {"host:0-3", "device:0-3", "host:0-1,device:2-3"}) {
    run(4, [&](RankEnv& env) {
      StructuredGrid g(env.comm, square(33));
      MgConfig cfg;
      cfg.levels = 4;
      cfg.binding = parse_binding(bind, 4);
      MgHierarchy h(g, [](const StructuredGrid& gr, ExecSpace s) { return poisson2d(gr, s); }, cfg);
      DistVec b = g.create_global(h.space(3)), x = g.create_global(h.space(3));
      set_scalar(b, 1.0);
      h.cycle(b, x);  // warm-up
      set_scalar(x, 0.0);
      const std::size_t before = env.ctx.log().size();
      h.cycle(b, x);
      std::size_t n = 0;
      for (std::size_t i = before; i < env.ctx.log().size(); ++i) {
        const Event& e = env.ctx.log()[i];
        if ((e.kind == EventKind::H2D || e.kind == EventKind::D2H) && e.label != "csr_structure") ++n;
      }
      const auto xv = x.gather();
      if (env.rank() == 0) {
        out.push_back(xv);
        migrations.push_back(n);
      }
    });
  }
  for (std::size_t k = 1; k < out.size(); ++k)
    for (std::size_t i = 0; i < out[0].size(); ++i) CHECK(std::abs(out[k][i] - out[0][i]) < 1e-12);
  CHECK(migrations[0] == 0);
  CHECK(migrations[2] > 0);
}

TEST_CASE("multigrid-preconditioned CG is mesh independent") {
  std::vector<int> its;
  for (std::int64_t m : {33, 65, 129}) {
    run(1, [&](RankEnv& env) {
      StructuredGrid g(env.comm, square(m));
      MgConfig mc;
      mc.levels = 1;
      for (std::int64_t k = m; k > 5; k = (k + 1) / 2) ++mc.levels;
      MgHierarchy h(g, [](const StructuredGrid& gr, ExecSpace s) { return poisson2d(gr, s); }, mc);
      KrylovConfig cfg;
      cfg.pc = std::make_shared<MgPc>(h);
      DistVec b = filled(h.finest_op(), rhs_fn), x = b.duplicate();
      const auto r = ksp_solve(cfg, h.finest_op(), b, x);
      CHECK(r.converged);
      its.push_back(r.iterations);
    });
  }
  CHECK(its[0] < 15);
  for (int n : its) CHECK(std::abs(n - its[0]) <= 2);
}

TEST_CASE("Newton on a linear problem takes one step") {
  run(2, [](RankEnv& env) {
    CsrMatrix a = diagonal(env.comm, {2, 3, 4, 5});
    DistVec target = filled(a, rhs_fn);
    NonlinearProblem p;
    p.function = [&](const DistVec& x, DistVec& r) {
      a.mult(x, r);
      axpy(r, -1.0, target);
    };
    p.jacobian = [](const DistVec&, CsrMatrix&) {};
    p.jacobian_matrix = &a;
    DistVec x = target.duplicate();
    NewtonConfig cfg;
    cfg.ksp.rtol = 1e-14;
    const auto r = newton_solve(p, x, cfg);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(r.history.size() == 2);
  });
}

TEST_CASE("model nonlinear problem") {
  for (bool device : {false, true}) {
    run(3, [device](RankEnv& env) {
      StructuredGrid g(env.comm, {.dim = 1, .mx = 64, .periodic_x = true});
      const ExecSpace s = device ? D : H;
      Listing2Problem prob(g, 1.0, s);
      DistVec exact = g.create_global(s);
      {
        const Corners o = g.corners();
        std::vector<double> v;
        for (std::int64_t i = o.xs; i < o.xs + o.xm; ++i) v.push_back(0.5 + 0.1 * std::sin(2 * M_PI * static_cast<double>(i) / 64));
        exact.set_local_values(v);
      }
      prob.manufacture(exact);
      CsrMatrix j = g.create_matrix(s);
      DistVec x = g.create_global(s);
      set_scalar(x, 0.5);
      NewtonConfig cfg;
      cfg.ksp.type = KspType::BiCGstab;
      cfg.ksp.rtol = 1e-12;
      const auto r = newton_solve(prob.problem(j, device), x, cfg);
      CHECK(r.converged);
      CHECK(r.history.back() <= 1e-10);
      // Quadratic convergence in the tail.
      const auto& hs = r.history;
      REQUIRE(hs.size() >= 4);
      const std::size_t k = hs.size() - 2;
      CHECK(hs[k] / hs[k - 1] < 0.5 * hs[k - 1] / hs[k - 2]);
      DistVec e = x.duplicate();
      waxpy(e, -1.0, exact, x);
      CHECK(norm2(e) < 1e-9);
    });
  }
}

TEST_CASE("exact initial guess needs no step") {
  run(1, [](RankEnv& env) {
    StructuredGrid g(env.comm, {.dim = 1, .mx = 8, .periodic_x = true});
    Listing2Problem prob(g, 1.0, H);
    DistVec x = g.create_global();
    set_scalar(x, 2.0);
    prob.manufacture(x);
    CsrMatrix j = g.create_matrix(H);
    const auto r = newton_solve(prob.problem(j, false), x, {});
    CHECK(r.converged);
    CHECK(r.iterations == 0);
  });
}

TEST_CASE("host and device callbacks agree") {
  run(2, [](RankEnv& env) {
    StructuredGrid g(env.comm, {.dim = 1, .mx = 20, .periodic_x = true});
    Listing2Problem prob(g, 0.7, D);
    DistVec x = g.create_global(D);
    {
      std::vector<double> v;
      for (std::int64_t i = 0; i < x.local_size(); ++i) v.push_back(0.3 + 0.1 * static_cast<double>(i + x.start()));
      x.set_local_values(v);
    }
    prob.manufacture(x);
    DistVec rh = x.duplicate(), rd = x.duplicate();
    prob.function_host(x, rh);
    prob.function_device(x, rd);
    CHECK(rh.gather() == rd.gather());
    CsrMatrix jh = g.create_matrix(D), jd = g.create_matrix(D);
    prob.jacobian_host(x, jh);
    prob.jacobian_device(x, jd);
    CHECK(jh.gather_triplets() == jd.gather_triplets());

    auto cmp = stub_compare([&](const DistVec& a, DistVec& r) { prob.function_host(a, r); },
                            [&](const DistVec& a, DistVec& r) { prob.function_device(a, r); }, 1e-12);
    DistVec r = x.duplicate();
    CHECK_NOTHROW(cmp(x, r));
    auto bad = stub_compare([&](const DistVec& a, DistVec& r2) { prob.function_host(a, r2); },
                            [&](const DistVec& a, DistVec& r2) {
                              prob.function_device(a, r2);
                              auto v = r2.local_values();
                              if (env.rank() == 1) v[0] += 1e-3;
                              r2.set_local_values(v);
                            },
                            1e-6);
    try {
      bad(x, r);
      FAIL("expected ComparisonError");
    } catch (const ComparisonError& e) {
      CHECK(e.norm() == doctest::Approx(1e-3));
    }
  });
}

TEST_CASE("solver options") {
  const auto o = SolverOptions::parse({"-ksp_type=bcgs", "pc_type=mg", "-ksp_rtol=1e-6", "mg_levels=3",
                                       "mg_cycle=w", "mg_bind=host:0-1,device:2"});
  CHECK(o.ksp_type == KspType::BiCGstab);
  CHECK(o.pc_type == PcType::Mg);
  CHECK(o.krylov().rtol == 1e-6);
  const MgConfig m = o.multigrid();
  CHECK(m.cycle == CycleType::W);
  CHECK(m.binding[2] == D);
  CHECK(m.binding[0] == H);
  CHECK_THROWS_AS(SolverOptions::parse({"ksp_type=gmres"}), ConfigError);
  CHECK_THROWS_AS(SolverOptions::parse({"bogus=1"}), ConfigError);
  CHECK_THROWS_AS(SolverOptions::parse({"ksp_rtol=abc"}), ConfigError);
  CHECK_THROWS_AS(SolverOptions::parse({"ksp_max_it"}), ConfigError);
  CHECK_THROWS_AS(parse_binding("host:0-1", 3), ConfigError);
  CHECK_THROWS_AS(parse_binding("host:0-2,device:2", 3), ConfigError);
  CHECK_THROWS_AS(parse_binding("gpu:0-2", 3), ConfigError);
  CHECK(std::string(to_string(KspType::CG)) == "cg");
}
