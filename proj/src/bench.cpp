#include "portsim/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <ostream>

namespace portsim::bench {

void Table::add(std::vector<std::string> row) {
  if (row.size() != header.size()) throw UsageError("table row has the wrong number of columns");
  rows.push_back(std::move(row));
}

void Table::write_csv(std::ostream& os) const {
  for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << '\n';
  }
}

void Table::write_long(std::ostream& os) const {
  for (std::size_t c = 0; c < nkeys; ++c) os << header[c] << ',';
  os << "metric,value\n";
  for (const auto& row : rows) {
    for (std::size_t m = nkeys; m < row.size(); ++m) {
      for (std::size_t c = 0; c < nkeys; ++c) os << row[c] << ',';
      os << header[m] << ',' << row[m] << '\n';
    }
  }
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string fmt_int(std::int64_t v) { return std::to_string(v); }

RunOptions cost_only_options(const CostParams& params, Topology topo) {
  RunOptions opt;
  opt.params = params;
  opt.topology = std::move(topo);
  opt.cost_only = true;
  return opt;
}

}  // namespace

// ------------------------------------------------------------------ latency

const char* to_string(PingVariant v) {
  switch (v) {
    case PingVariant::Raw: return "raw";
    case PingVariant::Sf: return "sf";
    case PingVariant::SfUnpack: return "sf_unpack";
    case PingVariant::SfScatter: return "sf_scatter";
  }
  return "?";
}

PingVariant parse_ping_variant(const std::string& name) {
  for (PingVariant v : {PingVariant::Raw, PingVariant::Sf, PingVariant::SfUnpack, PingVariant::SfScatter})
    if (name == to_string(v)) return v;
  throw ConfigError("unknown ping-pong variant '" + name + "'");
}

double pingpong_latency(PingVariant variant, double bytes, const CostParams& params, LinkKind link,
                        LoopConfig loop, EventLog* log) {
  if (!(bytes >= 0) || loop.iterations < 1 || loop.warmup < 0) throw UsageError("bad ping-pong settings");
  const Topology topo = link == LinkKind::IntraNode ? Topology::single_node(2) : Topology::one_rank_per_node(2);
  double latency = 0;
  const RunResult res = run(2, [&](RankEnv& env) {
    const int me = env.rank(), peer = 1 - me;
    double t0 = 0;
    if (variant == PingVariant::Raw) {
      const MemTag dev{MemType::Device, true};
      for (int i = 0; i < loop.warmup + loop.iterations; ++i) {
        if (i == loop.warmup) t0 = env.ctx.now();
        if (me == 0) {
          env.comm.isend(peer, 0, nullptr, bytes, dev);
          auto r = env.comm.irecv(peer, 0, nullptr, 0, dev);
          env.comm.wait(r);
        } else {
          auto r = env.comm.irecv(peer, 0, nullptr, 0, dev);
          env.comm.wait(r);
          env.comm.isend(peer, 0, nullptr, bytes, dev);
        }
      }
    } else {
      const auto n = std::max<std::int64_t>(1, static_cast<std::int64_t>(bytes / 8));
      std::vector<std::int64_t> local;
      std::vector<RemotePoint> remote;
      if (me == 1 || variant == PingVariant::SfScatter) {
        for (std::int64_t k = 0; k < n; ++k) {
          local.push_back(k);
          remote.push_back({0, k});
        }
      }
      StarForest sf(env.comm, me == 0 ? n : 0, local, remote);
      sf.setup();
      // Plain device pointers, as handed over by an application.
      const MemTag untagged{MemType::Device, false};
      const ReduceOp op = variant == PingVariant::Sf ? ReduceOp::Replace : ReduceOp::Sum;
      for (int i = 0; i < loop.warmup + loop.iterations; ++i) {
        if (i == loop.warmup) t0 = env.ctx.now();
        sf.bcast<double>({}, untagged, {}, untagged, op);
        sf.reduce<double>({}, untagged, {}, untagged, op);
      }
    }
    if (me == 0) latency = (env.ctx.now() - t0) / (2.0 * loop.iterations);
  }, cost_only_options(params, topo));
  if (log) log->append(res.log);
  return latency;
}

Table run_pingpong(const std::vector<PingVariant>& variants, const std::vector<double>& sizes,
                   const CostParams& params, LinkKind link, LoopConfig loop) {
  Table t{{"variant", "bytes", "latency_us"}, 2, {}};
  for (PingVariant v : variants)
    for (double s : sizes) t.add({to_string(v), fmt(s), fmt(1e6 * pingpong_latency(v, s, params, link, loop))});
  return t;
}

const char* to_string(StencilConfig c) {
  switch (c) {
    case StencilConfig::SingleNode: return "1-node";
    case StencilConfig::NineNodes: return "9-node";
    case StencilConfig::ThreeNodes: return "3-node";
  }
  return "?";
}

Topology stencil_topology(StencilConfig c) {
  switch (c) {
    case StencilConfig::SingleNode: return Topology::single_node(9);
    case StencilConfig::NineNodes: return Topology::one_rank_per_node(9);
    case StencilConfig::ThreeNodes: return Topology::blocked(9, 3);
  }
  return {};
}

double stencil_latency(std::int64_t n, StencilConfig config, const CostParams& params, LoopConfig loop,
                       EventLog* log) {
  if (n < 1 || loop.iterations < 1 || loop.warmup < 0) throw UsageError("bad stencil settings");
  double latency = 0;
  const RunResult res = run(9, [&](RankEnv& env) {
    const GridSpec spec{.dim = 2, .mx = 3 * n, .my = 3 * n, .periodic_x = true, .periodic_y = true, .px = 3, .py = 3};
    StructuredGrid g(env.comm, spec);
    const ExecSpace dev = ExecSpace::on_device(0);
    DistVec x = g.create_global(dev);
    LocalVec l = g.create_local(dev);
    double t0 = 0;
    for (int i = 0; i < loop.warmup + loop.iterations; ++i) {
      if (i == loop.warmup) t0 = env.ctx.now();
      g.global_to_local(x, l);
      g.local_to_global(l, x, InsertMode::Add);
    }
    if (env.rank() == 0) latency = (env.ctx.now() - t0) / (2.0 * loop.iterations);
  }, cost_only_options(params, stencil_topology(config)));
  if (log) log->append(res.log);
  return latency;
}

Table run_stencil(const std::vector<std::int64_t>& sizes, const std::vector<StencilConfig>& configs,
                  const CostParams& params, LoopConfig loop) {
  Table t{{"n", "config", "latency_us"}, 2, {}};
  for (std::int64_t n : sizes)
    for (StencilConfig c : configs) t.add({fmt_int(n), to_string(c), fmt(1e6 * stencil_latency(n, c, params, loop))});
  return t;
}

// ----------------------------------------------------------------- spectrum

const char* to_string(SpectrumOp op) { return op == SpectrumOp::Axpy ? "axpy" : "copy"; }

namespace {

double bytes_per_element(SpectrumOp op) { return op == SpectrumOp::Axpy ? 24.0 : 16.0; }
double work_per_element(SpectrumOp op) { return op == SpectrumOp::Axpy ? 2.0 : 16.0; }

}  // namespace

Spectrum run_spectrum(SpectrumOp op, ExecSpace space, const std::vector<double>& sizes, const CostParams& params,
                      EventLog* log) {
  if (sizes.size() < 2) throw UsageError("a spectrum needs at least two sizes");
  Spectrum out;
  out.op = op;
  out.space = space;
  const RunResult res = run(1, [&](RankEnv& env) {
    for (double sz : sizes) {
      const auto n = static_cast<std::int64_t>(sz);
      if (n < 1) throw UsageError("spectrum sizes must be positive");
      const Layout layout = Layout::uniform(n, 1);
      DistVec x(env.comm, layout, space), y(env.comm, layout, space);
      set_scalar(x, 1.0);
      set_scalar(y, 2.0);
      env.ctx.sync_device();
      const double t0 = env.ctx.completion_time();
      if (op == SpectrumOp::Axpy)
        axpy(y, 3.0, x);
      else
        copy(x, y);
      const double t = env.ctx.completion_time() - t0;
      env.ctx.sync_device();
      out.points.push_back({sz, t, work_per_element(op) * sz / t});
    }
  }, cost_only_options(params, {}));
  if (log) log->append(res.log);
  std::vector<double> ns, ts;
  for (const auto& p : out.points) {
    ns.push_back(p.n);
    ts.push_back(p.time);
  }
  const AffineFit fit = fit_affine(ns, ts);
  out.latency = fit.intercept;
  out.bandwidth = bytes_per_element(op) / fit.slope;
  out.asymptotic_rate = work_per_element(op) / fit.slope;
  return out;
}

double spectrum_crossover(SpectrumOp op, const CostParams& p) {
  const double b = bytes_per_element(op);
  const double per_host = b / p.bw_host_mem, per_dev = b / p.bw_device_mem * p.oversubscription;
  if (per_host <= per_dev) return INFINITY;
  return (p.t_launch - p.host_kernel_overhead) / (per_host - per_dev);
}

double measured_crossover(const Spectrum& host, const Spectrum& device) {
  if (host.points.size() != device.points.size()) throw UsageError("spectra over different sweeps");
  for (std::size_t i = 0; i < host.points.size(); ++i)
    if (device.points[i].time < host.points[i].time) return host.points[i].n;
  return 0;
}

Table spectrum_table(const std::vector<Spectrum>& runs, const CostParams& params) {
  Table t{{"op", "space", "n", "time_s", "rate", "fit_latency_s", "fit_bandwidth", "asymptotic_rate",
           "crossover_model", "crossover_measured"},
          3,
          {}};
  for (const Spectrum& s : runs) {
    double measured = 0;
    for (const Spectrum& o : runs)
      if (o.op == s.op && o.space.is_device() != s.space.is_device())
        measured = s.space.is_device() ? measured_crossover(o, s) : measured_crossover(s, o);
    for (const auto& p : s.points)
      t.add({to_string(s.op), s.space.is_device() ? "device" : "host", fmt(p.n), fmt(p.time), fmt(p.rate),
             fmt(s.latency), fmt(s.bandwidth), fmt(s.asymptotic_rate), fmt(spectrum_crossover(s.op, params)),
             fmt(measured)});
  }
  return t;
}

// ---------------------------------------------------------------- multigrid

MgBreakdown run_mg(std::int64_t m, int levels, CycleType cycle, const MgPolicy& policy, int ranks,
                   const CostParams& params, EventLog* log) {
  MgBreakdown out;
  out.policy = policy.name;
  out.cycle = cycle;
  RunOptions opt;
  opt.params = params;
  const RunResult res = run(ranks, [&](RankEnv& env) {
    StructuredGrid g(env.comm, {.dim = 2, .mx = m, .my = m});
    MgConfig mc;
    mc.levels = levels;
    mc.cycle = cycle;
    if (policy.binding == "all-host")
      mc.binding.assign(static_cast<std::size_t>(levels), ExecSpace::host());
    else if (policy.binding == "all-device")
      mc.binding.assign(static_cast<std::size_t>(levels), ExecSpace::on_device(0));
    else
      mc.binding = parse_binding(policy.binding, levels);
    MgHierarchy h(g, [](const StructuredGrid& gr, ExecSpace s) { return poisson2d(gr, s); }, mc);
    const ExecSpace fine = h.space(levels - 1);
    DistVec b = g.create_global(fine), x = g.create_global(fine);
    set_scalar(b, 1.0);
    KrylovConfig kc;
    kc.pc = std::make_shared<MgPc>(h);
    kc.rtol = 1e-8;
    ksp_solve(kc, h.finest_op(), b, x);
    set_scalar(x, 0.0);
    env.ctx.sync_device();
    const std::size_t first = env.ctx.log().size();
    const double t0 = env.ctx.now();
    const KspResult r = ksp_solve(kc, h.finest_op(), b, x);
    env.ctx.sync_device();
    const double total = env.ctx.now() - t0;
    if (!r.converged) throw BenchFailure("multigrid solve did not converge");
    auto sol = x.gather();
    if (env.rank() != 0) return;
    out.iterations = r.iterations;
    out.total = total;
    out.solution = std::move(sol);
    out.level_time.assign(static_cast<std::size_t>(levels), 0.0);
    out.level_transfers.assign(static_cast<std::size_t>(levels), 0);
    std::map<std::string, std::size_t> index;
    for (int l = 0; l < levels; ++l) index["level-" + std::to_string(l)] = static_cast<std::size_t>(l);
    const EventLog& log = env.ctx.log();
    for (std::size_t i = first; i < log.size(); ++i) {
      const Event& e = log[i];
      const auto it = index.find(e.stage);
      if (it == index.end()) continue;
      if (e.kind == EventKind::Stage) out.level_time[it->second] += e.duration;
      if (e.kind == EventKind::H2D || e.kind == EventKind::D2H) ++out.level_transfers[it->second];
    }
  }, opt);
  if (log) log->append(res.log);
  return out;
}

Table mg_table(const std::vector<MgBreakdown>& runs) {
  Table t{{"policy", "cycle", "level", "time_s", "transfers", "iterations", "solve_s"}, 3, {}};
  for (const MgBreakdown& r : runs)
    for (std::size_t l = 0; l < r.level_time.size(); ++l)
      t.add({r.policy, r.cycle == CycleType::V ? "v" : "w", fmt_int(static_cast<std::int64_t>(l)), fmt(r.level_time[l]),
             fmt_int(r.level_transfers[l]), fmt_int(r.iterations), fmt(r.total)});
  return t;
}

// ----------------------------------------------------------------- assembly

namespace {

std::size_t device_kernels(const EventLog& log, std::size_t first) {
  std::size_t n = 0;
  for (std::size_t i = first; i < log.size(); ++i)
    if (log[i].kind == EventKind::Kernel && log[i].stream >= 0) ++n;
  return n;
}

std::size_t labelled(const EventLog& log, std::size_t first, const char* label) {
  std::size_t n = 0;
  for (std::size_t i = first; i < log.size(); ++i)
    if (log[i].label == label) ++n;
  return n;
}

}  // namespace

std::vector<AssemblyRun> run_assembly(std::int64_t m, int ranks, const CostParams& params, EventLog* log) {
  std::vector<AssemblyRun> out;
  RunOptions opt;
  opt.params = params;
  const RunResult res = run(ranks, [&](RankEnv& env) {
    StructuredGrid g(env.comm, {.dim = 2, .mx = m, .my = m});
    const StencilEntries e = five_point_entries(g, 0.0, 0.0);
    const ExecSpace host = ExecSpace::host(), dev = ExecSpace::on_device(0);
    // Row boundaries inside the entry list.
    std::vector<std::size_t> starts;
    for (std::size_t k = 0; k < e.rows.size(); ++k)
      if (k == 0 || e.rows[k] != e.rows[k - 1]) starts.push_back(k);
    starts.push_back(e.rows.size());
    // Global index to natural (x fastest over the whole grid) index.
    std::vector<std::int64_t> natural(static_cast<std::size_t>(m * m));
    for (std::int64_t j = 0; j < m; ++j)
      for (std::int64_t i = 0; i < m; ++i) natural[static_cast<std::size_t>(g.global_index(i, j))] = j * m + i;
    ExecContext& ctx = env.ctx;
    std::vector<AssemblyRun> runs;
    std::vector<std::vector<Triplet>> results;

    auto finish = [&](AssemblyRun run, const CsrMatrix& a, std::size_t first) {
      run.m = m;
      run.ranks = ranks;
      run.kernels = device_kernels(ctx.log(), first);
      auto trip = a.gather_triplets();
      std::vector<Triplet> nat = trip;
      for (Triplet& t : nat) {
        t.row = natural[static_cast<std::size_t>(t.row)];
        t.col = natural[static_cast<std::size_t>(t.col)];
      }
      std::sort(nat.begin(), nat.end(), [](const Triplet& x, const Triplet& y) {
        return x.row != y.row ? x.row < y.row : x.col < y.col;
      });
      for (const Triplet& t : nat) run.values.push_back(t.value);
      results.push_back(std::move(trip));
      runs.push_back(std::move(run));
    };

    {
      AssemblyRun run;
      run.path = "incremental";
      ctx.sync_device();
      const std::size_t first = ctx.log().size();
      const double t0 = ctx.now();
      CsrMatrix a(env.comm, g.layout(), host);
      for (std::size_t r = 0; r + 1 < starts.size(); ++r) {
        const std::size_t lo = starts[r], hi = starts[r + 1];
        const std::int64_t row = e.rows[lo];
        a.set_values(std::span(&row, 1), std::span(e.cols).subspan(lo, hi - lo),
                     std::span(e.vals).subspan(lo, hi - lo), InsertMode::Insert);
      }
      a.assemble();
      run.assembly = ctx.now() - t0;
      const double nnz = static_cast<double>(a.local_nnz()), rows = static_cast<double>(a.local_rows());
      run.h2d = transfer_duration(8 * nnz + 4 * (nnz + rows + 1), TransferKind::H2D, true, ctx.params());
      run.value_kernels = 0;
      finish(std::move(run), a, first);
    }
    {
      AssemblyRun run;
      run.path = "coo";
      ctx.sync_device();
      const double t0 = ctx.now();
      CsrMatrix a(env.comm, g.layout(), dev);
      const CooPlan plan = a.coo_preprocess(e.rows, e.cols);
      ctx.sync_device();
      run.setup = ctx.now() - t0;
      const std::size_t first = ctx.log().size();
      const double t1 = ctx.now();
      a.coo_set_values(plan, e.vals, MemType::Device);
      ctx.sync_device();
      run.assembly = ctx.now() - t1;
      run.value_kernels = labelled(ctx.log(), first, "MatSetValuesCOO");
      finish(std::move(run), a, first);
    }
    {
      AssemblyRun run;
      run.path = "device";
      ctx.sync_device();
      const double t0 = ctx.now();
      CsrMatrix a(env.comm, g.layout(), dev);
      std::vector<std::vector<std::int64_t>> pattern;
      for (std::size_t r = 0; r + 1 < starts.size(); ++r)
        pattern.emplace_back(e.cols.begin() + static_cast<std::ptrdiff_t>(starts[r]),
                             e.cols.begin() + static_cast<std::ptrdiff_t>(starts[r + 1]));
      a.preallocate(pattern);
      ctx.sync_device();
      run.setup = ctx.now() - t0;
      const std::size_t first = ctx.log().size();
      const double t1 = ctx.now();
      const std::int64_t row0 = a.row_start();
      a.set_values_device(row0, row0 + a.local_rows(), [&](std::int64_t row, DeviceRowWriter& w) {
        const auto r = static_cast<std::size_t>(row - row0);
        for (std::size_t k = starts[r]; k < starts[r + 1]; ++k) w.set(e.cols[k], e.vals[k]);
      });
      ctx.sync_device();
      run.assembly = ctx.now() - t1;
      run.value_kernels = labelled(ctx.log(), first, "MatSetValuesDevice");
      finish(std::move(run), a, first);
    }

    for (std::size_t k = 1; k < results.size(); ++k) {
      bool same = results[k].size() == results[0].size();
      for (std::size_t i = 0; same && i < results[0].size(); ++i) {
        const Triplet &a = results[0][i], &b = results[k][i];
        same = a.row == b.row && a.col == b.col && std::memcmp(&a.value, &b.value, sizeof(double)) == 0;
      }
      if (!same) throw BenchFailure("assembly paths '" + runs[0].path + "' and '" + runs[k].path + "' disagree");
    }
    if (env.rank() == 0) out = std::move(runs);
  }, opt);
  if (log) log->append(res.log);
  return out;
}

Table assembly_table(const std::vector<AssemblyRun>& runs) {
  Table t{{"m", "ranks", "path", "setup_s", "assembly_s", "h2d_s", "total_s", "device_kernels", "value_kernels"}, 3, {}};
  for (const AssemblyRun& r : runs)
    t.add({fmt_int(r.m), fmt_int(r.ranks), r.path, fmt(r.setup), fmt(r.assembly), fmt(r.h2d), fmt(r.assembly + r.h2d),
           fmt_int(static_cast<std::int64_t>(r.kernels)), fmt_int(static_cast<std::int64_t>(r.value_kernels))});
  return t;
}

}  // namespace portsim::bench
