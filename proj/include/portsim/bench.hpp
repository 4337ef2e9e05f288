#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "portsim/costmodel.hpp"
#include "portsim/solve.hpp"
#include "portsim/transport.hpp"

namespace portsim::bench {

// Functions taking an `EventLog* log` append the merged event log of their
// simulation to it when it is not null.

/// A benchmark's own consistency check failed (the CLI exits with 2).
class BenchFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// CSV table. The first `nkeys` columns identify a row; the rest are
/// measurements.
struct Table {
  std::vector<std::string> header;
  std::size_t nkeys = 1;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  void write_csv(std::ostream& os) const;
  /// One line per (row, measurement): key columns, "metric", "value".
  void write_long(std::ostream& os) const;
};

/// Shortest decimal form that reads back to the same double.
std::string fmt(double v);

// ------------------------------------------------------------------ latency

enum class PingVariant { Raw, Sf, SfUnpack, SfScatter };
const char* to_string(PingVariant v);
PingVariant parse_ping_variant(const std::string& name);

struct LoopConfig {
  int iterations = 1000;
  int warmup = 10;
};

/// Average one-way latency (seconds) of a two-rank ping-pong with `bytes` of
/// payload: raw device-to-device messages or a star forest with bytes / 8
/// doubles. `link` picks the network path between the two ranks.
double pingpong_latency(PingVariant variant, double bytes, const CostParams& params,
                        LinkKind link = LinkKind::IntraNode, LoopConfig loop = {}, EventLog* log = nullptr);
Table run_pingpong(const std::vector<PingVariant>& variants, const std::vector<double>& sizes,
                   const CostParams& params, LinkKind link, LoopConfig loop = {});

enum class StencilConfig { SingleNode, NineNodes, ThreeNodes };
const char* to_string(StencilConfig c);
Topology stencil_topology(StencilConfig c);

/// One-way latency of a halo update on a 3x3 periodic process grid with
/// n x n subgrids per rank: a DMGlobalToLocal / DMLocalToGlobal(ADD) loop.
double stencil_latency(std::int64_t n, StencilConfig config, const CostParams& params, LoopConfig loop = {},
                       EventLog* log = nullptr);
Table run_stencil(const std::vector<std::int64_t>& sizes, const std::vector<StencilConfig>& configs,
                  const CostParams& params, LoopConfig loop = {});

// ----------------------------------------------------------------- spectrum

enum class SpectrumOp { Axpy, Copy };
const char* to_string(SpectrumOp op);

struct SpectrumPoint {
  double n = 0;
  double time = 0;
  /// flop/s for AXPY, bytes/s for copy.
  double rate = 0;
};

struct Spectrum {
  SpectrumOp op = SpectrumOp::Axpy;
  ExecSpace space;
  std::vector<SpectrumPoint> points;
  /// Affine fit time = latency + n / elem_rate over the sweep.
  double latency = 0;
  double bandwidth = 0;
  double asymptotic_rate = 0;
};

/// Time of one isolated operation on vectors of each size, measured from an
/// idle machine until the result is complete.
Spectrum run_spectrum(SpectrumOp op, ExecSpace space, const std::vector<double>& sizes, const CostParams& params,
                      EventLog* log = nullptr);
/// Size where host and device lines of the cost model meet.
double spectrum_crossover(SpectrumOp op, const CostParams& params);
/// First swept size at which the device is faster; 0 if none.
double measured_crossover(const Spectrum& host, const Spectrum& device);
Table spectrum_table(const std::vector<Spectrum>& runs, const CostParams& params);

// ---------------------------------------------------------------- multigrid

struct MgPolicy {
  std::string name;
  /// parse_binding text; "all-host" and "all-device" are accepted too.
  std::string binding;
};

struct MgBreakdown {
  std::string policy;
  CycleType cycle = CycleType::V;
  int iterations = 0;
  /// Per level, coarsest first: host-clock seconds in level stages on rank 0.
  std::vector<double> level_time;
  /// Per level: H2D and D2H migrations recorded inside the level's stages.
  std::vector<int> level_transfers;
  double total = 0;
  std::vector<double> solution;
};

/// Poisson on an m x m vertex grid, MG-preconditioned CG to rtol 1e-8 after
/// one warm-up solve; level stage totals of the timed solve.
MgBreakdown run_mg(std::int64_t m, int levels, CycleType cycle, const MgPolicy& policy, int ranks,
                   const CostParams& params, EventLog* log = nullptr);
Table mg_table(const std::vector<MgBreakdown>& runs);

// ----------------------------------------------------------------- assembly

struct AssemblyRun {
  std::int64_t m = 0;
  int ranks = 1;
  std::string path;
  double setup = 0;
  double assembly = 0;
  /// Host-to-device copy a host-assembled matrix needs before device use.
  double h2d = 0;
  std::size_t kernels = 0;
  std::size_t value_kernels = 0;
  /// Assembled values sorted by natural (row, column) grid numbering.
  std::vector<double> values;
};

/// The 5-point Poisson operator assembled on an m x m grid by the
/// incremental, COO (device), and device-kernel paths. Throws BenchFailure
/// when the paths disagree in any value bit.
std::vector<AssemblyRun> run_assembly(std::int64_t m, int ranks, const CostParams& params,
                                      EventLog* log = nullptr);
Table assembly_table(const std::vector<AssemblyRun>& runs);

}  // namespace portsim::bench
