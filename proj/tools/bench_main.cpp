// bench: reproduce the latency, spectrum, multigrid and assembly experiments
// in virtual time and write CSV.
#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "portsim/bench.hpp"

using namespace portsim;
using namespace portsim::bench;

namespace {

const char* kColumns = R"(CSV columns (key columns first; --long prints key columns, metric, value):
  pingpong, unpack, scatter  variant,bytes,latency_us
  stencil                    n,config,latency_us
  spectrum                   op,space,n,time_s,rate,fit_latency_s,fit_bandwidth,asymptotic_rate,
                             crossover_model,crossover_measured   (rate: flop/s for axpy, bytes/s for copy)
  mg_breakdown               policy,cycle,level,time_s,transfers,iterations,solve_s
  assembly_compare           m,ranks,path,setup_s,assembly_s,h2d_s,total_s,device_kernels,value_kernels
Exit status: 0 success, 2 a benchmark check failed, 1 usage error.)";

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_sizes(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split(s)) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(v > 0)) throw UsageFailure("bad size '" + item + "'");
    if (!out.empty() && v <= out.back()) throw UsageFailure("sizes must be ascending");
    out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> as_ints(const std::vector<double>& v) {
  std::vector<std::int64_t> out;
  for (double d : v) {
    if (d != std::floor(d)) throw UsageFailure("size " + fmt(d) + " is not an integer");
    out.push_back(static_cast<std::int64_t>(d));
  }
  return out;
}

std::vector<double> half_decades(double lo, double hi) {
  std::vector<double> out;
  for (double e = std::log10(lo); e <= std::log10(hi) + 1e-9; e += 0.5) out.push_back(std::round(std::pow(10.0, e)));
  return out;
}

/// "all-host", "all-device", or "host:0-k" (levels above k on the device).
MgPolicy make_policy(const std::string& name, int levels) {
  if (name == "all-host" || name == "all-device") return {name, name};
  if (name.rfind("host:0-", 0) == 0) {
    int k = -1;
    try {
      k = std::stoi(name.substr(7));
    } catch (const std::exception&) {
    }
    if (k < 0 || k >= levels) throw UsageFailure("bad policy '" + name + "'");
    std::string b = "host:0-" + std::to_string(k);
    if (k + 1 < levels) b += ",device:" + std::to_string(k + 1) + "-" + std::to_string(levels - 1);
    return {name, b};
  }
  return {name, name};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual-time benchmarks of the portability simulator"};
  app.footer(kColumns);
  std::string name, sizes_arg, params_path, topology = "intra", out_path, variants_arg, policies_arg, cycle_arg = "v,w",
                                                       ops_arg = "axpy,copy";
  int ranks = 0, iterations = 1000, warmup = 10, levels = 9;
  bool long_format = false;
  app.add_option("name", name, "pingpong|unpack|scatter|stencil|spectrum|mg_breakdown|assembly_compare")
      ->required()
      ->check(CLI::IsMember({"pingpong", "unpack", "scatter", "stencil", "spectrum", "mg_breakdown", "assembly_compare"}));
  app.add_option("--ranks", ranks, "rank count (pingpong 2, stencil 9)");
  app.add_option("--sizes", sizes_arg, "ascending comma list: bytes, subgrid n, vector length, or grid m");
  app.add_option("--params", params_path, "cost parameters JSON; missing keys keep calibrated defaults")
      ->check(CLI::ExistingFile);
  app.add_option("--topology", topology, "intra: ranks share a node; mixed: several nodes")
      ->check(CLI::IsMember({"intra", "mixed"}));
  app.add_option("--out", out_path, "output CSV (default stdout)");
  app.add_flag("--long", long_format, "long format: one row per measurement");
  app.add_option("--variant", variants_arg, "pingpong variants: raw,sf,sf_unpack,sf_scatter");
  app.add_option("--iterations", iterations, "timed loop iterations")->check(CLI::PositiveNumber);
  app.add_option("--warmup", warmup, "untimed warm-up iterations")->check(CLI::NonNegativeNumber);
  app.add_option("--levels", levels, "multigrid levels")->check(CLI::PositiveNumber);
  app.add_option("--cycle", cycle_arg, "multigrid cycles: v,w");
  app.add_option("--policies", policies_arg, "level bindings: all-host,all-device,host:0-k");
  app.add_option("--ops", ops_arg, "spectrum operations: axpy,copy");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const CostParams params = params_path.empty() ? CostParams{} : CostParams::load(params_path);
    const std::vector<double> sizes = parse_sizes(sizes_arg);
    const LoopConfig loop{iterations, warmup};
    auto require_ranks = [&](int n) {
      if (ranks != 0 && ranks != n) throw UsageFailure(name + " runs on exactly " + std::to_string(n) + " ranks");
    };
    Table table;
    if (name == "pingpong" || name == "unpack" || name == "scatter") {
      require_ranks(2);
      std::vector<PingVariant> variants;
      if (!variants_arg.empty())
        for (const std::string& v : split(variants_arg)) variants.push_back(parse_ping_variant(v));
      else if (name == "unpack")
        variants = {PingVariant::SfUnpack};
      else if (name == "scatter")
        variants = {PingVariant::SfScatter};
      else
        variants = {PingVariant::Raw, PingVariant::Sf};
      std::vector<double> bytes = sizes;
      if (bytes.empty()) {
        const auto cal = calibration::pingpong_sizes();
        bytes.assign(cal.begin(), cal.end());
      }
      const LinkKind link = topology == "intra" ? LinkKind::IntraNode : LinkKind::InterNode;
      table = run_pingpong(variants, bytes, params, link, loop);
    } else if (name == "stencil") {
      require_ranks(9);
      const auto n = sizes.empty() ? std::vector<std::int64_t>{64, 128, 256, 512, 1024, 2048, 4096} : as_ints(sizes);
      std::vector<StencilConfig> configs = {StencilConfig::SingleNode};
      if (topology == "mixed") configs = {StencilConfig::NineNodes, StencilConfig::ThreeNodes};
      table = run_stencil(n, configs, params, loop);
    } else if (name == "spectrum") {
      const auto n = sizes.empty() ? half_decades(1e2, 1e9) : sizes;
      std::vector<Spectrum> runs;
      for (const std::string& op : split(ops_arg)) {
        if (op != "axpy" && op != "copy") throw UsageFailure("unknown operation '" + op + "'");
        const SpectrumOp o = op == "axpy" ? SpectrumOp::Axpy : SpectrumOp::Copy;
        runs.push_back(run_spectrum(o, ExecSpace::host(), n, params));
        runs.push_back(run_spectrum(o, ExecSpace::on_device(0), n, params));
      }
      table = spectrum_table(runs, params);
    } else if (name == "mg_breakdown") {
      const auto ms = sizes.empty() ? std::vector<std::int64_t>{(std::int64_t{1} << (levels + 1)) + 1} : as_ints(sizes);
      if (ms.size() != 1) throw UsageFailure("mg_breakdown takes one grid size");
      const std::string policies = policies_arg.empty() ? "all-device,host:" + std::string("0-") +
                                                              std::to_string(std::min(4, levels - 1)) + ",all-host"
                                                        : policies_arg;
      std::vector<MgBreakdown> runs;
      for (const std::string& c : split(cycle_arg)) {
        if (c != "v" && c != "w") throw UsageFailure("unknown cycle '" + c + "'");
        for (const std::string& p : split(policies))
          runs.push_back(run_mg(ms[0], levels, c == "v" ? CycleType::V : CycleType::W, make_policy(p, levels),
                                ranks == 0 ? 1 : ranks, params));
      }
      for (std::size_t k = 1; k < runs.size(); ++k)
        for (std::size_t i = 0; i < runs[0].solution.size(); ++i)
          if (runs[k].cycle == runs[0].cycle && std::abs(runs[k].solution[i] - runs[0].solution[i]) > 1e-12)
            throw BenchFailure("policies '" + runs[0].policy + "' and '" + runs[k].policy + "' give different solutions");
      table = mg_table(runs);
    } else {
      const auto ms = sizes.empty() ? std::vector<std::int64_t>{64, 128, 256} : as_ints(sizes);
      std::vector<AssemblyRun> runs;
      for (std::int64_t m : ms)
        for (AssemblyRun& r : run_assembly(m, ranks == 0 ? 1 : ranks, params)) runs.push_back(std::move(r));
      table = assembly_table(runs);
    }

    std::ofstream file;
    if (!out_path.empty()) {
      file.open(out_path);
      if (!file) throw UsageFailure("cannot write " + out_path);
    }
    std::ostream& os = out_path.empty() ? std::cout : file;
    if (long_format)
      table.write_long(os);
    else
      table.write_csv(os);
    return 0;
  } catch (const BenchFailure& e) {
    std::cerr << "bench: check failed: " << e.what() << '\n';
    return 2;
  } catch (const UsageFailure& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return 2;
  }
}
