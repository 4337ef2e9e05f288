#include <array>
#include <cmath>

#include "portsim/costmodel.hpp"
#include "portsim/errors.hpp"

namespace portsim::calibration {

namespace {

constexpr double KiB = 1024.0;
constexpr double MiB = 1024.0 * 1024.0;

constexpr std::array<double, 6> kSizes = {8 * KiB, 32 * KiB, 128 * KiB, 512 * KiB, 2 * MiB, 4 * MiB};
constexpr std::array<double, 6> kRaw = {17.8e-6, 17.8e-6, 20.0e-6, 28.2e-6, 61.7e-6, 106.6e-6};

// Smallest-subgrid stencil latencies: every neighbor across nodes vs. two of
// four neighbors on the same node.
constexpr double kStencilAllInter = 45.0e-6;
constexpr double kStencilMixed = 75.8e-6;

}  // namespace

std::span<const double> pingpong_sizes() { return kSizes; }
std::span<const double> pingpong_raw_latency() { return kRaw; }

LinkParams fit_intra_link() {
  const AffineFit fit = fit_affine(kSizes, kRaw);
  return {fit.intercept, 1.0 / fit.slope};
}

LinkParams derive_inter_link(const LinkParams& intra, double pipeline_overhead,
                             double crossover_bytes) {
  const double remote_inter = kStencilAllInter - pipeline_overhead;
  const double remote_mixed = kStencilMixed - pipeline_overhead;
  if (remote_inter <= 0.0 || remote_mixed <= 0.0)
    throw ConfigError("stencil pipeline overhead exceeds measured latency");
  const double latency = intra.latency * remote_inter / remote_mixed;
  const double intra_at_cross = intra.latency + crossover_bytes / intra.bandwidth;
  const double bandwidth = crossover_bytes / (intra_at_cross - latency);
  return {latency, bandwidth};
}

}  // namespace portsim::calibration
