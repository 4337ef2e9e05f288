#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "portsim/costmodel.hpp"
#include "portsim/errors.hpp"

using namespace portsim;

TEST_CASE("kernel duration is bandwidth bound") {
  CostParams p;
  CHECK(kernel_duration(24e6, 0, ExecSpace::on_device(), p) == doctest::Approx(24e6 / 900e9));
  CHECK(kernel_duration(24e6, 0, ExecSpace::on_device(), p) == doctest::Approx(26.67e-6).epsilon(1e-3));
  CHECK(kernel_duration(0, 1e9, ExecSpace::on_device(), p) == 0.0);
  CHECK(kernel_duration(0, 0, ExecSpace::host(), p) == 0.0);
  CHECK(kernel_duration(8e6, 0, ExecSpace::host(), p) == doctest::Approx(8e6 / p.bw_host_mem));
  CHECK_THROWS_AS(kernel_duration(-1, 0, ExecSpace::host(), p), UsageError);

  // Local scatter of 4 MB at 600 GB/s effective: read and write.
  CostParams q;
  q.bw_device_mem = 600e9;
  CHECK(kernel_duration(8e6, 0, ExecSpace::on_device(), q) == doctest::Approx(13.3e-6).epsilon(0.01));

  CostParams over;
  over.oversubscription = 1.2;
  CHECK(kernel_duration(9e6, 0, ExecSpace::on_device(), over) == doctest::Approx(1.2 * 1e-5));
}

TEST_CASE("transfer durations") {
  CostParams p;
  const double mb4 = 4.0 * 1024 * 1024;
  CHECK(transfer_duration(mb4, TransferKind::Net, true, p) == doctest::Approx(106.6e-6).epsilon(0.01));
  CHECK(transfer_duration(0, TransferKind::Net, true, p) == p.net_latency_small);
  const double pinned = transfer_duration(1e6, TransferKind::H2D, true, p);
  const double pageable = transfer_duration(1e6, TransferKind::H2D, false, p);
  CHECK(pageable / pinned == doctest::Approx(p.pinned_speedup));
  CHECK(transfer_duration(1e6, TransferKind::D2H, true, p) == doctest::Approx(1e6 / p.bw_h2d));
  CHECK(transfer_duration(0, TransferKind::Net, true, p, LinkKind::InterNode) == p.net_latency_inter);
}

TEST_CASE("intra-node link reproduces the raw ping-pong series") {
  const auto sizes = calibration::pingpong_sizes();
  const auto lat = calibration::pingpong_raw_latency();
  // Independent normal-equation solve.
  const double n = static_cast<double>(sizes.size());
  const double sx = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  const double sy = std::accumulate(lat.begin(), lat.end(), 0.0);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    sxx += sizes[i] * sizes[i];
    sxy += sizes[i] * lat[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;

  const LinkParams link = calibration::fit_intra_link();
  CHECK(link.latency == doctest::Approx(icpt));
  CHECK(link.bandwidth == doctest::Approx(1.0 / slope));
  CHECK(link.latency == doctest::Approx(17.2e-6).epsilon(0.01));
  CHECK(link.bandwidth == doctest::Approx(47e9).epsilon(0.01));

  CostParams p;
  CHECK(p.net_latency_small == doctest::Approx(link.latency));
  CHECK(p.bw_net == doctest::Approx(link.bandwidth));
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double model = transfer_duration(sizes[i], TransferKind::Net, true, p);
    CHECK(std::abs(model - lat[i]) < 2.5e-6);
  }
}

TEST_CASE("inter-node link is faster for small messages and crosses at 128 KiB") {
  CostParams p;
  const auto intra = [&](double b) { return transfer_duration(b, TransferKind::Net, true, p, LinkKind::IntraNode); };
  const auto inter = [&](double b) { return transfer_duration(b, TransferKind::Net, true, p, LinkKind::InterNode); };
  CHECK(inter(8 * 1024) < intra(8 * 1024));
  CHECK(inter(64 * 1024) < intra(64 * 1024));
  CHECK(inter(128 * 1024) == doctest::Approx(intra(128 * 1024)));
  CHECK(inter(512 * 1024) > intra(512 * 1024));
}

TEST_CASE("summarize") {
  EventLog empty;
  CHECK(summarize(empty, GroupBy::Kind).empty());

  EventLog log;
  log.append({0, EventKind::Kernel, 0, 0.0, 5e-6, 10, "a", "", ""});
  log.append({0, EventKind::Kernel, 0, 5e-6, 7e-6, 20, "b", "", ""});
  auto rows = summarize(log, GroupBy::Kind);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].group == "kernel");
  CHECK(rows[0].count == 2);
  CHECK(rows[0].total_seconds == doctest::Approx(12e-6));
  CHECK(rows[0].total_bytes == 30);

  auto by_label = summarize(log, GroupBy::Label);
  REQUIRE(by_label.size() == 2);
  CHECK(by_label[0].group == "a");
  CHECK(by_label[1].group == "b");

  std::ostringstream os;
  write_summary_csv(os, rows);
  CHECK(os.str().rfind("group,count,total_seconds,total_bytes\n", 0) == 0);
}

TEST_CASE("summaries are additive over concatenation") {
  EventLog a, b;
  const EventKind kinds[] = {EventKind::Kernel, EventKind::Sync, EventKind::H2D, EventKind::NetSend};
  for (int i = 0; i < 40; ++i) {
    Event e{i % 3, kinds[i % 4], 0, i * 1e-6, (i % 7) * 1e-6, static_cast<double>(i * 8), "l" + std::to_string(i % 5), "", ""};
    (i % 2 ? a : b).append(e);
  }
  EventLog ab = a;
  ab.append(b);
  for (GroupBy g : {GroupBy::Kind, GroupBy::Label}) {
    auto sa = summarize(a, g), sb = summarize(b, g), sab = summarize(ab, g);
    for (const auto& row : sab) {
      double secs = 0, bytes = 0;
      std::size_t count = 0;
      for (const auto* part : {&sa, &sb})
        for (const auto& r : *part)
          if (r.group == row.group) {
            secs += r.total_seconds;
            bytes += r.total_bytes;
            count += r.count;
          }
      CHECK(row.total_seconds == doctest::Approx(secs));
      CHECK(row.total_bytes == bytes);
      CHECK(row.count == count);
    }
  }
}

TEST_CASE("cost parameters from JSON") {
  auto p = CostParams::from_json(nlohmann::json{{"t_launch", 5e-6}});
  CHECK(p.t_launch == 5e-6);
  CHECK(p.t_stream_sync == CostParams().t_stream_sync);
  CHECK_THROWS_AS(CostParams::from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(CostParams::from_json(nlohmann::json{{"bw_net", 0}}), ConfigError);
  CHECK_THROWS_AS(CostParams::from_json(nlohmann::json{{"t_launch", -1}}), ConfigError);
  CHECK_THROWS_AS(CostParams::from_json(nlohmann::json{{"t_launch", "fast"}}), ConfigError);
  auto round = CostParams::from_json(CostParams().to_json());
  CHECK(round.to_json() == CostParams().to_json());
  CHECK_THROWS_AS(CostParams::load("/nonexistent/costs.json"), ConfigError);
}

TEST_CASE("affine fit") {
  const double x[] = {1, 2, 3, 4};
  const double y[] = {3, 5, 7, 9};
  auto f = fit_affine(x, y);
  CHECK(f.intercept == doctest::Approx(1));
  CHECK(f.slope == doctest::Approx(2));
  const double c[] = {2, 2};
  CHECK_THROWS(fit_affine(c, std::span<const double>(y, 2)));
}
