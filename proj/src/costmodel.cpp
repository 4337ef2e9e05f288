#include "portsim/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "portsim/errors.hpp"

namespace portsim {

CostParams::CostParams()
    : t_launch(11e-6),
      t_stream_sync(4e-6),
      t_device_sync(4e-6),
      t_memtype_query(1e-6),
      t_sf_overhead(1e-6),
      net_latency_small(0.0),
      bw_net(1.0),
      net_latency_inter(0.0),
      bw_net_inter(1.0),
      bw_h2d(50e9),
      pinned_speedup(4.0),
      bw_device_mem(900e9),
      bw_host_mem(135e9),
      host_kernel_overhead(1e-6),
      oversubscription(1.0) {
  const LinkParams intra = calibration::fit_intra_link();
  net_latency_small = intra.latency;
  bw_net = intra.bandwidth;
  // Fixed cost on the critical path of one ghost update besides the wire:
  // software overhead, pack launch, stream sync, unpack launch.
  const double pipeline = t_sf_overhead + 2.0 * t_launch + t_stream_sync;
  const LinkParams inter = calibration::derive_inter_link(intra, pipeline);
  net_latency_inter = inter.latency;
  bw_net_inter = inter.bandwidth;
}

namespace {

struct Field {
  const char* key;
  double CostParams::*member;
  bool bandwidth;
};

constexpr Field kFields[] = {
    {"t_launch", &CostParams::t_launch, false},
    {"t_stream_sync", &CostParams::t_stream_sync, false},
    {"t_device_sync", &CostParams::t_device_sync, false},
    {"t_memtype_query", &CostParams::t_memtype_query, false},
    {"t_sf_overhead", &CostParams::t_sf_overhead, false},
    {"net_latency_small", &CostParams::net_latency_small, false},
    {"bw_net", &CostParams::bw_net, true},
    {"net_latency_inter", &CostParams::net_latency_inter, false},
    {"bw_net_inter", &CostParams::bw_net_inter, true},
    {"bw_h2d", &CostParams::bw_h2d, true},
    {"pinned_speedup", &CostParams::pinned_speedup, true},
    {"bw_device_mem", &CostParams::bw_device_mem, true},
    {"bw_host_mem", &CostParams::bw_host_mem, true},
    {"host_kernel_overhead", &CostParams::host_kernel_overhead, false},
    {"oversubscription", &CostParams::oversubscription, true},
};

}  // namespace

void CostParams::validate() const {
  for (const Field& f : kFields) {
    const double v = this->*f.member;
    if (!std::isfinite(v) || v < 0.0 || (f.bandwidth && v <= 0.0))
      throw ConfigError(std::string("invalid cost parameter ") + f.key + " = " + std::to_string(v));
  }
}

CostParams CostParams::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("cost parameters must be a JSON object");
  CostParams p;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto* f = std::find_if(std::begin(kFields), std::end(kFields),
                                 [&](const Field& fld) { return it.key() == fld.key; });
    if (f == std::end(kFields)) throw ConfigError("unknown cost parameter: " + it.key());
    if (!it.value().is_number()) throw ConfigError("cost parameter is not a number: " + it.key());
    p.*(f->member) = it.value().get<double>();
  }
  p.validate();
  return p;
}

CostParams CostParams::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cost parameter file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed cost parameter file " + path + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json CostParams::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const Field& f : kFields) doc[f.key] = this->*f.member;
  return doc;
}

double kernel_duration(double bytes_moved, double /*flops*/, ExecSpace space,
                       const CostParams& params) {
  if (bytes_moved < 0.0) throw UsageError("negative kernel byte count");
  if (space.is_device()) return bytes_moved / params.bw_device_mem * params.oversubscription;
  return bytes_moved / params.bw_host_mem;
}

double transfer_duration(double bytes, TransferKind kind, bool pinned, const CostParams& params,
                         LinkKind link) {
  if (bytes < 0.0) throw UsageError("negative transfer size");
  if (kind == TransferKind::Net) {
    const LinkParams lp = params.link(link);
    return lp.latency + bytes / lp.bandwidth;
  }
  const double bw = pinned ? params.bw_h2d : params.bw_h2d / params.pinned_speedup;
  return bytes / bw;
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Kernel: return "kernel";
    case EventKind::H2D: return "h2d";
    case EventKind::D2H: return "d2h";
    case EventKind::NetSend: return "net_send";
    case EventKind::NetRecv: return "net_recv";
    case EventKind::Sync: return "sync";
    case EventKind::Pack: return "pack";
    case EventKind::Unpack: return "unpack";
    case EventKind::LocalScatter: return "local_scatter";
    case EventKind::Stage: return "stage";
  }
  return "unknown";
}

void EventLog::append(const EventLog& other) {
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::size_t EventLog::count(EventKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const Event& e) { return e.kind == kind; }));
}

std::size_t EventLog::count_label(std::string_view label) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const Event& e) { return e.label == label; }));
}

EventLog EventLog::filter(EventKind kind) const {
  EventLog out;
  for (const Event& e : records_)
    if (e.kind == kind) out.append(e);
  return out;
}

EventLog EventLog::for_rank(int rank) const {
  EventLog out;
  for (const Event& e : records_)
    if (e.rank == rank) out.append(e);
  return out;
}

void EventLog::write_csv(std::ostream& os) const {
  os << "rank,kind,stream,start,duration,bytes,label,stage,detail\n";
  const auto old = os.precision(17);
  for (const Event& e : records_) {
    os << e.rank << ',' << to_string(e.kind) << ',' << e.stream << ',' << e.start << ','
       << e.duration << ',' << e.bytes << ',' << e.label << ',' << e.stage << ',' << e.detail
       << '\n';
  }
  os.precision(old);
}

std::vector<SummaryRow> summarize(const EventLog& log, GroupBy group_by) {
  std::map<std::string, SummaryRow> groups;
  for (const Event& e : log) {
    std::string key;
    switch (group_by) {
      case GroupBy::Kind: key = to_string(e.kind); break;
      case GroupBy::Label: key = e.label; break;
      case GroupBy::Stage: key = e.stage; break;
    }
    SummaryRow& row = groups[key];
    row.group = key;
    ++row.count;
    row.total_seconds += e.duration;
    row.total_bytes += e.bytes;
  }
  std::vector<SummaryRow> rows;
  rows.reserve(groups.size());
  for (auto& [key, row] : groups) rows.push_back(std::move(row));
  return rows;
}

void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows) {
  os << "group,count,total_seconds,total_bytes\n";
  const auto old = os.precision(17);
  for (const SummaryRow& r : rows)
    os << r.group << ',' << r.count << ',' << r.total_seconds << ',' << r.total_bytes << '\n';
  os.precision(old);
}

AffineFit fit_affine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("affine fit needs >= 2 paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw UsageError("affine fit with constant abscissa");
  const double slope = sxy / sxx;
  return {my - slope * mx, slope};
}

}  // namespace portsim
