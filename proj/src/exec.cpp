#include "portsim/exec.hpp"

#include <algorithm>

namespace portsim {

const char* to_string(MemType t) {
  switch (t) {
    case MemType::HostPageable: return "host_pageable";
    case MemType::HostPinned: return "host_pinned";
    case MemType::Device: return "device";
    case MemType::Unified: return "unified";
  }
  return "?";
}

ExecContext::ExecContext(CostParams params, int rank, int num_devices, bool cost_only)
    : params_(params), rank_(rank), cost_only_(cost_only) {
  params_.validate();
  if (num_devices < 0) throw ConfigError("negative device count");
  devices_.resize(static_cast<std::size_t>(num_devices));
  for (auto& d : devices_) d.resize(1);
}

void ExecContext::require_device(int id) const {
  if (!has_device(id)) {
    throw ConfigError("rank " + std::to_string(rank_) + " has no device " + std::to_string(id));
  }
}

void ExecContext::advance(double dt) {
  if (dt < 0) throw UsageError("negative time advance");
  host_ += dt;
}

void ExecContext::wait_until(double t) { host_ = std::max(host_, t); }

double ExecContext::completion_time() const {
  double t = host_;
  for (const auto& d : devices_)
    for (const auto& s : d) t = std::max(t, s.done);
  return t;
}

RankClock ExecContext::clock() const {
  RankClock c;
  c.host = host_;
  if (!devices_.empty())
    for (const auto& s : devices_[0]) c.stream_done.push_back(s.done);
  return c;
}

ExecContext::StreamState& ExecContext::stream_ref(int stream, int device) {
  require_device(device);
  auto& d = devices_[static_cast<std::size_t>(device)];
  if (stream < 0 || stream >= static_cast<int>(d.size()))
    throw UsageError("no stream " + std::to_string(stream) + " on device " + std::to_string(device));
  return d[static_cast<std::size_t>(stream)];
}

const ExecContext::StreamState& ExecContext::stream_ref(int stream, int device) const {
  return const_cast<ExecContext*>(this)->stream_ref(stream, device);
}

int ExecContext::create_stream(int device) {
  require_device(device);
  auto& d = devices_[static_cast<std::size_t>(device)];
  d.emplace_back();
  return static_cast<int>(d.size()) - 1;
}

int ExecContext::num_streams(int device) const {
  require_device(device);
  return static_cast<int>(devices_[static_cast<std::size_t>(device)].size());
}

int ExecContext::aux_stream(int device) {
  if (num_streams(device) < 2) create_stream(device);
  return 1;
}

double ExecContext::stream_done(int stream, int device) const { return stream_ref(stream, device).done; }

std::size_t ExecContext::pending_ops(int stream, int device) const {
  return stream_ref(stream, device).pending.size();
}

bool ExecContext::has_unsynced_work() const {
  for (const auto& d : devices_)
    for (const auto& s : d)
      if (!s.pending.empty()) return true;
  return false;
}

void ExecContext::launch(int stream, std::string_view label, double bytes_moved, double flops,
                         EventKind kind, std::string detail, int device) {
  StreamState& s = stream_ref(stream, device);
  const double dur = kernel_duration(bytes_moved, flops, ExecSpace::on_device(device), params_);
  host_ += params_.t_launch;
  const double start = std::max(s.done, host_);
  s.done = start + dur;
  s.pending.push_back({start, s.done});
  record({rank_, kind, stream, start, dur, bytes_moved, std::string(label), {}, std::move(detail)});
}

void ExecContext::enqueue_kernel(int stream, std::string_view label, double bytes_moved, double flops,
                                 std::initializer_list<const BufferBase*> buffers, int device) {
  for (const BufferBase* b : buffers) {
    if (b != nullptr && b->device() != device) {
      throw UsageError("kernel '" + std::string(label) + "' on device " + std::to_string(device) +
                       " touches a buffer of device " + std::to_string(b->device()));
    }
  }
  launch(stream, label, bytes_moved, flops, EventKind::Kernel, {}, device);
}

void ExecContext::host_op(std::string_view label, double bytes_moved, EventKind kind, std::string detail) {
  const double dur = params_.host_kernel_overhead + kernel_duration(bytes_moved, 0.0, ExecSpace::host(), params_);
  record({rank_, kind, -1, host_, dur, bytes_moved, std::string(label), {}, std::move(detail)});
  host_ += dur;
}

void ExecContext::run(ExecSpace space, std::string_view label, double bytes_moved, EventKind kind,
                      std::string detail) {
  if (space.is_device()) {
    launch(0, label, bytes_moved, 0.0, kind, std::move(detail), space.device);
  } else {
    host_op(label, bytes_moved, kind, std::move(detail));
  }
}

void ExecContext::stream_wait(int waiter, int target, int device) {
  StreamState& t = stream_ref(target, device);
  StreamState& w = stream_ref(waiter, device);
  w.done = std::max(w.done, t.done);
}

void ExecContext::drain_completed() {
  for (auto& d : devices_)
    for (auto& s : d)
      while (!s.pending.empty() && s.pending.front().end <= host_) s.pending.pop_front();
}

void ExecContext::sync_stream(int stream, int device) {
  StreamState& s = stream_ref(stream, device);
  const double before = host_;
  host_ = std::max(host_, s.done) + params_.t_stream_sync;
  s.pending.clear();
  drain_completed();
  record({rank_, EventKind::Sync, stream, before, host_ - before, 0.0, "stream_sync", {}, {}});
}

void ExecContext::sync_device(int device) {
  require_device(device);
  auto& d = devices_[static_cast<std::size_t>(device)];
  const double before = host_;
  double done = host_;
  for (auto& s : d) {
    done = std::max(done, s.done);
    s.pending.clear();
  }
  host_ = done + params_.t_device_sync;
  drain_completed();
  record({rank_, EventKind::Sync, -1, before, host_ - before, 0.0, "device_sync", {}, {}});
}

void ExecContext::transfer(TransferKind kind, double bytes, bool pinned, std::string_view label, int device) {
  if (kind == TransferKind::Net) throw UsageError("network transfers go through the transport");
  require_device(device);
  auto& d = devices_[static_cast<std::size_t>(device)];
  double start = host_;
  for (const auto& s : d) start = std::max(start, s.done);
  const double dur = transfer_duration(bytes, kind, pinned, params_);
  host_ = start + dur;
  for (auto& s : d) {
    s.done = std::max(s.done, host_);
    s.pending.clear();
  }
  record({rank_, kind == TransferKind::H2D ? EventKind::H2D : EventKind::D2H, 0, start, dur, bytes,
          std::string(label), {}, {}});
}

void ExecContext::charge_memtype_query() { host_ += params_.t_memtype_query; }

void ExecContext::push_stage(std::string label, std::string detail) {
  if (!stages_.empty()) stages_.back().accumulated += host_ - stages_.back().resumed_at;
  stages_.push_back({std::move(label), std::move(detail), host_, host_, 0.0});
}

void ExecContext::pop_stage() {
  if (stages_.empty()) throw UsageError("pop_stage without push_stage");
  Stage st = std::move(stages_.back());
  stages_.pop_back();
  st.accumulated += host_ - st.resumed_at;
  log_.append({rank_, EventKind::Stage, -1, st.entered, st.accumulated, 0.0, st.label, st.label, st.detail});
  if (!stages_.empty()) stages_.back().resumed_at = host_;
}

const std::string& ExecContext::current_stage() const {
  static const std::string none;
  return stages_.empty() ? none : stages_.back().label;
}

void ExecContext::record(Event e) {
  e.rank = rank_;
  if (e.stage.empty()) e.stage = current_stage();
  log_.append(std::move(e));
}

MemType memtype_of(const BufferBase& buf, ExecSpace side) {
  return side.is_device() ? MemType::Device : buf.host_memtype();
}

MemType memtype_of(ExecContext& ctx, const RawPointer& ptr) {
  ctx.charge_memtype_query();
  return ptr.actual;
}

BufferBase::BufferBase(std::size_t n, std::size_t elem_bytes, MemType host_type, int device, bool phantom)
    : size_(n), elem_bytes_(elem_bytes), host_type_(host_type), device_(device), phantom_(phantom) {
  if (host_type == MemType::Device) throw UsageError("host side of a mirrored buffer cannot be device memory");
}

BufferBase::Copy BufferBase::begin_access(ExecContext& ctx, ExecSpace space, AccessMode mode) {
  if (space.is_device()) {
    ctx.require_device(space.device);
    if (space.device != device_) {
      throw UsageError("buffer of device " + std::to_string(device_) + " accessed from device " +
                       std::to_string(space.device));
    }
  }
  if (writer_) throw UsageError("buffer already has an outstanding write access");
  if (mode != AccessMode::Read && readers_ > 0) throw UsageError("buffer has outstanding read accesses");

  const bool dev = space.is_device();
  const bool side_valid = dev ? device_valid() : host_valid();
  Copy copy = Copy::None;
  if (mode != AccessMode::Write && !side_valid) {
    const bool pinned = host_type_ != MemType::HostPageable;
    ctx.transfer(dev ? TransferKind::H2D : TransferKind::D2H, size_bytes(), pinned, "lazy_mirror", device_);
    copy = dev ? Copy::HostToDevice : Copy::DeviceToHost;
  }
  if (dev) device_allocated_ = true;
  if (mode == AccessMode::Read) {
    validity_ = static_cast<Validity>(static_cast<int>(validity_) | (dev ? 2 : 1));
    ++readers_;
  } else {
    validity_ = dev ? Validity::DeviceValid : Validity::HostValid;
    writer_ = true;
  }
  return copy;
}

void BufferBase::end_access(AccessMode mode) {
  if (mode == AccessMode::Read) {
    --readers_;
  } else {
    writer_ = false;
  }
}

}  // namespace portsim
