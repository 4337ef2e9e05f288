#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "portsim/costmodel.hpp"
#include "portsim/errors.hpp"
#include "portsim/exec_space.hpp"

namespace portsim {

enum class MemType { HostPageable, HostPinned, Device, Unified };
const char* to_string(MemType t);

enum class AccessMode { Read, Write, ReadWrite };

/// Which copies of a mirrored buffer are current.
enum class Validity : std::uint8_t { HostValid = 1, DeviceValid = 2, BothValid = 3 };

class BufferBase;

/// Per-rank simulated machine: virtual host clock, device stream queues and
/// the rank's event log. Kernels and transfers are functionally executed by
/// the caller; this class only accounts for their cost.
class ExecContext {
 public:
  explicit ExecContext(CostParams params = {}, int rank = 0, int num_devices = 1,
                       bool cost_only = false);

  const CostParams& params() const { return params_; }
  int rank() const { return rank_; }
  int num_devices() const { return static_cast<int>(devices_.size()); }
  bool has_device(int id = 0) const { return id >= 0 && id < num_devices(); }
  void require_device(int id) const;

  /// Buffers created through this context carry no storage; only costs are
  /// simulated.
  bool cost_only() const { return cost_only_; }

  double now() const { return host_; }
  /// Snapshot of the host clock and device-0 stream completion times.
  RankClock clock() const;
  /// Host busy for `dt` seconds.
  void advance(double dt);
  void wait_until(double t);
  /// Latest of host time and every stream's completion time.
  double completion_time() const;

  int create_stream(int device = 0);
  int num_streams(int device = 0) const;
  /// Secondary stream 1 on `device`, created on first use.
  int aux_stream(int device = 0);
  double stream_done(int stream, int device = 0) const;
  std::size_t pending_ops(int stream, int device = 0) const;
  /// True when some stream of any device holds operations the host has not
  /// synchronized with.
  bool has_unsynced_work() const;

  /// Enqueue one device kernel. Charges t_launch to the host; the kernel's
  /// modeled duration goes to the stream.
  void launch(int stream, std::string_view label, double bytes_moved, double flops = 0.0,
              EventKind kind = EventKind::Kernel, std::string detail = {}, int device = 0);
  /// As launch(), but rejects buffers owned by another device.
  void enqueue_kernel(int stream, std::string_view label, double bytes_moved, double flops,
                      std::initializer_list<const BufferBase*> buffers, int device = 0);
  /// A host-side loop: dispatch overhead plus bandwidth-bound time.
  void host_op(std::string_view label, double bytes_moved, EventKind kind = EventKind::Kernel,
               std::string detail = {});
  /// Dispatch to launch() on stream 0 or host_op() depending on `space`.
  void run(ExecSpace space, std::string_view label, double bytes_moved,
           EventKind kind = EventKind::Kernel, std::string detail = {});

  /// Device-side ordering: later work on `waiter` starts after everything
  /// currently queued on `target`. No host cost.
  void stream_wait(int waiter, int target, int device = 0);
  void sync_stream(int stream = 0, int device = 0);
  void sync_device(int device = 0);

  /// Synchronous host<->device copy on the default stream.
  void transfer(TransferKind kind, double bytes, bool pinned, std::string_view label, int device = 0);

  /// Charge one memory-type lookup of an untagged pointer.
  void charge_memtype_query();

  void push_stage(std::string label, std::string detail = "cycle");
  void pop_stage();
  const std::string& current_stage() const;

  void record(Event e);
  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }

 private:
  struct PendingOp {
    double start;
    double end;
  };
  struct StreamState {
    double done = 0.0;
    std::deque<PendingOp> pending;
  };
  struct Stage {
    std::string label;
    std::string detail;
    double entered;
    double resumed_at;
    double accumulated;
  };

  StreamState& stream_ref(int stream, int device);
  const StreamState& stream_ref(int stream, int device) const;
  void drain_completed();

  CostParams params_;
  int rank_;
  bool cost_only_;
  double host_ = 0.0;
  std::vector<std::vector<StreamState>> devices_;
  std::vector<Stage> stages_;
  EventLog log_;
};

/// Untagged raw pointer: its memory type is only known after a query.
struct RawPointer {
  MemType actual;
};
/// Memory type of one side of a mirrored buffer; the tag is cached, so free.
MemType memtype_of(const BufferBase& buf, ExecSpace side);
MemType memtype_of(ExecContext& ctx, const RawPointer& ptr);

/// Type-independent part of a host/device mirrored allocation.
class BufferBase {
 public:
  virtual ~BufferBase() = default;

  std::size_t size() const { return size_; }
  std::size_t element_bytes() const { return elem_bytes_; }
  double size_bytes() const { return static_cast<double>(size_ * elem_bytes_); }
  int device() const { return device_; }
  MemType host_memtype() const { return host_type_; }
  Validity validity() const { return validity_; }
  bool host_valid() const { return (static_cast<int>(validity_) & 1) != 0; }
  bool device_valid() const { return (static_cast<int>(validity_) & 2) != 0; }
  bool has_device_storage() const { return device_allocated_; }
  bool phantom() const { return phantom_; }
  int readers() const { return readers_; }
  bool writer_active() const { return writer_; }

 protected:
  BufferBase(std::size_t n, std::size_t elem_bytes, MemType host_type, int device, bool phantom);

  /// Checks conflicts, charges a transfer when an invalid side is read, and
  /// updates the validity mask. Tells the caller which copy to perform.
  enum class Copy { None, HostToDevice, DeviceToHost };
  Copy begin_access(ExecContext& ctx, ExecSpace space, AccessMode mode);
  void end_access(AccessMode mode);

  std::size_t size_;
  std::size_t elem_bytes_;
  MemType host_type_;
  int device_;
  bool phantom_;
  Validity validity_ = Validity::HostValid;
  bool device_allocated_ = false;
  int readers_ = 0;
  bool writer_ = false;
};

template <class T>
class MirroredBuffer;

/// Outstanding access to one side of a MirroredBuffer. Restores on
/// destruction if not restored explicitly.
template <class T>
class View {
 public:
  View() = default;
  View(const View&) = delete;
  View& operator=(const View&) = delete;
  View(View&& o) noexcept { *this = std::move(o); }
  View& operator=(View&& o) noexcept {
    if (this != &o) {
      if (owner_ != nullptr && active_) release();
      owner_ = std::exchange(o.owner_, nullptr);
      data_ = std::exchange(o.data_, {});
      mode_ = o.mode_;
      space_ = o.space_;
      active_ = std::exchange(o.active_, false);
    }
    return *this;
  }
  ~View() {
    if (owner_ != nullptr && active_) release();
  }

  std::span<T> data() const { return data_; }
  T& operator[](std::size_t i) const { return data_[i]; }
  std::size_t size() const { return data_.size(); }
  AccessMode mode() const { return mode_; }
  ExecSpace space() const { return space_; }
  bool active() const { return active_; }

  void restore() {
    if (!active_) throw UsageError("view restored twice");
    release();
  }

 private:
  friend class MirroredBuffer<T>;
  View(MirroredBuffer<T>* owner, std::span<T> data, AccessMode mode, ExecSpace space)
      : owner_(owner), data_(data), mode_(mode), space_(space), active_(true) {}
  void release();

  MirroredBuffer<T>* owner_ = nullptr;
  std::span<T> data_;
  AccessMode mode_ = AccessMode::Read;
  ExecSpace space_{};
  bool active_ = false;
};

/// Host and (lazily allocated) device copies of an array with a validity
/// mask. Reads of an invalid side copy and charge a transfer; writes only
/// invalidate the other side.
template <class T>
class MirroredBuffer : public BufferBase {
 public:
  explicit MirroredBuffer(std::size_t n = 0, MemType host_type = MemType::HostPinned, int device = 0,
                          bool phantom = false)
      : BufferBase(n, sizeof(T), host_type, device, phantom), host_(phantom ? 0 : n) {}

  MirroredBuffer(const MirroredBuffer&) = delete;
  MirroredBuffer& operator=(const MirroredBuffer&) = delete;
  MirroredBuffer(MirroredBuffer&&) = default;
  MirroredBuffer& operator=(MirroredBuffer&&) = default;

  View<T> access(ExecContext& ctx, ExecSpace space, AccessMode mode) {
    const Copy copy = begin_access(ctx, space, mode);
    if (!phantom_) {
      if (space.is_device() && device_.size() != size_) device_.resize(size_);
      if (copy == Copy::HostToDevice) device_ = host_;
      if (copy == Copy::DeviceToHost) host_ = device_;
    }
    std::vector<T>& side = space.is_device() ? device_ : host_;
    return View<T>(this, std::span<T>(side.data(), phantom_ ? 0 : size_), mode, space);
  }

  /// Inspect a side without cost or validity changes (tests, oracles).
  std::span<const T> peek_host() const { return host_; }
  std::span<const T> peek_device() const { return device_; }

 private:
  friend class View<T>;
  std::vector<T> host_;
  std::vector<T> device_;
};

template <class T>
void View<T>::release() {
  active_ = false;
  owner_->end_access(mode_);
}

}  // namespace portsim
