#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "portsim/starforest.hpp"
#include "portsim/vec.hpp"

namespace portsim {

enum class InsertMode { Insert, Add };

struct Triplet {
  std::int64_t row = 0;
  std::int64_t col = 0;
  double value = 0.0;
  bool operator==(const Triplet&) const = default;
};

class CsrMatrix;

/// Frozen COO pattern of one rank's input entries and how they reach CSR
/// slots on their owners.
class CooPlan {
 public:
  std::size_t input_size() const { return nlocal_input_; }
  /// Per-slot number of contributing entries on this rank's rows.
  const std::vector<int>& repeat_counts() const { return repeats_; }
  /// CSR slot of each combined entry: own entries in input order, then
  /// received entries by ascending source rank.
  const std::vector<std::int64_t>& permutation() const { return perm_; }
  const StarForest* router() const { return sf_.get(); }
  std::size_t received() const { return nreceived_; }

 private:
  friend class CsrMatrix;
  std::size_t nlocal_input_ = 0;
  std::vector<std::int64_t> own_input_;  // input positions of owned entries
  std::size_t nreceived_ = 0;
  std::vector<std::int64_t> perm_;
  std::vector<int> repeats_;
  std::shared_ptr<StarForest> sf_;
  std::uint64_t pattern_id_ = 0;
};

/// Row writer handed to the device assembly closure.
class DeviceRowWriter {
 public:
  void set(std::int64_t col, double value, InsertMode mode = InsertMode::Insert);
  std::int64_t row() const { return row_; }

 private:
  friend class CsrMatrix;
  std::int64_t row_ = 0;
  std::span<const std::int64_t> cols_;
  std::span<double> vals_;
  std::size_t writes_ = 0;
};

/// Distributed CSR matrix: each rank stores its owned rows with global
/// column indices sorted per row.
class CsrMatrix {
 public:
  enum class State { Building, Assembled };

  CsrMatrix(Communicator& comm, Layout rows, Layout cols, ExecSpace space = ExecSpace::host());
  /// Square matrix with the same row and column layout.
  CsrMatrix(Communicator& comm, Layout rows, ExecSpace space = ExecSpace::host())
      : CsrMatrix(comm, rows, rows, space) {}

  CsrMatrix(const CsrMatrix&) = delete;
  CsrMatrix& operator=(const CsrMatrix&) = delete;
  CsrMatrix(CsrMatrix&&) = default;

  const Layout& row_layout() const { return rows_; }
  const Layout& col_layout() const { return cols_; }
  std::int64_t local_rows() const { return rows_.local_size(comm_->rank()); }
  std::int64_t row_start() const { return rows_.start(comm_->rank()); }
  State state() const { return state_; }
  bool assembled() const { return state_ == State::Assembled; }
  ExecSpace space() const { return space_; }
  void set_space(ExecSpace s);
  Communicator& comm() const { return *comm_; }
  ExecContext& ctx() const { return comm_->ctx(); }

  // Incremental assembly.
  /// Dense block: values[r * cols.size() + c] goes to (rows[r], cols[c]).
  void set_values(std::span<const std::int64_t> rows, std::span<const std::int64_t> cols,
                  std::span<const double> values, InsertMode mode);
  void set_value(std::int64_t row, std::int64_t col, double value, InsertMode mode) {
    set_values(std::span(&row, 1), std::span(&col, 1), std::span(&value, 1), mode);
  }
  void assembly_begin();
  void assembly_end();
  void assemble() {
    assembly_begin();
    assembly_end();
  }
  /// Back to the building state, keeping current entries.
  void reopen();

  /// Collective. Fix the sparsity (global columns per owned row) with zero
  /// values; the matrix becomes assembled.
  void preallocate(const std::vector<std::vector<std::int64_t>>& row_cols);

  // COO assembly.
  /// Collective. Replaces the sparsity with the union of the given entries.
  CooPlan coo_preprocess(std::span<const std::int64_t> i, std::span<const std::int64_t> j);
  /// Values in the same order as the preprocessed entries; duplicates are
  /// summed. `values_mem` says where the caller's array lives.
  void coo_set_values(const CooPlan& plan, std::span<const double> values, MemType values_mem);
  void coo_set_values(const CooPlan& plan, std::span<const double> values) {
    coo_set_values(plan, values, space_.is_device() ? MemType::Device : MemType::HostPinned);
  }

  /// One kernel over owned rows [begin, end) (global indices); the closure
  /// may only write entries inside the preallocated pattern.
  void set_values_device(std::int64_t row_begin, std::int64_t row_end,
                         const std::function<void(std::int64_t, DeviceRowWriter&)>& fill);
  void zero_entries();

  // Operations.
  void mult(const DistVec& x, DistVec& y) const;
  void mult_transpose(const DistVec& x, DistVec& y) const;
  DistVec get_diagonal() const;
  void get_diagonal(DistVec& d) const;

  // Inspection.
  std::int64_t local_nnz() const { return static_cast<std::int64_t>(colidx_.size()); }
  std::int64_t global_nnz() const;
  const std::vector<std::int64_t>& row_ptr() const { return rowptr_; }
  const std::vector<std::int64_t>& col_indices() const { return colidx_; }
  std::vector<double> local_values() const;
  std::size_t ghost_count() const { return ghost_cols_.size(); }
  /// Collective: all entries of the matrix, sorted by (row, col).
  std::vector<Triplet> gather_triplets() const;

  /// Collective: every rank inserts the triplets of its own rows.
  static CsrMatrix from_triplets(Communicator& comm, Layout rows, Layout cols, std::span<const Triplet> all,
                                 ExecSpace space = ExecSpace::host());

 private:
  void require_building() const;
  void require_assembled(const char* what) const;
  void add_local(std::int64_t row, std::int64_t col, double v, InsertMode mode);
  void finalize_from_rows();
  void set_pattern(std::vector<std::int64_t> rowptr, std::vector<std::int64_t> colidx);
  void rebuild_ghosts();
  void ensure_structure_on(ExecSpace s) const;
  void gather_ghosts(const DistVec& x, ExecSpace s) const;

  Communicator* comm_;
  Layout rows_;
  Layout cols_;
  ExecSpace space_;
  State state_ = State::Building;

  std::vector<std::map<std::int64_t, double>> building_;
  std::vector<std::pair<InsertMode, Triplet>> stash_;

  std::vector<std::int64_t> rowptr_;
  std::vector<std::int64_t> colidx_;
  std::unique_ptr<MirroredBuffer<double>> values_;
  std::uint64_t pattern_id_ = 0;
  mutable bool structure_on_device_ = false;

  std::vector<std::int64_t> ghost_cols_;
  std::vector<std::int64_t> local_col_;  // per nnz: owned column offset, or ncols_local + ghost slot
  std::unique_ptr<StarForest> ghost_sf_;
  mutable std::unique_ptr<MirroredBuffer<double>> ghost_buf_;
};

struct MatrixMarket {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<Triplet> entries;

  /// "coordinate real general" only; indices are 1-based in the file.
  static MatrixMarket read(std::istream& in);
  void write(std::ostream& out) const;
};

}  // namespace portsim
