#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "portsim/mat.hpp"
#include "portsim/starforest.hpp"
#include "portsim/vec.hpp"

namespace portsim {

struct GridSpec {
  int dim = 1;
  std::int64_t mx = 1;
  std::int64_t my = 1;
  bool periodic_x = false;
  bool periodic_y = false;
  int width = 1;
  /// Process grid; 0 picks one automatically.
  int px = 0;
  int py = 0;

  static GridSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Owned (or ghosted) rectangle in global grid coordinates. Ghosted corners
/// of periodic grids may lie outside [0, m).
struct Corners {
  std::int64_t xs = 0, ys = 0;
  std::int64_t xm = 0, ym = 1;
  std::int64_t volume() const { return xm * ym; }
  bool operator==(const Corners&) const = default;
};

class StructuredGrid;

/// Values over one rank's ghosted box, stored x fastest.
class LocalVec {
 public:
  LocalVec(const StructuredGrid& grid, ExecSpace space = ExecSpace::host());

  std::int64_t size() const { return static_cast<std::int64_t>(buf_->size()); }
  ExecSpace space() const { return space_; }
  void set_space(ExecSpace s);
  MirroredBuffer<double>& buffer() const { return *buf_; }
  ExecContext& ctx() const { return *ctx_; }
  View<double> access(AccessMode mode) const { return buf_->access(*ctx_, space_, mode); }
  View<double> access(ExecSpace s, AccessMode mode) const { return buf_->access(*ctx_, s, mode); }
  MemTag memtag() const { return {space_.is_device() ? MemType::Device : buf_->host_memtype(), true}; }

  std::vector<double> values() const;
  void set_values(std::span<const double> v);

 private:
  ExecContext* ctx_;
  ExecSpace space_;
  std::unique_ptr<MirroredBuffer<double>> buf_;
};

/// Structured 1D/2D grid distributed over a process grid. Ranks are numbered
/// x fastest; global vector entries are contiguous per rank, x fastest within
/// the owned box. Construction and all transfers are collective.
class StructuredGrid {
 public:
  StructuredGrid(Communicator& comm, GridSpec spec);
  StructuredGrid(StructuredGrid&&) = default;

  const GridSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  std::int64_t mx() const { return spec_.mx; }
  std::int64_t my() const { return spec_.my; }
  int px() const { return px_; }
  int py() const { return py_; }
  Communicator& comm() const { return *comm_; }
  ExecContext& ctx() const { return comm_->ctx(); }

  Corners corners() const { return corners(comm_->rank()); }
  Corners corners(int rank) const;
  Corners ghost_corners() const { return ghost_corners(comm_->rank()); }
  Corners ghost_corners(int rank) const;
  const Layout& layout() const { return layout_; }

  int rank_of(int rx, int ry) const { return ry * px_ + rx; }
  int owner(std::int64_t i, std::int64_t j = 0) const;
  /// Global vector index of grid point (i, j); periodic axes wrap.
  std::int64_t global_index(std::int64_t i, std::int64_t j = 0) const;
  /// Position of grid point (i, j) in this rank's local (ghosted) vector.
  std::int64_t local_index(std::int64_t i, std::int64_t j = 0) const;

  DistVec create_global(ExecSpace space = ExecSpace::host()) const;
  LocalVec create_local(ExecSpace space = ExecSpace::host()) const { return LocalVec(*this, space); }

  void global_to_local_begin(const DistVec& g, LocalVec& l);
  void global_to_local_end();
  void global_to_local(const DistVec& g, LocalVec& l) {
    global_to_local_begin(g, l);
    global_to_local_end();
  }
  void local_to_global(const LocalVec& l, DistVec& g, InsertMode mode);

  /// Matrix preallocated with the exact star-stencil pattern, values zero.
  CsrMatrix create_matrix(ExecSpace space = ExecSpace::host()) const;

  /// Vertex-doubling refinement and its inverse, on the same process grid.
  StructuredGrid refine() const;
  StructuredGrid coarsen() const;

  const StarForest& halo() const { return *halo_; }

 private:
  struct Region {
    int src;
    Box leaf;
    Box root;
  };
  std::vector<Region> regions_of(int rank) const;
  void check_shapes(const DistVec& g, const LocalVec& l) const;

  Communicator* comm_;
  GridSpec spec_;
  int px_ = 1, py_ = 1;
  std::vector<std::int64_t> x_starts_, y_starts_;
  Layout layout_;
  std::unique_ptr<StarForest> halo_;
  std::optional<View<double>> pending_src_, pending_dst_;
};

/// Linear (1D) or bilinear (2D) interpolation from `coarse` to its vertex
/// refinement `fine`. With `dirichlet`, rows of fine boundary vertices and
/// columns of coarse boundary vertices (non-periodic axes) are left empty.
CsrMatrix interpolation(const StructuredGrid& coarse, const StructuredGrid& fine,
                        ExecSpace space = ExecSpace::host(), bool dirichlet = false);

/// Factor c with restriction = c * interpolation^T preserving constants.
double restriction_scale(const StructuredGrid& grid);

}  // namespace portsim
