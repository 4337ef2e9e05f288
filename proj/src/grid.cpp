#include "portsim/grid.hpp"

#include <algorithm>
#include <cmath>

namespace portsim {

namespace {

std::vector<std::int64_t> split(std::int64_t m, int p) {
  std::vector<std::int64_t> starts{0};
  for (int r = 0; r < p; ++r) starts.push_back(starts.back() + m / p + (r < m % p ? 1 : 0));
  return starts;
}

std::int64_t wrap(std::int64_t i, std::int64_t m) { return ((i % m) + m) % m; }

int index_of(const std::vector<std::int64_t>& starts, std::int64_t i) {
  return static_cast<int>(std::upper_bound(starts.begin(), starts.end(), i) - starts.begin()) - 1;
}

}  // namespace

GridSpec GridSpec::from_json(const nlohmann::json& j) {
  GridSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "dim") s.dim = value.get<int>();
    else if (key == "mx") s.mx = value.get<std::int64_t>();
    else if (key == "my") s.my = value.get<std::int64_t>();
    else if (key == "periodic_x") s.periodic_x = value.get<bool>();
    else if (key == "periodic_y") s.periodic_y = value.get<bool>();
    else if (key == "width") s.width = value.get<int>();
    else if (key == "px") s.px = value.get<int>();
    else if (key == "py") s.py = value.get<int>();
    else throw ConfigError("unknown grid key '" + key + "'");
  }
  return s;
}

nlohmann::json GridSpec::to_json() const {
  return {{"dim", dim},       {"mx", mx}, {"my", my}, {"periodic_x", periodic_x}, {"periodic_y", periodic_y},
          {"width", width}, {"px", px}, {"py", py}};
}

LocalVec::LocalVec(const StructuredGrid& grid, ExecSpace space)
    : ctx_(&grid.ctx()),
      space_(space),
      buf_(std::make_unique<MirroredBuffer<double>>(static_cast<std::size_t>(grid.ghost_corners().volume()),
                                                    MemType::HostPinned, space.device, ctx_->cost_only())) {
  if (space.is_device()) ctx_->require_device(space.device);
}

void LocalVec::set_space(ExecSpace s) {
  if (s.is_device()) ctx_->require_device(s.device);
  space_ = s;
}

std::vector<double> LocalVec::values() const {
  auto v = buf_->access(*ctx_, ExecSpace::host(), AccessMode::Read);
  return {v.data().begin(), v.data().end()};
}

void LocalVec::set_values(std::span<const double> values) {
  if (!ctx_->cost_only() && static_cast<std::int64_t>(values.size()) != size())
    throw UsageError("local vector length mismatch");
  auto v = buf_->access(*ctx_, ExecSpace::host(), AccessMode::Write);
  std::copy(values.begin(), values.end(), v.data().begin());
}

StructuredGrid::StructuredGrid(Communicator& comm, GridSpec spec) : comm_(&comm), spec_(spec) {
  const int p = comm.size();
  if (spec_.dim != 1 && spec_.dim != 2) throw UsageError("grids are 1D or 2D");
  if (spec_.dim == 1) {
    spec_.my = 1;
    spec_.periodic_y = false;
  }
  if (spec_.mx < 1 || spec_.my < 1) throw UsageError("grid extents must be positive");
  if (spec_.width < 0) throw UsageError("negative stencil width");

  if (spec_.dim == 1) {
    if (spec_.py > 1) throw UsageError("1D grid with more than one process row");
    px_ = spec_.px > 0 ? spec_.px : p;
    py_ = 1;
  } else if (spec_.px > 0 && spec_.py > 0) {
    px_ = spec_.px;
    py_ = spec_.py;
  } else if (spec_.px > 0 || spec_.py > 0) {
    const int given = std::max(spec_.px, spec_.py);
    if (p % given != 0) throw UsageError("process grid does not divide the rank count");
    px_ = spec_.px > 0 ? spec_.px : p / given;
    py_ = spec_.py > 0 ? spec_.py : p / given;
  } else {
    // Most square subdomains among exact factorizations; ties to fewer columns.
    double best = -1;
    for (int a = 1; a <= p; ++a) {
      if (p % a) continue;
      const int b = p / a;
      if (a > spec_.mx || b > spec_.my) continue;
      const double mismatch = std::abs(std::log(static_cast<double>(spec_.mx) / a / (static_cast<double>(spec_.my) / b)));
      if (best < 0 || mismatch < best - 1e-12) {
        best = mismatch;
        px_ = a;
        py_ = b;
      }
    }
    if (best < 0) throw UsageError("more ranks than grid cells");
  }
  if (px_ * py_ != p) throw UsageError("process grid " + std::to_string(px_) + "x" + std::to_string(py_) +
                                       " does not match " + std::to_string(p) + " ranks");
  if (px_ > spec_.mx || py_ > spec_.my) throw UsageError("more ranks than grid cells");
  spec_.px = px_;
  spec_.py = py_;
  x_starts_ = split(spec_.mx, px_);
  y_starts_ = split(spec_.my, py_);
  const std::int64_t min_x = spec_.mx / px_, min_y = spec_.my / py_;
  if (spec_.width > min_x || (spec_.dim == 2 && spec_.width > min_y))
    throw UsageError("stencil width exceeds the smallest subdomain");

  std::vector<std::int64_t> starts{0};
  for (int r = 0; r < p; ++r) starts.push_back(starts.back() + corners(r).volume());
  layout_ = Layout(std::move(starts));

  const int me = comm.rank();
  const Corners o = corners(me), g = ghost_corners(me);
  std::vector<std::int64_t> leaf_local;
  std::vector<RemotePoint> leaf_remote;
  SfHints hints;
  for (const Region& rg : regions_of(me)) {
    const auto li = rg.leaf.indices(), ri = rg.root.indices();
    for (std::size_t k = 0; k < li.size(); ++k) {
      leaf_local.push_back(li[k]);
      leaf_remote.push_back({rg.src, ri[k]});
    }
    if (rg.src != me) hints.leaf_boxes[rg.src].push_back(rg.leaf);
  }
  for (int q = 0; q < p; ++q) {
    if (q == me) continue;
    for (const Region& rg : regions_of(q))
      if (rg.src == me) hints.root_boxes[q].push_back(rg.root);
  }
  hints.local_blocks.push_back({Box{0, 0, o.xm, o.ym, 1, o.xm}, Box{o.xs - g.xs, o.ys - g.ys, o.xm, o.ym, 1, g.xm}});
  halo_ = std::make_unique<StarForest>(comm, o.volume(), std::move(leaf_local), std::move(leaf_remote),
                                       std::move(hints));
  halo_->setup();
}

Corners StructuredGrid::corners(int rank) const {
  const int rx = rank % px_, ry = rank / px_;
  const auto xs = x_starts_[static_cast<std::size_t>(rx)], ys = y_starts_[static_cast<std::size_t>(ry)];
  return {xs, ys, x_starts_[static_cast<std::size_t>(rx) + 1] - xs, y_starts_[static_cast<std::size_t>(ry) + 1] - ys};
}

Corners StructuredGrid::ghost_corners(int rank) const {
  const Corners o = corners(rank);
  const std::int64_t w = spec_.width;
  Corners g = o;
  const bool left = spec_.periodic_x || o.xs > 0, right = spec_.periodic_x || o.xs + o.xm < spec_.mx;
  g.xs = o.xs - (left ? w : 0);
  g.xm = o.xm + (left ? w : 0) + (right ? w : 0);
  if (spec_.dim == 2) {
    const bool down = spec_.periodic_y || o.ys > 0, up = spec_.periodic_y || o.ys + o.ym < spec_.my;
    g.ys = o.ys - (down ? w : 0);
    g.ym = o.ym + (down ? w : 0) + (up ? w : 0);
  }
  return g;
}

std::vector<StructuredGrid::Region> StructuredGrid::regions_of(int rank) const {
  const int rx = rank % px_, ry = rank / px_;
  const Corners o = corners(rank), g = ghost_corners(rank);
  const std::int64_t w = spec_.width;
  std::vector<Region> out;
  if (w == 0) return out;
  auto leaf_box = [&](std::int64_t x, std::int64_t y, std::int64_t nx, std::int64_t ny) {
    return Box{x - g.xs, y - g.ys, nx, ny, 1, g.xm};
  };
  if (g.xs < o.xs) {
    const int src = rank_of((rx - 1 + px_) % px_, ry);
    const Corners s = corners(src);
    out.push_back({src, leaf_box(o.xs - w, o.ys, w, o.ym), Box{s.xm - w, 0, w, o.ym, 1, s.xm}});
  }
  if (g.xs + g.xm > o.xs + o.xm) {
    const int src = rank_of((rx + 1) % px_, ry);
    const Corners s = corners(src);
    out.push_back({src, leaf_box(o.xs + o.xm, o.ys, w, o.ym), Box{0, 0, w, o.ym, 1, s.xm}});
  }
  if (g.ys < o.ys) {
    const int src = rank_of(rx, (ry - 1 + py_) % py_);
    const Corners s = corners(src);
    out.push_back({src, leaf_box(o.xs, o.ys - w, o.xm, w), Box{0, s.ym - w, o.xm, w, 1, s.xm}});
  }
  if (g.ys + g.ym > o.ys + o.ym) {
    const int src = rank_of(rx, (ry + 1) % py_);
    const Corners s = corners(src);
    out.push_back({src, leaf_box(o.xs, o.ys + o.ym, o.xm, w), Box{0, 0, o.xm, w, 1, s.xm}});
  }
  return out;
}

int StructuredGrid::owner(std::int64_t i, std::int64_t j) const {
  if (i < 0 || i >= spec_.mx || j < 0 || j >= spec_.my)
    throw UsageError("grid point (" + std::to_string(i) + "," + std::to_string(j) + ") outside the domain");
  return rank_of(index_of(x_starts_, i), index_of(y_starts_, j));
}

std::int64_t StructuredGrid::global_index(std::int64_t i, std::int64_t j) const {
  if (spec_.periodic_x) i = wrap(i, spec_.mx);
  if (spec_.periodic_y) j = wrap(j, spec_.my);
  const int r = owner(i, j);
  const Corners c = corners(r);
  return layout_.start(r) + (i - c.xs) + (j - c.ys) * c.xm;
}

std::int64_t StructuredGrid::local_index(std::int64_t i, std::int64_t j) const {
  const Corners g = ghost_corners();
  if (i < g.xs || i >= g.xs + g.xm || j < g.ys || j >= g.ys + g.ym)
    throw UsageError("grid point (" + std::to_string(i) + "," + std::to_string(j) + ") outside the ghosted box");
  return (i - g.xs) + (j - g.ys) * g.xm;
}

DistVec StructuredGrid::create_global(ExecSpace space) const { return DistVec(*comm_, layout_, space); }

void StructuredGrid::check_shapes(const DistVec& g, const LocalVec& l) const {
  if (!(g.layout() == layout_)) throw UsageError("global vector does not match the grid");
  if (l.size() != ghost_corners().volume()) throw UsageError("local vector does not match the grid");
}

void StructuredGrid::global_to_local_begin(const DistVec& g, LocalVec& l) {
  check_shapes(g, l);
  if (pending_src_) throw UsageError("global_to_local already in progress");
  pending_src_ = g.access(AccessMode::Read);
  pending_dst_ = l.access(AccessMode::Write);
  halo_->bcast_begin<double>(pending_src_->data(), g.memtag(), pending_dst_->data(), l.memtag(), ReduceOp::Replace);
}

void StructuredGrid::global_to_local_end() {
  if (!pending_src_) throw UsageError("global_to_local_end without begin");
  halo_->bcast_end();
  pending_src_.reset();
  pending_dst_.reset();
}

void StructuredGrid::local_to_global(const LocalVec& l, DistVec& g, InsertMode mode) {
  check_shapes(g, l);
  if (mode == InsertMode::Add) {
    auto lv = l.access(AccessMode::Read);
    auto gv = g.access(AccessMode::ReadWrite);
    halo_->reduce<double>(lv.data(), l.memtag(), gv.data(), g.memtag(), ReduceOp::Sum);
    return;
  }
  const Corners o = corners(), gc = ghost_corners();
  {
    auto lv = l.access(g.space(), AccessMode::Read);
    auto gv = g.access(AccessMode::Write);
    if (!ctx().cost_only()) {
      for (std::int64_t j = 0; j < o.ym; ++j)
        for (std::int64_t i = 0; i < o.xm; ++i)
          gv[static_cast<std::size_t>(i + j * o.xm)] =
              lv[static_cast<std::size_t>((o.xs - gc.xs + i) + (o.ys - gc.ys + j) * gc.xm)];
    }
  }
  g.charge("DMLocalToGlobal", 16.0 * static_cast<double>(o.volume()), 0);
}

CsrMatrix StructuredGrid::create_matrix(ExecSpace space) const {
  CsrMatrix a(*comm_, layout_, space);
  const Corners o = corners();
  const std::int64_t w = spec_.width;
  std::vector<std::vector<std::int64_t>> rows;
  rows.reserve(static_cast<std::size_t>(o.volume()));
  auto inside = [](std::int64_t i, std::int64_t m, bool periodic) { return periodic || (i >= 0 && i < m); };
  for (std::int64_t j = o.ys; j < o.ys + o.ym; ++j) {
    for (std::int64_t i = o.xs; i < o.xs + o.xm; ++i) {
      std::vector<std::int64_t> cols{global_index(i, j)};
      for (std::int64_t d = 1; d <= w; ++d) {
        for (std::int64_t s : {-d, d}) {
          if (inside(i + s, spec_.mx, spec_.periodic_x)) cols.push_back(global_index(i + s, j));
          if (spec_.dim == 2 && inside(j + s, spec_.my, spec_.periodic_y)) cols.push_back(global_index(i, j + s));
        }
      }
      rows.push_back(std::move(cols));
    }
  }
  a.preallocate(rows);
  return a;
}

StructuredGrid StructuredGrid::refine() const {
  GridSpec s = spec_;
  s.mx = spec_.periodic_x ? 2 * spec_.mx : 2 * spec_.mx - 1;
  if (spec_.dim == 2) s.my = spec_.periodic_y ? 2 * spec_.my : 2 * spec_.my - 1;
  return StructuredGrid(*comm_, s);
}

StructuredGrid StructuredGrid::coarsen() const {
  GridSpec s = spec_;
  auto half = [](std::int64_t m, bool periodic) -> std::int64_t {
    if (periodic) {
      if (m % 2) throw UsageError("odd periodic extent cannot be coarsened");
      return m / 2;
    }
    if (m < 3 || m % 2 == 0) throw UsageError("extent " + std::to_string(m) + " is not a vertex refinement");
    return (m + 1) / 2;
  };
  s.mx = half(spec_.mx, spec_.periodic_x);
  if (spec_.dim == 2) s.my = half(spec_.my, spec_.periodic_y);
  return StructuredGrid(*comm_, s);
}

CsrMatrix interpolation(const StructuredGrid& coarse, const StructuredGrid& fine, ExecSpace space, bool dirichlet) {
  const GridSpec& c = coarse.spec();
  const GridSpec& f = fine.spec();
  auto refined = [](std::int64_t m, bool periodic) { return periodic ? 2 * m : 2 * m - 1; };
  if (&coarse.comm() != &fine.comm() || c.dim != f.dim || c.periodic_x != f.periodic_x ||
      c.periodic_y != f.periodic_y || f.mx != refined(c.mx, c.periodic_x) ||
      (c.dim == 2 && f.my != refined(c.my, c.periodic_y)))
    throw UsageError("interpolation needs a fine grid that refines the coarse grid");

  // Weights along one axis: fine vertex I sits on coarse vertex I/2 or
  // halfway between two.
  auto weights = [dirichlet](std::int64_t fi, std::int64_t mc, bool periodic) {
    std::vector<std::pair<std::int64_t, double>> w;
    const bool clamp = dirichlet && !periodic;
    if (clamp && (fi == 0 || fi == 2 * (mc - 1))) return w;
    auto add = [&](std::int64_t ci, double v) {
      if (!(clamp && (ci == 0 || ci == mc - 1))) w.emplace_back(ci, v);
    };
    if (fi % 2 == 0) {
      add(fi / 2, 1.0);
    } else {
      add((fi - 1) / 2, 0.5);
      add(periodic ? (fi + 1) / 2 % mc : (fi + 1) / 2, 0.5);
    }
    return w;
  };

  CsrMatrix p(fine.comm(), fine.layout(), coarse.layout(), space);
  const Corners o = fine.corners();
  std::vector<std::int64_t> cols;
  std::vector<double> vals;
  for (std::int64_t j = o.ys; j < o.ys + o.ym; ++j) {
    const auto wy = c.dim == 2 ? weights(j, c.my, c.periodic_y) : std::vector<std::pair<std::int64_t, double>>{{0, 1.0}};
    for (std::int64_t i = o.xs; i < o.xs + o.xm; ++i) {
      cols.clear();
      vals.clear();
      for (auto [cj, yw] : wy)
        for (auto [ci, xw] : weights(i, c.mx, c.periodic_x)) {
          cols.push_back(coarse.global_index(ci, cj));
          vals.push_back(xw * yw);
        }
      const std::int64_t row[] = {fine.global_index(i, j)};
      p.set_values(row, cols, vals, InsertMode::Add);
    }
  }
  p.assemble();
  return p;
}

double restriction_scale(const StructuredGrid& grid) { return grid.dim() == 2 ? 0.25 : 0.5; }

}  // namespace portsim
