#include "portsim/solve.hpp"

namespace portsim {

StencilEntries five_point_entries(const StructuredGrid& g, double wx, double wy) {
  if (g.dim() != 2 || g.spec().periodic_x || g.spec().periodic_y)
    throw UsageError("model problems need a non-periodic 2D grid");
  if (g.mx() < 3 || g.my() < 3) throw UsageError("model problems need at least 3x3 vertices");
  const double hx = 1.0 / static_cast<double>(g.mx() - 1), hy = 1.0 / static_cast<double>(g.my() - 1);
  const double cx = 1.0 / (hx * hx), cy = 1.0 / (hy * hy);
  const double vx = wx / (2.0 * hx), vy = wy / (2.0 * hy);
  auto interior = [&](std::int64_t i, std::int64_t j) { return i > 0 && j > 0 && i < g.mx() - 1 && j < g.my() - 1; };

  StencilEntries e;
  auto put = [&](std::int64_t r, std::int64_t c, double v) {
    e.rows.push_back(r);
    e.cols.push_back(c);
    e.vals.push_back(v);
  };
  const Corners o = g.corners();
  for (std::int64_t j = o.ys; j < o.ys + o.ym; ++j) {
    for (std::int64_t i = o.xs; i < o.xs + o.xm; ++i) {
      const auto row = g.global_index(i, j);
      if (!interior(i, j)) {
        put(row, row, 1.0);
        continue;
      }
      put(row, row, 2.0 * cx + 2.0 * cy);
      if (interior(i - 1, j)) put(row, g.global_index(i - 1, j), -cx - vx);
      if (interior(i + 1, j)) put(row, g.global_index(i + 1, j), -cx + vx);
      if (interior(i, j - 1)) put(row, g.global_index(i, j - 1), -cy - vy);
      if (interior(i, j + 1)) put(row, g.global_index(i, j + 1), -cy + vy);
    }
  }
  return e;
}

namespace {

CsrMatrix five_point(const StructuredGrid& g, double wx, double wy, ExecSpace space) {
  const StencilEntries e = five_point_entries(g, wx, wy);
  CsrMatrix a(g.comm(), g.layout(), space);
  const CooPlan plan = a.coo_preprocess(e.rows, e.cols);
  a.coo_set_values(plan, e.vals, MemType::HostPinned);
  return a;
}

}  // namespace

CsrMatrix poisson2d(const StructuredGrid& grid, ExecSpace space) { return five_point(grid, 0.0, 0.0, space); }

CsrMatrix convection_diffusion2d(const StructuredGrid& grid, double wx, double wy, ExecSpace space) {
  return five_point(grid, wx, wy, space);
}

}  // namespace portsim
