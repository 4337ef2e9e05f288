#include <algorithm>
#include <sstream>

#include "portsim/solve.hpp"

namespace portsim {

struct MgHierarchy::Level {
  std::unique_ptr<StructuredGrid> grid;
  std::unique_ptr<CsrMatrix> a;
  /// Interpolation from the next coarser level; null on level 0.
  std::unique_ptr<CsrMatrix> p;
  ExecSpace space;
  std::unique_ptr<DistVec> dinv, b, x, r, t;
  EigBounds bounds;
  double restrict_scale = 1.0;
};

MgHierarchy::MgHierarchy(const StructuredGrid& finest, const Discretization& discretize, MgConfig config)
    : config_(std::move(config)) {
  if (config_.levels < 1) throw UsageError("multigrid needs at least one level");
  if (config_.pre < 0 || config_.post < 0) throw UsageError("negative smoothing sweep count");
  if (config_.binding.empty()) config_.binding.assign(static_cast<std::size_t>(config_.levels), ExecSpace::host());
  if (static_cast<int>(config_.binding.size()) != config_.levels)
    throw UsageError("binding must name a space for every level");

  std::vector<std::unique_ptr<StructuredGrid>> grids;
  grids.push_back(std::make_unique<StructuredGrid>(finest.comm(), finest.spec()));
  for (int l = 1; l < config_.levels; ++l) grids.push_back(std::make_unique<StructuredGrid>(grids.back()->coarsen()));
  std::reverse(grids.begin(), grids.end());

  for (int l = 0; l < config_.levels; ++l) {
    auto lv = std::make_unique<Level>();
    lv->space = config_.binding[static_cast<std::size_t>(l)];
    lv->grid = std::move(grids[static_cast<std::size_t>(l)]);
    lv->a = std::make_unique<CsrMatrix>(discretize(*lv->grid, lv->space));
    if (!(lv->a->row_layout() == lv->grid->layout())) throw UsageError("discretization does not match its grid");
    auto vec = [&] { return std::make_unique<DistVec>(lv->grid->create_global(lv->space)); };
    lv->b = vec();
    lv->x = vec();
    lv->r = vec();
    lv->t = vec();
    if (l > 0) {
      lv->dinv = std::make_unique<DistVec>(inverse_diagonal(*lv->a));
      lv->bounds = estimate_eigs(*lv->a, lv->dinv.get());
      const Level& coarse = *levels_.back();
      lv->p = std::make_unique<CsrMatrix>(interpolation(*coarse.grid, *lv->grid, lv->space, config_.dirichlet));
      lv->restrict_scale = restriction_scale(*lv->grid);
    }
    levels_.push_back(std::move(lv));
  }

  const CsrMatrix& a0 = *levels_.front()->a;
  const auto n = static_cast<std::size_t>(a0.row_layout().global_size());
  std::vector<double> dense(n * n, 0.0);
  for (const Triplet& t : a0.gather_triplets())
    dense[static_cast<std::size_t>(t.row) * n + static_cast<std::size_t>(t.col)] += t.value;
  a0.ctx().host_op("MatLUFactor", 8.0 * static_cast<double>(n * n));
  coarse_lu_ = std::make_unique<DenseLu>(n, std::move(dense));
}

MgHierarchy::~MgHierarchy() = default;

const StructuredGrid& MgHierarchy::grid(int level) const { return *levels_.at(static_cast<std::size_t>(level))->grid; }
const CsrMatrix& MgHierarchy::op(int level) const { return *levels_.at(static_cast<std::size_t>(level))->a; }
ExecSpace MgHierarchy::space(int level) const { return levels_.at(static_cast<std::size_t>(level))->space; }
EigBounds MgHierarchy::bounds(int level) const { return levels_.at(static_cast<std::size_t>(level))->bounds; }

void MgHierarchy::bind_levels(const std::vector<ExecSpace>& binding) {
  if (static_cast<int>(binding.size()) != nlevels()) throw UsageError("binding must name a space for every level");
  for (int l = 0; l < nlevels(); ++l) {
    Level& lv = *levels_[static_cast<std::size_t>(l)];
    const ExecSpace s = binding[static_cast<std::size_t>(l)];
    lv.space = s;
    lv.a->set_space(s);
    if (lv.p) lv.p->set_space(s);
    for (DistVec* v : {lv.dinv.get(), lv.b.get(), lv.x.get(), lv.r.get(), lv.t.get()})
      if (v) v->set_space(s);
  }
  config_.binding = binding;
}

void MgHierarchy::cycle(const DistVec& b, DistVec& x) { cycle(b, x, config_.cycle); }

void MgHierarchy::cycle(const DistVec& b, DistVec& x, CycleType type) {
  const CsrMatrix& a = finest_op();
  if (!(b.layout() == a.row_layout()) || !(x.layout() == a.row_layout()))
    throw UsageError("vectors do not live on the finest level");
  for (const auto& lv : levels_)
    if (!lv->a->assembled()) throw UsageError("multigrid level operator is not assembled");
  visit(nlevels() - 1, b, x, type);
}

void MgHierarchy::coarse_solve(const DistVec& b, DistVec& x) {
  const auto all = b.gather();
  const auto sol = coarse_lu_->solve(all);
  const auto n = static_cast<double>(coarse_lu_->size());
  x.ctx().host_op("MatSolve", 16.0 * n * n);
  x.set_local_values(std::span<const double>(sol).subspan(static_cast<std::size_t>(x.start()),
                                                          static_cast<std::size_t>(x.local_size())));
}

void MgHierarchy::visit(int level, const DistVec& b, DistVec& x, CycleType type) {
  ExecContext& ctx = b.ctx();
  const std::string name = "level-" + std::to_string(level);
  ctx.push_stage(name);
  if (level == 0) {
    coarse_solve(b, x);
    ctx.pop_stage();
    return;
  }
  Level& lv = *levels_[static_cast<std::size_t>(level)];
  Level& coarse = *levels_[static_cast<std::size_t>(level) - 1];
  const std::string coarse_name = "level-" + std::to_string(level - 1);

  chebyshev_smooth(*lv.a, *lv.dinv, b, x, config_.pre, lv.bounds);
  lv.a->mult(x, *lv.r);
  aypx(*lv.r, -1.0, b);

  // Grid transfers are charged to the coarse level they feed.
  ctx.push_stage(coarse_name, "transfer");
  lv.p->mult_transpose(*lv.r, *coarse.b);
  scale(*coarse.b, lv.restrict_scale);
  set_scalar(*coarse.x, 0.0);
  ctx.pop_stage();

  const int visits = type == CycleType::W ? 2 : 1;
  for (int k = 0; k < visits; ++k) visit(level - 1, *coarse.b, *coarse.x, type);

  ctx.push_stage(coarse_name, "transfer");
  lv.p->mult(*coarse.x, *lv.t);
  axpy(x, 1.0, *lv.t);
  ctx.pop_stage();

  chebyshev_smooth(*lv.a, *lv.dinv, b, x, config_.post, lv.bounds);
  ctx.pop_stage();
}

void MgPc::apply(const DistVec& r, DistVec& z) {
  set_scalar(z, 0.0);
  h_->cycle(r, z);
}

std::vector<ExecSpace> parse_binding(const std::string& text, int nlevels) {
  std::vector<int> seen(static_cast<std::size_t>(nlevels), 0);
  std::vector<ExecSpace> out(static_cast<std::size_t>(nlevels));
  std::istringstream in(text);
  std::string item;
  auto bad = [&](const std::string& why) { return ConfigError("mg_bind '" + text + "': " + why); };
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw bad("expected space:range in '" + item + "'");
    const std::string space = item.substr(0, colon), range = item.substr(colon + 1);
    ExecSpace s;
    if (space == "host") s = ExecSpace::host();
    else if (space == "device") s = ExecSpace::on_device(0);
    else throw bad("unknown space '" + space + "'");
    int lo = 0, hi = 0;
    try {
      const auto dash = range.find('-');
      lo = std::stoi(range.substr(0, dash));
      hi = dash == std::string::npos ? lo : std::stoi(range.substr(dash + 1));
    } catch (const std::exception&) {
      throw bad("bad level range '" + range + "'");
    }
    if (lo < 0 || hi >= nlevels || lo > hi) throw bad("level range '" + range + "' outside 0.." + std::to_string(nlevels - 1));
    for (int l = lo; l <= hi; ++l) {
      if (seen[static_cast<std::size_t>(l)]++) throw bad("level " + std::to_string(l) + " bound twice");
      out[static_cast<std::size_t>(l)] = s;
    }
  }
  for (int l = 0; l < nlevels; ++l)
    if (!seen[static_cast<std::size_t>(l)]) throw bad("level " + std::to_string(l) + " is not bound");
  return out;
}

}  // namespace portsim
