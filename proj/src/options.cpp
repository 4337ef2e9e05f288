#include "portsim/solve.hpp"

namespace portsim {

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("option " + key + " expects a number, got '" + v + "'");
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw ConfigError("option " + key + " expects an integer, got '" + v + "'");
}

}  // namespace

SolverOptions SolverOptions::parse(const std::vector<std::string>& args) {
  SolverOptions o;
  for (std::string arg : args) {
    if (!arg.empty() && arg[0] == '-') arg.erase(0, 1);
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + arg + "'");
    const std::string key = arg.substr(0, eq), v = arg.substr(eq + 1);
    if (key == "ksp_type") {
      if (v == "cg") o.ksp_type = KspType::CG;
      else if (v == "bcgs" || v == "bicgstab") o.ksp_type = KspType::BiCGstab;
      else if (v == "chebyshev") o.ksp_type = KspType::Chebyshev;
      else if (v == "richardson") o.ksp_type = KspType::Richardson;
      else throw ConfigError("unknown ksp_type '" + v + "'");
    } else if (key == "pc_type") {
      if (v == "none") o.pc_type = PcType::None;
      else if (v == "jacobi") o.pc_type = PcType::Jacobi;
      else if (v == "lu" || v == "redundant") o.pc_type = PcType::Lu;
      else if (v == "mg") o.pc_type = PcType::Mg;
      else throw ConfigError("unknown pc_type '" + v + "'");
    } else if (key == "ksp_rtol") {
      o.rtol = to_double(key, v);
    } else if (key == "ksp_atol") {
      o.atol = to_double(key, v);
    } else if (key == "ksp_max_it") {
      o.max_it = to_int(key, v);
    } else if (key == "mg_cycle") {
      if (v == "v") o.mg_cycle = CycleType::V;
      else if (v == "w") o.mg_cycle = CycleType::W;
      else throw ConfigError("unknown mg_cycle '" + v + "'");
    } else if (key == "mg_levels") {
      o.mg_levels = to_int(key, v);
    } else if (key == "mg_pre") {
      o.mg_pre = to_int(key, v);
    } else if (key == "mg_post") {
      o.mg_post = to_int(key, v);
    } else if (key == "mg_bind") {
      o.mg_bind = v;
    } else {
      throw ConfigError("unknown option '" + key + "'");
    }
  }
  if (!(o.rtol > 0) || !(o.atol > 0) || o.max_it < 1 || o.mg_levels < 1 || o.mg_pre < 0 || o.mg_post < 0)
    throw ConfigError("solver option out of range");
  return o;
}

KrylovConfig SolverOptions::krylov() const {
  KrylovConfig k;
  k.type = ksp_type;
  k.pc_type = pc_type;
  k.rtol = rtol;
  k.atol = atol;
  k.max_it = max_it;
  return k;
}

MgConfig SolverOptions::multigrid() const {
  MgConfig m;
  m.levels = mg_levels;
  m.cycle = mg_cycle;
  m.pre = mg_pre;
  m.post = mg_post;
  if (!mg_bind.empty()) m.binding = parse_binding(mg_bind, mg_levels);
  return m;
}

}  // namespace portsim
