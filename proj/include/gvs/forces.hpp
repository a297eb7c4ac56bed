#pragma once

// External force models and their configuration derivatives: point wrenches
// in local or global frame, penalty contact against a hollow cylinder, and
// resistive drag-lift hydrodynamics with buoyancy and added mass.

#include "gvs/propagate.hpp"

namespace gvs {

struct PointWrenchSpec {
  int point = -1;  // computational point index
  bool local = false;
  std::array<Trajectory1D, 6> wrench{};  // (moment; force) components over time

  Vec6 value(double t) const {
    Vec6 W;
    for (int i = 0; i < 6; ++i) W[i] = wrench[i].value(t);
    return W;
  }
};

/// Hertz-type penalty contact of per-point spheres against the inside of a
/// cylinder whose axis is the global z-axis.
struct CylinderContactSpec {
  double r_cyl = 0;
  double k_c = 0;
  double p = 1.5;
  std::vector<int> links;  // empty: every rod point
};

/// Resistive drag-lift matrix field and added fluid inertia; the matrices
/// are per unit length on a circular section of local radius r(X).
struct HydroSpec {
  double rho_w = 1000;
  double c_normal = 0, c_tangent = 0, c_rotational = 0;
  double added_mass_factor = 0;
  bool buoyancy = false;
  std::vector<int> links;  // empty: every soft link

  Mat6 drag_per_length(double r) const {
    Vec6 d;
    const double cr = c_rotational * r * r * r * r;
    d << cr, cr, cr, c_tangent * r, c_normal * r, c_normal * r;
    return rho_w * d.asDiagonal();
  }
  Mat6 added_inertia_per_length(double r) const {
    Vec6 d = Vec6::Zero();
    d[4] = d[5] = added_mass_factor * rho_w * M_PI * r * r;
    return Mat6(d.asDiagonal());
  }
};

struct SceneForces {
  std::vector<PointWrenchSpec> point_wrenches;
  std::optional<CylinderContactSpec> contact;
  std::optional<HydroSpec> hydro;
  std::vector<Mat6> drag_at_point;  // lumped w_k * D(X_k); sized on attach

  bool drag_active() const { return !drag_at_point.empty(); }
};

/// Applies buoyancy and added mass to the model (transparent to every
/// downstream pass) and precomputes the lumped drag matrices.
inline void attach_hydro(Linkage& m, SceneForces& f, const HydroSpec& spec) {
  f.hydro = spec;
  auto applies = [&](int link) {
    if (spec.links.empty()) return true;
    return std::find(spec.links.begin(), spec.links.end(), link) != spec.links.end();
  };
  if (spec.buoyancy) {
    double scale = 1.0;
    bool first = true;
    for (size_t li = 0; li < m.links.size(); ++li) {
      if (!applies(static_cast<int>(li))) continue;
      const Link& lk = m.links[li];
      const double rho_b = lk.body_segment >= 0 ? m.segments[lk.body_segment].mat.rho : spec.rho_w;
      const double s = 1.0 - spec.rho_w / rho_b;
      if (first) {
        scale = s;
        first = false;
      } else if (std::abs(s - scale) > 1e-12) {
        throw Error(ErrorCode::SchemaError, "attach_hydro: mixed buoyancy scales are not supported");
      }
      m.links[li].gravity_scale = s;
    }
    for (size_t li = 0; li < m.links.size(); ++li)
      if (applies(static_cast<int>(li)) && std::abs(m.links[li].gravity_scale - scale) > 1e-12)
        throw Error(ErrorCode::SchemaError, "attach_hydro: mixed buoyancy scales are not supported");
  }
  f.drag_at_point.assign(m.points.size(), Mat6::Zero());
  for (size_t ip = 0; ip < m.points.size(); ++ip) {
    const Point& pt = m.points[ip];
    if (!pt.on_rod || pt.weight == 0 || !applies(pt.link)) continue;
    f.drag_at_point[ip] = pt.weight * spec.drag_per_length(pt.radius);
    m.points[ip].inertia += pt.weight * spec.added_inertia_per_length(pt.radius);
  }
}

/// Drag-lift wrench D |v| eta and the velocity-shape matrix D* used by the
/// derivative recursions; D* is zeroed near v = 0 where the true derivative
/// is direction dependent.
struct DragEval {
  Vec6 F = Vec6::Zero();
  Mat6 Dstar = Mat6::Zero();
};

inline DragEval drag_lift(const Mat6& D, const Vec6& eta) {
  DragEval out;
  const double v = eta.tail<3>().norm();
  out.F.noalias() = D * (v * eta);
  if (v >= 1e-9) {
    Vec6 Iveta = Vec6::Zero();
    Iveta.tail<3>() = eta.tail<3>();
    out.Dstar.noalias() = D * ((eta * Iveta.transpose()) / v + v * Mat6::Identity());
  }
  return out;
}

/// Local wrench of one contact sphere and the derivative of the global-frame
/// force; zero (with zero derivative) when separated.
struct ContactEval {
  bool active = false;
  Vec6 W_local = Vec6::Zero();          // applied external wrench, local frame
  Mat3 kstar = Mat3::Zero();            // global force derivative kernel
  Vec3 u_perp = Vec3::Zero();
};

inline ContactEval contact_force(const CylinderContactSpec& spec, const RigidTransform& g, double r_k) {
  ContactEval out;
  const Vec3 r_g = g.p;
  Vec3 n_perp = r_g;
  n_perp.z() = 0;
  const double nn = n_perp.norm();
  const double delta = nn + r_k - spec.r_cyl;
  if (delta <= 0) return out;
  if (nn < 1e-9)
    throw Error(ErrorCode::DegenerateRadial, "contact_force: penetrating on the cylinder axis");
  out.active = true;
  out.u_perp = n_perp / nn;
  const double f = spec.k_c * std::pow(delta, spec.p);
  Vec6 Wg = Vec6::Zero();
  Wg.tail<3>() = f * out.u_perp;
  // transform with the rotational part of g only
  out.W_local.head<3>() = g.R.transpose() * Wg.head<3>();
  out.W_local.tail<3>() = g.R.transpose() * Wg.tail<3>();
  out.kstar = spec.k_c * spec.p * std::pow(delta, spec.p - 1) * (out.u_perp * out.u_perp.transpose()) +
              (f / nn) * (Mat3::Identity() - out.u_perp * out.u_perp.transpose());
  return out;
}

/// Derivative of a local wrench that is the rotation-only transform of a
/// fixed global wrench: dW/dq = -adbar*_W I_theta S^B.
inline MatX local_wrench_dq(const Vec6& W_local, const MatX& SB) {
  return -(ad_bar_star(W_local).leftCols<3>() * SB.topRows<3>());
}

}  // namespace gvs
