#pragma once

// Robot description and constant-matrix assembly: link tree, computational
// point layout, body inertias, generalized stiffness/damping, and actuation
// maps for tendons and rigid joints.

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gvs/strain.hpp"

namespace gvs {

struct Material {
  double E = 0;        // Young's modulus, Pa
  double nu = 0;       // Poisson ratio
  double rho = 0;      // density, kg/m^3
  double damping = 0;  // material damping, Pa s

  double G() const { return E / (2 * (1 + nu)); }

  void validate() const {
    if (!(E > 0) || !(nu > -1 && nu <= 0.5) || !(rho > 0) || damping < 0)
      throw Error(ErrorCode::SchemaError, "Material: parameter out of range");
  }
};

/// Rod cross-section profile along the abscissa; linear taper, allowed to
/// reach zero at the tips.
struct RodGeometry {
  enum class Section { Circular, Rectangular };

  Section section = Section::Circular;
  double L = 0;
  double r_base = 0, r_tip = 0;                          // circular
  double w_base = 0, w_tip = 0, h_base = 0, h_tip = 0;   // rectangular: width (y), height (z)

  static RodGeometry circular(double L, double r_base, double r_tip) {
    RodGeometry g;
    g.section = Section::Circular;
    g.L = L;
    g.r_base = r_base;
    g.r_tip = r_tip;
    return g;
  }
  static RodGeometry rectangular(double L, double w, double h) {
    RodGeometry g;
    g.section = Section::Rectangular;
    g.L = L;
    g.w_base = g.w_tip = w;
    g.h_base = g.h_tip = h;
    return g;
  }

  double radius(double X) const { return r_base + (r_tip - r_base) * X / L; }
  double width(double X) const { return w_base + (w_tip - w_base) * X / L; }
  double height(double X) const { return h_base + (h_tip - h_base) * X / L; }

  double area(double X) const {
    if (section == Section::Circular) {
      const double r = radius(X);
      return M_PI * r * r;
    }
    return width(X) * height(X);
  }

  /// second moments (J_x torsion, J_y, J_z bending)
  Vec3 second_moments(double X) const {
    if (section == Section::Circular) {
      const double r = radius(X);
      const double Jb = M_PI * std::pow(r, 4) / 4;
      return Vec3(2 * Jb, Jb, Jb);
    }
    const double w = width(X), h = height(X);
    const double Jy = w * h * h * h / 12, Jz = h * w * w * w / 12;
    return Vec3(Jy + Jz, Jy, Jz);
  }

  /// sphere radius used by the contact model at a computational point
  double bounding_radius(double X) const {
    if (section == Section::Circular) return radius(X);
    return 0.5 * std::hypot(width(X), height(X));
  }
};

/// Distributed screw inertia of a rod section, per unit length.
inline Mat6 screw_inertia(const RodGeometry& geom, const Material& mat, double X) {
  const Vec3 J = geom.second_moments(X);
  const double A = geom.area(X);
  Vec6 d;
  d << J.x(), J.y(), J.z(), A, A, A;
  return mat.rho * d.asDiagonal();
}

/// 6x6 spatial inertia of a rigid body expressed at a frame offset by `com`
/// from the center of mass (inertia tensor given at the CM, same orientation).
inline Mat6 rigid_inertia(double mass, const Mat3& inertia_cm, const Vec3& com = Vec3::Zero()) {
  Mat6 M = Mat6::Zero();
  const Mat3 ct = tilde(com);
  M.topLeftCorner<3, 3>() = inertia_cm - mass * ct * ct;
  M.topRightCorner<3, 3>() = mass * ct;
  M.bottomLeftCorner<3, 3>() = -mass * ct;
  M.bottomRightCorner<3, 3>() = mass * Mat3::Identity();
  return M;
}

enum class QuadratureScheme { Gauss, Trapezoid };

struct QuadratureLayout {
  std::vector<double> X;  // n_p = n_gauss + 2 abscissae including both ends
  std::vector<double> w;
};

/// Computational point layout of a soft body: interior Gauss-Legendre nodes
/// with their weights and zero-weight endpoints, or equally spaced points
/// with trapezoidal weights.
inline QuadratureLayout quadrature_layout(double L, int n_gauss, QuadratureScheme scheme = QuadratureScheme::Gauss) {
  if (n_gauss < 1) throw Error(ErrorCode::SchemaError, "quadrature_layout: n_gauss must be >= 1");
  QuadratureLayout lay;
  const int n_p = n_gauss + 2;
  if (scheme == QuadratureScheme::Trapezoid) {
    const double h = L / (n_p - 1);
    for (int i = 0; i < n_p; ++i) {
      lay.X.push_back(i * h);
      lay.w.push_back((i == 0 || i == n_p - 1) ? h / 2 : h);
    }
    return lay;
  }
  // Golub-Welsch on the Jacobi matrix for Legendre nodes/weights on (-1, 1)
  MatX T = MatX::Zero(n_gauss, n_gauss);
  for (int i = 1; i < n_gauss; ++i) {
    const double b = i / std::sqrt(4.0 * i * i - 1.0);
    T(i, i - 1) = T(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatX> es(T);
  lay.X.push_back(0.0);
  lay.w.push_back(0.0);
  for (int i = 0; i < n_gauss; ++i) {
    lay.X.push_back(L * (es.eigenvalues()[i] + 1) / 2);
    lay.w.push_back(L * es.eigenvectors()(0, i) * es.eigenvectors()(0, i));
  }
  lay.X.push_back(L);
  lay.w.push_back(0.0);
  return lay;
}

/// One generalized-coordinate unit: a rigid joint or a soft rod.
struct Segment {
  enum class Kind { RigidJoint, SoftRod };

  Kind kind = Kind::RigidJoint;
  StrainBasis basis;
  ReferenceStrain ref = ReferenceStrain::zero();
  int dof_offset = 0;
  int ndof = 0;
  int link = -1;

  // soft rods only
  RodGeometry geom;
  Material mat;
  QuadratureLayout quad;
};

/// Precomputed collocation data of one Magnus step (basis and reference
/// strain are configuration independent).
struct EdgeColloc {
  double h = 0;
  MatX Phi1, Phi2;
  Vec6 xis1 = Vec6::Zero(), xis2 = Vec6::Zero();
};

inline MagnusStep magnus_step(const EdgeColloc& col, const VecX& q, const VecX& qd, const VecX& qdd) {
  MagnusStep st;
  st.h = col.h;
  st.Phi1 = col.Phi1;
  st.Phi2 = col.Phi2;
  st.xi1 = col.Phi1 * q + col.xis1;
  st.xi2 = col.Phi2 * q + col.xis2;
  const double cc = st.collocation_coeff();
  st.Om = 0.5 * st.h * (st.xi1 + st.xi2) + cc * (ad(st.xi1) * st.xi2);
  st.Z = 0.5 * st.h * (st.Phi1 + st.Phi2) + cc * (ad(st.xi1) * st.Phi2 - ad(st.xi2) * st.Phi1);
  const Vec6 xd1 = col.Phi1 * qd, xd2 = col.Phi2 * qd;
  st.Zd = cc * (ad(xd1) * st.Phi2 - ad(xd2) * st.Phi1);
  const Vec6 xdd1 = col.Phi1 * qdd, xdd2 = col.Phi2 * qdd;
  st.Zdd = cc * (ad(xdd1) * st.Phi2 - ad(xdd2) * st.Phi1);
  st.T = tangent_T(st.Om);
  return st;
}

enum class EdgeKind { Root, Fixed, Joint };

/// One computational point and the edge leading into it from its parent.
struct Point {
  int parent = -1;
  EdgeKind edge = EdgeKind::Root;
  RigidTransform g_fixed;  // Fixed edges
  int segment = -1;        // Joint edges
  EdgeColloc colloc;       // Joint edges
  int link = -1;
  double X = 0;            // abscissa on the owning body (rigid joints: 0 or 1)
  double weight = 0;       // quadrature weight (zero off rods and at rod ends)
  double radius = 0;       // contact sphere radius at the point
  bool on_rod = false;
  Mat6 inertia = Mat6::Zero();  // lumped spatial inertia (w_k * distributed, or rigid body)
};

struct Link {
  std::string name;
  int parent_link = -1;  // -1: world
  JointType joint_type = JointType::Fixed;
  int joint_segment = -1;
  int body_segment = -1;  // -1 for rigid bodies
  int joint_base_point = -1;
  int body_base_point = -1;  // X=1 of the joint (= rigid CM point or rod X=0)
  int tip_point = -1;
  double gravity_scale = 1.0;  // buoyancy: (1 - rho_w / rho_b)
};

struct CableRoute {
  std::function<Vec3(const RodGeometry&, double)> d;       // local routing (0, y, z)
  std::function<Vec3(const RodGeometry&, double)> dprime;  // abscissa derivative
  std::vector<int> segments;                               // rod segments the cable runs along

  static CableRoute radial(double fraction, double angle) {
    CableRoute c;
    c.d = [fraction, angle](const RodGeometry& g, double X) {
      return Vec3(0, fraction * g.radius(X) * std::sin(angle), fraction * g.radius(X) * std::cos(angle));
    };
    c.dprime = [fraction, angle](const RodGeometry& g, double X) {
      (void)X;
      const double drdX = (g.r_tip - g.r_base) / g.L;
      return Vec3(0, fraction * drdX * std::sin(angle), fraction * drdX * std::cos(angle));
    };
    return c;
  }
  static CableRoute helix(double R, double turns, double zsign) {
    CableRoute c;
    const double k = 2 * M_PI * turns;
    c.d = [R, k, zsign](const RodGeometry& g, double X) {
      return Vec3(0, R * std::sin(k * X / g.L), zsign * R * std::cos(k * X / g.L));
    };
    c.dprime = [R, k, zsign](const RodGeometry& g, double X) {
      return Vec3(0, R * k / g.L * std::cos(k * X / g.L), -zsign * R * k / g.L * std::sin(k * X / g.L));
    };
    return c;
  }
  static CableRoute centerline() {
    CableRoute c;
    c.d = [](const RodGeometry&, double) { return Vec3::Zero(); };
    c.dprime = [](const RodGeometry&, double) { return Vec3::Zero(); };
    return c;
  }
};

/// Twice-differentiable scalar trajectory for prescribed joint coordinates
/// and time-varying actuation inputs.
struct Trajectory1D {
  enum class Kind { Constant, Sine, SmoothRamp };
  Kind kind = Kind::Constant;
  double offset = 0, amplitude = 0, omega = 0, phase = 0;
  double t0 = 0, t1 = 0;  // ramp interval

  static Trajectory1D constant(double v) {
    Trajectory1D t;
    t.kind = Kind::Constant;
    t.offset = v;
    return t;
  }
  static Trajectory1D sine(double amplitude, double freq_hz, double phase = 0, double offset = 0) {
    Trajectory1D t;
    t.kind = Kind::Sine;
    t.amplitude = amplitude;
    t.omega = 2 * M_PI * freq_hz;
    t.phase = phase;
    t.offset = offset;
    return t;
  }
  /// quintic ramp from `offset` to `offset + amplitude` over [t0, t1]
  static Trajectory1D smooth_ramp(double amplitude, double t0, double t1, double offset = 0) {
    Trajectory1D t;
    t.kind = Kind::SmoothRamp;
    t.amplitude = amplitude;
    t.t0 = t0;
    t.t1 = t1;
    t.offset = offset;
    return t;
  }

  double value(double t) const {
    switch (kind) {
      case Kind::Constant: return offset;
      case Kind::Sine: return offset + amplitude * std::sin(omega * t + phase);
      case Kind::SmoothRamp: {
        const double s = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        return offset + amplitude * (10 - 15 * s + 6 * s * s) * s * s * s;
      }
    }
    return offset;
  }
  double rate(double t) const {
    switch (kind) {
      case Kind::Constant: return 0;
      case Kind::Sine: return amplitude * omega * std::cos(omega * t + phase);
      case Kind::SmoothRamp: {
        const double T = t1 - t0;
        const double s = (t - t0) / T;
        if (s <= 0 || s >= 1) return 0;
        return amplitude * (30 - 60 * s + 30 * s * s) * s * s / T;
      }
    }
    return 0;
  }
  double accel(double t) const {
    switch (kind) {
      case Kind::Constant: return 0;
      case Kind::Sine: return -amplitude * omega * omega * std::sin(omega * t + phase);
      case Kind::SmoothRamp: {
        const double T = t1 - t0;
        const double s = (t - t0) / T;
        if (s <= 0 || s >= 1) return 0;
        return amplitude * (60 - 180 * s + 120 * s * s) * s / (T * T);
      }
    }
    return 0;
  }
};

struct JointActuator {
  int segment = -1;  // actuated rigid-joint segment
};

/// Immutable robot model: tree of links resolved into a flat point/edge list,
/// generalized-matrix constants, and actuation maps.
struct Linkage {
  std::vector<Segment> segments;
  std::vector<Point> points;
  std::vector<Link> links;
  int ndof = 0;
  Vec3 gravity = Vec3(0, 0, -9.81);
  RigidTransform base;
  MatX K, D;

  std::vector<CableRoute> cables;
  std::vector<JointActuator> joint_actuators;

  int n_actuators() const {
    int n = static_cast<int>(cables.size());
    for (const auto& a : joint_actuators) n += segments[a.segment].ndof;
    return n;
  }

  /// gravity as a screw acceleration, scaled per link (buoyancy)
  Vec6 gravity_screw(int link) const {
    Vec6 G = Vec6::Zero();
    G.tail<3>() = gravity * links[link].gravity_scale;
    return G;
  }

  int link_index(const std::string& name) const {
    for (size_t i = 0; i < links.size(); ++i)
      if (links[i].name == name) return static_cast<int>(i);
    throw Error(ErrorCode::SchemaError, "Linkage: unknown link '" + name + "'");
  }

  /// computational point of link `li` nearest to abscissa X (must coincide)
  int resolve_point(int li, double X, double tol = 1e-9) const {
    const Link& lk = links[li];
    int best = -1;
    double dbest = 1e300;
    for (int p = lk.body_base_point; p <= lk.tip_point; ++p) {
      const double d = std::abs(points[p].X - X);
      if (d < dbest) {
        dbest = d;
        best = p;
      }
    }
    if (best < 0 || dbest > tol)
      throw Error(ErrorCode::SchemaError, "Linkage: no computational point at requested abscissa");
    return best;
  }
};

struct RigidBodySpec {
  double mass = 0;
  Mat3 inertia_cm = Mat3::Zero();
  Vec3 com = Vec3::Zero();  // CM position in the joint distal frame
};

struct SoftRodSpec {
  RodGeometry geom;
  Material mat;
  std::array<int, 6> basis_orders{};  // columns per component
  int n_gauss = 5;
  QuadratureScheme scheme = QuadratureScheme::Gauss;
};

/// Builds the flat point/edge layout from a link tree description.
class LinkageBuilder {
public:
  LinkageBuilder() {
    Point world;
    world.parent = -1;
    world.edge = EdgeKind::Root;
    model_.points.push_back(world);
  }

  void set_gravity(const Vec3& g) { model_.gravity = g; }
  void set_base(const RigidTransform& g) { model_.base = g; }

  /// parent_link = -1 attaches to the world frame.
  int add_link(const std::string& name, int parent_link, double attach_X, const RigidTransform& g_before,
               JointType joint, const std::variant<RigidBodySpec, SoftRodSpec>& body) {
    Link lk;
    lk.name = name;
    lk.parent_link = parent_link;
    lk.joint_type = joint;

    int parent_point = 0;
    if (parent_link >= 0) {
      const Link& pl = model_.links.at(parent_link);
      parent_point = pl.body_segment >= 0 ? model_.resolve_point(parent_link, attach_X) : pl.tip_point;
    }

    // X=0 point of the joint, attached through the fixed transform
    Point j0;
    j0.parent = parent_point;
    j0.edge = EdgeKind::Fixed;
    j0.g_fixed = g_before;
    j0.link = static_cast<int>(model_.links.size());
    lk.joint_base_point = push_point(j0);

    // joint segment over X in [0, 1]
    Segment js;
    js.kind = Segment::Kind::RigidJoint;
    js.basis = StrainBasis::rigid_joint(joint);
    js.ref = ReferenceStrain::zero();
    js.link = j0.link;
    lk.joint_segment = push_segment(js);

    Point j1;
    j1.parent = lk.joint_base_point;
    j1.edge = EdgeKind::Joint;
    j1.segment = lk.joint_segment;
    j1.colloc = make_colloc(model_.segments[lk.joint_segment], 0.0, 1.0);
    j1.link = j0.link;
    j1.X = 0.0;

    if (const auto* rb = std::get_if<RigidBodySpec>(&body)) {
      j1.inertia = rigid_inertia(rb->mass, rb->inertia_cm, rb->com);
      j1.X = 1.0;
      lk.body_base_point = lk.tip_point = push_point(j1);
      lk.body_segment = -1;
    } else {
      const auto& rs = std::get<SoftRodSpec>(body);
      rs.mat.validate();
      Segment bs;
      bs.kind = Segment::Kind::SoftRod;
      bs.basis = StrainBasis::legendre(rs.basis_orders, rs.geom.L);
      bs.ref = ReferenceStrain::straight_rod();
      bs.link = j0.link;
      bs.geom = rs.geom;
      bs.mat = rs.mat;
      bs.quad = quadrature_layout(rs.geom.L, rs.n_gauss, rs.scheme);
      const int bseg = push_segment(bs);
      lk.body_segment = bseg;

      // rod X=0 coincides with the joint's X=1 point
      j1.weight = model_.segments[bseg].quad.w[0];
      j1.radius = rs.geom.bounding_radius(0.0);
      j1.on_rod = true;
      j1.inertia = j1.weight * screw_inertia(rs.geom, rs.mat, 0.0);
      lk.body_base_point = push_point(j1);

      int prev = lk.body_base_point;
      const auto& quad = model_.segments[bseg].quad;
      for (size_t k = 1; k < quad.X.size(); ++k) {
        Point pt;
        pt.parent = prev;
        pt.edge = EdgeKind::Joint;
        pt.segment = bseg;
        pt.colloc = make_colloc(model_.segments[bseg], quad.X[k - 1], quad.X[k]);
        pt.link = j0.link;
        pt.X = quad.X[k];
        pt.weight = quad.w[k];
        pt.radius = rs.geom.bounding_radius(quad.X[k]);
        pt.on_rod = true;
        pt.inertia = pt.weight * screw_inertia(rs.geom, rs.mat, quad.X[k]);
        prev = push_point(pt);
      }
      lk.tip_point = prev;
    }

    model_.links.push_back(lk);
    return static_cast<int>(model_.links.size() - 1);
  }

  void add_cable(const CableRoute& c) { model_.cables.push_back(c); }
  void add_joint_actuator(int link) {
    model_.joint_actuators.push_back({model_.links.at(link).joint_segment});
  }

  Linkage build() {
    assign_dofs();
    assemble_stiffness_damping();
    return std::move(model_);
  }

private:
  Linkage model_;

  int push_point(const Point& p) {
    model_.points.push_back(p);
    return static_cast<int>(model_.points.size() - 1);
  }
  int push_segment(const Segment& s) {
    model_.segments.push_back(s);
    return static_cast<int>(model_.segments.size() - 1);
  }

  static EdgeColloc make_colloc(const Segment& seg, double Xa, double Xb) {
    EdgeColloc col;
    col.h = Xb - Xa;
    const double c1 = 0.5 - std::sqrt(3.0) / 6.0, c2 = 0.5 + std::sqrt(3.0) / 6.0;
    const double X1 = Xa + c1 * col.h, X2 = Xa + c2 * col.h;
    col.Phi1 = seg.basis.eval(X1);
    col.Phi2 = seg.basis.eval(X2);
    col.xis1 = seg.ref(X1);
    col.xis2 = seg.ref(X2);
    return col;
  }

  void assign_dofs() {
    int off = 0;
    for (auto& s : model_.segments) {
      s.dof_offset = off;
      s.ndof = s.basis.cols();
      off += s.ndof;
    }
    model_.ndof = off;
  }

  void assemble_stiffness_damping() {
    const int n = model_.ndof;
    model_.K = MatX::Zero(n, n);
    model_.D = MatX::Zero(n, n);
    for (const auto& s : model_.segments) {
      if (s.kind != Segment::Kind::SoftRod) continue;
      MatX Kb = MatX::Zero(s.ndof, s.ndof), Db = MatX::Zero(s.ndof, s.ndof);
      for (size_t k = 0; k < s.quad.X.size(); ++k) {
        const double X = s.quad.X[k], w = s.quad.w[k];
        if (w == 0) continue;
        const MatX Phi = s.basis.eval(X);
        const Vec3 J = s.geom.second_moments(X);
        const double A = s.geom.area(X);
        Vec6 sig, ups;
        sig << s.mat.G() * J.x(), s.mat.E * J.y(), s.mat.E * J.z(), s.mat.E * A, s.mat.G() * A, s.mat.G() * A;
        ups << J.x(), 3 * J.y(), 3 * J.z(), 3 * A, A, A;
        ups *= s.mat.damping;
        Kb.noalias() += w * Phi.transpose() * sig.asDiagonal() * Phi;
        Db.noalias() += w * Phi.transpose() * ups.asDiagonal() * Phi;
      }
      model_.K.block(s.dof_offset, s.dof_offset, s.ndof, s.ndof) = Kb;
      model_.D.block(s.dof_offset, s.dof_offset, s.ndof, s.ndof) = Db;
    }
  }
};

/// Generalized tendon force B u (one cable, returned over the full DoF
/// vector) and its configuration derivative. Tension pulls the rod toward
/// the cable; the wrench per point follows from the virtual work of the
/// cable-length variation.
struct CableForce {
  VecX Bu;
  MatX dBu_dq;
};

inline CableForce cable_actuation(const Linkage& m, const CableRoute& cable, const VecX& q, double tension,
                                  bool with_derivative) {
  CableForce out;
  out.Bu = VecX::Zero(m.ndof);
  if (with_derivative) out.dBu_dq = MatX::Zero(m.ndof, m.ndof);
  if (tension < 0) throw Error(ErrorCode::SchemaError, "cable_actuation: tension must be non-negative");
  for (int si : cable.segments) {
    const Segment& s = m.segments[si];
    const VecX qs = q.segment(s.dof_offset, s.ndof);
    for (size_t k = 0; k < s.quad.X.size(); ++k) {
      const double X = s.quad.X[k], w = s.quad.w[k];
      if (w == 0) continue;
      const MatX Phi = s.basis.eval(X);
      const Vec6 xi = Phi * qs + s.ref(X);
      const Vec3 d = cable.d(s.geom, X);
      const Vec3 dp = cable.dprime(s.geom, X);
      const Vec3 tangent = xi.head<3>().cross(d) + xi.tail<3>() + dp;
      const double nt = tangent.norm();
      if (nt < 1e-12) throw Error(ErrorCode::ZeroTangent, "cable_actuation: zero cable tangent");
      const Vec3 t = tangent / nt;
      Vec6 wrench;
      wrench.head<3>() = d.cross(t);
      wrench.tail<3>() = t;
      out.Bu.segment(s.dof_offset, s.ndof).noalias() -= (w * tension) * (Phi.transpose() * wrench);
      if (with_derivative) {
        const Mat3 dt = tilde(d), tt = tilde(t);
        const Mat3 tt2 = tt * tt;
        Mat6 ker;
        ker.topLeftCorner<3, 3>() = dt * tt2 * dt;
        ker.topRightCorner<3, 3>() = -dt * tt2;
        ker.bottomLeftCorner<3, 3>() = tt2 * dt;
        ker.bottomRightCorner<3, 3>() = -tt2;
        out.dBu_dq.block(s.dof_offset, s.dof_offset, s.ndof, s.ndof).noalias() -=
            (w * tension / nt) * (Phi.transpose() * ker * Phi);
      }
    }
  }
  return out;
}

/// Generalized actuation block of one rigid joint: B_k = Phi^T T^T Ad*_exp Phi,
/// plus the configuration derivative of B_k u for a given joint wrench input.
struct JointActuation {
  MatX B;       // ndof_joint x ndof_joint
  MatX dBu_dq;  // ndof_joint x ndof_joint
};

inline JointActuation rigid_joint_actuation(const Linkage& m, int segment, const VecX& q, const VecX& u,
                                            bool with_derivative) {
  const Segment& s = m.segments[segment];
  if (s.kind != Segment::Kind::RigidJoint)
    throw Error(ErrorCode::SchemaError, "rigid_joint_actuation: segment is not a rigid joint");
  const MatX& Phi = s.basis.joint_columns;
  const VecX qs = q.segment(s.dof_offset, s.ndof);
  const Vec6 xi = Phi * qs;
  const Mat6 T = tangent_T(xi);
  const Mat6 AdsExp = Ad_star(exp_se3(xi));
  JointActuation out;
  out.B = Phi.transpose() * T.transpose() * AdsExp * Phi;
  if (!with_derivative) return out;

  const Vec6 F0 = AdsExp * (Phi * u);
  const double th = screw_angle(xi);
  const CoeffFamilies c = coefficient_families(th);
  const Mat6 As = ad_star(xi);
  Mat6 powAs[5];
  powAs[0] = Mat6::Identity();
  for (int i = 1; i <= 4; ++i) powAs[i] = powAs[i - 1] * As;
  Eigen::RowVectorXd row;
  if (th > 1e-12)
    row = (xi.transpose().head<3>() * Phi.topRows<3>()) / th;
  else
    row = Eigen::RowVectorXd::Zero(Phi.cols());
  MatX dTtF = MatX::Zero(6, Phi.cols());
  for (int r = 1; r <= 4; ++r) {
    const double sgn = (r % 2 == 0) ? 1.0 : -1.0;
    dTtF.noalias() += sgn * c.fp[r - 1] * ((powAs[r] * F0) * row);
    for (int u2 = 1; u2 <= r; ++u2)
      dTtF.noalias() += sgn * c.f[r - 1] * (powAs[u2 - 1] * (ad_bar_star(powAs[r - u2] * F0) * Phi));
  }
  const MatX S = T * Phi;  // rigid joint: Z = Phi
  out.dBu_dq = Phi.transpose() * dTtF + S.transpose() * ad_bar_star(F0) * S;
  return out;
}

}  // namespace gvs
