#pragma once

// Strain parameterization of one Cosserat rod or rigid joint: polynomial
// basis evaluation, the fourth-order Magnus/collocation step, and the joint
// motion subspace S with its derivative contractions.

#include <array>
#include <functional>

#include "gvs/screws.hpp"
#include "gvs/types.hpp"

namespace gvs {

enum class JointType { Fixed, RevoluteX, RevoluteY, RevoluteZ, PrismaticX, PrismaticY, PrismaticZ, Spherical, Free };

/// Strain basis Phi(X). Rods use shifted Legendre polynomials per screw
/// component (component-major columns, degree ascending, locked components
/// contribute none). Rigid joints use a fixed column set on X in [0,1].
struct StrainBasis {
  enum class Kind { LegendrePoly, RigidJoint };

  Kind kind = Kind::LegendrePoly;
  std::array<int, 6> dof_per_component{};  // columns per component; 0 = locked
  double L = 1.0;
  MatX joint_columns;  // 6 x n, rigid-joint kind only

  static StrainBasis legendre(const std::array<int, 6>& dof_per_component, double L) {
    StrainBasis b;
    b.kind = Kind::LegendrePoly;
    b.dof_per_component = dof_per_component;
    b.L = L;
    return b;
  }

  static StrainBasis rigid_joint(JointType type) {
    StrainBasis b;
    b.kind = Kind::RigidJoint;
    b.L = 1.0;
    auto cols = [&](std::initializer_list<int> idx) {
      b.joint_columns = MatX::Zero(6, static_cast<Eigen::Index>(idx.size()));
      int c = 0;
      for (int i : idx) b.joint_columns(i, c++) = 1.0;
    };
    switch (type) {
      case JointType::Fixed: cols({}); break;
      case JointType::RevoluteX: cols({0}); break;
      case JointType::RevoluteY: cols({1}); break;
      case JointType::RevoluteZ: cols({2}); break;
      case JointType::PrismaticX: cols({3}); break;
      case JointType::PrismaticY: cols({4}); break;
      case JointType::PrismaticZ: cols({5}); break;
      case JointType::Spherical: cols({0, 1, 2}); break;
      case JointType::Free: cols({0, 1, 2, 3, 4, 5}); break;
    }
    return b;
  }

  int cols() const {
    if (kind == Kind::RigidJoint) return static_cast<int>(joint_columns.cols());
    int n = 0;
    for (int c : dof_per_component) n += c;
    return n;
  }

  /// Phi(X), 6 x n.
  MatX eval(double X) const {
    if (kind == Kind::RigidJoint) return joint_columns;
    if (X < -1e-12 || X > L * (1 + 1e-12))
      throw Error(ErrorCode::DomainError, "StrainBasis::eval: abscissa outside [0, L]");
    MatX Phi = MatX::Zero(6, cols());
    const double x = 2.0 * X / L - 1.0;  // shifted Legendre argument
    int c = 0;
    for (int comp = 0; comp < 6; ++comp) {
      double pkm1 = 1.0, pk = x;
      for (int k = 0; k < dof_per_component[comp]; ++k) {
        double val;
        if (k == 0) {
          val = 1.0;
        } else if (k == 1) {
          val = x;
        } else {
          const int m = k - 1;
          const double next = ((2 * m + 1) * x * pk - m * pkm1) / (m + 1);
          pkm1 = pk;
          pk = next;
          val = pk;
        }
        Phi(comp, c++) = val;
      }
    }
    return Phi;
  }
};

/// Reference strain xi*(X). Rods default to a straight, unstretched rod.
struct ReferenceStrain {
  std::function<Vec6(double)> fn;

  static ReferenceStrain straight_rod() {
    ReferenceStrain r;
    r.fn = [](double) { return Vec6(Vec6::Unit(3)); };
    return r;
  }
  static ReferenceStrain zero() {
    ReferenceStrain r;
    r.fn = [](double) { return Vec6(Vec6::Zero()); };
    return r;
  }
  Vec6 operator()(double X) const { return fn(X); }
};

inline Vec6 strain_at(const StrainBasis& basis, const ReferenceStrain& ref, const VecX& q, double X) {
  if (q.size() != basis.cols())
    throw Error(ErrorCode::DimensionMismatch, "strain_at: coordinate dimension mismatch");
  return basis.eval(X) * q + ref(X);
}

inline Vec6 strain_rate_at(const StrainBasis& basis, const VecX& qd, double X) {
  if (qd.size() != basis.cols())
    throw Error(ErrorCode::DimensionMismatch, "strain_rate_at: coordinate dimension mismatch");
  return basis.eval(X) * qd;
}

/// One fourth-order Zannah/Magnus step over a sub-interval of the rod, or the
/// whole [0,1] domain of a rigid joint. Holds the equivalent joint twist
/// Omega, the coordinate maps Z / Zdot / Zddot, and the collocation data the
/// derivative contractions need.
struct MagnusStep {
  double h = 0;
  Vec6 Om = Vec6::Zero();
  MatX Phi1, Phi2;  // basis at the two collocation points
  Vec6 xi1 = Vec6::Zero(), xi2 = Vec6::Zero();
  MatX Z, Zd, Zdd;
  Mat6 T = Mat6::Identity();

  int cols() const { return static_cast<int>(Z.cols()); }
  double collocation_coeff() const { return std::sqrt(3.0) * h * h / 12.0; }
};

inline MagnusStep magnus_step(const StrainBasis& basis, const ReferenceStrain& ref, const VecX& q,
                              const VecX& qd, const VecX& qdd, double Xa, double Xb) {
  if (!(Xb > Xa)) throw Error(ErrorCode::DomainError, "magnus_step: requires Xa < Xb");
  MagnusStep st;
  st.h = Xb - Xa;
  const double c1 = 0.5 - std::sqrt(3.0) / 6.0, c2 = 0.5 + std::sqrt(3.0) / 6.0;
  const double X1 = Xa + c1 * st.h, X2 = Xa + c2 * st.h;
  st.Phi1 = basis.eval(X1);
  st.Phi2 = basis.eval(X2);
  st.xi1 = st.Phi1 * q + ref(X1);
  st.xi2 = st.Phi2 * q + ref(X2);
  const double cc = st.collocation_coeff();
  st.Om = 0.5 * st.h * (st.xi1 + st.xi2) + cc * (ad(st.xi1) * st.xi2);
  st.Z = 0.5 * st.h * (st.Phi1 + st.Phi2) + cc * (ad(st.xi1) * st.Phi2 - ad(st.xi2) * st.Phi1);
  const Vec6 xd1 = st.Phi1 * qd, xd2 = st.Phi2 * qd;
  st.Zd = cc * (ad(xd1) * st.Phi2 - ad(xd2) * st.Phi1);
  const Vec6 xdd1 = st.Phi1 * qdd, xdd2 = st.Phi2 * qdd;
  st.Zdd = cc * (ad(xdd1) * st.Phi2 - ad(xdd2) * st.Phi1);
  st.T = tangent_T(st.Om);
  return st;
}

struct JointSubspace {
  MatX S, Sd;
};

/// S = T(Om) Z and its time derivative.
inline JointSubspace joint_subspace(const MagnusStep& st, const VecX& qd) {
  JointSubspace js;
  js.S = st.T * st.Z;
  js.Sd = tangent_Tdot(st.Om, st.Z * qd) * st.Z + st.T * st.Zd;
  return js;
}

namespace detail {

// dT/dq contracted with a fixed screw v: (dT/dq . v) in R^{6 x n}
inline MatX dT_contract(const MagnusStep& st, const Vec6& v) {
  const double th = screw_angle(st.Om);
  const CoeffFamilies c = coefficient_families(th);
  const Mat6 A = ad(st.Om);
  Mat6 powA[5];
  powA[0] = Mat6::Identity();
  for (int i = 1; i <= 4; ++i) powA[i] = powA[i - 1] * A;
  Eigen::RowVectorXd row;
  if (th > 1e-12)
    row = (st.Om.transpose().head<3>() * st.Z.topRows<3>()) / th;
  else
    row = Eigen::RowVectorXd::Zero(st.Z.cols());
  MatX out = MatX::Zero(6, st.Z.cols());
  for (int r = 1; r <= 4; ++r) {
    out.noalias() += c.fp[r - 1] * ((powA[r] * v) * row);
    for (int u = 1; u <= r; ++u) out.noalias() -= c.f[r - 1] * (powA[u - 1] * (ad(powA[r - u] * v) * st.Z));
  }
  return out;
}

// d(Z w)/dq for a fixed vector w (the Zdot pattern over the collocation pair)
inline MatX dZ_contract(const MagnusStep& st, const VecX& w) {
  const double cc = st.collocation_coeff();
  const Vec6 a1 = st.Phi1 * w, a2 = st.Phi2 * w;
  return cc * (ad(a1) * st.Phi2 - ad(a2) * st.Phi1);
}

}  // namespace detail

/// d(S v)/dq for a fixed coordinate vector v (used with v = qd and v = qdd).
inline MatX dS_dq_contract(const MagnusStep& st, const VecX& v) {
  return detail::dT_contract(st, st.Z * v) + st.T * detail::dZ_contract(st, v);
}

/// d(S^T F)/dq for a fixed wrench F; result is n x n.
inline MatX dST_dq_contract(const MagnusStep& st, const Vec6& F) {
  const double th = screw_angle(st.Om);
  const CoeffFamilies c = coefficient_families(th);
  const Mat6 As = ad_star(st.Om);
  Mat6 powAs[5];
  powAs[0] = Mat6::Identity();
  for (int i = 1; i <= 4; ++i) powAs[i] = powAs[i - 1] * As;
  const Vec6 G = st.T.transpose() * F;
  const double cc = st.collocation_coeff();
  const Mat6 abG = ad_bar_star(G);
  MatX out = st.Phi1.transpose() * (cc * (abG * st.Phi2)) - st.Phi2.transpose() * (cc * (abG * st.Phi1));
  Eigen::RowVectorXd row;
  if (th > 1e-12)
    row = (st.Om.transpose().head<3>() * st.Z.topRows<3>()) / th;
  else
    row = Eigen::RowVectorXd::Zero(st.Z.cols());
  const MatX Zt = st.Z.transpose();
  for (int r = 1; r <= 4; ++r) {
    const double sgn = (r % 2 == 0) ? 1.0 : -1.0;
    out.noalias() += sgn * c.fp[r - 1] * ((Zt * (powAs[r] * F)) * row);
    for (int u = 1; u <= r; ++u)
      out.noalias() += sgn * c.f[r - 1] * (Zt * (powAs[u - 1] * (ad_bar_star(powAs[r - u] * F) * st.Z)));
  }
  return out;
}

/// d(Sdot qd)/dq, the full expansion including the f'' family.
inline MatX dSd_dq_contract(const MagnusStep& st, const VecX& qd) {
  const double th = screw_angle(st.Om);
  const CoeffFamilies c = coefficient_families(th);
  const Vec6 Od = st.Z * qd;
  const double thd = th > 1e-12 ? st.Om.head<3>().dot(Od.head<3>()) / th : 0.0;
  const Mat6 A = ad(st.Om);
  const Mat6 B = ad(Od);
  Mat6 powA[5];
  powA[0] = Mat6::Identity();
  for (int i = 1; i <= 4; ++i) powA[i] = powA[i - 1] * A;
  const MatX Zd = st.Zd;
  const Eigen::Index n = st.Z.cols();
  Eigen::RowVectorXd rowZ, row2;
  if (th > 1e-12) {
    rowZ = (st.Om.transpose().head<3>() * st.Z.topRows<3>()) / th;
    row2 = ((Od.transpose().head<3>() * st.Z.topRows<3>()) - thd * (st.Om.transpose().head<3>() * st.Z.topRows<3>()) / th +
            (st.Om.transpose().head<3>() * Zd.topRows<3>())) /
           th;
  } else {
    rowZ = Eigen::RowVectorXd::Zero(n);
    row2 = Eigen::RowVectorXd::Zero(n);
  }
  MatX out = MatX::Zero(6, n);
  for (int r = 1; r <= 4; ++r) {
    Mat6 dadr = Mat6::Zero();
    for (int u = 1; u <= r; ++u) dadr.noalias() += powA[u - 1] * B * powA[r - u];
    out.noalias() += ((c.fpp[r - 1] * thd * powA[r] + c.fp[r - 1] * dadr) * Od) * rowZ;
    out.noalias() += c.fp[r - 1] * ((powA[r] * Od) * row2);
    for (int u = 1; u <= r; ++u) {
      out.noalias() -= (c.fp[r - 1] * thd) * (powA[u - 1] * (ad(powA[r - u] * Od) * st.Z));
      for (int p = 1; p <= u - 1; ++p)
        out.noalias() -= c.f[r - 1] * (powA[p - 1] * (ad(powA[u - p - 1] * (B * (powA[r - u] * Od))) * st.Z));
      MatX t2 = MatX::Zero(6, n);
      for (int p = 1; p <= r - u; ++p) t2.noalias() += powA[p - 1] * (ad(powA[r - u - p] * Od) * st.Z);
      out.noalias() -= c.f[r - 1] * (powA[u - 1] * (B * t2));
      out.noalias() -= c.f[r - 1] * (powA[u - 1] * (ad(powA[r - u] * Od) * Zd));
    }
  }
  out.noalias() += detail::dT_contract(st, Zd * qd);
  out.noalias() += tangent_Tdot(st.Om, Od) * Zd;
  return out;
}

}  // namespace gvs
