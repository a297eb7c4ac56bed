#include <catch2/catch_amalgamated.hpp>

#include "gvs/jacobians.hpp"
#include "helpers/naive.hpp"
#include "helpers/oracles.hpp"

using namespace gvs;
using gvs::test::Rng;

namespace {

Material soft_material() { return {1e6, 0.5, 1000.0, 1e4}; }

/// single tapered rod on a fixed base
Linkage single_rod(const std::array<int, 6>& orders, int n_gauss, const Vec3& gravity = Vec3(0, 0, -9.81)) {
  LinkageBuilder b;
  b.set_gravity(gravity);
  SoftRodSpec rod;
  rod.geom = RodGeometry::circular(0.5, 0.03, 0.015);
  rod.mat = soft_material();
  rod.basis_orders = orders;
  rod.n_gauss = n_gauss;
  b.add_link("rod", -1, 0.0, RigidTransform::Identity(), JointType::Fixed, rod);
  return b.build();
}

/// hybrid branched tree: revolute rigid link carrying two children
/// (a rod and another rigid link)
Linkage hybrid_tree() {
  LinkageBuilder b;
  RigidBodySpec arm;
  arm.mass = 1.2;
  arm.inertia_cm = Vec3(0.02, 0.015, 0.01).asDiagonal();
  arm.com = Vec3(0.1, 0, 0);
  RigidTransform after;
  after.p = Vec3(0.25, 0, 0);
  const int base = b.add_link("base", -1, 0.0, RigidTransform::Identity(), JointType::RevoluteZ, arm);

  SoftRodSpec rod;
  rod.geom = RodGeometry::circular(0.3, 0.015, 0.01);
  rod.mat = soft_material();
  rod.basis_orders = {2, 2, 2, 1, 1, 1};
  rod.n_gauss = 3;
  b.add_link("rod", base, 1.0, after, JointType::RevoluteY, rod);

  RigidBodySpec tipbody;
  tipbody.mass = 0.4;
  tipbody.inertia_cm = Vec3(0.004, 0.003, 0.002).asDiagonal();
  RigidTransform off;
  off.p = Vec3(0.0, 0.1, 0.0);
  b.add_link("tipbody", base, 1.0, off, JointType::Spherical, tipbody);
  return b.build();
}

}  // namespace

TEST_CASE("inverse dynamics trivial cases") {
  const Linkage m = single_rod({2, 2, 2, 1, 1, 1}, 3, Vec3::Zero());
  DynamicsEvaluator ev(m);
  const VecX z = VecX::Zero(m.ndof);
  CHECK(ev.inverse_dynamics(z, z, z).ID.cwiseAbs().maxCoeff() <= 1e-14);

  Rng rng(31);
  const VecX q = rng.vector(m.ndof, 0.4);
  CHECK(ev.inverse_dynamics(q, z, z).ID.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gravity projection matches direct quadrature") {
  const Linkage m = single_rod({3, 3, 3, 2, 2, 2}, 5);
  DynamicsEvaluator ev(m);
  Rng rng(32);
  const VecX q = rng.vector(m.ndof, 0.3);
  const VecX z = VecX::Zero(m.ndof);
  const auto& bw = ev.inverse_dynamics(q, z, z);
  const VecX F = -bw.ID;

  // direct projection: sum_k w_k J_k^T M_k Ad^-1 G
  VecX Fdir = VecX::Zero(m.ndof);
  Vec6 G = Vec6::Zero();
  G.tail<3>() = m.gravity;
  const auto& ws = ev.workspace();
  for (size_t ip = 0; ip < m.points.size(); ++ip) {
    const auto& ps = ws.pts[ip];
    Fdir.noalias() += ps.J.transpose() * (m.points[ip].inertia * apply_Ad_inv(ps.g, G));
  }
  CHECK(gvs::test::rel_err(F, Fdir) <= 1e-10);
}

TEST_CASE("mass matrix equals direct Jacobian projection") {
  const Linkage m = single_rod({3, 3, 3, 2, 2, 2}, 5);
  DynamicsEvaluator ev(m);
  Rng rng(33);
  for (int it = 0; it < 5; ++it) {
    const VecX q = rng.vector(m.ndof, 0.4), qd = rng.vector(m.ndof), qdd = rng.vector(m.ndof);
    const auto& bw = ev.inverse_dynamics(q, qd, qdd);
    MatX Mdir = MatX::Zero(m.ndof, m.ndof);
    const auto& ws = ev.workspace();
    for (size_t ip = 0; ip < m.points.size(); ++ip)
      Mdir.noalias() += ws.pts[ip].J.transpose() * m.points[ip].inertia * ws.pts[ip].J;
    CHECK(gvs::test::rel_err(bw.M, Mdir) <= 1e-10);
    CHECK((bw.M - bw.M.transpose()).cwiseAbs().maxCoeff() / bw.M.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("recursions equal naive double-summation expansion") {
  // small rod: n_p = 4, n_dof = 7
  const std::array<int, 6> orders{2, 1, 1, 1, 1, 1};
  const Linkage m = single_rod(orders, 2);
  DynamicsEvaluator ev(m);

  gvs::test::NaiveRod rod;
  rod.basis = StrainBasis::legendre(orders, 0.5);
  rod.geom = RodGeometry::circular(0.5, 0.03, 0.015);
  rod.mat = soft_material();
  rod.quad = quadrature_layout(0.5, 2);

  Rng rng(34);
  for (int it = 0; it < 3; ++it) {
    const VecX q = rng.vector(m.ndof, 0.5), qd = rng.vector(m.ndof), qdd = rng.vector(m.ndof);
    const auto naive = gvs::test::naive_rod_dynamics(rod, q, qd, qdd);
    const auto& bw = ev.inverse_dynamics(q, qd, qdd, 0, {}, EvalLevel::Full);
    const double scale = std::max(1.0, naive.dIDq.cwiseAbs().maxCoeff());
    CHECK((bw.ID - naive.ID).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, naive.ID.cwiseAbs().maxCoeff()));
    CHECK((bw.M - naive.M).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, naive.M.cwiseAbs().maxCoeff()));
    CHECK((bw.dIDq - naive.dIDq).cwiseAbs().maxCoeff() <= 1e-12 * scale);
    CHECK((bw.dIDqd - naive.dIDqd).cwiseAbs().maxCoeff() <= 1e-12 * scale);
  }
}

TEST_CASE("ID derivatives match finite differences") {
  for (const bool hybrid : {false, true}) {
    const Linkage m = hybrid ? hybrid_tree() : single_rod({3, 3, 3, 2, 2, 2}, 5);
    DynamicsEvaluator ev(m), ev2(m);
    Rng rng(35);
    const VecX q = rng.vector(m.ndof, 0.4), qd = rng.vector(m.ndof), qdd = rng.vector(m.ndof);
    const auto& bw = ev.inverse_dynamics(q, qd, qdd, 0, {}, EvalLevel::Full);
    const MatX dIDq = bw.dIDq, dIDqd = bw.dIDqd, M = bw.M;

    const MatX fdq = gvs::test::fd_jacobian(
        [&](const VecX& x) { return VecX(ev2.inverse_dynamics(x, qd, qdd).ID); }, q);
    const MatX fdqd = gvs::test::fd_jacobian(
        [&](const VecX& x) { return VecX(ev2.inverse_dynamics(q, x, qdd).ID); }, qd);
    const MatX fdqdd = gvs::test::fd_jacobian(
        [&](const VecX& x) { return VecX(ev2.inverse_dynamics(q, qd, x).ID); }, qdd);
    CHECK(gvs::test::rel_err(dIDq, fdq) <= 1e-5);
    CHECK(gvs::test::rel_err(dIDqd, fdqd) <= 1e-5);
    CHECK(gvs::test::rel_err(M, fdqdd) <= 1e-5);
  }
}

TEST_CASE("ID is affine in qdd") {
  const Linkage m = single_rod({2, 2, 2, 1, 1, 1}, 3);
  DynamicsEvaluator ev(m);
  Rng rng(36);
  const VecX q = rng.vector(m.ndof, 0.4), qd = rng.vector(m.ndof);
  const VecX a = rng.vector(m.ndof), b = rng.vector(m.ndof);
  const VecX id0 = ev.inverse_dynamics(q, qd, a).ID;
  const VecX id1 = ev.inverse_dynamics(q, qd, b).ID;
  const VecX idm = ev.inverse_dynamics(q, qd, VecX(0.5 * (a + b))).ID;
  CHECK((0.5 * (id0 + id1) - idm).cwiseAbs().maxCoeff() <=
        1e-12 * std::max(1.0, idm.cwiseAbs().maxCoeff()));
}

TEST_CASE("ID matches Lagrangian finite-difference oracle") {
  const Linkage m = single_rod({2, 2, 2, 1, 1, 1}, 4, Vec3::Zero());
  DynamicsEvaluator ev(m), evT(m);
  Rng rng(37);
  const VecX q = rng.vector(m.ndof, 0.3), qd = rng.vector(m.ndof, 0.5), qdd = rng.vector(m.ndof, 0.5);

  auto kinetic = [&](const VecX& qx, const VecX& qdx) {
    evT.inverse_dynamics(qx, qdx, VecX::Zero(m.ndof));
    double T = 0;
    const auto& ws = evT.workspace();
    for (size_t ip = 0; ip < m.points.size(); ++ip)
      T += 0.5 * ws.pts[ip].eta.dot(m.points[ip].inertia * ws.pts[ip].eta);
    return T;
  };
  const double e = 1e-6;
  VecX p0(m.ndof);  // dT/dqd
  auto momentum = [&](const VecX& qx, const VecX& qdx) {
    VecX p(m.ndof);
    for (int i = 0; i < m.ndof; ++i) {
      VecX qp = qdx;
      qp[i] += e;
      VecX qm = qdx;
      qm[i] -= e;
      p[i] = (kinetic(qx, qp) - kinetic(qx, qm)) / (2 * e);
    }
    return p;
  };
  // d/dt dT/dqd = (d p / dq) qd + (d p / dqd) qdd  via central differences
  VecX dpdt = VecX::Zero(m.ndof);
  const double eo = 1e-5;
  for (int i = 0; i < m.ndof; ++i) {
    VecX qp = q, qm = q;
    qp[i] += eo;
    qm[i] -= eo;
    dpdt += (momentum(qp, qd) - momentum(qm, qd)) / (2 * eo) * qd[i];
    VecX qdp = qd, qdm = qd;
    qdp[i] += eo;
    qdm[i] -= eo;
    dpdt += (momentum(q, qdp) - momentum(q, qdm)) / (2 * eo) * qdd[i];
  }
  VecX dTdq(m.ndof);
  for (int i = 0; i < m.ndof; ++i) {
    VecX qp = q;
    qp[i] += e;
    VecX qm = q;
    qm[i] -= e;
    dTdq[i] = (kinetic(qp, qd) - kinetic(qm, qd)) / (2 * e);
  }
  const VecX id = ev.inverse_dynamics(q, qd, qdd).ID;
  CHECK(gvs::test::rel_err(id, VecX(dpdt - dTdq)) <= 1e-4);
}

TEST_CASE("free fall of a rigid body on a free joint") {
  LinkageBuilder b;
  RigidBodySpec body;
  body.mass = 2.0;
  body.inertia_cm = Vec3(0.1, 0.12, 0.14).asDiagonal();
  b.add_link("body", -1, 0.0, RigidTransform::Identity(), JointType::Free, body);
  const Linkage m = b.build();
  DynamicsEvaluator ev(m);
  const VecX z = VecX::Zero(6);
  Vec6 G = Vec6::Zero();
  G.tail<3>() = m.gravity;
  CHECK(ev.inverse_dynamics(z, z, G).ID.cwiseAbs().maxCoeff() <= 1e-12);

  // bottom-right block of the spatial inertia is m I3
  const MatX M = ev.inverse_dynamics(z, z, z).M;
  CHECK((M.bottomRightCorner(3, 3) - 2.0 * Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);

  // forward dynamics reproduces the gravity acceleration
  const VecX qdd = ev.forward_dynamics(z, z, VecX::Zero(0));
  CHECK((qdd - G).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("forward dynamics round trip") {
  const Linkage m = single_rod({3, 3, 3, 2, 2, 2}, 5);
  DynamicsEvaluator ev(m);
  Rng rng(38);
  const VecX q = rng.vector(m.ndof, 0.3), qd = rng.vector(m.ndof, 0.5);
  const VecX u = VecX::Zero(0);
  const GeneralizedSystem sys = ev.generalized_system(q, qd, u);
  const VecX qdd = ev.forward_dynamics(q, qd, u);
  const VecX id = ev.inverse_dynamics(q, qd, qdd).ID;
  CHECK(gvs::test::rel_err(id, sys.tau) <= 1e-9);
}

TEST_CASE("rigid chain reduces to product of exponentials") {
  LinkageBuilder b;
  RigidBodySpec body;
  body.mass = 1.0;
  body.inertia_cm = Mat3::Identity() * 0.01;
  RigidTransform g1;
  g1.p = Vec3(0.3, 0, 0);
  const int l1 = b.add_link("l1", -1, 0.0, RigidTransform::Identity(), JointType::RevoluteZ, body);
  const int l2 = b.add_link("l2", l1, 1.0, g1, JointType::RevoluteY, body);
  b.add_link("l3", l2, 1.0, g1, JointType::RevoluteX, body);
  const Linkage m = b.build();
  DynamicsEvaluator ev(m);
  Rng rng(39);
  const VecX q = rng.vector(3, 0.8);
  ev.inverse_dynamics(q, VecX::Zero(3), VecX::Zero(3));

  Vec6 zhat = Vec6::Unit(2), yhat = Vec6::Unit(1), xhat = Vec6::Unit(0);
  const RigidTransform direct = exp_se3(Vec6(zhat * q[0])) * g1 * exp_se3(Vec6(yhat * q[1])) * g1 *
                                exp_se3(Vec6(xhat * q[2]));
  const RigidTransform tip = ev.workspace().pts[m.links[2].tip_point].g;
  CHECK((tip.matrix() - direct.matrix()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("carrier identities and branch padding") {
  const Linkage m = hybrid_tree();
  DynamicsEvaluator ev(m);
  Rng rng(40);
  for (int it = 0; it < 5; ++it) {
    const VecX q = rng.vector(m.ndof, 0.4), qd = rng.vector(m.ndof), qdd = rng.vector(m.ndof);
    ev.inverse_dynamics(q, qd, qdd, 0, {}, EvalLevel::Full);
    const auto& ws = ev.workspace();
    for (size_t ip = 0; ip < m.points.size(); ++ip) {
      CHECK((ws.pts[ip].SB - ws.pts[ip].J).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((ws.pts[ip].YB - ws.pts[ip].RB - ws.pts[ip].Jd).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }

  // rod DoF columns vanish at the sibling rigid body's points
  const Segment& rodseg = m.segments[m.links[1].body_segment];
  const int sib = m.links[2].tip_point;
  CHECK(ev.workspace().pts[sib].J.middleCols(rodseg.dof_offset, rodseg.ndof).isZero(0.0));

  // velocity continuity across the fixed transform into the rod link
  const int rod_j0 = m.links[1].joint_base_point;
  const auto& ws = ev.workspace();
  const Vec6 parent_eta = ws.pts[m.points[rod_j0].parent].eta;
  CHECK((ws.pts[rod_j0].eta - apply_Ad_inv(m.points[rod_j0].g_fixed, parent_eta)).cwiseAbs().maxCoeff() <=
        1e-12);
}

TEST_CASE("jacobians module: dtau and dFD") {
  const Linkage m = single_rod({3, 3, 3, 2, 2, 2}, 5);
  DynamicsEvaluator ev(m), ev2(m);
  Rng rng(41);
  const VecX q = rng.vector(m.ndof, 0.3), qd = rng.vector(m.ndof, 0.5);
  const VecX u = VecX::Zero(0);

  const DynamicsJacobians J = dynamics_jacobians(ev, q, qd, u);
  CHECK((J.dtau_dq + m.K).cwiseAbs().maxCoeff() <= 1e-14);  // u = 0
  CHECK((J.dtau_dqd + m.D).cwiseAbs().maxCoeff() <= 1e-14);

  const MatX fdq = gvs::test::fd_jacobian(
      [&](const VecX& x) { return ev2.forward_dynamics(x, qd, u); }, q);
  const MatX fdqd = gvs::test::fd_jacobian(
      [&](const VecX& x) { return ev2.forward_dynamics(q, x, u); }, qd);
  CHECK(gvs::test::rel_err(J.dFD_dq, fdq) <= 1e-5);
  CHECK(gvs::test::rel_err(J.dFD_dqd, fdqd) <= 1e-5);
}

TEST_CASE("mass matrix is independent of rates") {
  const Linkage m = single_rod({2, 2, 2, 1, 1, 1}, 3);
  DynamicsEvaluator ev(m);
  Rng rng(42);
  const VecX q = rng.vector(m.ndof, 0.4);
  const MatX M1 = ev.inverse_dynamics(q, rng.vector(m.ndof), rng.vector(m.ndof)).M;
  const MatX M2 = ev.inverse_dynamics(q, rng.vector(m.ndof), rng.vector(m.ndof)).M;
  CHECK((M1 - M2).cwiseAbs().maxCoeff() <= 1e-14 * M1.cwiseAbs().maxCoeff());
}
