#include <catch2/catch_amalgamated.hpp>

#include "gvs/integrate.hpp"
#include "helpers/oracles.hpp"

using namespace gvs;
using gvs::test::Rng;

namespace {

/// 1-DoF axial oscillator: a rod with a single constant elongation coordinate
Linkage axial_oscillator(double damping) {
  LinkageBuilder b;
  b.set_gravity(Vec3::Zero());
  SoftRodSpec rod;
  rod.geom = RodGeometry::circular(0.3, 0.02, 0.02);
  rod.mat = {1e6, 0.45, 1200, damping};
  rod.basis_orders = {0, 0, 0, 1, 0, 0};
  rod.n_gauss = 4;
  b.add_link("rod", -1, 0, RigidTransform::Identity(), JointType::Fixed, rod);
  return b.build();
}

Linkage bending_rod(double damping, const Vec3& gravity) {
  LinkageBuilder b;
  b.set_gravity(gravity);
  SoftRodSpec rod;
  rod.geom = RodGeometry::circular(0.4, 0.02, 0.012);
  rod.mat = {1e6, 0.5, 1000, damping};
  rod.basis_orders = {2, 2, 2, 1, 1, 1};
  rod.n_gauss = 4;
  b.add_link("rod", -1, 0, RigidTransform::Identity(), JointType::Fixed, rod);
  return b.build();
}

struct ElasticaResult {
  double x_tip, z_tip;
};

/// planar heavy cantilever by shooting on the tip angle; independent
/// tip-to-base integration of the Kirchhoff equilibrium equations
ElasticaResult elastica_cantilever(double L, double EI, double w, int steps = 20000) {
  auto theta_at_base = [&](double thL, std::vector<double>* thetas = nullptr) {
    // integrate from s = L down to 0:  th' = m/EI, m' = w (L - s) cos th
    double th = thL, mm = 0.0;
    const double h = L / steps;
    if (thetas) thetas->assign(steps + 1, 0.0);
    if (thetas) (*thetas)[steps] = th;
    for (int i = steps; i > 0; --i) {
      const double s1 = i * h;
      auto f = [&](double s, double th_, double m_) {
        return std::make_pair(m_ / EI, w * (L - s) * std::cos(th_));
      };
      // RK4 with ds = -h
      auto [k1t, k1m] = f(s1, th, mm);
      auto [k2t, k2m] = f(s1 - h / 2, th - h / 2 * k1t, mm - h / 2 * k1m);
      auto [k3t, k3m] = f(s1 - h / 2, th - h / 2 * k2t, mm - h / 2 * k2m);
      auto [k4t, k4m] = f(s1 - h, th - h * k3t, mm - h * k3m);
      th -= h / 6 * (k1t + 2 * k2t + 2 * k3t + k4t);
      mm -= h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m);
      if (thetas) (*thetas)[i - 1] = th;
    }
    return std::make_pair(th, mm);
  };
  double lo = -M_PI / 2 + 1e-6, hi = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = (lo + hi) / 2;
    if (theta_at_base(mid).first > 0)
      hi = mid;
    else
      lo = mid;
  }
  std::vector<double> thetas;
  theta_at_base((lo + hi) / 2, &thetas);
  double x = 0, z = 0;
  const double h = L / steps;
  for (int i = 0; i < steps; ++i) {
    // trapezoid on the tangent
    x += h / 2 * (std::cos(thetas[i]) + std::cos(thetas[i + 1]));
    z += h / 2 * (std::sin(thetas[i]) + std::sin(thetas[i + 1]));
  }
  return {x, z};
}

}  // namespace

TEST_CASE("implicit euler basics") {
  Linkage m = axial_oscillator(2e4);
  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));

  // equilibrium start stays put
  VecX x0 = VecX::Zero(2);
  int iters = 0;
  const VecX x1 = sim.implicit_euler_step(0, x0, 1e-3, JacobianMode::Analytic, &iters);
  CHECK(x1.cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(iters <= 1);

  // linear system: one step equals the exact (I - h A)^{-1} x0 solution
  const GeneralizedSystem sys0 = ev.generalized_system(VecX::Zero(1), VecX::Zero(1), VecX::Zero(0));
  const double M = sys0.M(0, 0), K = m.K(0, 0), D = m.D(0, 0);
  VecX xr(2);
  xr << 0.01, -0.2;
  const double h = 2e-3;
  Eigen::Matrix2d A;
  A << 0, 1, -K / M, -D / M;
  const Eigen::Vector2d exact = (Eigen::Matrix2d::Identity() - h * A).inverse() * Eigen::Vector2d(xr[0], xr[1]);
  const VecX xe = sim.implicit_euler_step(0, xr, h, JacobianMode::Analytic);
  CHECK(std::abs(xe[0] - exact[0]) <= 1e-12);
  CHECK(std::abs(xe[1] - exact[1]) <= 1e-12);

  // unconditional stability: energy non-increasing for any step size
  for (double hh : {1e-3, 1e-2, 1e-1, 1.0}) {
    VecX x = xr;
    double Eprev = 0.5 * M * x[1] * x[1] + 0.5 * K * x[0] * x[0];
    Linkage mu = axial_oscillator(0.0);
    DynamicsEvaluator evu(mu);
    ConstrainedDynamics sysu(evu, c);
    Simulator simu(sysu, VecX::Zero(0));
    for (int i = 0; i < 5; ++i) {
      x = simu.implicit_euler_step(i * hh, x, hh, JacobianMode::Analytic);
      const double E = 0.5 * M * x[1] * x[1] + 0.5 * K * x[0] * x[0];
      CHECK(E <= Eprev * (1 + 1e-12));
      Eprev = E;
    }
  }
}

TEST_CASE("implicit euler jacobian modes agree") {
  Linkage m = bending_rod(1e4, Vec3(0, 0, -9.81));
  Constraints c;
  DynamicsEvaluator e1(m), e2(m);
  ConstrainedDynamics s1(e1, c), s2(e2, c);
  Simulator sim1(s1, VecX::Zero(0)), sim2(s2, VecX::Zero(0));
  VecX x1 = VecX::Zero(2 * m.ndof), x2 = x1;
  const double h = 2e-3;
  for (int i = 0; i < 50; ++i) {
    x1 = sim1.implicit_euler_step(i * h, x1, h, JacobianMode::Analytic);
    x2 = sim2.implicit_euler_step(i * h, x2, h, JacobianMode::FiniteDifference);
  }
  CHECK(gvs::test::rel_err(x1, x2) <= 1e-4);
}

TEST_CASE("newmark conserves the oscillator amplitude") {
  Linkage m = axial_oscillator(0.0);
  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));

  const GeneralizedSystem sys0 = ev.generalized_system(VecX::Zero(1), VecX::Zero(1), VecX::Zero(0));
  const double omega = std::sqrt(m.K(0, 0) / sys0.M(0, 0));
  const double period = 2 * M_PI / omega;

  NewmarkSettings nm;
  nm.h = period / 40;
  const double q0 = 0.02;
  VecX q(1), qd(1);
  q << q0;
  qd << 0;
  auto st = sim.newmark_init(0, q, qd);
  double t = 0;
  double amp = 0;
  const double T = 100 * period;
  while (t < T) {
    st = sim.newmark_step(t, st, nm, JacobianMode::Analytic);
    t += nm.h;
    if (t > T - period) amp = std::max(amp, std::abs(st.q[0]));
  }
  CHECK(std::abs(amp - q0) / q0 <= 1e-3);
}

TEST_CASE("newmark second-order convergence") {
  Linkage m = bending_rod(1e4, Vec3(0, 0, -9.81));
  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));

  auto run = [&](double h) {
    NewmarkSettings nm;
    nm.h = h;
    auto st = sim.newmark_init(0, VecX::Zero(m.ndof), VecX::Zero(m.ndof));
    const double T = 0.2;
    int steps = static_cast<int>(std::round(T / h));
    for (int i = 0; i < steps; ++i) st = sim.newmark_step(i * h, st, nm, JacobianMode::Analytic);
    return st.q;
  };
  const VecX ref = run(2.5e-4);
  const double e1 = (run(4e-3) - ref).norm();
  const double e2 = (run(2e-3) - ref).norm();
  CHECK(e1 / e2 >= 3.5);
}

TEST_CASE("rk4 reference integrator") {
  // constant-velocity drift of a free rigid body is integrated exactly
  LinkageBuilder b;
  b.set_gravity(Vec3::Zero());
  RigidBodySpec body;
  body.mass = 1.0;
  body.inertia_cm = Mat3::Identity() * 0.02;
  b.add_link("body", -1, 0, RigidTransform::Identity(), JointType::Free, body);
  Linkage m = b.build();
  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));
  VecX x = VecX::Zero(12);
  x[9] = 0.3;  // linear velocity coordinate
  const VecX x1 = sim.rk4_step(0, x, 0.01);
  CHECK(std::abs(x1[3] - 0.003) <= 1e-15);
  CHECK(std::abs(x1[9] - 0.3) <= 1e-15);

  // 4th order convergence on the axial oscillator
  Linkage mo = axial_oscillator(0.0);
  DynamicsEvaluator evo(mo);
  ConstrainedDynamics syso(evo, c);
  Simulator simo(syso, VecX::Zero(0));
  auto run = [&](double h, double T) {
    VecX xs(2);
    xs << 0.01, 0;
    int n = static_cast<int>(std::round(T / h));
    for (int i = 0; i < n; ++i) xs = simo.rk4_step(i * h, xs, h);
    return xs;
  };
  const GeneralizedSystem sys0 = evo.generalized_system(VecX::Zero(1), VecX::Zero(1), VecX::Zero(0));
  const double omega = std::sqrt(mo.K(0, 0) / sys0.M(0, 0));
  const double T = 2 * M_PI / omega;
  const VecX ref = run(T / 3200, T);
  const double e1 = (run(T / 100, T) - ref).norm();
  const double e2 = (run(T / 200, T) - ref).norm();
  CHECK(e1 / e2 >= 12.0);
  CHECK(e1 / e2 <= 20.0);
}

TEST_CASE("energy balance of conservative dynamics") {
  Linkage m = bending_rod(0.0, Vec3(0, 0, -9.81));
  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));

  auto energy = [&](const VecX& x) {
    const VecX q = x.head(m.ndof), qd = x.tail(m.ndof);
    ev.inverse_dynamics(q, qd, VecX::Zero(m.ndof));
    double E = 0.5 * q.dot(m.K * q);
    const auto& ws = ev.workspace();
    for (size_t ip = 0; ip < m.points.size(); ++ip) {
      E += 0.5 * ws.pts[ip].eta.dot(m.points[ip].inertia * ws.pts[ip].eta);
      const double mass = m.points[ip].inertia(3, 3);
      E -= mass * m.gravity.dot(ws.pts[ip].g.p);
    }
    return E;
  };

  VecX x = VecX::Zero(2 * m.ndof);
  const double E0 = energy(x);
  const double h = 2e-5;
  double Escale = 0;
  for (int i = 0; i < 5000; ++i) {
    x = sim.rk4_step(i * h, x, h);
    Escale = std::max(Escale, 0.5 * x.tail(m.ndof).dot(
                                  ev.generalized_system(x.head(m.ndof), x.tail(m.ndof), VecX::Zero(0)).M *
                                  x.tail(m.ndof)));
  }
  const double drift = std::abs(energy(x) - E0);
  CHECK(drift <= 1e-3 * std::max(1e-6, Escale));
}

TEST_CASE("statics: trivial and damped-settling equivalence") {
  // zero gravity, no actuation: q* = 0 immediately
  Linkage m0 = bending_rod(1e4, Vec3::Zero());
  Constraints c;
  DynamicsEvaluator ev0(m0);
  ConstrainedDynamics sys0(ev0, c);
  Simulator sim0(sys0, VecX::Zero(0));
  VecX q = VecX::Constant(m0.ndof, 1e-3);
  sim0.statics_solve(q, JacobianMode::Analytic);
  CHECK(q.cwiseAbs().maxCoeff() <= 1e-10);

  // gravity statics equals heavily damped dynamic settling
  Linkage m1 = bending_rod(5e4, Vec3(0, 0, -9.81));
  DynamicsEvaluator ev1(m1);
  ConstrainedDynamics sys1(ev1, c);
  Simulator sim1(sys1, VecX::Zero(0));
  VecX qs = VecX::Zero(m1.ndof);
  sim1.statics_solve(qs, JacobianMode::Analytic);

  VecX x = VecX::Zero(2 * m1.ndof);
  const double h = 5e-3;
  for (int i = 0; i < 600; ++i) x = sim1.implicit_euler_step(i * h, x, h, JacobianMode::Analytic);
  CHECK((x.head(m1.ndof) - qs).norm() / qs.norm() <= 1e-3);

  // analytic and finite-difference Jacobians land on the same solution
  VecX qf = VecX::Zero(m1.ndof);
  sim1.statics_solve(qf, JacobianMode::FiniteDifference);
  CHECK((qf - qs).norm() / qs.norm() <= 1e-6);
}

TEST_CASE("heavy cantilever matches the elastica") {
  // inextensible, unshearable planar rod bending about y under gravity
  const double L = 0.4, r = 0.01, E = 2e7, rho = 1000, g = 9.81;
  LinkageBuilder b;
  b.set_gravity(Vec3(0, 0, -g));
  SoftRodSpec rod;
  rod.geom = RodGeometry::circular(L, r, r);
  rod.mat = {E, 0.5, rho, 0.0};
  rod.basis_orders = {0, 6, 0, 0, 0, 0};
  rod.n_gauss = 8;
  b.add_link("rod", -1, 0, RigidTransform::Identity(), JointType::Fixed, rod);
  Linkage m = b.build();

  Constraints c;
  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));
  VecX q = VecX::Zero(m.ndof);
  sim.statics_solve(q, JacobianMode::Analytic);
  forward_pass(m, q, VecX::Zero(m.ndof), VecX::Zero(m.ndof), ev.workspace(), EvalLevel::Dynamics);
  const Vec3 tip = ev.workspace().pts[m.links[0].tip_point].g.p;

  const double EI = E * M_PI * r * r * r * r / 4;
  const double w = rho * g * M_PI * r * r;
  const ElasticaResult el = elastica_cantilever(L, EI, w);
  REQUIRE(std::abs(el.z_tip) > 0.02 * L);  // genuinely deflected
  CHECK(std::abs(tip.z() - el.z_tip) <= 0.01 * std::abs(el.z_tip));
  CHECK(std::abs(tip.x() - el.x_tip) <= 0.01 * L);
}

TEST_CASE("four-bar newmark keeps the loop closed") {
  // planar four-bar swinging under gravity, index-3 Newmark
  LinkageBuilder bld;
  bld.set_gravity(Vec3(0, -9.81, 0));
  RigidBodySpec bar;
  bar.mass = 0.5;
  bar.inertia_cm = Vec3(1e-4, 5e-3, 5e-3).asDiagonal();
  bar.com = Vec3(0.1, 0, 0);
  RigidTransform ta, tb;
  ta.p = Vec3(0.15, 0, 0);
  tb.p = Vec3(0.35, 0, 0);
  const int crank = bld.add_link("crank", -1, 0, RigidTransform::Identity(), JointType::RevoluteZ, bar);
  const int coupler = bld.add_link("coupler", crank, 1.0, ta, JointType::RevoluteZ, bar);
  const int rocker = bld.add_link("rocker", coupler, 1.0, tb, JointType::RevoluteZ, bar);
  Linkage m = bld.build();
  Constraints c;
  LoopJoint loop;
  loop.A.point = m.links[rocker].tip_point;
  loop.A.offset.p = Vec3(0.3, 0, 0);
  loop.B.point = 0;
  loop.B.offset.p = Vec3(0.4, 0, 0);
  loop.Phi_perp = LoopJoint::basis_planar_xy();
  c.loops.push_back(loop);

  DynamicsEvaluator ev(m);
  ConstrainedDynamics sys(ev, c);
  Simulator sim(sys, VecX::Zero(0));
  VecX q(3);
  q << 0.6, -0.4, -0.8;
  sim.statics_solve(q, JacobianMode::Analytic);
  // kick it with a consistent velocity
  forward_pass(m, q, VecX::Zero(3), VecX::Zero(3), ev.workspace(), EvalLevel::Dynamics);
  const LoopTerms lt = loop_terms(m, ev.workspace(), c.loops);
  Eigen::FullPivLU<MatX> lu(lt.A);
  VecX qd = lu.kernel().col(0).normalized() * 2.0;

  NewmarkSettings nm;
  nm.h = 2e-3;
  auto st = sim.newmark_init(0, q, qd);
  double maxe = 0;
  for (int i = 0; i < 200; ++i) {
    st = sim.newmark_step(i * nm.h, st, nm, JacobianMode::Analytic);
    forward_pass(m, st.q, st.qd, st.qdd, ev.workspace(), EvalLevel::Dynamics);
    maxe = std::max(maxe, loop_terms(m, ev.workspace(), c.loops).e.cwiseAbs().maxCoeff());
  }
  CHECK(maxe <= 1e-6);
}
