#pragma once

// Analytical partial derivatives of ID and FD with respect to q, qd, qdd,
// and of the internal force tau with respect to q, qd.

#include "gvs/dynamics.hpp"

namespace gvs {

struct DynamicsJacobians {
  MatX dID_dq, dID_dqd, dID_dqdd;  // dID_dqdd is the generalized mass matrix
  MatX dtau_dq, dtau_dqd;
  MatX dFD_dq, dFD_dqd;
  VecX qdd;  // the accelerations the ID partials were evaluated at
};

struct InternalForceJacobians {
  MatX dtau_dq, dtau_dqd;
};

/// dtau/dq = d(Bu)/dq - K and dtau/dqd = -D.
inline InternalForceJacobians dtau(const Linkage& m, const VecX& q, const VecX& u) {
  InternalForceJacobians out;
  const ActuationEval act = actuation(m, q, u, true);
  out.dtau_dq = act.dBu_dq - m.K;
  out.dtau_dqd = -m.D;
  return out;
}

/// Full Jacobian set with the ID partials evaluated at the given qdd
/// (treated as an independent variable).
inline DynamicsJacobians dynamics_jacobians_at(DynamicsEvaluator& ev, const VecX& q, const VecX& qd,
                                               const VecX& qdd, const VecX& u, double t = 0,
                                               std::span<const ExtraPointForce> extra = {}) {
  DynamicsJacobians J;
  J.qdd = qdd;
  const auto& bw = ev.inverse_dynamics(q, qd, qdd, t, extra, EvalLevel::Full);
  J.dID_dq = bw.dIDq;
  J.dID_dqd = bw.dIDqd;
  J.dID_dqdd = bw.M;
  const InternalForceJacobians tj = dtau(ev.model(), q, u);
  J.dtau_dq = tj.dtau_dq;
  J.dtau_dqd = tj.dtau_dqd;
  Eigen::LDLT<MatX> ldlt(bw.M);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::SingularMass, "dynamics_jacobians: singular mass matrix");
  J.dFD_dq = ldlt.solve(J.dtau_dq - J.dID_dq);
  J.dFD_dqd = ldlt.solve(J.dtau_dqd - J.dID_dqd);
  return J;
}

/// Computes qdd = FD(q, qd, u) first, then all partials at that state.
inline DynamicsJacobians dynamics_jacobians(DynamicsEvaluator& ev, const VecX& q, const VecX& qd,
                                            const VecX& u, double t = 0,
                                            std::span<const ExtraPointForce> extra = {}) {
  const VecX qdd = ev.forward_dynamics(q, qd, u, t, extra);
  return dynamics_jacobians_at(ev, q, qd, qdd, u, t, extra);
}

/// State Jacobian of xdot = [qd; FD]: [[0, I], [dFD/dq, dFD/dqd]].
inline MatX state_jacobian(const DynamicsJacobians& J) {
  const Eigen::Index n = J.dFD_dq.rows();
  MatX A = MatX::Zero(2 * n, 2 * n);
  A.topRightCorner(n, n).setIdentity();
  A.bottomLeftCorner(n, n) = J.dFD_dq;
  A.bottomRightCorner(n, n) = J.dFD_dqd;
  return A;
}

}  // namespace gvs
