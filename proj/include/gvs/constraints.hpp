#pragma once

// Prescribed-joint-coordinate actuation and closed-chain loop constraints:
// modified forward-dynamics solves, their analytical Jacobians, and the
// index-3 residual/Jacobian blocks.

#include "gvs/jacobians.hpp"

namespace gvs {

struct LoopEndpoint {
  int point = -1;  // computational point index
  RigidTransform offset;
};

struct LoopJoint {
  LoopEndpoint A, B;
  MatX Phi_perp;  // 6 x m orthonormal basis of the constrained directions
  double T_B = 0.01;

  int rows() const { return static_cast<int>(Phi_perp.cols()); }

  static MatX basis_fixed() { return MatX::Identity(6, 6); }
  static MatX basis_revolute(int axis) {
    MatX B(6, 5);
    int c = 0;
    for (int i = 0; i < 6; ++i)
      if (i != axis) B.col(c++) = VecX::Unit(6, i);
    return B;
  }
  static MatX basis_spherical() {
    MatX B(6, 3);
    for (int i = 0; i < 3; ++i) B.col(i) = VecX::Unit(6, 3 + i);
    return B;
  }
  /// in-plane position constraint for planar mechanisms
  static MatX basis_planar_xy() {
    MatX B(6, 2);
    B.col(0) = VecX::Unit(6, 3);
    B.col(1) = VecX::Unit(6, 4);
    return B;
  }
};

struct PrescribedSet {
  std::vector<int> dofs;  // global DoF indices, ascending
  std::vector<Trajectory1D> traj;
  std::vector<int> act_cols;  // actuator column realizing each prescribed DoF

  bool empty() const { return dofs.empty(); }
  int size() const { return static_cast<int>(dofs.size()); }

  void sample(double t, VecX& qk, VecX& qdk, VecX& qddk) const {
    const int nk = size();
    qk.resize(nk);
    qdk.resize(nk);
    qddk.resize(nk);
    for (int i = 0; i < nk; ++i) {
      qk[i] = traj[i].value(t);
      qdk[i] = traj[i].rate(t);
      qddk[i] = traj[i].accel(t);
    }
  }
};

struct Constraints {
  std::vector<LoopJoint> loops;
  PrescribedSet prescribed;

  int loop_rows() const {
    int m = 0;
    for (const auto& l : loops) m += l.rows();
    return m;
  }
  bool empty() const { return loops.empty() && prescribed.empty(); }
};

/// Per-loop kinematic quantities at the two attachment frames.
struct LoopEval {
  RigidTransform g_BA;
  Mat6 Ad_BA;
  MatX J_A, J_B, Jd_A, Jd_B;
  Vec6 eta_A, eta_B, etad_A, etad_B;
};

struct LoopTerms {
  MatX A;     // sum(m) x ndof
  MatX Adot;
  VecX e;
  std::vector<LoopEval> per_loop;
};

/// A, Adot, and the pose error e of every loop joint; requires a completed
/// forward pass.
inline LoopTerms loop_terms(const Linkage& m, const PassWorkspace& ws, const std::vector<LoopJoint>& loops) {
  LoopTerms out;
  int rows = 0;
  for (const auto& l : loops) rows += l.rows();
  out.A.setZero(rows, m.ndof);
  out.Adot.setZero(rows, m.ndof);
  out.e.setZero(rows);
  out.per_loop.resize(loops.size());

  int r = 0;
  for (size_t k = 0; k < loops.size(); ++k) {
    const LoopJoint& l = loops[k];
    LoopEval& le = out.per_loop[k];
    auto at_offset = [&](const LoopEndpoint& ep, RigidTransform& g, MatX& J, MatX& Jd, Vec6& eta, Vec6& etad) {
      const PointState& ps = ws.pts[ep.point];
      g = ps.g * ep.offset;
      const Mat6 Ai = Ad_inv(ep.offset);
      J = Ai * ps.J;
      Jd = Ai * ps.Jdt;
      eta = apply_Ad_inv(ep.offset, ps.eta);
      etad = apply_Ad_inv(ep.offset, ps.etad);
    };
    RigidTransform gA, gB;
    at_offset(l.A, gA, le.J_A, le.Jd_A, le.eta_A, le.etad_A);
    at_offset(l.B, gB, le.J_B, le.Jd_B, le.eta_B, le.etad_B);
    le.g_BA = gB.inverse() * gA;
    le.Ad_BA = Ad(le.g_BA);

    const int mrows = l.rows();
    const MatX rel = le.Ad_BA * le.J_A - le.J_B;
    out.A.middleRows(r, mrows).noalias() = l.Phi_perp.transpose() * rel;
    const Vec6 eta_BA = le.eta_A - apply_Ad_inv(le.g_BA, le.eta_B);
    out.Adot.middleRows(r, mrows).noalias() =
        l.Phi_perp.transpose() * (le.Ad_BA * (ad(eta_BA) * le.J_A + le.Jd_A) - le.Jd_B);
    out.e.segment(r, mrows).noalias() = l.Phi_perp.transpose() * log_se3(le.g_BA);
    r += mrows;
  }
  return out;
}

/// Constraint wrenches of the loops for a given multiplier vector, as extra
/// point forces (with the analytic q-derivative when requested).
inline std::vector<ExtraPointForce> loop_wrenches(const std::vector<LoopJoint>& loops, const LoopTerms& lt,
                                                  const VecX& lambda, bool with_derivative) {
  std::vector<ExtraPointForce> out;
  int r = 0;
  for (size_t k = 0; k < loops.size(); ++k) {
    const LoopJoint& l = loops[k];
    const LoopEval& le = lt.per_loop[k];
    const int mrows = l.rows();
    const VecX lk = lambda.segment(r, mrows);
    const Vec6 W = l.Phi_perp * lk;
    const Mat6 AdInvStar_BA = Ad_star(le.g_BA.inverse());  // Ad^{-*}_{g_BA}
    ExtraPointForce fA;
    fA.point = l.A.point;
    const Vec6 W_Aoff = AdInvStar_BA * W;
    fA.W_local = Ad_star(l.A.offset) * W_Aoff;
    ExtraPointForce fB;
    fB.point = l.B.point;
    fB.W_local = -(Ad_star(l.B.offset) * W);
    if (with_derivative) {
      const MatX rel = le.Ad_BA * le.J_A - le.J_B;
      fA.dW_dq = Ad_star(l.A.offset) * (-(AdInvStar_BA * (ad_bar_star(W) * rel)));
      fB.dW_dq = MatX::Zero(6, le.J_A.cols());
    }
    out.push_back(std::move(fA));
    out.push_back(std::move(fB));
    r += mrows;
  }
  return out;
}

struct ConstrainedAccel {
  VecX qdd;
  VecX u_u;     // unknown actuation of prescribed joints
  VecX lambda;  // loop multipliers
};

struct ConstrainedJacobians {
  MatX dqdd_dq, dqdd_dqd;
  MatX dlambda_dq, dlambda_dqd;
  MatX duu_dq, duu_dqd;
  DynamicsJacobians dyn;  // underlying unconstrained partials (at the solved qdd)
  LoopTerms lt;
};

/// Forward dynamics and analytical Jacobians under prescribed-coordinate and
/// closed-chain constraints. With an empty constraint set both reduce exactly
/// to the unconstrained path.
class ConstrainedDynamics {
public:
  ConstrainedDynamics(DynamicsEvaluator& ev, const Constraints& c) : ev_(&ev), c_(&c) {}

  const Constraints& constraints() const { return *c_; }
  DynamicsEvaluator& evaluator() { return *ev_; }

  /// overwrites the prescribed coordinates/rates with their trajectories
  void apply_prescribed(double t, VecX& q, VecX& qd) const {
    if (c_->prescribed.empty()) return;
    VecX qk, qdk, qddk;
    c_->prescribed.sample(t, qk, qdk, qddk);
    for (int i = 0; i < c_->prescribed.size(); ++i) {
      q[c_->prescribed.dofs[i]] = qk[i];
      qd[c_->prescribed.dofs[i]] = qdk[i];
    }
  }

  /// q and qd must already satisfy the prescribed trajectories (see
  /// apply_prescribed); u carries the known actuation (prescribed columns
  /// are ignored).
  ConstrainedAccel solve_fd(const VecX& q, const VecX& qd, const VecX& u, double t) {
    const Linkage& m = ev_->model();
    const int n = m.ndof;
    const auto& pres = c_->prescribed;
    const int nk = pres.size();
    const int nu = n - nk;

    VecX u0 = u;
    for (int c : pres.act_cols) u0[c] = 0;
    const GeneralizedSystem sys = ev_->generalized_system(q, qd, u0, t);

    ConstrainedAccel out;
    if (c_->empty()) {
      Eigen::LDLT<MatX> ldlt(sys.M);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw Error(ErrorCode::SingularMass, "solve_fd: singular mass matrix");
      out.qdd = ldlt.solve(sys.tau + sys.F);
      return out;
    }

    LoopTerms lt;
    int ml = 0;
    if (!c_->loops.empty()) {
      lt = loop_terms(m, ev_->workspace(), c_->loops);
      ml = static_cast<int>(lt.e.size());
    }

    VecX qk, qdk, qddk;
    if (nk > 0) pres.sample(t, qk, qdk, qddk);

    const auto unknown = unknown_dofs();
    MatX S(n + ml, nu + nk + ml);
    S.setZero();
    VecX rhs(n + ml);
    for (int i = 0; i < nu; ++i) S.col(i).head(n) = sys.M.col(unknown[i]);
    for (int i = 0; i < nk; ++i) S.col(nu + i).head(n) = -sys.B.col(pres.act_cols[i]);
    rhs.head(n) = sys.tau + sys.F;
    for (int i = 0; i < nk; ++i) rhs.head(n) -= sys.M.col(pres.dofs[i]) * qddk[i];
    if (ml > 0) {
      S.topRightCorner(n, ml) = -lt.A.transpose();
      for (int i = 0; i < nu; ++i) S.col(i).tail(ml) = lt.A.col(unknown[i]);
      VecX b = -lt.Adot * qd;
      int r = 0;
      for (const auto& l : c_->loops) {
        const int mr = l.rows();
        b.segment(r, mr) -= (2.0 / l.T_B) * (lt.A.middleRows(r, mr) * qd);
        b.segment(r, mr) -= (1.0 / (l.T_B * l.T_B)) * lt.e.segment(r, mr);
        r += mr;
      }
      for (int i = 0; i < nk; ++i) b -= lt.A.col(pres.dofs[i]) * qddk[i];
      rhs.tail(ml) = b;
    }

    Eigen::FullPivLU<MatX> lu(S);
    if (!lu.isInvertible())
      throw Error(ErrorCode::SingularSaddle, "solve_fd: saddle system is singular");
    const VecX sol = lu.solve(rhs);

    out.qdd = VecX::Zero(n);
    for (int i = 0; i < nu; ++i) out.qdd[unknown[i]] = sol[i];
    for (int i = 0; i < nk; ++i) out.qdd[pres.dofs[i]] = qddk[i];
    out.u_u = sol.segment(nu, nk);
    out.lambda = sol.tail(ml);
    return out;
  }

  /// Jacobians of the constrained FD with respect to q and qd, with zero
  /// rows/columns on the prescribed coordinates.
  ConstrainedJacobians fd_jacobian(const VecX& q, const VecX& qd, const VecX& u, double t) {
    const Linkage& m = ev_->model();
    const int n = m.ndof;
    const auto& pres = c_->prescribed;
    const int nk = pres.size();
    const int nu = n - nk;

    const ConstrainedAccel acc = solve_fd(q, qd, u, t);

    VecX u_full = u;
    for (int i = 0; i < nk; ++i) u_full[pres.act_cols[i]] = acc.u_u[i];

    ConstrainedJacobians out;
    std::vector<ExtraPointForce> extra;
    int ml = 0;
    if (!c_->loops.empty()) {
      const LoopTerms lt0 = loop_terms(m, ev_->workspace(), c_->loops);
      ml = static_cast<int>(lt0.e.size());
      extra = loop_wrenches(c_->loops, lt0, acc.lambda, true);
    }
    out.dyn = dynamics_jacobians_at(*ev_, q, qd, acc.qdd, u_full, t, extra);
    // recompute after the full pass: the acceleration twists now carry qdd
    if (!c_->loops.empty()) out.lt = loop_terms(m, ev_->workspace(), c_->loops);

    if (c_->empty()) {
      out.dqdd_dq = out.dyn.dFD_dq;
      out.dqdd_dqd = out.dyn.dFD_dqd;
      return out;
    }

    const auto unknown = unknown_dofs();
    MatX S(n + ml, nu + nk + ml);
    S.setZero();
    for (int i = 0; i < nu; ++i) S.col(i).head(n) = out.dyn.dID_dqdd.col(unknown[i]);
    if (nk > 0) {
      const ActuationEval act = actuation(m, q, u_full, false);
      for (int j = 0; j < nk; ++j) S.col(nu + j).head(n) = -act.B.col(pres.act_cols[j]);
    }
    if (ml > 0) {
      S.topRightCorner(n, ml) = -out.lt.A.transpose();
      for (int i = 0; i < nu; ++i) S.col(i).tail(ml) = out.lt.A.col(unknown[i]);
    }
    Eigen::FullPivLU<MatX> lu(S);
    if (!lu.isInvertible())
      throw Error(ErrorCode::SingularSaddle, "fd_jacobian: saddle system is singular");

    // rhs blocks: d(tau - ID)/d(q, qd) on the unknown columns, constraint rows below
    MatX Rq = MatX::Zero(n + ml, nu), Rqd = MatX::Zero(n + ml, nu);
    const MatX topq = out.dyn.dtau_dq - out.dyn.dID_dq;
    const MatX topqd = out.dyn.dtau_dqd - out.dyn.dID_dqd;
    MatX botq, botqd;
    if (ml > 0) constraint_rate_jacobians(out.lt, botq, botqd);
    for (int i = 0; i < nu; ++i) {
      Rq.col(i).head(n) = topq.col(unknown[i]);
      Rqd.col(i).head(n) = topqd.col(unknown[i]);
      if (ml > 0) {
        Rq.col(i).tail(ml) = -botq.col(unknown[i]);
        Rqd.col(i).tail(ml) = -botqd.col(unknown[i]);
      }
    }
    const MatX solq = lu.solve(Rq), solqd = lu.solve(Rqd);

    auto scatter = [&](const MatX& sol, MatX& dqdd, MatX& duu, MatX& dlam) {
      dqdd = MatX::Zero(n, n);
      duu = MatX::Zero(nk, n);
      dlam = MatX::Zero(ml, n);
      for (int i = 0; i < nu; ++i) {
        for (int j = 0; j < nu; ++j) dqdd(unknown[j], unknown[i]) = sol(j, i);
        duu.col(unknown[i]) = sol.col(i).segment(nu, nk);
        dlam.col(unknown[i]) = sol.col(i).tail(ml);
      }
    };
    scatter(solq, out.dqdd_dq, out.duu_dq, out.dlambda_dq);
    scatter(solqd, out.dqdd_dqd, out.duu_dqd, out.dlambda_dqd);
    return out;
  }

  /// d e / d q of the loop closure error (zero columns on prescribed DoFs are
  /// kept: e depends on every coordinate).
  MatX de_dq(const LoopTerms& lt) const {
    int rows = 0;
    for (const auto& l : c_->loops) rows += l.rows();
    MatX out = MatX::Zero(rows, ev_->model().ndof);
    int r = 0;
    for (size_t k = 0; k < c_->loops.size(); ++k) {
      const LoopJoint& l = c_->loops[k];
      const LoopEval& le = lt.per_loop[k];
      const Vec6 eps = log_se3(le.g_BA);
      const MatX rel = le.Ad_BA * le.J_A - le.J_B;
      out.middleRows(r, l.rows()).noalias() = l.Phi_perp.transpose() * (tangent_T_inverse(eps) * rel);
      r += l.rows();
    }
    return out;
  }

  std::vector<int> unknown_dofs() const {
    const int n = ev_->model().ndof;
    std::vector<int> out;
    out.reserve(n);
    size_t j = 0;
    for (int i = 0; i < n; ++i) {
      if (j < c_->prescribed.dofs.size() && c_->prescribed.dofs[j] == i) {
        ++j;
        continue;
      }
      out.push_back(i);
    }
    return out;
  }

  /// q-derivative and qd-derivative of C = A qdd + Adot qd + (2/T_B) A qd +
  /// (1/T_B^2) e, using the forward carriers of the last Full pass.
  void constraint_rate_jacobians(const LoopTerms& lt, MatX& dC_dq, MatX& dC_dqd) {
    const Linkage& m = ev_->model();
    const PassWorkspace& ws = ev_->workspace();
    const int n = m.ndof;
    const int rows = static_cast<int>(lt.e.size());
    dC_dq.setZero(rows, n);
    dC_dqd.setZero(rows, n);
    int r = 0;
    for (size_t k = 0; k < c_->loops.size(); ++k) {
      const LoopJoint& l = c_->loops[k];
      const LoopEval& le = lt.per_loop[k];
      const int mr = l.rows();

      auto carriers = [&](const LoopEndpoint& ep, MatX& RB, MatX& LB, MatX& YB, MatX& SB) {
        const PointState& ps = ws.pts[ep.point];
        const Mat6 Ai = Ad_inv(ep.offset);
        RB = Ai * ps.RB;
        LB = Ai * ps.LB;
        YB = Ai * ps.YB;
        SB = Ai * ps.SB;
      };
      MatX RB_A, LB_A, YB_A, SB_A, RB_B, LB_B, YB_B, SB_B;
      carriers(l.A, RB_A, LB_A, YB_A, SB_A);
      carriers(l.B, RB_B, LB_B, YB_B, SB_B);

      const MatX rel = le.Ad_BA * le.J_A - le.J_B;
      const MatX detad_A = LB_A - ad(le.eta_A) * RB_A;
      const MatX detad_B = LB_B - ad(le.eta_B) * RB_B;

      // q-derivative
      MatX blk = -ad(le.Ad_BA * le.etad_A) * rel;
      blk.noalias() += le.Ad_BA * detad_A;
      blk -= detad_B;
      blk.noalias() += (2.0 / l.T_B) * (-ad(le.Ad_BA * le.eta_A) * rel + le.Ad_BA * RB_A - RB_B);
      const Vec6 eps = log_se3(le.g_BA);
      blk.noalias() += (1.0 / (l.T_B * l.T_B)) * (tangent_T_inverse(eps) * rel);
      dC_dq.middleRows(r, mr).noalias() = l.Phi_perp.transpose() * blk;

      // qd-derivative: d(Adot qd)/dqd + Adot + (2/T_B) A
      MatX blkd = le.Ad_BA * (YB_A - ad(le.eta_A) * SB_A) - (YB_B - ad(le.eta_B) * SB_B);
      dC_dqd.middleRows(r, mr).noalias() = l.Phi_perp.transpose() * blkd;
      dC_dqd.middleRows(r, mr).noalias() += (2.0 / l.T_B) * (l.Phi_perp.transpose() * rel);
      r += mr;
    }
  }

private:
  DynamicsEvaluator* ev_;
  const Constraints* c_;
};

}  // namespace gvs
