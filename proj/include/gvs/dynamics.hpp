#pragma once

// Backward pass and system-level dynamics: point wrenches, inverse dynamics,
// the generalized system (M, tau, F, B), forward dynamics, and the assembled
// analytical derivatives of ID.

#include <span>

#include "gvs/forces.hpp"
#include "gvs/propagate.hpp"

namespace gvs {

/// Additional external wrench applied at a computational point (local frame),
/// optionally with an analytic configuration derivative (constraint wrenches).
struct ExtraPointForce {
  int point = -1;
  Vec6 W_local = Vec6::Zero();
  MatX dW_dq;  // 6 x ndof; empty when not available
};

namespace detail {

/// Fills per-point wrenches Fk (and Nk plus extra derivative blocks at Full
/// level) after a forward pass.
inline void wrench_pass(const Linkage& m, const SceneForces* forces,
                        std::span<const ExtraPointForce> extra, double t, PassWorkspace& ws,
                        EvalLevel level, std::vector<MatX>& fdq_pt, std::vector<bool>& fdq_set) {
  const int n = m.ndof;
  if (level == EvalLevel::Full) {
    fdq_pt.resize(m.points.size());
    fdq_set.assign(m.points.size(), false);
  }
  auto extra_dq = [&](size_t ip) -> MatX& {
    if (!fdq_set[ip]) {
      fdq_pt[ip].setZero(6, n);
      fdq_set[ip] = true;
    }
    return fdq_pt[ip];
  };

  for (size_t ip = 0; ip < m.points.size(); ++ip) {
    const Point& pt = m.points[ip];
    PointState& ps = ws.pts[ip];
    ps.Mk = pt.inertia;
    const Vec6 Gloc = apply_Ad_inv(ps.g, m.gravity_screw(pt.link >= 0 ? pt.link : 0));
    ps.Fk.noalias() = ps.Mk * ps.etad;
    ps.Fk.noalias() += ad_star(ps.eta) * (ps.Mk * ps.eta);
    ps.Fk.noalias() -= ps.Mk * Gloc;
    if (level == EvalLevel::Full)
      ps.Nk = ad_bar_star(ps.Mk * ps.eta) + ad_star(ps.eta) * ps.Mk - ps.Mk * ad(ps.eta);

    if (forces && forces->drag_active() && !forces->drag_at_point[ip].isZero(0.0)) {
      const DragEval de = drag_lift(forces->drag_at_point[ip], ps.eta);
      ps.Fk += de.F;
      if (level == EvalLevel::Full) ps.Nk += de.Dstar;
    }

    if (forces && forces->contact && pt.on_rod) {
      const auto& cs = *forces->contact;
      const bool applies = cs.links.empty() ||
                           std::find(cs.links.begin(), cs.links.end(), pt.link) != cs.links.end();
      if (applies) {
        const ContactEval ce = contact_force(cs, ps.g, pt.radius);
        if (ce.active) {
          ps.Fk -= ce.W_local;
          if (level == EvalLevel::Full) {
            MatX& dq = extra_dq(ip);
            dq.noalias() -= local_wrench_dq(ce.W_local, ps.SB);
            const Mat3 C1 = Vec3(1, 1, 0).asDiagonal();
            dq.bottomRows<3>().noalias() -=
                ps.g.R.transpose() * (ce.kstar * (C1 * (ps.g.R * ps.SB.bottomRows<3>())));
          }
        }
      }
    }
  }

  if (forces) {
    for (const auto& spec : forces->point_wrenches) {
      PointState& ps = ws.pts[spec.point];
      const Vec6 W = spec.value(t);
      Vec6 W_loc = W;
      if (!spec.local) {
        W_loc.head<3>() = ps.g.R.transpose() * W.head<3>();
        W_loc.tail<3>() = ps.g.R.transpose() * W.tail<3>();
      }
      ps.Fk -= W_loc;
      if (level == EvalLevel::Full && !spec.local)
        extra_dq(spec.point).noalias() -= local_wrench_dq(W_loc, ps.SB);
    }
  }
  for (const auto& ef : extra) {
    ws.pts[ef.point].Fk -= ef.W_local;
    if (level == EvalLevel::Full && ef.dW_dq.size() > 0) extra_dq(ef.point) -= ef.dW_dq;
  }
}

struct BackwardOut {
  VecX ID;
  MatX M;
  MatX dIDq, dIDqd;  // Full level only
};

/// Reverse sweep accumulating the ^C/^S carriers and assembling ID, the mass
/// matrix, and (at Full level) the ID derivative row-blocks.
inline void backward_pass(const Linkage& m, PassWorkspace& ws, EvalLevel level,
                          const std::vector<MatX>& fdq_pt, const std::vector<bool>& fdq_set,
                          BackwardOut& out) {
  const int n = m.ndof;
  out.ID.setZero(n);
  out.M.setZero(n, n);
  const bool full = level == EvalLevel::Full;
  if (full) {
    out.dIDq.setZero(n, n);
    out.dIDqd.setZero(n, n);
  }

  for (size_t ip = m.points.size() - 1; ip > 0; --ip) {
    const Point& pt = m.points[ip];
    PointState& ps = ws.pts[ip];
    PointState& pp = ws.pts[pt.parent];
    EdgeState& es = ws.edges[ip];
    const Mat6& AdS = es.AdStarE;
    const Mat6& AdI = es.AdInvE;

    pp.FC.noalias() += AdS * (ps.Fk + ps.FC);
    pp.MC.noalias() += AdS * (ps.Mk + ps.MC) * AdI;
    pp.WS.noalias() += AdS * ps.WS;
    if (full) {
      pp.NC.noalias() += AdS * (ps.Nk + ps.NC) * AdI;
      pp.US.noalias() += AdS * ps.US;
      pp.VS.noalias() += AdS * ps.VS;
      pp.PS.noalias() += AdS * ps.PS;
      if (fdq_set[ip])
        pp.EQ.noalias() += AdS * (fdq_pt[ip] + ps.EQ);
      else
        pp.EQ.noalias() += AdS * ps.EQ;
    }

    if (pt.edge != EdgeKind::Joint || m.segments[pt.segment].ndof == 0) continue;
    const Segment& seg = m.segments[pt.segment];
    const int o = seg.dof_offset, w = seg.ndof;

    // local ^S blocks land on the segment's columns
    const MatX& J_pp = full ? pp.SB : pp.J;
    pp.WS.middleCols(o, w).noalias() += pp.MC * es.S;
    if (full) {
      pp.US.middleCols(o, w).noalias() += pp.NC * es.R;
      pp.US.middleCols(o, w).noalias() += pp.MC * es.Q;
      pp.VS.middleCols(o, w).noalias() += pp.NC * es.S;
      pp.VS.middleCols(o, w).noalias() += pp.MC * es.Y;
      pp.PS.middleCols(o, w).noalias() += ad_bar_star(pp.FC) * es.S;
    }

    const MatX St = es.S.transpose();
    out.ID.segment(o, w).noalias() += St * pp.FC;
    MatX& acc = ws.scratch;
    acc.noalias() = pp.MC * J_pp;
    acc += pp.WS;
    out.M.middleRows(o, w).noalias() += St * acc;
    if (full) {
      acc.noalias() = pp.NC * pp.RB;
      acc.noalias() += pp.MC * pp.QB;
      acc += pp.US + pp.PS + pp.EQ;
      out.dIDq.middleRows(o, w).noalias() += St * acc;
      out.dIDq.block(o, o, w, w).noalias() += dST_dq_contract(es.st, pp.FC);
      acc.noalias() = pp.NC * pp.SB;
      acc.noalias() += pp.MC * pp.YB;
      acc += pp.VS;
      out.dIDqd.middleRows(o, w).noalias() += St * acc;
    }
  }
}

}  // namespace detail

struct GeneralizedSystem {
  MatX M;
  VecX tau;
  VecX F;
  MatX B;
  VecX ID;  // ID(q, qd, 0): F = -ID
};

struct ActuationEval {
  MatX B;       // ndof x n_actuators
  VecX Bu;      // B u
  MatX dBu_dq;  // ndof x ndof
};

/// Evaluates the actuation map: cable columns first, then the blocks of
/// actuated rigid joints.
inline ActuationEval actuation(const Linkage& m, const VecX& q, const VecX& u, bool with_derivative) {
  const int n = m.ndof, na = m.n_actuators();
  if (u.size() != na) throw Error(ErrorCode::DimensionMismatch, "actuation: input dimension mismatch");
  ActuationEval out;
  out.B.setZero(n, na);
  out.Bu.setZero(n);
  if (with_derivative) out.dBu_dq.setZero(n, n);
  int col = 0;
  for (const auto& cable : m.cables) {
    const CableForce unit = cable_actuation(m, cable, q, 1.0, false);
    out.B.col(col) = unit.Bu;
    out.Bu.noalias() += unit.Bu * u[col];
    if (with_derivative && u[col] != 0) {
      const CableForce f = cable_actuation(m, cable, q, u[col], true);
      out.dBu_dq += f.dBu_dq;
    }
    ++col;
  }
  for (const auto& ja : m.joint_actuators) {
    const Segment& seg = m.segments[ja.segment];
    const VecX us = u.segment(col, seg.ndof);
    const JointActuation a = rigid_joint_actuation(m, ja.segment, q, us, with_derivative && seg.ndof > 1);
    out.B.block(seg.dof_offset, col, seg.ndof, seg.ndof) = a.B;
    out.Bu.segment(seg.dof_offset, seg.ndof).noalias() += a.B * us;
    if (with_derivative && seg.ndof > 1)
      out.dBu_dq.block(seg.dof_offset, seg.dof_offset, seg.ndof, seg.ndof) += a.dBu_dq;
    col += seg.ndof;
  }
  return out;
}

/// One-stop evaluator owning the pass workspace. All evaluation entry points
/// are single-threaded per instance; distinct instances may run concurrently
/// over the shared (read-only) model.
class DynamicsEvaluator {
public:
  DynamicsEvaluator(const Linkage& m, const SceneForces* forces = nullptr)
      : m_(&m), forces_(forces) {}

  const Linkage& model() const { return *m_; }
  PassWorkspace& workspace() { return ws_; }

  /// ID(q, qd, qdd) plus the generalized mass matrix as a byproduct.
  const detail::BackwardOut& inverse_dynamics(const VecX& q, const VecX& qd, const VecX& qdd,
                                              double t = 0, std::span<const ExtraPointForce> extra = {},
                                              EvalLevel level = EvalLevel::Dynamics) {
    forward_pass(*m_, q, qd, qdd, ws_, level);
    detail::wrench_pass(*m_, forces_, extra, t, ws_, level, fdq_pt_, fdq_set_);
    detail::backward_pass(*m_, ws_, level, fdq_pt_, fdq_set_, bw_);
    check_finite(bw_.ID);
    return bw_;
  }

  /// M, tau, F, and B at a state (F = -ID(q, qd, 0)).
  GeneralizedSystem generalized_system(const VecX& q, const VecX& qd, const VecX& u, double t = 0,
                                       std::span<const ExtraPointForce> extra = {}) {
    const auto& bw = inverse_dynamics(q, qd, VecX::Zero(m_->ndof), t, extra);
    GeneralizedSystem sys;
    sys.M = bw.M;
    sys.ID = bw.ID;
    sys.F = -bw.ID;
    const ActuationEval act = actuation(*m_, q, u, false);
    sys.B = act.B;
    sys.tau = act.Bu - m_->K * q - m_->D * qd;
    return sys;
  }

  /// qdd = M^{-1} (tau + F)
  VecX forward_dynamics(const VecX& q, const VecX& qd, const VecX& u, double t = 0,
                        std::span<const ExtraPointForce> extra = {}) {
    const GeneralizedSystem sys = generalized_system(q, qd, u, t, extra);
    Eigen::LDLT<MatX> ldlt(sys.M);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw Error(ErrorCode::SingularMass, mass_failure_message(sys.M));
    return ldlt.solve(sys.tau + sys.F);
  }

private:
  static std::string mass_failure_message(const MatX& M) {
    Eigen::SelfAdjointEigenSolver<MatX> es(M, Eigen::EigenvaluesOnly);
    return "forward_dynamics: singular mass matrix (smallest eigenvalue " +
           std::to_string(es.eigenvalues().minCoeff()) + ")";
  }
  static void check_finite(const VecX& v) {
    if (!v.allFinite())
      throw Error(ErrorCode::NumericalFailure, "dynamics: non-finite values in inverse dynamics");
  }

  const Linkage* m_;
  const SceneForces* forces_;
  PassWorkspace ws_;
  std::vector<MatX> fdq_pt_;
  std::vector<bool> fdq_set_;
  detail::BackwardOut bw_;
};

}  // namespace gvs
