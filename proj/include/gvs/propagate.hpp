#pragma once

// Forward pass over the point tree: poses, Jacobians, velocity and
// acceleration twists, and the forward derivative carriers.

#include "gvs/model.hpp"

namespace gvs {

enum class EvalLevel { Dynamics, Full };

/// Per-point state: kinematics, forward carriers, and the backward
/// accumulators filled by the wrench sweep.
struct PointState {
  RigidTransform g;
  Vec6 eta = Vec6::Zero(), etad = Vec6::Zero();
  MatX J, Jd;
  MatX Jdt;                 // true time derivative of J (Jd differs by a term
                            // annihilated by qd; the loop terms need this one)
  MatX SB, RB, QB, LB, YB;  // Full level; LB is QB without the gravity term

  // backward accumulators
  Vec6 FC = Vec6::Zero();
  Mat6 MC = Mat6::Zero(), NC = Mat6::Zero();
  MatX US, VS, WS, PS, EQ;

  // point wrench assembly
  Vec6 Fk = Vec6::Zero();
  Mat6 Mk = Mat6::Zero(), Nk = Mat6::Zero();
  bool has_extFdq = false;
};

/// Per-edge joint quantities (edges are indexed by their distal point).
struct EdgeState {
  MagnusStep st;
  MatX S, Sd;
  MatX R, Q, L, Y;  // Full level
  Mat6 AdInvE = Mat6::Identity(), AdStarE = Mat6::Identity();
  RigidTransform g_edge;
};

struct PassWorkspace {
  std::vector<PointState> pts;
  std::vector<EdgeState> edges;
  MatX scratch;  // 6 x ndof
  int ndof = 0;

  void resize(const Linkage& m, EvalLevel level) {
    const int n = m.ndof;
    const size_t np = m.points.size();
    if (pts.size() == np && ndof == n) {
      // buffers already sized; just reset the accumulators
    } else {
      pts.assign(np, PointState{});
      edges.assign(np, EdgeState{});
      ndof = n;
      scratch.setZero(6, n);
      for (auto& p : pts) {
        p.J.setZero(6, n);
        p.Jd.setZero(6, n);
        p.Jdt.setZero(6, n);
        p.WS.setZero(6, n);
      }
    }
    for (auto& p : pts) {
      p.FC.setZero();
      p.MC.setZero();
      p.NC.setZero();
      p.WS.setZero();
      p.has_extFdq = false;
      if (level == EvalLevel::Full) {
        if (p.SB.cols() != n) {
          p.SB.setZero(6, n);
          p.RB.setZero(6, n);
          p.QB.setZero(6, n);
          p.LB.setZero(6, n);
          p.YB.setZero(6, n);
          p.US.setZero(6, n);
          p.VS.setZero(6, n);
          p.PS.setZero(6, n);
          p.EQ.setZero(6, n);
        } else {
          p.SB.setZero();
          p.RB.setZero();
          p.QB.setZero();
          p.LB.setZero();
          p.YB.setZero();
          p.US.setZero();
          p.VS.setZero();
          p.PS.setZero();
          p.EQ.setZero();
        }
      }
    }
  }
};

/// Sweeps the tree root-to-leaves filling kinematics (and, at Full level,
/// the forward derivative carriers R^B, Q^B, S^B, Y^B).
inline void forward_pass(const Linkage& m, const VecX& q, const VecX& qd, const VecX& qdd,
                         PassWorkspace& ws, EvalLevel level) {
  if (q.size() != m.ndof || qd.size() != m.ndof || qdd.size() != m.ndof)
    throw Error(ErrorCode::DimensionMismatch, "forward_pass: state dimension mismatch");
  ws.resize(m, level);
  const int n = m.ndof;

  for (size_t ip = 0; ip < m.points.size(); ++ip) {
    const Point& pt = m.points[ip];
    PointState& ps = ws.pts[ip];
    if (pt.edge == EdgeKind::Root) {
      ps.g = m.base;
      ps.eta.setZero();
      ps.etad.setZero();
      ps.J.setZero();
      ps.Jd.setZero();
      ps.Jdt.setZero();
      continue;
    }

    const PointState& pp = ws.pts[pt.parent];
    EdgeState& es = ws.edges[ip];

    if (pt.edge == EdgeKind::Fixed) {
      es.g_edge = pt.g_fixed;
      es.AdInvE = Ad_inv(pt.g_fixed);
      es.AdStarE = Ad_star(pt.g_fixed);
      ps.g = pp.g * pt.g_fixed;
      ps.J.noalias() = es.AdInvE * pp.J;
      ps.Jd.noalias() = es.AdInvE * pp.Jd;
      ps.Jdt.noalias() = es.AdInvE * pp.Jdt;
      if (level == EvalLevel::Full) {
        ps.SB.noalias() = es.AdInvE * pp.SB;
        ps.RB.noalias() = es.AdInvE * pp.RB;
        ps.QB.noalias() = es.AdInvE * pp.QB;
        ps.LB.noalias() = es.AdInvE * pp.LB;
        ps.YB.noalias() = es.AdInvE * pp.YB;
      }
    } else {
      const Segment& seg = m.segments[pt.segment];
      const auto qs = q.segment(seg.dof_offset, seg.ndof);
      const auto qds = qd.segment(seg.dof_offset, seg.ndof);
      const auto qdds = qdd.segment(seg.dof_offset, seg.ndof);
      es.st = magnus_step(pt.colloc, qs, qds, qdds);
      es.g_edge = exp_se3(es.st.Om);
      es.AdInvE = Ad_inv(es.g_edge);
      es.AdStarE = Ad_star(es.g_edge);
      es.S.noalias() = es.st.T * es.st.Z;
      es.Sd.noalias() = tangent_Tdot(es.st.Om, es.st.Z * qds) * es.st.Z + es.st.T * es.st.Zd;

      ps.g = pp.g * es.g_edge;

      // J_{a+1} = Ad^-1 (J_a + [0 S 0]);  Jd picks up Sd + ad_eta S
      auto insert = [&](const MatX& base, const MatX& block, MatX& out) {
        ws.scratch = base;
        ws.scratch.middleCols(seg.dof_offset, seg.ndof) += block;
        out.noalias() = es.AdInvE * ws.scratch;
      };
      insert(pp.J, es.S, ps.J);
      insert(pp.Jd, es.Sd + ad(pp.eta) * es.S, ps.Jd);
      insert(pp.Jdt, es.Sd, ps.Jdt);
      ps.Jdt.noalias() -= ad(apply_Ad_inv(es.g_edge, es.S * qds)) * ps.J;

      if (level == EvalLevel::Full) {
        const Vec6 etaPlus = pp.eta + es.S * qds;
        const Vec6 etadPlus = pp.etad + es.S * qdds + (ad(pp.eta) * es.S + es.Sd) * qds;
        const MatX dSq_qd = dS_dq_contract(es.st, qds);
        const MatX dSq_qdd = dS_dq_contract(es.st, qdds);
        const MatX dSdq_qd = dSd_dq_contract(es.st, qds);
        es.R = ad(etaPlus) * es.S + dSq_qd;
        es.L = ad(etadPlus) * es.S + ad(etaPlus) * es.R + ad(pp.eta) * dSq_qd + dSdq_qd + dSq_qdd;
        const Vec6 Gloc = apply_Ad_inv(pp.g, m.gravity_screw(pt.link));
        es.Q = es.L - ad(Gloc) * es.S;
        es.Y = es.R + ad(pp.eta) * es.S + es.Sd;
        insert(pp.SB, es.S, ps.SB);
        insert(pp.RB, es.R, ps.RB);
        insert(pp.QB, es.Q, ps.QB);
        insert(pp.LB, es.L, ps.LB);
        insert(pp.YB, es.Y, ps.YB);
      }
    }
    ps.eta.noalias() = ps.J * qd;
    ps.etad.noalias() = ps.J * qdd;
    ps.etad.noalias() += ps.Jd * qd;
    if (!ps.eta.allFinite() || !ps.etad.allFinite())
      throw Error(ErrorCode::NumericalFailure,
                  "forward_pass: non-finite kinematics at point " + std::to_string(ip));
  }
}

}  // namespace gvs
