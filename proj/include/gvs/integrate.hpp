#pragma once

// Time integration and statics: Newton-iterated implicit Euler (BDF1) on the
// state ODE, Newmark-beta in ODE and index-3 DAE form, an explicit RK4
// reference, and the static-equilibrium solver.

#include <functional>

#include "gvs/constraints.hpp"

namespace gvs {

struct NewtonSettings {
  double abs_tol = 1e-9;
  double rel_tol = 1e-10;
  int max_iters = 50;
  int max_halvings = 8;
  bool line_search = true;
};

struct NewmarkSettings {
  double beta = 0.25;
  double gamma = 0.5;
  double h = 1e-2;
};

enum class JacobianMode { Analytic, FiniteDifference };

struct Trajectory {
  std::vector<double> t;
  std::vector<VecX> q, qd;
  std::vector<VecX> extras;  // per-step [u_u; lambda] (may be empty vectors)
  std::vector<int> newton_iters;
  double wall_time = 0;
};

namespace detail {

/// damped Newton on R(z) = 0 with a caller-supplied Jacobian evaluation
template <class ResidualFn, class JacobianFn>
int newton_solve(VecX& z, ResidualFn&& residual, JacobianFn&& jacobian, const NewtonSettings& ns) {
  VecX R = residual(z);
  double nr = R.norm();
  int iters = 0;
  for (; iters < ns.max_iters; ++iters) {
    if (nr <= ns.abs_tol + ns.rel_tol * std::max(1.0, z.norm())) return iters;
    const MatX J = jacobian(z);
    Eigen::PartialPivLU<MatX> lu(J);
    VecX dz = lu.solve(-R);
    if (!dz.allFinite()) throw Error(ErrorCode::NewtonDiverged, "newton: non-finite step");
    double alpha = 1.0;
    for (int ls = 0;; ++ls) {
      VecX zc = z + alpha * dz;
      VecX Rc = residual(zc);
      const double nc = Rc.norm();
      if (nc < nr || !ns.line_search || ls >= 30) {
        z = zc;
        R = Rc;
        nr = nc;
        break;
      }
      alpha /= 2;
    }
  }
  if (nr <= ns.abs_tol + ns.rel_tol * std::max(1.0, z.norm())) return iters;
  throw Error(ErrorCode::NewtonDiverged, "newton: no convergence, |R| = " + std::to_string(nr));
}

}  // namespace detail

/// Integrator/statics driver over a constrained dynamics system.
class Simulator {
public:
  Simulator(ConstrainedDynamics& sys, const VecX& u, NewtonSettings ns = {})
      : sys_(&sys), u_(u), ns_(ns) {}

  void set_actuation(const VecX& u) { u_ = u; }
  void set_actuation_fn(std::function<VecX(double)> fn) { u_fn_ = std::move(fn); }

  VecX actuation(double t) const { return u_fn_ ? u_fn_(t) : u_; }

  /// xdot of the first-order state x = [q; qd]
  VecX state_derivative(double t, const VecX& x) {
    const int n = ndof();
    VecX q = x.head(n), qd = x.tail(n);
    sys_->apply_prescribed(t, q, qd);
    const ConstrainedAccel acc = sys_->solve_fd(q, qd, actuation(t), t);
    VecX xd(2 * n);
    xd.head(n) = qd;
    xd.tail(n) = acc.qdd;
    return xd;
  }

  /// One implicit-Euler (BDF1) step with Newton iteration; on failure the
  /// step is halved internally up to the configured limit.
  VecX implicit_euler_step(double t, const VecX& x, double h, JacobianMode mode, int* iters = nullptr,
                           int depth = 0) {
    const int n = ndof();
    const auto& pres = sys_->constraints().prescribed;
    const auto unknown = sys_->unknown_dofs();
    const int nu = static_cast<int>(unknown.size());
    const double tn = t + h;

    auto assemble = [&](const VecX& zu) {
      VecX q(n), qd(n);
      for (int i = 0; i < nu; ++i) {
        q[unknown[i]] = zu[i];
        qd[unknown[i]] = zu[nu + i];
      }
      for (int i = 0; i < pres.size(); ++i) {
        q[pres.dofs[i]] = 0;
        qd[pres.dofs[i]] = 0;
      }
      sys_->apply_prescribed(tn, q, qd);
      return std::make_pair(q, qd);
    };

    VecX z0(2 * nu);
    for (int i = 0; i < nu; ++i) {
      z0[i] = x[unknown[i]];
      z0[nu + i] = x[n + unknown[i]];
    }

    auto residual = [&](const VecX& zu) {
      auto [q, qd] = assemble(zu);
      const ConstrainedAccel acc = sys_->solve_fd(q, qd, actuation(tn), tn);
      VecX R(2 * nu);
      for (int i = 0; i < nu; ++i) {
        R[i] = zu[i] - z0[i] - h * qd[unknown[i]];
        R[nu + i] = zu[nu + i] - z0[nu + i] - h * acc.qdd[unknown[i]];
      }
      return R;
    };
    auto jacobian = [&](const VecX& zu) {
      MatX J = MatX::Identity(2 * nu, 2 * nu);
      auto [q, qd] = assemble(zu);
      if (mode == JacobianMode::Analytic) {
        const ConstrainedJacobians cj = sys_->fd_jacobian(q, qd, actuation(tn), tn);
        for (int i = 0; i < nu; ++i)
          for (int j = 0; j < nu; ++j) {
            J(i, nu + j) -= h * (i == j ? 1.0 : 0.0);
            J(nu + i, j) -= h * cj.dqdd_dq(unknown[i], unknown[j]);
            J(nu + i, nu + j) -= h * cj.dqdd_dqd(unknown[i], unknown[j]);
          }
      } else {
        const double eps = 1e-6;
        const VecX R0 = residual(zu);
        for (int j = 0; j < 2 * nu; ++j) {
          VecX zp = zu;
          zp[j] += eps;
          J.col(j) = (residual(zp) - R0) / eps;
        }
      }
      return J;
    };

    VecX z = z0;
    try {
      const int it = detail::newton_solve(z, residual, jacobian, ns_);
      if (iters) *iters += it;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NewtonDiverged || depth >= ns_.max_halvings) throw;
      const VecX mid = implicit_euler_step(t, x, h / 2, mode, iters, depth + 1);
      return implicit_euler_step(t + h / 2, mid, h / 2, mode, iters, depth + 1);
    }
    auto [q, qd] = assemble(z);
    VecX xn(2 * n);
    xn.head(n) = q;
    xn.tail(n) = qd;
    return xn;
  }

  VecX rk4_step(double t, const VecX& x, double h) {
    const VecX k1 = state_derivative(t, x);
    const VecX k2 = state_derivative(t + h / 2, x + (h / 2) * k1);
    const VecX k3 = state_derivative(t + h / 2, x + (h / 2) * k2);
    const VecX k4 = state_derivative(t + h, x + h * k3);
    VecX xn = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    const int n = ndof();
    VecX q = xn.head(n), qd = xn.tail(n);
    sys_->apply_prescribed(t + h, q, qd);
    xn.head(n) = q;
    xn.tail(n) = qd;
    return xn;
  }

  struct NewmarkState {
    VecX q, qd, qdd;
    VecX u_u, lambda;
  };

  NewmarkState newmark_init(double t, const VecX& q0, const VecX& qd0) {
    NewmarkState s;
    s.q = q0;
    s.qd = qd0;
    sys_->apply_prescribed(t, s.q, s.qd);
    const ConstrainedAccel acc = sys_->solve_fd(s.q, s.qd, actuation(t), t);
    s.qdd = acc.qdd;
    s.u_u = acc.u_u;
    s.lambda = acc.lambda;
    return s;
  }

  /// One Newmark-beta step; in the presence of constraints this is the
  /// index-3 DAE form with [q_u; u_u; lambda] unknowns.
  NewmarkState newmark_step(double t, const NewmarkState& prev, const NewmarkSettings& nm,
                            JacobianMode mode, int* iters = nullptr) {
    const int n = ndof();
    const double tn = t + nm.h;
    const auto& pres = sys_->constraints().prescribed;
    const auto& loops = sys_->constraints().loops;
    const auto unknown = sys_->unknown_dofs();
    const int nu = static_cast<int>(unknown.size());
    const int nk = pres.size();
    const int ml = sys_->constraints().loop_rows();
    const double cv = nm.gamma / (nm.beta * nm.h);
    const double ca = 1.0 / (nm.beta * nm.h * nm.h);

    VecX qk, qdk, qddk;
    if (nk > 0) pres.sample(tn, qk, qdk, qddk);

    auto kinematics = [&](const VecX& z, VecX& q, VecX& qd, VecX& qdd) {
      q.resize(n);
      qd.resize(n);
      qdd.resize(n);
      for (int i = 0; i < nu; ++i) {
        const int d = unknown[i];
        q[d] = z[i];
        qd[d] = cv * (z[i] - prev.q[d]) + (1 - nm.gamma / nm.beta) * prev.qd[d] +
                nm.h * (1 - nm.gamma / (2 * nm.beta)) * prev.qdd[d];
        qdd[d] = ca * (z[i] - prev.q[d]) - prev.qd[d] / (nm.beta * nm.h) +
                 (1 - 1 / (2 * nm.beta)) * prev.qdd[d];
      }
      for (int i = 0; i < nk; ++i) {
        q[pres.dofs[i]] = qk[i];
        qd[pres.dofs[i]] = qdk[i];
        qdd[pres.dofs[i]] = qddk[i];
      }
    };

    auto split = [&](const VecX& z, VecX& uu, VecX& lam) {
      uu = z.segment(nu, nk);
      lam = z.tail(ml);
    };

    auto residual = [&](const VecX& z) {
      VecX q, qd, qdd, uu, lam;
      kinematics(z, q, qd, qdd);
      split(z, uu, lam);
      VecX u_full = actuation(tn);
      for (int i = 0; i < nk; ++i) u_full[pres.act_cols[i]] = uu[i];
      std::vector<ExtraPointForce> extra;
      LoopTerms lt;
      if (ml > 0) {
        forward_pass(sys_->evaluator().model(), q, qd, qdd, sys_->evaluator().workspace(),
                     EvalLevel::Dynamics);
        lt = loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        extra = loop_wrenches(loops, lt, lam, false);
      }
      const auto& bw = sys_->evaluator().inverse_dynamics(q, qd, qdd, tn, extra);
      const ActuationEval act = gvs::actuation(sys_->evaluator().model(), q, u_full, false);
      const VecX tau = act.Bu - sys_->evaluator().model().K * q - sys_->evaluator().model().D * qd;
      VecX R(n + ml);
      R.head(n) = tau - bw.ID;
      if (ml > 0) R.tail(ml) = lt.e;
      return R;
    };

    auto jacobian = [&](const VecX& z) {
      VecX q, qd, qdd, uu, lam;
      kinematics(z, q, qd, qdd);
      split(z, uu, lam);
      VecX u_full = actuation(tn);
      for (int i = 0; i < nk; ++i) u_full[pres.act_cols[i]] = uu[i];
      MatX J = MatX::Zero(n + ml, nu + nk + ml);
      std::vector<ExtraPointForce> extra;
      if (ml > 0) {
        forward_pass(sys_->evaluator().model(), q, qd, qdd, sys_->evaluator().workspace(),
                     EvalLevel::Dynamics);
        const LoopTerms lt0 =
            loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        extra = loop_wrenches(loops, lt0, lam, true);
      }
      const DynamicsJacobians dj =
          dynamics_jacobians_at(sys_->evaluator(), q, qd, qdd, u_full, tn, extra);
      const MatX top = (dj.dtau_dq - dj.dID_dq) + cv * (dj.dtau_dqd - dj.dID_dqd) - ca * dj.dID_dqdd;
      for (int i = 0; i < nu; ++i) J.col(i).head(n) = top.col(unknown[i]);
      if (nk > 0) {
        const ActuationEval act = gvs::actuation(sys_->evaluator().model(), q, u_full, false);
        for (int i = 0; i < nk; ++i) J.col(nu + i).head(n) = act.B.col(pres.act_cols[i]);
      }
      if (ml > 0) {
        const LoopTerms lt = loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        J.topRightCorner(n, ml) = lt.A.transpose();
        const MatX dedq = sys_->de_dq(lt);
        for (int i = 0; i < nu; ++i) J.col(i).tail(ml) = dedq.col(unknown[i]);
      }
      return J;
    };
    auto jacobian_fd = [&](const VecX& z) {
      const double eps = 1e-6;
      const VecX R0 = residual(z);
      MatX J(R0.size(), z.size());
      for (int j = 0; j < z.size(); ++j) {
        VecX zp = z;
        zp[j] += eps;
        J.col(j) = (residual(zp) - R0) / eps;
      }
      return J;
    };

    VecX z(nu + nk + ml);
    for (int i = 0; i < nu; ++i) z[i] = prev.q[unknown[i]];
    z.segment(nu, nk) = nk > 0 && prev.u_u.size() == nk ? prev.u_u : VecX::Zero(nk);
    z.tail(ml) = ml > 0 && prev.lambda.size() == ml ? prev.lambda : VecX::Zero(ml);

    int it = 0;
    if (mode == JacobianMode::Analytic)
      it = detail::newton_solve(z, residual, jacobian, ns_);
    else
      it = detail::newton_solve(z, residual, jacobian_fd, ns_);
    if (iters) *iters += it;

    NewmarkState s;
    kinematics(z, s.q, s.qd, s.qdd);
    split(z, s.u_u, s.lambda);
    return s;
  }

  /// Newton on the static residual tau - ID at zero rates; prescribed joints
  /// contribute their unknown actuation, loops their multipliers.
  ConstrainedAccel statics_solve(VecX& q, JacobianMode mode, double t = 0) {
    const int n = ndof();
    const auto& pres = sys_->constraints().prescribed;
    const auto& loops = sys_->constraints().loops;
    const auto unknown = sys_->unknown_dofs();
    const int nu = static_cast<int>(unknown.size());
    const int nk = pres.size();
    const int ml = sys_->constraints().loop_rows();
    const VecX zero = VecX::Zero(n);

    VecX qk, qdk, qddk;
    if (nk > 0) pres.sample(t, qk, qdk, qddk);

    auto assemble_q = [&](const VecX& z) {
      VecX qq(n);
      for (int i = 0; i < nu; ++i) qq[unknown[i]] = z[i];
      for (int i = 0; i < nk; ++i) qq[pres.dofs[i]] = qk[i];
      return qq;
    };

    auto residual = [&](const VecX& z) {
      const VecX qq = assemble_q(z);
      VecX u_full = actuation(t);
      for (int i = 0; i < nk; ++i) u_full[pres.act_cols[i]] = z[nu + i];
      std::vector<ExtraPointForce> extra;
      LoopTerms lt;
      if (ml > 0) {
        forward_pass(sys_->evaluator().model(), qq, zero, zero, sys_->evaluator().workspace(),
                     EvalLevel::Dynamics);
        lt = loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        extra = loop_wrenches(loops, lt, z.tail(ml), false);
      }
      const auto& bw = sys_->evaluator().inverse_dynamics(qq, zero, zero, t, extra);
      const ActuationEval act = gvs::actuation(sys_->evaluator().model(), qq, u_full, false);
      VecX R(n + ml);
      R.head(n) = act.Bu - sys_->evaluator().model().K * qq - bw.ID;
      if (ml > 0) R.tail(ml) = lt.e;
      return R;
    };
    auto jacobian = [&](const VecX& z) {
      const VecX qq = assemble_q(z);
      VecX u_full = actuation(t);
      for (int i = 0; i < nk; ++i) u_full[pres.act_cols[i]] = z[nu + i];
      std::vector<ExtraPointForce> extra;
      if (ml > 0) {
        forward_pass(sys_->evaluator().model(), qq, zero, zero, sys_->evaluator().workspace(),
                     EvalLevel::Dynamics);
        const LoopTerms lt0 =
            loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        extra = loop_wrenches(loops, lt0, z.tail(ml), true);
      }
      const DynamicsJacobians dj =
          dynamics_jacobians_at(sys_->evaluator(), qq, zero, zero, u_full, t, extra);
      MatX J = MatX::Zero(n + ml, nu + nk + ml);
      const MatX top = dj.dtau_dq - dj.dID_dq;
      for (int i = 0; i < nu; ++i) J.col(i).head(n) = top.col(unknown[i]);
      if (nk > 0) {
        const ActuationEval act = gvs::actuation(sys_->evaluator().model(), qq, u_full, false);
        for (int i = 0; i < nk; ++i) J.col(nu + i).head(n) = act.B.col(pres.act_cols[i]);
      }
      if (ml > 0) {
        const LoopTerms lt = loop_terms(sys_->evaluator().model(), sys_->evaluator().workspace(), loops);
        J.topRightCorner(n, ml) = lt.A.transpose();
        const MatX dedq = sys_->de_dq(lt);
        for (int i = 0; i < nu; ++i) J.col(i).tail(ml) = dedq.col(unknown[i]);
      }
      return J;
    };
    auto jacobian_fd = [&](const VecX& z) {
      const double eps = 1e-6;
      const VecX R0 = residual(z);
      MatX J(R0.size(), z.size());
      for (int j = 0; j < z.size(); ++j) {
        VecX zp = z;
        zp[j] += eps;
        J.col(j) = (residual(zp) - R0) / eps;
      }
      return J;
    };

    VecX z = VecX::Zero(nu + nk + ml);
    for (int i = 0; i < nu; ++i) z[i] = q[unknown[i]];
    if (mode == JacobianMode::Analytic)
      detail::newton_solve(z, residual, jacobian, ns_);
    else
      detail::newton_solve(z, residual, jacobian_fd, ns_);

    q = assemble_q(z);
    ConstrainedAccel out;
    out.qdd = VecX::Zero(n);
    out.u_u = z.segment(nu, nk);
    out.lambda = z.tail(ml);
    return out;
  }

  int ndof() const { return sys_->evaluator().model().ndof; }
  ConstrainedDynamics& system() { return *sys_; }
  const NewtonSettings& newton_settings() const { return ns_; }

private:
  ConstrainedDynamics* sys_;
  VecX u_;
  std::function<VecX(double)> u_fn_;
  NewtonSettings ns_;
};

}  // namespace gvs
