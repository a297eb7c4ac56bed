#pragma once

// SE(3)/se(3) numerical kernel: hat/vee, adjoint maps and operators,
// exponential/logarithm, and the tangent operator with its coefficient
// families. Screws are ordered angular-first: V = [w; v]. Wrenches pair
// (moment; force) under the same layout.

#include <cmath>
#include <initializer_list>
#include <iterator>

#include "gvs/types.hpp"

namespace gvs {

inline Mat3 tilde(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

inline Vec3 untilde(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

inline Mat4 hat(const Vec6& V) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = tilde(V.head<3>());
  m.topRightCorner<3, 1>() = V.tail<3>();
  return m;
}

/// Inverse of hat. Rejects matrices that do not match the se(3) pattern
/// (skew top-left block, zero bottom row) beyond `tol`.
inline Vec6 vee(const Mat4& m, double tol = 1e-9) {
  const Mat3 a = m.topLeftCorner<3, 3>();
  if ((a + a.transpose()).cwiseAbs().maxCoeff() > tol || m.row(3).cwiseAbs().maxCoeff() > tol)
    throw Error(ErrorCode::DomainError, "vee: matrix is not in se(3)");
  Vec6 V;
  V.head<3>() = untilde(a);
  V.tail<3>() = m.topRightCorner<3, 1>();
  return V;
}

inline Mat6 ad(const Vec6& V) {
  Mat6 m = Mat6::Zero();
  const Mat3 w = tilde(V.head<3>());
  m.topLeftCorner<3, 3>() = w;
  m.bottomRightCorner<3, 3>() = w;
  m.bottomLeftCorner<3, 3>() = tilde(V.tail<3>());
  return m;
}

inline Mat6 ad_star(const Vec6& V) {
  Mat6 m = Mat6::Zero();
  const Mat3 w = tilde(V.head<3>());
  m.topLeftCorner<3, 3>() = w;
  m.bottomRightCorner<3, 3>() = w;
  m.topRightCorner<3, 3>() = tilde(V.tail<3>());
  return m;
}

inline Mat6 ad_bar_star(const Vec6& V) {
  Mat6 m = Mat6::Zero();
  const Mat3 w = tilde(V.head<3>());
  const Mat3 v = tilde(V.tail<3>());
  m.topLeftCorner<3, 3>() = w;
  m.topRightCorner<3, 3>() = v;
  m.bottomLeftCorner<3, 3>() = v;
  return -m;
}

inline Mat6 Ad(const RigidTransform& g) {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = g.R;
  m.bottomRightCorner<3, 3>() = g.R;
  m.bottomLeftCorner<3, 3>() = tilde(g.p) * g.R;
  return m;
}

inline Mat6 Ad_star(const RigidTransform& g) {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = g.R;
  m.bottomRightCorner<3, 3>() = g.R;
  m.topRightCorner<3, 3>() = tilde(g.p) * g.R;
  return m;
}

inline Mat6 Ad_inv(const RigidTransform& g) { return Ad(g.inverse()); }

/// Applies Ad_g^{-1} to a screw without forming the 6x6 matrix.
inline Vec6 apply_Ad_inv(const RigidTransform& g, const Vec6& V) {
  Vec6 out;
  out.head<3>() = g.R.transpose() * V.head<3>();
  out.tail<3>() = g.R.transpose() * (V.tail<3>() - g.p.cross(V.head<3>()));
  return out;
}

// rotation angle of the angular block
inline double screw_angle(const Vec6& V) { return V.head<3>().norm(); }

constexpr double kThetaSwitch = 1e-4;

// The closed forms of the coefficient families divide by theta^2..theta^7 and
// cancel catastrophically for small angles; the series below is accurate to
// ~1e-19 at the switch, the closed form to ~1e-13.
constexpr double kCoeffSwitch = 0.6;

/// f_r, f'_r, f''_r (r = 1..4) of the tangent-operator expansion, with
/// Taylor-series evaluation below the switch angle.
struct CoeffFamilies {
  double f[4];
  double fp[4];
  double fpp[4];
};

inline CoeffFamilies coefficient_families(double th) {
  CoeffFamilies c;
  if (th < kCoeffSwitch) {
    const double t2 = th * th;
    auto horner = [t2](std::initializer_list<double> coeffs) {
      // coefficients of ascending even powers
      double acc = 0.0;
      for (auto it = std::rbegin(coeffs); it != std::rend(coeffs); ++it) acc = acc * t2 + *it;
      return acc;
    };
    c.f[0] = horner({5.00000000000000000e-01, 0.0, -1.38888888888888894e-03, 4.96031746031746031e-05,
                     -8.26719576719576754e-07, 8.35070279514724007e-09, -5.73537279886486209e-11,
                     2.86768639943243103e-13, -1.09334448780103594e-15});
    c.f[1] = horner({1.66666666666666657e-01, 0.0, -1.98412698412698413e-04, 5.51146384479717850e-06,
                     -7.51563251563251607e-08, 6.42361753472864534e-10, -3.82358186590990790e-12,
                     1.68687435260731252e-14, -5.75444467263703049e-17});
    c.f[2] = horner({4.16666666666666644e-02, -2.77777777777777788e-03, 7.44047619047619115e-05,
                     -1.10229276895943553e-06, 1.04383784939340501e-08, -6.88244735863783503e-11,
                     3.34563413267116961e-13, -1.24953655748689802e-15, 3.69928586098094850e-18});
    c.f[3] = horner({8.33333333333333322e-03, -3.96825396825396825e-04, 8.26719576719576775e-06,
                     -1.00208433541766881e-07, 8.02952191841080745e-10, -4.58829823909188964e-12,
                     1.96802007804186450e-14, -6.57650819729946360e-17, 1.76156469570521357e-19});
    c.fp[0] = th * t2 * horner({-5.55555555555555577e-03, 2.97619047619047646e-04, -6.61375661375661403e-06,
                                8.35070279514724007e-08, -6.88244735863783451e-10, 4.01476095920540334e-12,
                                -1.74935118048165751e-14, 5.91885737756951761e-17});
    c.fp[1] = th * t2 * horner({-7.93650793650793650e-04, 3.30687830687830710e-05, -6.01250601250601285e-07,
                                6.42361753472864596e-09, -4.58829823909188980e-11, 2.36162409365023752e-13,
                                -9.20711147621924879e-16, 2.81850351312834172e-18});
    c.fp[2] = th * horner({-5.55555555555555577e-03, 2.97619047619047646e-04, -6.61375661375661403e-06,
                           8.35070279514724007e-08, -6.88244735863783451e-10, 4.01476095920540334e-12,
                           -1.74935118048165751e-14, 5.91885737756951761e-17, -1.60142245064110316e-19});
    c.fp[3] = th * horner({-7.93650793650793650e-04, 3.30687830687830710e-05, -6.01250601250601285e-07,
                           6.42361753472864596e-09, -4.58829823909188980e-11, 2.36162409365023752e-13,
                           -9.20711147621924879e-16, 2.81850351312834172e-18, -6.96270630713523100e-21});
    c.fpp[0] = t2 * horner({-1.66666666666666664e-02, 1.48809523809523801e-03, -4.62962962962962940e-05,
                            7.51563251563251527e-07, -7.57069209450161786e-09, 5.21918924696702466e-11,
                            -2.62402677072248591e-13, 1.00620575418681793e-15});
    c.fpp[1] = t2 * horner({-2.38095238095238117e-03, 1.65343915343915335e-04, -4.20875420875420847e-06,
                            5.78125578125578103e-08, -5.04712806300107885e-10, 3.07011132174530853e-12,
                            -1.38106672143288740e-14, 4.79145597231818092e-17});
    c.fpp[2] = horner({-5.55555555555555577e-03, 8.92857142857142829e-04, -3.30687830687830710e-05,
                       5.84549195660306779e-07, -6.19420262277405158e-09, 4.41623705512594399e-11,
                       -2.27415653462615473e-13, 8.87828606635427604e-16, -2.72241816608987528e-18});
    c.fpp[3] = horner({-7.93650793650793650e-04, 9.92063492063492063e-05, -3.00625300625300611e-06,
                       4.49653227431005184e-08, -4.12946841518270102e-10, 2.59778650301526112e-12,
                       -1.19692449190850242e-14, 4.22775526969251258e-17, -1.18366007221298924e-19});
  } else {
    const double s = std::sin(th), co = std::cos(th);
    const double t2 = th * th, t3 = t2 * th, t4 = t3 * th, t5 = t4 * th, t6 = t5 * th, t7 = t6 * th;
    c.f[0] = (4 - 4 * co - th * s) / (2 * t2);
    c.f[1] = (4 * th - 5 * s + th * co) / (2 * t3);
    c.f[2] = (2 - 2 * co - th * s) / (2 * t4);
    c.f[3] = (2 * th - 3 * s + th * co) / (2 * t5);
    c.fp[0] = (-8 + (8 - t2) * co + 5 * th * s) / (2 * t3);
    c.fp[1] = (-8 * th + (15 - t2) * s - 7 * th * co) / (2 * t4);
    c.fp[2] = (-8 + (8 - t2) * co + 5 * th * s) / (2 * t5);
    c.fp[3] = (-8 * th + (15 - t2) * s - 7 * th * co) / (2 * t6);
    c.fpp[0] = (24 - (24 - 6 * t2) * co - (18 * th - t3) * s) / (2 * t4);
    c.fpp[1] = (24 * th - (60 - 9 * t2) * s + (36 * th - t3) * co) / (2 * t5);
    c.fpp[2] = (40 - (40 - 8 * t2) * co - (28 * th - t3) * s) / (2 * t6);
    c.fpp[3] = (40 * th - (90 - 11 * t2) * s + (50 * th - t3) * co) / (2 * t7);
  }
  return c;
}

inline RigidTransform exp_se3(const Vec6& Om) {
  const double th = screw_angle(Om);
  double a, b;
  if (th < kThetaSwitch) {
    const double t2 = th * th, t4 = t2 * t2;
    a = 0.5 - t2 / 24 + t4 / 720;
    b = 1.0 / 6 - t2 / 120 + t4 / 5040;
  } else {
    a = (1 - std::cos(th)) / (th * th);
    b = (th - std::sin(th)) / (th * th * th);
  }
  const Mat3 w = tilde(Om.head<3>());
  const Mat3 w2 = w * w;
  RigidTransform g;
  g.R = Mat3::Identity() + w + a * w2 + b * w2 * w;
  g.p = (Mat3::Identity() + a * w + b * w2) * Om.tail<3>();
  return g;
}

/// Logarithm of SE(3). Requires the rotation angle to stay clear of pi.
inline Vec6 log_se3(const RigidTransform& g) {
  const double tr = g.R.trace();
  const Vec3 s = 0.5 * untilde(g.R - g.R.transpose());  // sin(th) * axis
  const double cth = std::min(1.0, std::max(-1.0, (tr - 1) / 2));
  const double th = std::atan2(s.norm(), cth);
  if (th >= M_PI - 1e-6)
    throw Error(ErrorCode::AngleNearPi, "log_se3: rotation angle within 1e-6 of pi");
  Vec3 w;
  if (th < kThetaSwitch) {
    // s = sin(th)*axis, th/sin(th) ~ 1 + th^2/6
    w = (1.0 + th * th / 6) * s;
  } else {
    w = (th / std::sin(th)) * s;
  }
  const Mat3 wt = tilde(w);
  double cinv;
  if (th < kThetaSwitch) {
    const double t2 = th * th;
    cinv = 1.0 / 12 + t2 / 720 + t2 * t2 / 30240;
  } else {
    cinv = (1.0 - th * std::sin(th) / (2 * (1 - std::cos(th)))) / (th * th);
  }
  const Mat3 Vinv = Mat3::Identity() - 0.5 * wt + cinv * (wt * wt);
  Vec6 out;
  out.head<3>() = w;
  out.tail<3>() = Vinv * g.p;
  return out;
}

/// Tangent operator T(Om) = I + sum_r f_r(th) ad_Om^r. Maps the coordinate
/// rate Om_dot to the relative twist expressed at the base frame of the step.
inline Mat6 tangent_T(const Vec6& Om) {
  const CoeffFamilies c = coefficient_families(screw_angle(Om));
  const Mat6 A = ad(Om);
  Mat6 T = Mat6::Identity();
  Mat6 P = A;
  for (int r = 0; r < 4; ++r) {
    T.noalias() += c.f[r] * P;
    if (r < 3) P = P * A;
  }
  return T;
}

inline Mat6 tangent_Tdot(const Vec6& Om, const Vec6& Omd) {
  const double th = screw_angle(Om);
  const CoeffFamilies c = coefficient_families(th);
  const double thd = th > 1e-12 ? Om.head<3>().dot(Omd.head<3>()) / th : 0.0;
  const Mat6 A = ad(Om);
  const Mat6 B = ad(Omd);
  Mat6 powA[5];
  powA[0] = Mat6::Identity();
  for (int i = 1; i <= 4; ++i) powA[i] = powA[i - 1] * A;
  Mat6 out = Mat6::Zero();
  for (int r = 1; r <= 4; ++r) {
    Mat6 dadr = Mat6::Zero();
    for (int u = 1; u <= r; ++u) dadr.noalias() += powA[r - u] * B * powA[u - 1];
    out.noalias() += (c.fp[r - 1] * thd) * powA[r];
    out.noalias() += c.f[r - 1] * dadr;
  }
  return out;
}

/// Inverse of the tangent operator: dense 6x6 solve above the switch angle,
/// Bernoulli (dexpinv) series below it.
inline Mat6 tangent_T_inverse(const Vec6& Om) {
  const double th = screw_angle(Om);
  if (th >= M_PI - 1e-6)
    throw Error(ErrorCode::AngleNearPi, "tangent_T_inverse: angle within 1e-6 of pi");
  if (th < kThetaSwitch) {
    const Mat6 A = ad(Om);
    const Mat6 A2 = A * A;
    const Mat6 A4 = A2 * A2;
    return Mat6::Identity() - A / 2 + A2 / 12 - A4 / 720 + A4 * A2 / 30240;
  }
  const Mat6 T = tangent_T(Om);
  Eigen::FullPivLU<Mat6> lu(T);
  if (!lu.isInvertible())
    throw Error(ErrorCode::NearSingularTangent, "tangent_T_inverse: T is singular");
  const Mat6 Tinv = lu.inverse();
  const double cond = T.cwiseAbs().rowwise().sum().maxCoeff() * Tinv.cwiseAbs().rowwise().sum().maxCoeff();
  if (cond > 1e12)
    throw Error(ErrorCode::NearSingularTangent, "tangent_T_inverse: condition number above 1e12");
  return Tinv;
}

}  // namespace gvs
