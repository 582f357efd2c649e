#include "ac_model.hpp"

#include <cmath>
#include <complex>

namespace dcots::detail {

BranchCoeffs branch_coeffs(const Branch& br) {
  using cd = std::complex<double>;
  const auto adm = branch_admittance(br);
  const cd y = adm.series;
  const cd ysh = adm.shunt_end;
  const double tau = br.tap;
  const cd shift = std::polar(1.0, br.shift);

  const cd yff = (y + ysh) / (tau * tau);
  const cd yft = -y * shift / tau;
  const cd ytf = -y * std::conj(shift) / tau;
  const cd ytt = y + ysh;

  BranchCoeffs k;
  k.p_from = {yff.real(), yft.real(), yft.imag()};
  k.q_from = {-yff.imag(), -yft.imag(), yft.real()};
  k.p_to = {ytt.real(), ytf.real(), ytf.imag()};
  k.q_to = {-ytt.imag(), -ytf.imag(), ytf.real()};
  return k;
}

LocalFlow local_flow(const FlowCoeffs& k, double theta_i, double theta_j, double vi, double vj, bool with_hessian) {
  const double d = theta_i - theta_j;
  const double cs = std::cos(d);
  const double sn = std::sin(d);
  const double t = k.alpha * cs + k.beta * sn;
  const double tp = -k.alpha * sn + k.beta * cs;

  LocalFlow out;
  out.value = k.c * vi * vi + vi * vj * t;
  const double fd = vi * vj * tp;
  out.grad << fd, -fd, 2.0 * k.c * vi + vj * t, vi * t;
  if (!with_hessian) return out;

  const double fdd = -vi * vj * t;
  const double fd_vi = vj * tp;
  const double fd_vj = vi * tp;
  Eigen::Matrix4d& h = out.hess;
  h(0, 0) = fdd;
  h(0, 1) = -fdd;
  h(1, 1) = fdd;
  h(0, 2) = fd_vi;
  h(1, 2) = -fd_vi;
  h(0, 3) = fd_vj;
  h(1, 3) = -fd_vj;
  h(2, 2) = 2.0 * k.c;
  h(2, 3) = t;
  h(3, 3) = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < r; ++c) h(r, c) = h(c, r);
  return out;
}

}  // namespace dcots::detail
