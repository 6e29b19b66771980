#pragma once

// Built-in smooth reference solution on the unit square (0,1)^2: a
// divergence-free trigonometric velocity and a zero-mean pressure, with the
// volumetric load that makes the pair solve the generalized Stokes system for
// any admissible flow law. The symmetric velocity gradient is diagonal,
// phi(x) diag(1, -1), so div sigma(grad_s u) is available in closed form.

#include <polystokes/rheology.hpp>
#include <polystokes/types.hpp>

#include <cmath>
#include <functional>
#include <numbers>

namespace polystokes {

struct ReferenceCase {
  FlowLaw law;
  std::function<Vec2(const Vec2&)> velocity;
  std::function<double(const Vec2&)> pressure;
  std::function<Vec2(const Vec2&)> load;
};

/// Exact solution pair and matching load for `law`. For degenerate
/// shear-thinning laws (r < 2, delta = 0) the load blows up on the lines
/// x = 1 and y = 1 where grad_s u vanishes; interior quadrature points never
/// hit them, and the load stays r'-integrable.
inline ReferenceCase reference_case(const FlowLaw& law) {
  law.validate();
  const double c = std::numbers::pi / 2.0;

  ReferenceCase out;
  out.law = law;
  out.velocity = [c](const Vec2& x) {
    return Vec2(std::sin(c * x.x()) * std::cos(c * x.y()),
                -std::cos(c * x.x()) * std::sin(c * x.y()));
  };
  out.pressure = [c](const Vec2& x) {
    return std::sin(c * x.x()) * std::sin(c * x.y()) -
           4.0 / (std::numbers::pi * std::numbers::pi);
  };
  out.load = [c, law](const Vec2& x) {
    const double sx = std::sin(c * x.x()), cx = std::cos(c * x.x());
    const double sy = std::sin(c * x.y()), cy = std::cos(c * x.y());
    const double phi = c * cx * cy;  // grad_s u = phi diag(1, -1)
    const double phi_x = -c * c * sx * cy;
    const double phi_y = -c * c * cx * sy;
    const double alpha = std::numbers::sqrt2 * std::abs(phi);  // |grad_s u|

    // (div sigma)_1 = d/dx [varsigma(alpha) phi], (div sigma)_2 = -d/dy [...],
    // with d(alpha)/dx_j = sqrt(2) sign(phi) phi_j.
    const double modulus = detail::scalar_modulus(law, alpha);
    double chain = 0.0;
    if (law.r != 2.0 && alpha > 0.0) {
      const double sign = phi > 0.0 ? 1.0 : -1.0;
      chain = detail::scalar_modulus_derivative(law, alpha) * std::numbers::sqrt2 * sign * phi;
    }
    const Vec2 div_sigma((chain + modulus) * phi_x, -(chain + modulus) * phi_y);
    const Vec2 grad_p(c * cx * sy, c * sx * cy);
    return Vec2(grad_p - div_sigma);
  };
  return out;
}

}  // namespace polystokes
