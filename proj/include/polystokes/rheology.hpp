// Strain rate-shear stress laws sigma(tau) = mu (delta^a + |tau|^a)^((r-2)/a) tau,
// their Newton tangents, the derived framing constants, and a randomized check
// of the Hoelder-continuity / strong-monotonicity inequalities those constants
// must satisfy.

#pragma once

#include <polystokes/rng.hpp>
#include <polystokes/types.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace polystokes {

enum class LawKind { newtonian, power_law, carreau_yasuda };

inline const char* to_string(LawKind kind) {
  switch (kind) {
    case LawKind::newtonian: return "newtonian";
    case LawKind::power_law: return "power_law";
    case LawKind::carreau_yasuda: return "carreau_yasuda";
  }
  return "?";
}

/// Tangent regularization radius: the Newton tangent evaluates the scalar
/// modulus at max(|tau|, eps_tangent). Never used in residual evaluation.
inline constexpr double eps_tangent = 1e-10;

struct FlowLaw {
  LawKind kind = LawKind::carreau_yasuda;
  double mu = 1.0;     // consistency index, > 0
  double delta = 0.0;  // degeneracy parameter, >= 0
  double a = 2.0;      // transition index, > 0
  double r = 2.0;      // flow behavior index, in (1, inf)

  /// Conjugate exponent r' = r/(r-1).
  double r_conj() const { return r / (r - 1.0); }

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("flow law: mu must be positive");
    if (!(delta >= 0.0)) throw std::invalid_argument("flow law: delta must be nonnegative");
    if (!(a > 0.0)) throw std::invalid_argument("flow law: a must be positive");
    if (!(r > 1.0)) throw std::invalid_argument("flow law: r must lie in (1, inf)");
    if (kind == LawKind::power_law && delta != 0.0) {
      throw std::invalid_argument("flow law: power_law requires delta = 0");
    }
    if (kind == LawKind::newtonian && r != 2.0) {
      throw std::invalid_argument("flow law: newtonian requires r = 2");
    }
  }
};

struct LawConstants {
  double r_hat = 2.0;    // singular exponent min(r, 2)
  double sigma_de = 0.0; // degeneracy constant
  double sigma_hc = 1.0; // Hoelder-continuity constant
  double sigma_sm = 1.0; // strong-monotonicity constant
};

namespace detail {

/// Scalar modulus varsigma(alpha) = mu (delta^a + alpha^a)^((r-2)/a).
inline double scalar_modulus(const FlowLaw& law, double alpha) {
  return law.mu * std::pow(std::pow(law.delta, law.a) + std::pow(alpha, law.a), (law.r - 2.0) / law.a);
}

/// d(varsigma)/d(alpha) for alpha > 0.
inline double scalar_modulus_derivative(const FlowLaw& law, double alpha) {
  const double base = std::pow(law.delta, law.a) + std::pow(alpha, law.a);
  return law.mu * (law.r - 2.0) * std::pow(base, (law.r - 2.0) / law.a - 1.0) *
         std::pow(alpha, law.a - 1.0);
}

}  // namespace detail

/// sigma(tau); total function with sigma(0) = 0 (0 * inf -> 0 convention in
/// the degenerate shear-thinning case).
inline Mat2 stress(const FlowLaw& law, const Mat2& tau) {
  const double norm = sym_norm(tau);
  if (norm == 0.0 && law.delta == 0.0) return Mat2::Zero();
  return detail::scalar_modulus(law, norm) * tau;
}

/// Frechet derivative d(sigma)/d(tau) as a symmetric 3x3 matrix acting on the
/// orthonormal coordinates of sym_to_vec: varsigma(alpha) Id + varsigma'(alpha)/alpha
/// (tau x tau), with alpha = max(|tau|, eps_tangent) (regularized tangent; the
/// exact derivative is unbounded at tau = 0 for r < 2, delta = 0).
inline Mat3 stress_tangent(const FlowLaw& law, const Mat2& tau) {
  const double alpha = std::max(sym_norm(tau), eps_tangent);
  const Vec3 t = sym_to_vec(tau);
  return detail::scalar_modulus(law, alpha) * Mat3::Identity() +
         (detail::scalar_modulus_derivative(law, alpha) / alpha) * (t * t.transpose());
}

/// Bracket for d(alpha varsigma(alpha))/d(alpha):
/// mu (r_hat - 1) (delta^a + alpha^a)^((r-2)/a) <= . <= mu (r + 1 - r_hat) (same).
inline std::pair<double, double> scalar_modulus_bounds(const FlowLaw& law, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("scalar_modulus_bounds: alpha must be positive");
  const double r_hat = std::min(law.r, 2.0);
  const double shape = std::pow(std::pow(law.delta, law.a) + std::pow(alpha, law.a), (law.r - 2.0) / law.a);
  return {law.mu * (r_hat - 1.0) * shape, law.mu * (law.r + 1.0 - r_hat) * shape};
}

/// Framing constants for the law: sigma_de = delta and the case formulas for
/// sigma_hc, sigma_sm (with constant mu and a, so mu_- = mu_+ = mu, a_- = a_+ = a).
inline LawConstants law_constants(const FlowLaw& law) {
  const double r = law.r;
  const double q = 1.0 / law.a - 1.0 / r;
  const double q_plus = std::max(0.0, q);
  const double q_minus = -std::min(0.0, q);
  LawConstants constants;
  constants.r_hat = std::min(r, 2.0);
  constants.sigma_de = law.delta;
  if (r < 2.0) {
    constants.sigma_hc = law.mu / (r - 1.0) * std::pow(2.0, (-q_minus - 1.0) * (r - 2.0) + 1.0 / r);
  } else {
    constants.sigma_hc = law.mu * (r - 1.0) * std::pow(2.0, q_plus * (r - 2.0));
  }
  if (r <= 2.0) {
    constants.sigma_sm = law.mu * (r - 1.0) * std::pow(2.0, q_plus * (r - 2.0));
  } else {
    constants.sigma_sm = law.mu / (r - 1.0) * std::pow(2.0, (-q_minus - 1.0) * (r - 2.0) - 1.0);
  }
  return constants;
}

struct PowerFramedReport {
  std::size_t samples = 0;
  double worst_holder = 0.0;
  double worst_monotonicity = 0.0;
  bool pass = false;
};

namespace detail {

/// Random symmetric 2x2 matrix with Frobenius norm drawn log-uniformly from
/// [1e-3, 1e3] and uniformly random orientation.
inline Mat2 random_sym(Rng& rng) {
  Vec3 direction;
  direction << rng.normal(), rng.normal(), rng.normal();
  direction.normalize();
  const double magnitude = std::pow(10.0, rng.uniform(-3.0, 3.0));
  return vec_to_sym(magnitude * direction);
}

}  // namespace detail

/// Samples random pairs (tau, eta) and checks the two framing inequalities
///   |sigma(tau) - sigma(eta)| <= sigma_hc D^((r-r_hat)/r) |tau-eta|^(r_hat-1),
///   (sigma(tau)-sigma(eta)):(tau-eta) D^((2-r_hat)/r) >= sigma_sm |tau-eta|^(r+2-r_hat),
/// with D = sigma_de^r + |tau|^r + |eta|^r. Reports the worst ratios
/// (left/right resp. right/left), so pass means both stay <= 1 + 1e-9.
inline PowerFramedReport verify_power_framed(const FlowLaw& law, std::size_t sample_count,
                                             std::uint64_t seed) {
  if (sample_count < 1) throw std::invalid_argument("verify_power_framed: sample_count must be >= 1");
  const LawConstants constants = law_constants(law);
  const double r = law.r;
  const double r_hat = constants.r_hat;
  Rng rng(seed);
  PowerFramedReport report;
  report.samples = sample_count;
  for (std::size_t s = 0; s < sample_count; s++) {
    const Mat2 tau = detail::random_sym(rng);
    const Mat2 eta = detail::random_sym(rng);
    const Mat2 diff = tau - eta;
    const double diff_norm = sym_norm(diff);
    if (diff_norm == 0.0) continue;
    const Mat2 stress_diff = stress(law, tau) - stress(law, eta);
    const double denom = std::pow(constants.sigma_de, r) + std::pow(sym_norm(tau), r) +
                         std::pow(sym_norm(eta), r);
    const double holder_rhs =
        constants.sigma_hc * std::pow(denom, (r - r_hat) / r) * std::pow(diff_norm, r_hat - 1.0);
    report.worst_holder = std::max(report.worst_holder, sym_norm(stress_diff) / holder_rhs);
    const double mono_lhs = sym_to_vec(stress_diff).dot(sym_to_vec(diff)) *
                            std::pow(denom, (2.0 - r_hat) / r);
    const double mono_rhs = constants.sigma_sm * std::pow(diff_norm, r + 2.0 - r_hat);
    report.worst_monotonicity = std::max(report.worst_monotonicity, mono_rhs / mono_lhs);
  }
  report.pass = report.worst_holder <= 1.0 + 1e-9 && report.worst_monotonicity <= 1.0 + 1e-9;
  return report;
}

}  // namespace polystokes
