#pragma once

// Closed-form stiffness model of the worm-gear variable stiffness actuator.
//
// A worm screw rides axially on a splined shaft between two preloaded spring
// packs. External joint torque reaches the worm wheel through a Bowden cable
// (efficiency mu, pulley ratio G) and pushes the worm axially; the springs do
// not move until the gear force exceeds their preload k_s * dL. Past that
// point the joint behaves as a linear spring offset by the preload, so its
// secant stiffness tau / theta decays towards k_s * r_gear^2 / (mu * G^2).
//
// All functions operate on magnitudes. Direction is handled by the dynamics.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "wave/errors.hpp"

namespace wave::model {

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}
}  // namespace detail

/// Parallel pair of preloaded compression springs acting on the worm.
struct SpringPack {
  double k_s = 800.0;              ///< equivalent linear stiffness, N/m
  double free_length = 0.050;      ///< m
  double max_compression = 0.030; ///< m, coils bind beyond this
  double precompression = 0.005;  ///< dL, m

  void validate() const {
    detail::require(std::isfinite(k_s) && k_s > 0.0, "spring.k_s must be > 0");
    detail::require(std::isfinite(free_length) && free_length > 0.0,
                    "spring.free_length must be > 0");
    detail::require(max_compression > 0.0 && max_compression <= free_length,
                    "spring.max_compression must be in (0, free_length]");
    detail::require(precompression >= 0.0 && precompression <= max_compression,
                    "spring.precompression must be in [0, max_compression]");
  }

  /// Remaining axial travel before the coils bind, m.
  double available_travel() const { return max_compression - precompression; }

  SpringPack with_precompression(double delta_l) const {
    SpringPack s = *this;
    s.precompression = delta_l;
    return s;
  }
};

struct Geometry {
  double r_gear = 0.030;               ///< worm-wheel (spur gear) pitch radius, m
  double r_pulley = 0.020;             ///< actuation pulley radius, m
  double r_joint = 0.020;              ///< joint pulley radius, m
  double moment_arm = 0.100;           ///< output link lever, m
  double worm_ratio = 40.0;            ///< worm reduction, motor revs per wheel rev
  double worm_pitch_diameter = 0.0235; ///< m
  double module = 0.0015;              ///< m
  int thread_starts = 1;

  /// G = r_pulley / r_joint.
  double gear_ratio() const { return r_pulley / r_joint; }

  void validate() const {
    for (double v : {r_gear, r_pulley, r_joint, moment_arm, worm_pitch_diameter, module})
      detail::require(std::isfinite(v) && v > 0.0, "geometry lengths must be > 0");
    detail::require(worm_ratio >= 1.0, "geometry.worm_ratio must be >= 1");
    detail::require(thread_starts >= 1, "geometry.thread_starts must be >= 1");
  }
};

struct Transmission {
  double mu = 1.0;           ///< Bowden cable efficiency, (0, 1]
  double tau_friction = 0.0; ///< Coulomb offset at the joint, N*m; identification only

  void validate() const {
    detail::require(mu > 0.0 && mu <= 1.0, "transmission.mu must be in (0, 1]");
    detail::require(tau_friction >= 0.0, "transmission.tau_friction must be >= 0");
  }
};

struct ActuatorParams {
  SpringPack spring;
  Geometry geometry;
  Transmission transmission;

  void validate() const {
    spring.validate();
    geometry.validate();
    transmission.validate();
  }
};

/// Stiffness that is either infinite (rigid state) or a finite positive value.
/// `Tag` separates linear worm stiffness (N/m) from joint stiffness (N*m/rad).
template <class Tag>
class TaggedStiffness {
public:
  static constexpr TaggedStiffness rigid() { return TaggedStiffness(true, 0.0); }
  static constexpr TaggedStiffness compliant(double k) { return TaggedStiffness(false, k); }

  constexpr bool is_rigid() const { return rigid_; }
  constexpr bool is_compliant() const { return !rigid_; }

  /// Finite stiffness. Throws on the rigid state.
  double value() const {
    if (rigid_) throw Error("stiffness value requested on a rigid state");
    return value_;
  }

  friend constexpr bool operator==(const TaggedStiffness&, const TaggedStiffness&) = default;

private:
  constexpr TaggedStiffness(bool rigid, double v) : rigid_(rigid), value_(v) {}
  bool rigid_;
  double value_;
};

struct LinearTag {};
struct JointTag {};
using LinearStiffness = TaggedStiffness<LinearTag>;  // N/m
using StiffnessResult = TaggedStiffness<JointTag>;   // N*m/rad

/// Preload force of the spring pack, F_pre = k_s * dL.
inline double precompression_force(const SpringPack& spring) {
  return spring.k_s * spring.precompression;
}

/// Axial force on the worm for a joint torque magnitude: tau * mu * G / r_gear.
inline double gear_force(double tau_joint, const Geometry& geom, const Transmission& trans) {
  return tau_joint * trans.mu * geom.gear_ratio() / geom.r_gear;
}

/// Axial spring compression beyond the preload. Zero while f_gear <= F_pre.
/// Throws SaturationError if the coils would bind.
inline double spring_displacement(double f_gear, const SpringPack& spring) {
  const double f_pre = precompression_force(spring);
  if (f_gear <= f_pre) return 0.0;
  const double x = (f_gear - f_pre) / spring.k_s;
  if (x > spring.available_travel()) throw SaturationError(x, spring.available_travel());
  return x;
}

/// Secant stiffness F_gear / x of the worm support.
inline LinearStiffness local_stiffness(double f_gear, const SpringPack& spring) {
  const double f_pre = precompression_force(spring);
  if (f_gear <= f_pre) return LinearStiffness::rigid();
  return LinearStiffness::compliant(spring.k_s * f_gear / (f_gear - f_pre));
}

/// r_gear^2 / (mu * G^2): maps worm stiffness (N/m) to joint stiffness (N*m/rad).
inline double joint_stiffness_scale(const Geometry& geom, const Transmission& trans) {
  const double g = geom.gear_ratio();
  return geom.r_gear * geom.r_gear / (trans.mu * g * g);
}

/// Lower bound of the compliant joint stiffness, k_s * r_gear^2 / (mu * G^2).
inline double asymptotic_stiffness(const SpringPack& spring, const Geometry& geom,
                                   const Transmission& trans) {
  return spring.k_s * joint_stiffness_scale(geom, trans);
}

/// Joint torque at which the springs start to move: k_s * dL * r_gear / (mu * G).
inline double threshold_torque(const SpringPack& spring, const Geometry& geom,
                               const Transmission& trans) {
  return precompression_force(spring) * geom.r_gear / (trans.mu * geom.gear_ratio());
}

/// Joint stiffness tau / theta. Rigid iff tau_joint <= threshold_torque.
///
/// Evaluated in torque space, A * tau / (tau - tau_th), which is algebraically
/// identical to scaling local_stiffness(gear_force(tau)) but keeps the rigid
/// test and the denominator on the same rounded quantity.
inline StiffnessResult joint_stiffness(double tau_joint, const SpringPack& spring,
                                       const Geometry& geom, const Transmission& trans) {
  const double tau_th = threshold_torque(spring, geom, trans);
  if (tau_joint <= tau_th) return StiffnessResult::rigid();
  const double a = asymptotic_stiffness(spring, geom, trans);
  return StiffnessResult::compliant(a * tau_joint / (tau_joint - tau_th));
}

/// Joint rotation produced by an axial worm displacement, x * G / r_gear.
inline double joint_deflection_from_displacement(double x, const Geometry& geom) {
  return x * geom.gear_ratio() / geom.r_gear;
}

/// Static joint deflection under a torque magnitude. Propagates saturation.
/// Exactly zero wherever joint_stiffness reports the rigid state.
inline double joint_deflection(double tau_joint, const SpringPack& spring, const Geometry& geom,
                               const Transmission& trans) {
  if (tau_joint <= threshold_torque(spring, geom, trans)) return 0.0;
  const double x = spring_displacement(gear_force(tau_joint, geom, trans), spring);
  return joint_deflection_from_displacement(x, geom);
}

struct CurvePoint {
  double tau;                 ///< N*m
  double deflection;          ///< rad
  StiffnessResult stiffness;  ///< tau / deflection
};

/// Samples tau uniformly on [0, tau_max] (n_points inclusive of both ends).
inline std::vector<CurvePoint> torque_deflection_curve(double tau_max, std::size_t n_points,
                                                       const SpringPack& spring,
                                                       const Geometry& geom,
                                                       const Transmission& trans) {
  if (!(tau_max > 0.0)) throw ValidationError("tau_max must be > 0");
  if (n_points < 2) throw ValidationError("torque_deflection_curve needs at least 2 points");
  std::vector<CurvePoint> out;
  out.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double tau = tau_max * static_cast<double>(i) / static_cast<double>(n_points - 1);
    out.push_back({tau, joint_deflection(tau, spring, geom, trans),
                   joint_stiffness(tau, spring, geom, trans)});
  }
  return out;
}

/// Inverse of the static curve: torque needed to hold a deflection magnitude.
inline double torque_for_deflection(double deflection, const SpringPack& spring,
                                    const Geometry& geom, const Transmission& trans) {
  const double x = deflection * geom.r_gear / geom.gear_ratio();
  if (x > spring.available_travel()) throw SaturationError(x, spring.available_travel());
  return threshold_torque(spring, geom, trans) +
         asymptotic_stiffness(spring, geom, trans) * deflection;
}

struct SelfLockVerdict {
  bool locking;
  double lead_angle;  ///< rad
};

/// Worm lead angle, atan(starts * pi * module / (pi * pitch_diameter)).
inline double lead_angle(const Geometry& geom) {
  const double lead = geom.thread_starts * std::numbers::pi * geom.module;
  return std::atan(lead / (std::numbers::pi * geom.worm_pitch_diameter));
}

/// A worm drive cannot be back-driven when tan(lead) < contact friction.
inline SelfLockVerdict is_self_locking(double lead, double friction_coefficient) {
  if (friction_coefficient < 0.0) throw ValidationError("friction coefficient must be >= 0");
  return {std::tan(lead) < friction_coefficient, lead};
}

inline SelfLockVerdict is_self_locking(const Geometry& geom, double friction_coefficient) {
  return is_self_locking(lead_angle(geom), friction_coefficient);
}

}  // namespace wave::model
