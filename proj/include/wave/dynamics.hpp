#pragma once

// Single-joint hybrid dynamics.
//
// The angle-control motor positions the worm kinematically: the worm cannot be
// back-driven, so theta_cmd only ever changes through the commanded rate. The
// joint couples to theta_cmd through the bidirectional spring pack:
//
//   J_eff * theta'' = tau_ext(theta, t) - spring(theta - theta_cmd) - b * theta'
//
// spring() is odd. Below the preload threshold it is a stiff linear band
// (rigid_regularization_factor times the compliant slope); above it follows
// the affine law implied by the static stiffness model. The integrator is
// classical RK4 with the spring region frozen across each stage and region
// changes located by root finding, so kinks never fall inside an RK4 step.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <type_traits>
#include <variant>
#include <vector>

#include "wave/errors.hpp"
#include "wave/model.hpp"
#include "wave/units.hpp"

namespace wave::dynamics {

using model::ActuatorParams;

struct DynamicsParams {
  double inertia = 0.01;                    ///< kg*m^2
  double damping = 0.05;                    ///< N*m*s/rad
  double rigid_regularization_factor = 1000.0;
  double motor_torque_constant = 0.75;      ///< N*m/A, current proxy only

  void validate() const {
    if (!(inertia > 0.0)) throw ValidationError("dynamics.inertia must be > 0");
    if (!(damping >= 0.0)) throw ValidationError("dynamics.damping must be >= 0");
    if (!(rigid_regularization_factor >= 10.0))
      throw ValidationError("dynamics.rigid_regularization_factor must be >= 10");
    if (!(motor_torque_constant > 0.0))
      throw ValidationError("dynamics.motor_torque_constant must be > 0");
  }
};

struct JointState {
  double theta = 0.0;      ///< joint angle, rad
  double omega = 0.0;      ///< joint velocity, rad/s
  double x = 0.0;          ///< signed worm axial displacement, m
  double theta_cmd = 0.0;  ///< motor-side commanded joint angle, rad
  double delta_l = 0.0;    ///< current precompression, m

  double deflection() const { return theta - theta_cmd; }
};

// --- external loads -------------------------------------------------------

struct NoLoad {};
/// Point mass on the link moving in the horizontal plane: inertia only.
struct LateralMass {
  double mass = 0.5;
};
/// Point mass on the link moving in the vertical plane: inertia and gravity.
struct VerticalMass {
  double mass = 0.5;
};
/// Half-sine torque pulse.
struct Impulse {
  double tau_peak = 2.0;
  double t_start = 0.5;
  double width = 0.050;
};
struct ConstantTorque {
  double torque = 0.0;
};

using ExternalLoad = std::variant<NoLoad, LateralMass, VerticalMass, Impulse, ConstantTorque>;

inline void validate(const ExternalLoad& load) {
  std::visit(
      [](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LateralMass> || std::is_same_v<T, VerticalMass>) {
          if (!(l.mass >= 0.0)) throw ValidationError("load mass must be >= 0");
        } else if constexpr (std::is_same_v<T, Impulse>) {
          if (!(l.width > 0.0)) throw ValidationError("impulse width must be > 0");
          if (!(l.t_start >= 0.0)) throw ValidationError("impulse start must be >= 0");
        }
      },
      load);
}

inline double external_torque(const ExternalLoad& load, double theta, double t,
                              const model::Geometry& geom) {
  return std::visit(
      [&](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, VerticalMass>) {
          return -l.mass * units::gravity * geom.moment_arm * std::cos(theta);
        } else if constexpr (std::is_same_v<T, Impulse>) {
          const double u = (t - l.t_start) / l.width;
          if (u <= 0.0 || u >= 1.0) return 0.0;
          return l.tau_peak * std::sin(std::numbers::pi * u);
        } else if constexpr (std::is_same_v<T, ConstantTorque>) {
          return l.torque;
        } else {
          return 0.0;
        }
      },
      load);
}

inline double external_torque(const ExternalLoad& load, const JointState& state, double t,
                              const model::Geometry& geom) {
  return external_torque(load, state.theta, t, geom);
}

/// Inertia the load adds about the joint, m * arm^2.
inline double added_inertia(const ExternalLoad& load, const model::Geometry& geom) {
  const double r2 = geom.moment_arm * geom.moment_arm;
  if (auto* l = std::get_if<LateralMass>(&load)) return l->mass * r2;
  if (auto* v = std::get_if<VerticalMass>(&load)) return v->mass * r2;
  return 0.0;
}

/// Times where the load is not smooth; steps are split there.
inline std::vector<double> load_breakpoints(const ExternalLoad& load) {
  if (auto* p = std::get_if<Impulse>(&load)) return {p->t_start, p->t_start + p->width};
  return {};
}

// --- spring law -----------------------------------------------------------

enum class SpringRegion { Negative = -1, Band = 0, Positive = 1 };

/// Odd restoring law of the two spring packs in joint coordinates, for one
/// precompression value.
class SpringLaw {
public:
  SpringLaw(const ActuatorParams& act, const DynamicsParams& dyn, double delta_l)
      : geom_(act.geometry) {
    const model::SpringPack spring = act.spring.with_precompression(delta_l);
    asymptote_ = model::asymptotic_stiffness(spring, act.geometry, act.transmission);
    threshold_ = model::threshold_torque(spring, act.geometry, act.transmission);
    rigid_ = dyn.rigid_regularization_factor * asymptote_;
    band_ = threshold_ / rigid_;
    travel_ = spring.available_travel();
  }

  double asymptote() const { return asymptote_; }
  double threshold() const { return threshold_; }
  double rigid_stiffness() const { return rigid_; }
  /// Half-width of the rigid band, rad.
  double band() const { return band_; }
  double available_travel() const { return travel_; }

  SpringRegion region(double delta) const {
    if (delta > band_) return SpringRegion::Positive;
    if (delta < -band_) return SpringRegion::Negative;
    return SpringRegion::Band;
  }

  /// Torque of the given region's law, extended past its boundaries.
  double torque_in(SpringRegion r, double delta) const {
    switch (r) {
      case SpringRegion::Positive:
        return threshold_ + asymptote_ * (delta - band_);
      case SpringRegion::Negative:
        return -threshold_ + asymptote_ * (delta + band_);
      case SpringRegion::Band:
        break;
    }
    return rigid_ * delta;
  }

  double torque(double delta) const { return torque_in(region(delta), delta); }

  /// Stored energy relative to the undeflected joint, J.
  double potential(double delta) const {
    const double d = std::abs(delta);
    if (d <= band_) return 0.5 * rigid_ * d * d;
    const double c = d - band_;
    return 0.5 * rigid_ * band_ * band_ + threshold_ * c + 0.5 * asymptote_ * c * c;
  }

  /// Signed axial worm displacement implied by a deflection, m.
  double worm_displacement(double delta) const {
    const double d = std::abs(delta);
    if (d <= band_) return 0.0;
    const double x = (d - band_) * geom_.r_gear / geom_.gear_ratio();
    return delta < 0.0 ? -x : x;
  }

private:
  model::Geometry geom_;
  double asymptote_ = 0.0;
  double threshold_ = 0.0;
  double rigid_ = 0.0;
  double band_ = 0.0;
  double travel_ = 0.0;
};

/// Spring torque for the state's deflection; the joint feels its negative.
inline double restoring_torque(const JointState& state, const ActuatorParams& act,
                               const DynamicsParams& dyn) {
  const SpringLaw law(act, dyn, state.delta_l);
  const double delta = state.deflection();
  const double x = law.worm_displacement(delta);
  if (std::abs(x) > law.available_travel())
    throw SaturationError(std::abs(x), law.available_travel());
  return law.torque(delta);
}

// --- integration ----------------------------------------------------------

struct StepInputs {
  double t = 0.0;                      ///< time at the start of the step, s
  double theta_cmd_rate = 0.0;         ///< motor command, rad/s at the joint
  std::optional<double> stop_angle;    ///< upper unilateral stop, rad
};

/// Energy exchanged during one step, J.
struct EnergyFlow {
  double external = 0.0;   ///< work done by the external load on the joint
  double motor = 0.0;      ///< work done by the motor through theta_cmd
  double damping = 0.0;    ///< viscous dissipation
  double contact = 0.0;    ///< kinetic energy lost in inelastic stop impacts
};

struct StepResult {
  JointState state;
  EnergyFlow energy;
  bool at_stop = false;
};

/// Plant description shared by every step of a run.
class JointModel {
public:
  JointModel(ActuatorParams act, DynamicsParams dyn, ExternalLoad load)
      : act_(act), dyn_(dyn), load_(load) {
    act_.validate();
    dyn_.validate();
    validate(load_);
    inertia_ = dyn_.inertia + added_inertia(load_, act_.geometry);
    breaks_ = load_breakpoints(load_);
  }

  const ActuatorParams& actuator() const { return act_; }
  const DynamicsParams& params() const { return dyn_; }
  const ExternalLoad& load() const { return load_; }
  /// Joint inertia including the load, kg*m^2.
  double inertia() const { return inertia_; }

  SpringLaw spring_law(double delta_l) const { return SpringLaw(act_, dyn_, delta_l); }

  double kinetic_energy(const JointState& s) const { return 0.5 * inertia_ * s.omega * s.omega; }

  double elastic_energy(const JointState& s) const {
    return spring_law(s.delta_l).potential(s.deflection());
  }

  double external_torque(const JointState& s, double t) const {
    return dynamics::external_torque(load_, s.theta, t, act_.geometry);
  }

  /// Advances the state by dt. delta_l is held constant over the step.
  StepResult step(const JointState& s0, const StepInputs& in, double dt) const {
    if (!(dt > 0.0)) throw ValidationError("step size must be > 0");
    const SpringLaw law = spring_law(s0.delta_l);
    Integrator integ{*this, law, in};

    Vec y{s0.theta, s0.omega, s0.theta_cmd, 0.0, 0.0, 0.0};
    double contact_loss = 0.0;
    bool stuck = false;

    // Split at load breakpoints strictly inside the step.
    std::array<double, 4> cuts{};
    std::size_t n_cuts = 0;
    for (double b : breaks_)
      if (b > in.t && b < in.t + dt && n_cuts < cuts.size() - 1) cuts[n_cuts++] = b - in.t;
    std::sort(cuts.begin(), cuts.begin() + static_cast<std::ptrdiff_t>(n_cuts));
    cuts[n_cuts++] = dt;

    double s = 0.0;
    for (std::size_t c = 0; c < n_cuts; ++c) {
      integ.advance(y, s, cuts[c], contact_loss, stuck);
      s = cuts[c];
    }

    StepResult r;
    r.state = s0;
    r.state.theta = y[0];
    r.state.omega = y[1];
    r.state.theta_cmd = y[2];
    r.energy.external = y[3];
    r.energy.motor = y[4];
    r.energy.damping = y[5];
    r.energy.contact = contact_loss;
    r.at_stop = stuck;

    for (double v : y)
      if (!std::isfinite(v))
        throw NumericalError("non-finite joint state (integration blow-up) at t=" +
                             std::to_string(in.t));
    const double x = law.worm_displacement(r.state.deflection());
    if (std::abs(x) > law.available_travel())
      throw SaturationError(std::abs(x), law.available_travel(), in.t + dt);
    r.state.x = x;
    return r;
  }

private:
  // theta, omega, theta_cmd, external work, motor work, damping loss
  using Vec = std::array<double, 6>;

  struct Integrator {
    const JointModel& m;
    const SpringLaw& law;
    const StepInputs& in;

    Vec deriv(const Vec& y, double t, SpringRegion r, bool stuck) const {
      const double u = in.theta_cmd_rate;
      const double ts = law.torque_in(r, y[0] - y[2]);
      if (stuck) return {0.0, 0.0, u, 0.0, -ts * u, 0.0};
      const double te = dynamics::external_torque(m.load_, y[0], t, m.act_.geometry);
      const double b = m.dyn_.damping;
      const double acc = (te - ts - b * y[1]) / m.inertia_;
      return {y[1], acc, u, te * y[1], -ts * u, b * y[1] * y[1]};
    }

    Vec rk4(const Vec& y, double t, double h, SpringRegion r, bool stuck) const {
      auto axpy = [](const Vec& a, double k, const Vec& d) {
        Vec o;
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + k * d[i];
        return o;
      };
      const Vec k1 = deriv(y, t, r, stuck);
      const Vec k2 = deriv(axpy(y, 0.5 * h, k1), t + 0.5 * h, r, stuck);
      const Vec k3 = deriv(axpy(y, 0.5 * h, k2), t + 0.5 * h, r, stuck);
      const Vec k4 = deriv(axpy(y, h, k3), t + h, r, stuck);
      Vec o;
      for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      return o;
    }

    // Event function, negative before the event and positive after it.
    double spring_event(SpringRegion r, const Vec& y) const {
      const double d = y[0] - y[2];
      switch (r) {
        case SpringRegion::Band:
          return std::abs(d) - law.band();
        case SpringRegion::Positive:
          return law.band() - d;
        case SpringRegion::Negative:
          break;
      }
      return d + law.band();
    }

    // Smallest h' in (0, h] with g(h') > 0, to within tol.
    template <class G>
    double locate(G&& g, double h) const {
      double lo = 0.0, hi = h;
      double g_lo = g(0.0), g_hi = g(h);
      if (g_lo > 0.0) return 0.0;
      const double tol = std::max(h * 1e-12, 1e-16);
      int side = 0;
      for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        double s = (it % 4 == 3 || g_hi == g_lo) ? 0.5 * (lo + hi)
                                                 : lo - g_lo * (hi - lo) / (g_hi - g_lo);
        if (!(s > lo && s < hi)) s = 0.5 * (lo + hi);
        const double gs = g(s);
        if (gs > 0.0) {
          hi = s;
          g_hi = gs;
          if (side == -1) g_lo *= 0.5;
          side = -1;
        } else {
          lo = s;
          g_lo = gs;
          if (side == 1) g_hi *= 0.5;
          side = 1;
        }
      }
      return hi;
    }

    void settle_on_stop(Vec& y, double t, double& contact_loss, bool& stuck) const {
      if (!in.stop_angle || y[0] < *in.stop_angle) {
        stuck = false;
        return;
      }
      contact_loss += 0.5 * m.inertia_ * y[1] * y[1];
      y[0] = *in.stop_angle;
      y[1] = 0.0;
      const double te = dynamics::external_torque(m.load_, y[0], t, m.act_.geometry);
      stuck = te - law.torque(y[0] - y[2]) >= 0.0;
    }

    void advance(Vec& y, double s0, double s1, double& contact_loss, bool& stuck) const {
      double s = s0;
      for (int events = 0; s < s1; ++events) {
        if (events > 256) throw NumericalError("event chattering inside one step");
        const double t = in.t + s;
        const double h = s1 - s;
        settle_on_stop(y, t, contact_loss, stuck);
        const SpringRegion r = law.region(y[0] - y[2]);

        const Vec trial = rk4(y, t, h, r, stuck);
        const bool spring_hit = spring_event(r, trial) > 0.0;
        const bool stop_hit = !stuck && in.stop_angle && trial[0] > *in.stop_angle;
        if (!spring_hit && !stop_hit) {
          y = trial;
          return;
        }

        double h_event = h;
        if (spring_hit)
          h_event = std::min(h_event, locate(
              [&](double hh) { return spring_event(r, rk4(y, t, hh, r, stuck)); }, h));
        if (stop_hit)
          h_event = std::min(h_event, locate(
              [&](double hh) { return rk4(y, t, hh, r, stuck)[0] - *in.stop_angle; }, h));
        y = rk4(y, t, h_event, r, stuck);
        s += h_event;
      }
    }
  };

  ActuatorParams act_;
  DynamicsParams dyn_;
  ExternalLoad load_;
  double inertia_ = 0.0;
  std::vector<double> breaks_;
};

inline StepResult step(const JointModel& model, const JointState& state, const StepInputs& in,
                       double dt) {
  return model.step(state, in, dt);
}

}  // namespace wave::dynamics
