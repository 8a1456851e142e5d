#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>
#include <variant>

#include "wave/dynamics.hpp"
#include "wave/errors.hpp"
#include "wave/model.hpp"
#include "wave/units.hpp"

namespace wave::control {

/// Position loop on the joint angle. The output is a commanded joint-side
/// velocity for the worm (rad/s), clamped to output_limit.
struct PidGains {
  double kp = 2.0;
  double ki = 0.0;
  double kd = 0.0;
  double output_limit = 0.5;  ///< rad/s

  void validate() const {
    if (!(kp >= 0.0 && ki >= 0.0 && kd >= 0.0)) throw ValidationError("PID gains must be >= 0");
    if (!(output_limit > 0.0)) throw ValidationError("PID output limit must be > 0");
  }
};

class Pid {
public:
  explicit Pid(PidGains gains) : gains_(gains) { gains_.validate(); }

  /// One controller tick. Integration is frozen while the output is
  /// saturated in the direction of the error (conditional anti-windup).
  double update(double error, double dt) {
    if (!(dt > 0.0)) throw ValidationError("PID dt must be > 0");
    const double derivative = has_prev_ ? (error - prev_error_) / dt : 0.0;
    prev_error_ = error;
    has_prev_ = true;

    const double candidate = integral_ + error * dt;
    const double raw = gains_.kp * error + gains_.ki * candidate + gains_.kd * derivative;
    const double lim = gains_.output_limit;
    const bool winding = (raw > lim && error > 0.0) || (raw < -lim && error < 0.0);
    if (!winding) integral_ = candidate;
    const double out = gains_.kp * error + gains_.ki * integral_ + gains_.kd * derivative;
    return std::clamp(out, -lim, lim);
  }

  void reset() {
    integral_ = 0.0;
    prev_error_ = 0.0;
    has_prev_ = false;
  }

  double integral() const { return integral_; }
  const PidGains& gains() const { return gains_; }

private:
  PidGains gains_;
  double integral_ = 0.0;
  double prev_error_ = 0.0;
  bool has_prev_ = false;
};

/// Target for the stiffness motor, which moves the spring preload nuts.
struct StiffnessCommand {
  double target = 0.005;  ///< precompression, m
  double rate = 0.005;    ///< m/s

  void validate(const model::SpringPack& spring) const {
    if (!(rate > 0.0)) throw ValidationError("precompression slew rate must be > 0");
    if (!(target >= 0.0 && target <= spring.max_compression))
      throw ValidationError("precompression target outside spring bounds");
  }
};

/// Moves current towards command.target by at most rate*dt; lands exactly on target.
inline double slew_precompression(double current, const StiffnessCommand& command, double dt,
                                  const model::SpringPack& spring) {
  if (!(dt > 0.0)) throw ValidationError("slew dt must be > 0");
  command.validate(spring);
  const double gap = command.target - current;
  const double max_move = command.rate * dt;
  // Relative slack absorbs rounding accumulated over many increments.
  if (std::abs(gap) <= max_move * (1.0 + 1e-9)) return command.target;
  return current + std::copysign(max_move, gap);
}

// --- scenarios ------------------------------------------------------------

struct Sinusoid {
  double amplitude = 30.0 * units::deg;
  double period = 45.0;
};
struct Step {
  double amplitude = 30.0 * units::deg;
};
/// Motor idle; the load (normally an Impulse) hits the joint.
struct ImpactAtRest {};
/// Sinusoid tracking with an impulse injected at mid-swing (t = period / 2,
/// where the reference crosses zero at peak speed).
struct ImpactWhileRotating {
  Sinusoid motion;
  double tau_peak = 2.0;
  double width = 0.050;

  double impact_time() const { return 0.5 * motion.period; }
};
/// Open-loop motor drive towards a rigid upper stop: theta_cmd ramps at
/// approach_rate from zero to sweep_end, then holds.
struct ContactStop {
  double stop_angle = 20.0 * units::deg;
  double sweep_end = 38.0 * units::deg;
  double approach_rate = 10.0 * units::deg;  ///< rad/s at the joint

  /// Joint angle swept by one motor revolution through worm, wheel and cable.
  static double joint_angle_per_motor_rev(const model::Geometry& g) {
    return 2.0 * std::numbers::pi / g.worm_ratio * g.gear_ratio();
  }

  /// Drive that keeps turning the motor `revs` times after reaching the stop.
  static ContactStop past_contact(double stop_angle, double revs, const model::Geometry& g,
                                  double approach_rate = 10.0 * units::deg) {
    return {stop_angle, stop_angle + revs * joint_angle_per_motor_rev(g), approach_rate};
  }
};

using ScenarioKind = std::variant<Sinusoid, Step, ImpactAtRest, ImpactWhileRotating, ContactStop>;

struct Scenario {
  ScenarioKind kind = Step{};
  dynamics::ExternalLoad load = dynamics::NoLoad{};
  StiffnessCommand stiffness;
  bool rate_feedforward = true;   ///< add the reference rate to the PID output
  double duration = 20.0;         ///< s; zero yields the initial row only
  double dt = 1e-4;               ///< s
  std::size_t record_every = 1;   ///< keep one row per this many steps
  model::ActuatorParams actuator;

  void validate() const {
    actuator.validate();
    stiffness.validate(actuator.spring);
    dynamics::validate(load);
    if (!(duration >= 0.0) || !std::isfinite(duration))
      throw ValidationError("scenario duration must be >= 0");
    if (!(dt > 0.0)) throw ValidationError("scenario dt must be > 0");
    if (record_every == 0) throw ValidationError("record_every must be >= 1");
    std::visit(
        [&](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Sinusoid>) {
            check_sinusoid(k);
          } else if constexpr (std::is_same_v<T, ImpactWhileRotating>) {
            check_sinusoid(k.motion);
            if (!(k.width > 0.0)) throw ValidationError("impulse width must be > 0");
          } else if constexpr (std::is_same_v<T, ContactStop>) {
            if (!(k.approach_rate > 0.0)) throw ValidationError("approach rate must be > 0");
            if (!(k.sweep_end > 0.0)) throw ValidationError("sweep end must be > 0");
            if (!(k.stop_angle > 0.0)) throw ValidationError("stop angle must be > 0");
          }
        },
        kind);
  }

  /// Load actually applied to the joint, including the injected impact.
  dynamics::ExternalLoad effective_load() const {
    if (auto* k = std::get_if<ImpactWhileRotating>(&kind))
      return dynamics::Impulse{k->tau_peak, k->impact_time(), k->width};
    return load;
  }

  bool closed_loop() const {
    return std::holds_alternative<Sinusoid>(kind) || std::holds_alternative<Step>(kind) ||
           std::holds_alternative<ImpactWhileRotating>(kind);
  }

  /// Reference joint angle for the closed-loop kinds, rad.
  double reference(double t) const {
    if (auto* s = std::get_if<Sinusoid>(&kind)) return sine(*s, t);
    if (auto* s = std::get_if<ImpactWhileRotating>(&kind)) return sine(s->motion, t);
    if (auto* s = std::get_if<Step>(&kind)) return s->amplitude;
    return 0.0;
  }

  /// Time derivative of reference(), rad/s. The step jump is not included.
  double reference_rate(double t) const {
    if (auto* s = std::get_if<Sinusoid>(&kind)) return sine_rate(*s, t);
    if (auto* s = std::get_if<ImpactWhileRotating>(&kind)) return sine_rate(s->motion, t);
    return 0.0;
  }

private:
  void check_sinusoid(const Sinusoid& s) const {
    if (!(s.period > 0.0)) throw ValidationError("sinusoid period must be > 0");
    if (dt > s.period / 1000.0) throw ValidationError("dt must be <= period / 1000");
  }
  static double sine(const Sinusoid& s, double t) {
    return s.amplitude * std::sin(2.0 * std::numbers::pi * t / s.period);
  }
  static double sine_rate(const Sinusoid& s, double t) {
    const double w = 2.0 * std::numbers::pi / s.period;
    return s.amplitude * w * std::cos(w * t);
  }
};

}  // namespace wave::control
