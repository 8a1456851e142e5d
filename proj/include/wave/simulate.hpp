#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wave/control.hpp"
#include "wave/dynamics.hpp"
#include "wave/errors.hpp"
#include "wave/model.hpp"
#include "wave/units.hpp"

namespace wave::dynamics {

enum class Mode { Rigid, Compliant, Saturated };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::Rigid:
      return "RIGID";
    case Mode::Compliant:
      return "COMPLIANT";
    case Mode::Saturated:
      break;
  }
  return "SATURATED";
}

struct SimParams {
  DynamicsParams dynamics;
  control::PidGains pid;
};

/// One recorded sample. Angles in rad, SI throughout.
struct Sample {
  double t = 0.0;
  JointState state;
  double reference = 0.0;
  double tau_ext = 0.0;
  double tau_restoring = 0.0;  ///< spring torque acting on the joint
  double motor_torque = 0.0;   ///< at the worm input
  double motor_current = 0.0;  ///< A, proxy
  Mode mode = Mode::Rigid;
  // Cumulative energy bookkeeping since t = 0, J.
  double work_external = 0.0;
  double work_motor = 0.0;
  double work_stiffness = 0.0;  ///< by the precompression actuator
  double dissipated = 0.0;      ///< viscous + stop impacts
};

struct Metrics {
  double peak_deflection = 0.0;   ///< max |theta - theta_cmd|, rad
  double final_deflection = 0.0;  ///< rad
  double peak_motor_torque = 0.0; ///< N*m
  double peak_motor_current = 0.0; ///< A
  // Closed-loop kinds.
  std::optional<double> max_tracking_error;  ///< rad
  std::optional<double> rmse;                ///< rad
  // Step only.
  std::optional<double> settle_time;             ///< s
  std::optional<double> max_error_after_arrival; ///< rad, after first entry in the settle band
  std::optional<double> steady_state_error;      ///< rad, |error| at the end
  // Impact kinds.
  std::optional<double> recovery_time;  ///< s after impact start until |deflection| stays < 0.1 deg
  // Contact stop.
  std::optional<double> contact_force;       ///< N, at the end of the run
  std::optional<double> peak_contact_force;  ///< N
  std::optional<double> contact_time;        ///< s, first contact
};

/// Uniform-step record of a run. Immutable once returned.
struct Timeseries {
  double dt = 0.0;  ///< spacing between recorded samples, s
  std::vector<Sample> samples;
  Metrics metrics;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

/// A simulation stopped on a numerical failure. Carries the samples produced
/// so far; when the cause was spring saturation the last one is SATURATED.
class SimulationError : public NumericalError {
public:
  SimulationError(const std::string& what, double t, Timeseries partial, bool saturated)
      : NumericalError(what),
        time_(t),
        partial_(std::make_shared<const Timeseries>(std::move(partial))),
        saturated_(saturated) {}

  double time() const { return time_; }
  const Timeseries& partial() const { return *partial_; }
  bool saturated() const { return saturated_; }

private:
  double time_;
  std::shared_ptr<const Timeseries> partial_;
  bool saturated_;
};

namespace detail {

inline constexpr double kSettleFraction = 0.02;
inline constexpr double kRecoveryBand = 0.1 * units::deg;

class MetricsTracker {
public:
  MetricsTracker(const control::Scenario& sc) : sc_(sc) {
    if (auto* s = std::get_if<control::Step>(&sc.kind))
      settle_band_ = kSettleFraction * std::abs(s->amplitude);
    if (std::holds_alternative<control::ImpactAtRest>(sc.kind)) {
      if (auto* p = std::get_if<Impulse>(&sc.load)) impact_start_ = p->t_start;
    }
    if (auto* k = std::get_if<control::ImpactWhileRotating>(&sc.kind))
      impact_start_ = k->impact_time();
  }

  void add(const Sample& s, bool at_stop, double moment_arm) {
    const double d = std::abs(s.state.deflection());
    m_.peak_deflection = std::max(m_.peak_deflection, d);
    m_.final_deflection = s.state.deflection();
    m_.peak_motor_torque = std::max(m_.peak_motor_torque, std::abs(s.motor_torque));
    m_.peak_motor_current = std::max(m_.peak_motor_current, std::abs(s.motor_current));

    if (sc_.closed_loop()) {
      const double e = std::abs(s.state.theta - s.reference);
      max_err_ = std::max(max_err_, e);
      sum_sq_ += e * e;
      ++count_;
      if (settle_band_) {
        if (e > *settle_band_) {
          last_violation_ = s.t;
        } else if (!arrived_) {
          arrived_ = true;
        }
        if (arrived_) max_after_ = std::max(max_after_, e);
        last_error_ = e;
      }
    }
    if (impact_start_ && d > kRecoveryBand) last_excursion_ = s.t;

    if (std::holds_alternative<control::ContactStop>(sc_.kind)) {
      const double f = at_stop ? std::abs(s.tau_restoring) / moment_arm : 0.0;
      if (at_stop && !contact_time_) contact_time_ = s.t;
      peak_force_ = std::max(peak_force_, f);
      final_force_ = f;
    }
  }

  Metrics finish() const {
    Metrics m = m_;
    if (sc_.closed_loop() && count_ > 0) {
      m.max_tracking_error = max_err_;
      m.rmse = std::sqrt(sum_sq_ / static_cast<double>(count_));
    }
    if (settle_band_) {
      m.settle_time = last_violation_;
      m.max_error_after_arrival = max_after_;
      m.steady_state_error = last_error_;
    }
    if (impact_start_) m.recovery_time = std::max(0.0, last_excursion_ - *impact_start_);
    if (std::holds_alternative<control::ContactStop>(sc_.kind)) {
      m.contact_force = final_force_;
      m.peak_contact_force = peak_force_;
      m.contact_time = contact_time_;
    }
    return m;
  }

private:
  const control::Scenario& sc_;
  Metrics m_;
  std::optional<double> settle_band_;
  std::optional<double> impact_start_;
  double max_err_ = 0.0, sum_sq_ = 0.0;
  std::size_t count_ = 0;
  double last_violation_ = 0.0, max_after_ = 0.0, last_error_ = 0.0;
  bool arrived_ = false;
  double last_excursion_ = 0.0;
  std::optional<double> contact_time_;
  double peak_force_ = 0.0, final_force_ = 0.0;
};

}  // namespace detail

/// Runs a scenario from rest (theta = theta_cmd = 0) and records every
/// `record_every`-th step plus the final one.
inline Timeseries simulate(const control::Scenario& sc, const SimParams& params) {
  sc.validate();
  params.dynamics.validate();
  params.pid.validate();

  const JointModel model(sc.actuator, params.dynamics, sc.effective_load());
  const auto& geom = sc.actuator.geometry;
  const double mu_g = sc.actuator.transmission.mu * geom.gear_ratio();
  const double dt = sc.dt;
  const auto n_steps = static_cast<std::size_t>(std::llround(sc.duration / dt));

  control::Pid pid(params.pid);
  const auto* contact = std::get_if<control::ContactStop>(&sc.kind);
  std::optional<double> stop;
  if (contact) stop = contact->stop_angle;

  JointState st;
  st.delta_l = sc.actuator.spring.precompression;

  Timeseries ts;
  ts.dt = dt * static_cast<double>(sc.record_every);
  ts.samples.reserve(n_steps / sc.record_every + 2);
  detail::MetricsTracker tracker(sc);

  Sample acc;  // running energy totals
  bool at_stop = false;

  auto make_sample = [&](double t, double u) {
    const SpringLaw law = model.spring_law(st.delta_l);
    const double delta = st.deflection();
    Sample s = acc;
    s.t = t;
    s.state = st;
    s.reference = sc.reference(t);
    s.tau_ext = model.external_torque(st, t);
    const double spring = law.torque(delta);
    s.tau_restoring = -spring;
    // The worm holds any load without motor effort; torque is only needed
    // while the motor turns.
    s.motor_torque = u != 0.0 ? -spring * mu_g / geom.worm_ratio : 0.0;
    s.motor_current = s.motor_torque / params.dynamics.motor_torque_constant;
    s.mode = law.region(delta) == SpringRegion::Band ? Mode::Rigid : Mode::Compliant;
    return s;
  };

  auto command = [&](double t) -> double {
    if (sc.closed_loop()) {
      const double ff = sc.rate_feedforward ? sc.reference_rate(t) : 0.0;
      const double lim = params.pid.output_limit;
      return std::clamp(ff + pid.update(sc.reference(t) - st.theta, dt), -lim, lim);
    }
    if (contact) {
      const double remaining = contact->sweep_end - st.theta_cmd;
      if (remaining <= 0.0) return 0.0;
      return std::min(contact->approach_rate, remaining / dt);
    }
    return 0.0;
  };

  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double u = command(t);
    const Sample sample = make_sample(t, u);
    tracker.add(sample, at_stop, geom.moment_arm);
    if (k % sc.record_every == 0 || k == n_steps) ts.samples.push_back(sample);
    if (k == n_steps) break;

    try {
      const StepResult r = model.step(st, StepInputs{t, u, stop}, dt);
      acc.work_external += r.energy.external;
      acc.work_motor += r.energy.motor;
      acc.dissipated += r.energy.damping + r.energy.contact;
      at_stop = r.at_stop;
      JointState next = r.state;

      const double dl = control::slew_precompression(next.delta_l, sc.stiffness, dt,
                                                     sc.actuator.spring);
      if (dl != next.delta_l) {
        const double d = next.deflection();
        acc.work_stiffness +=
            model.spring_law(dl).potential(d) - model.spring_law(next.delta_l).potential(d);
        next.delta_l = dl;
        const SpringLaw law = model.spring_law(dl);
        next.x = law.worm_displacement(d);
        if (std::abs(next.x) > law.available_travel())
          throw SaturationError(std::abs(next.x), law.available_travel(), t + dt);
      }
      st = next;
    } catch (const SaturationError& e) {
      Sample last = make_sample(t, u);
      last.t = e.time() >= 0.0 ? e.time() : t;
      last.mode = Mode::Saturated;
      ts.samples.push_back(last);
      ts.metrics = tracker.finish();
      throw SimulationError(e.what(), last.t, std::move(ts), true);
    } catch (const NumericalError& e) {
      ts.metrics = tracker.finish();
      throw SimulationError(e.what(), t, std::move(ts), false);
    }
  }
  ts.metrics = tracker.finish();
  return ts;
}

// --- energy audit ---------------------------------------------------------

struct EnergyRow {
  double t;
  double work_in;  ///< external + motor + stiffness actuator
  double elastic;
  double kinetic;
  double damped;
  double relative_error;
};

struct EnergyLedger {
  std::vector<EnergyRow> rows;
  double max_relative_error = 0.0;
  bool damped_monotone = true;
};

/// Recomputes stored energy from the recorded states and compares it with
/// the work integrated alongside the motion.
inline EnergyLedger energy_audit(const Timeseries& ts, const control::Scenario& sc,
                                 const DynamicsParams& dyn, double floor = 1e-9) {
  const JointModel model(sc.actuator, dyn, sc.effective_load());
  EnergyLedger ledger;
  ledger.rows.reserve(ts.size());
  double prev_damped = 0.0;
  for (const Sample& s : ts.samples) {
    if (s.mode == Mode::Saturated) break;
    EnergyRow r;
    r.t = s.t;
    r.work_in = s.work_external + s.work_motor + s.work_stiffness;
    r.elastic = model.elastic_energy(s.state);
    r.kinetic = model.kinetic_energy(s.state);
    r.damped = s.dissipated;
    const double stored = r.elastic + r.kinetic + r.damped;
    const double scale = std::max({std::abs(r.work_in), stored, floor});
    r.relative_error = std::abs(r.work_in - stored) / scale;
    ledger.max_relative_error = std::max(ledger.max_relative_error, r.relative_error);
    if (r.damped < prev_damped) ledger.damped_monotone = false;
    prev_damped = r.damped;
    ledger.rows.push_back(r);
  }
  return ledger;
}

// --- CSV ------------------------------------------------------------------

inline constexpr const char* kTimeseriesHeader =
    "t_s,theta_deg,theta_cmd_deg,omega_deg_s,x_mm,delta_l_mm,tau_ext_Nm,tau_restoring_Nm,"
    "motor_torque_Nm,motor_current_proxy_mA,mode";

inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // drop negative zero
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const Timeseries& ts) {
  os << kTimeseriesHeader << '\n';
  for (const Sample& s : ts.samples) {
    const double vals[] = {s.t,
                           units::to_deg(s.state.theta),
                           units::to_deg(s.state.theta_cmd),
                           units::to_deg(s.state.omega),
                           units::to_mm(s.state.x),
                           units::to_mm(s.state.delta_l),
                           s.tau_ext,
                           s.tau_restoring,
                           s.motor_torque,
                           s.motor_current * 1e3};
    for (double v : vals) os << format_number(v) << ',';
    os << to_string(s.mode) << '\n';
  }
}

}  // namespace wave::dynamics

namespace wave::control {

struct TrackingResult {
  dynamics::Timeseries series;
  double max_error;    ///< rad
  double rmse;         ///< rad
  std::optional<double> settle_time;  ///< s, step inputs only
};

inline TrackingResult run_tracking(const Scenario& sc, const dynamics::SimParams& params) {
  if (!std::holds_alternative<Sinusoid>(sc.kind) && !std::holds_alternative<Step>(sc.kind))
    throw ValidationError("run_tracking needs a Sinusoid or Step scenario");
  TrackingResult r{dynamics::simulate(sc, params), 0.0, 0.0, std::nullopt};
  r.max_error = r.series.metrics.max_tracking_error.value_or(0.0);
  r.rmse = r.series.metrics.rmse.value_or(0.0);
  r.settle_time = r.series.metrics.settle_time;
  return r;
}

struct ContactResult {
  dynamics::Timeseries series;
  double contact_force;      ///< N, final
  double peak_contact_force; ///< N
  double motor_peak;         ///< N*m
  bool contacted;
};

inline ContactResult run_contact(const Scenario& sc, const dynamics::SimParams& params) {
  if (!std::holds_alternative<ContactStop>(sc.kind))
    throw ValidationError("run_contact needs a ContactStop scenario");
  ContactResult r{dynamics::simulate(sc, params), 0.0, 0.0, 0.0, false};
  const auto& m = r.series.metrics;
  r.contact_force = m.contact_force.value_or(0.0);
  r.peak_contact_force = m.peak_contact_force.value_or(0.0);
  r.motor_peak = m.peak_motor_torque;
  r.contacted = m.contact_time.has_value();
  return r;
}

/// Contact force the static model predicts for the final net deflection of
/// a contact run, read off the sampled torque-deflection curve.
inline double quasi_static_contact_force(const dynamics::Timeseries& ts,
                                         const model::ActuatorParams& act,
                                         std::size_t curve_points = 4001) {
  const dynamics::Sample& last = ts.samples.back();
  const double deflection = std::abs(last.state.deflection());
  const model::SpringPack spring = act.spring.with_precompression(last.state.delta_l);
  const auto& g = act.geometry;
  const auto& tr = act.transmission;
  const double tau_max = model::torque_for_deflection(
      std::min(1.5 * deflection + 1e-3,
               (1.0 - 1e-9) * spring.available_travel() * g.gear_ratio() / g.r_gear),
      spring, g, tr);
  const auto curve = model::torque_deflection_curve(tau_max, curve_points, spring, g, tr);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (b.deflection >= deflection && b.deflection > a.deflection) {
      const double f = (deflection - a.deflection) / (b.deflection - a.deflection);
      return (a.tau + f * (b.tau - a.tau)) / g.moment_arm;
    }
  }
  return curve.back().tau / g.moment_arm;
}

}  // namespace wave::control
