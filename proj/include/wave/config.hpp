#pragma once

// INI-style configuration in the units used on the bench: N/mm, mm, deg, ms.
// Values are stored exactly as written and converted to SI on demand, so that
// parse -> serialize -> parse reproduces identical values.

#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "wave/control.hpp"
#include "wave/dynamics.hpp"
#include "wave/errors.hpp"
#include "wave/model.hpp"
#include "wave/simulate.hpp"
#include "wave/units.hpp"

namespace wave::config {

struct Config {
  // [spring]
  double k_s = 0.8;               // N/mm
  double free_length = 50.0;      // mm
  double max_compression = 30.0;  // mm
  double precompression = 5.0;    // mm
  // [geometry]
  double r_gear = 30.0;  // mm
  double r_pulley = 20.0;
  double r_joint = 20.0;
  double moment_arm = 100.0;
  double worm_ratio = 40.0;
  double worm_pitch_diameter = 23.5;
  double module = 1.5;
  int thread_starts = 1;
  // [transmission]
  double mu = 1.0;
  double tau_friction = 0.0;  // N*m
  // [dynamics]
  double inertia = 0.01;   // kg*m^2
  double damping = 0.05;   // N*m*s/rad
  double rigid_regularization_factor = 1000.0;
  double motor_torque_constant = 0.75;  // N*m/A
  // [control]
  double kp = 2.0;
  double ki = 0.0;
  double kd = 0.0;
  double output_limit = 0.5;  // rad/s
  bool rate_feedforward = true;
  double mode_k_s = 2.4;             // N/mm, spring fitted for the low/high modes
  double low_precompression = 5.0;   // mm
  double high_precompression = 15.0; // mm
  double precompression_rate = 5.0;  // mm/s
  // [scenario]
  double duration = 20.0;  // s
  double dt = 0.1;         // ms
  int record_every = 10;
  double amplitude = 30.0;  // deg
  double period = 45.0;     // s
  double sinusoid_periods = 1.0;
  double load_mass = 0.5;      // kg
  double impulse_peak = 2.0;   // N*m
  double impulse_start = 0.5;  // s
  double impulse_width = 50.0; // ms
  double stop_angle = 20.0;    // deg
  double sweep_end = 38.0;     // deg
  double approach_rate = 10.0; // deg/s

  friend bool operator==(const Config&, const Config&) = default;

  model::ActuatorParams actuator() const;
  dynamics::DynamicsParams dynamics() const;
  control::PidGains pid() const;
  dynamics::SimParams sim_params() const { return {dynamics(), pid()}; }
  void validate() const;
};

using Field = std::variant<double Config::*, int Config::*, bool Config::*>;

struct Entry {
  const char* section;
  const char* key;
  Field field;
  const char* unit;
};

inline const std::array<Entry, 40>& entries() {
  static const std::array<Entry, 40> table = {{
      {"spring", "k_s", &Config::k_s, "N/mm"},
      {"spring", "free_length", &Config::free_length, "mm"},
      {"spring", "max_compression", &Config::max_compression, "mm"},
      {"spring", "precompression", &Config::precompression, "mm"},
      {"geometry", "r_gear", &Config::r_gear, "mm"},
      {"geometry", "r_pulley", &Config::r_pulley, "mm"},
      {"geometry", "r_joint", &Config::r_joint, "mm"},
      {"geometry", "moment_arm", &Config::moment_arm, "mm"},
      {"geometry", "worm_ratio", &Config::worm_ratio, ""},
      {"geometry", "worm_pitch_diameter", &Config::worm_pitch_diameter, "mm"},
      {"geometry", "module", &Config::module, "mm"},
      {"geometry", "thread_starts", &Config::thread_starts, ""},
      {"transmission", "mu", &Config::mu, ""},
      {"transmission", "tau_friction", &Config::tau_friction, "N*m"},
      {"dynamics", "inertia", &Config::inertia, "kg*m^2"},
      {"dynamics", "damping", &Config::damping, "N*m*s/rad"},
      {"dynamics", "rigid_regularization_factor", &Config::rigid_regularization_factor, ""},
      {"dynamics", "motor_torque_constant", &Config::motor_torque_constant, "N*m/A"},
      {"control", "kp", &Config::kp, "1/s"},
      {"control", "ki", &Config::ki, "1/s^2"},
      {"control", "kd", &Config::kd, ""},
      {"control", "output_limit", &Config::output_limit, "rad/s"},
      {"control", "rate_feedforward", &Config::rate_feedforward, ""},
      {"control", "mode_k_s", &Config::mode_k_s, "N/mm"},
      {"control", "low_precompression", &Config::low_precompression, "mm"},
      {"control", "high_precompression", &Config::high_precompression, "mm"},
      {"control", "precompression_rate", &Config::precompression_rate, "mm/s"},
      {"scenario", "duration", &Config::duration, "s"},
      {"scenario", "dt", &Config::dt, "ms"},
      {"scenario", "record_every", &Config::record_every, ""},
      {"scenario", "amplitude", &Config::amplitude, "deg"},
      {"scenario", "period", &Config::period, "s"},
      {"scenario", "sinusoid_periods", &Config::sinusoid_periods, ""},
      {"scenario", "load_mass", &Config::load_mass, "kg"},
      {"scenario", "impulse_peak", &Config::impulse_peak, "N*m"},
      {"scenario", "impulse_start", &Config::impulse_start, "s"},
      {"scenario", "impulse_width", &Config::impulse_width, "ms"},
      {"scenario", "stop_angle", &Config::stop_angle, "deg"},
      {"scenario", "sweep_end", &Config::sweep_end, "deg"},
      {"scenario", "approach_rate", &Config::approach_rate, "deg/s"},
  }};
  return table;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

inline void assign(Config& c, const Entry& e, const std::string& text, int line) {
  const std::string where = "[" + std::string(e.section) + "] " + e.key;
  std::visit(
      [&](auto member) {
        using T = std::remove_cvref_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (text == "true")
            c.*member = true;
          else if (text == "false")
            c.*member = false;
          else
            throw ParseError(where + ": expected true or false, got '" + text + "'", line);
        } else {
          T v{};
          const char* first = text.data();
          const char* last = first + text.size();
          const auto [ptr, ec] = std::from_chars(first, last, v);
          if (text.empty() || ec != std::errc() || ptr != last)
            throw ParseError(where + ": invalid " +
                                 (std::is_same_v<T, int> ? std::string("integer")
                                                         : std::string("number")) +
                                 " '" + text + "'",
                             line);
          if constexpr (std::is_same_v<T, double>) {
            if (!std::isfinite(v)) throw ParseError(where + ": value must be finite", line);
          }
          c.*member = v;
        }
      },
      e.field);
}

}  // namespace detail

/// Parses a complete configuration. Every key must appear exactly once.
inline Config parse(std::istream& is) {
  Config c;
  std::set<std::string> known_sections;
  for (const auto& e : entries()) known_sections.insert(e.section);

  std::set<std::string> seen;
  std::string section;
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string text = raw;
    const auto hash = text.find_first_of("#;");
    if (hash != std::string::npos) text.erase(hash);
    text = detail::trim(text);
    if (text.empty()) continue;

    if (text.front() == '[') {
      if (text.back() != ']') throw ParseError("unterminated section header", line);
      section = detail::trim(std::string_view(text).substr(1, text.size() - 2));
      if (!known_sections.count(section))
        throw ParseError("unknown section [" + section + "]", line);
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line);
    if (section.empty()) throw ParseError("key outside of any section", line);
    const std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));

    const Entry* entry = nullptr;
    for (const auto& e : entries())
      if (section == e.section && key == e.key) entry = &e;
    if (!entry) throw ParseError("unknown key '" + key + "' in [" + section + "]", line);
    if (!seen.insert(section + "." + key).second)
      throw ParseError("duplicate key '" + key + "' in [" + section + "]", line);
    detail::assign(c, *entry, value, line);
  }
  for (const auto& e : entries()) {
    if (!seen.count(std::string(e.section) + "." + e.key))
      throw ParseError("missing key '" + std::string(e.key) + "' in [" + e.section + "]");
  }
  return c;
}

inline Config parse(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

inline std::string serialize(const Config& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& e : entries()) {
    if (section != e.section) {
      if (!section.empty()) os << '\n';
      section = e.section;
      os << '[' << section << "]\n";
    }
    os << e.key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(c.*member)>;
          if constexpr (std::is_same_v<T, bool>)
            os << (c.*member ? "true" : "false");
          else if constexpr (std::is_same_v<T, int>)
            os << c.*member;
          else
            os << detail::shortest(c.*member);
        },
        e.field);
    if (*e.unit) os << "  # " << e.unit;
    os << '\n';
  }
  return os.str();
}

/// The bench configuration of the reference prototype.
inline const char* default_profile_text() {
  return R"(# wave-default: reference prototype
[spring]
k_s = 0.8  # N/mm, parallel pair
free_length = 50  # mm
max_compression = 30  # mm
precompression = 5  # mm

[geometry]
r_gear = 30  # mm
r_pulley = 20  # mm
r_joint = 20  # mm
moment_arm = 100  # mm
worm_ratio = 40
worm_pitch_diameter = 23.5  # mm
module = 1.5  # mm
thread_starts = 1

[transmission]
mu = 1
tau_friction = 0  # N*m

[dynamics]
inertia = 0.01  # kg*m^2
damping = 0.05  # N*m*s/rad
rigid_regularization_factor = 1000
motor_torque_constant = 0.75  # N*m/A

[control]
kp = 2  # 1/s
ki = 0  # 1/s^2
kd = 0
output_limit = 0.5  # rad/s
rate_feedforward = true
mode_k_s = 2.4  # N/mm
low_precompression = 5  # mm
high_precompression = 15  # mm
precompression_rate = 5  # mm/s

[scenario]
duration = 20  # s
dt = 0.1  # ms
record_every = 10
amplitude = 30  # deg
period = 45  # s
sinusoid_periods = 1
load_mass = 0.5  # kg
impulse_peak = 2  # N*m
impulse_start = 0.5  # s
impulse_width = 50  # ms
stop_angle = 20  # deg
sweep_end = 38  # deg
approach_rate = 10  # deg/s
)";
}

inline Config default_config() { return parse(std::string(default_profile_text())); }

// --- conversions ------------------------------------------------------------

inline model::ActuatorParams Config::actuator() const {
  model::ActuatorParams a;
  a.spring = {k_s * units::n_per_mm, free_length * units::mm, max_compression * units::mm,
              precompression * units::mm};
  a.geometry = {r_gear * units::mm,          r_pulley * units::mm,
                r_joint * units::mm,         moment_arm * units::mm,
                worm_ratio,                  worm_pitch_diameter * units::mm,
                module * units::mm,          thread_starts};
  a.transmission = {mu, tau_friction};
  return a;
}

inline dynamics::DynamicsParams Config::dynamics() const {
  return {inertia, damping, rigid_regularization_factor, motor_torque_constant};
}

inline control::PidGains Config::pid() const { return {kp, ki, kd, output_limit}; }

inline void Config::validate() const {
  actuator().validate();
  dynamics().validate();
  pid().validate();
  model::SpringPack mode_spring = actuator().spring;
  mode_spring.k_s = mode_k_s * units::n_per_mm;
  for (double dl : {low_precompression, high_precompression})
    mode_spring.with_precompression(dl * units::mm).validate();
  if (!(low_precompression < high_precompression))
    throw ValidationError("[control] low_precompression must be < high_precompression");
  if (!(precompression_rate > 0.0)) throw ValidationError("[control] precompression_rate must be > 0");
  if (!(duration >= 0.0)) throw ValidationError("[scenario] duration must be >= 0");
  if (!(dt > 0.0)) throw ValidationError("[scenario] dt must be > 0");
  if (record_every < 1) throw ValidationError("[scenario] record_every must be >= 1");
  if (!(period > 0.0)) throw ValidationError("[scenario] period must be > 0");
  if (!(sinusoid_periods > 0.0)) throw ValidationError("[scenario] sinusoid_periods must be > 0");
  if (!(load_mass >= 0.0)) throw ValidationError("[scenario] load_mass must be >= 0");
  if (!(impulse_width > 0.0)) throw ValidationError("[scenario] impulse_width must be > 0");
  if (!(impulse_start >= 0.0)) throw ValidationError("[scenario] impulse_start must be >= 0");
  if (!(stop_angle > 0.0)) throw ValidationError("[scenario] stop_angle must be > 0");
  if (!(approach_rate > 0.0)) throw ValidationError("[scenario] approach_rate must be > 0");
}

// --- scenario builders -------------------------------------------------------

enum class StiffnessMode { Low, High };

inline const char* to_string(StiffnessMode m) { return m == StiffnessMode::Low ? "low" : "high"; }

enum class LoadKind { None, Lateral, Vertical };

inline const char* to_string(LoadKind k) {
  switch (k) {
    case LoadKind::Lateral:
      return "lateral";
    case LoadKind::Vertical:
      return "vertical";
    case LoadKind::None:
      break;
  }
  return "none";
}

/// Actuator with the mode spring, held at the mode precompression from t = 0.
inline control::Scenario base_scenario(const Config& c, StiffnessMode mode) {
  control::Scenario sc;
  sc.actuator = c.actuator();
  sc.actuator.spring.k_s = c.mode_k_s * units::n_per_mm;
  const double dl =
      (mode == StiffnessMode::Low ? c.low_precompression : c.high_precompression) * units::mm;
  sc.actuator.spring.precompression = dl;
  sc.stiffness = {dl, c.precompression_rate * units::mm};
  sc.rate_feedforward = c.rate_feedforward;
  sc.duration = c.duration;
  sc.dt = c.dt * units::ms;
  sc.record_every = static_cast<std::size_t>(c.record_every);
  return sc;
}

inline control::Sinusoid sinusoid(const Config& c) {
  return {c.amplitude * units::deg, c.period};
}

inline control::Scenario impact_scenario(const Config& c, StiffnessMode mode, bool rotating) {
  control::Scenario sc = base_scenario(c, mode);
  if (rotating) {
    control::ImpactWhileRotating k{sinusoid(c), c.impulse_peak, c.impulse_width * units::ms};
    sc.kind = k;
    sc.duration = std::max(c.duration, k.impact_time() + c.duration * 0.5);
  } else {
    sc.kind = control::ImpactAtRest{};
    sc.load = dynamics::Impulse{c.impulse_peak, c.impulse_start, c.impulse_width * units::ms};
  }
  return sc;
}

inline dynamics::ExternalLoad load_for(const Config& c, LoadKind kind) {
  switch (kind) {
    case LoadKind::Lateral:
      return dynamics::LateralMass{c.load_mass};
    case LoadKind::Vertical:
      return dynamics::VerticalMass{c.load_mass};
    case LoadKind::None:
      break;
  }
  return dynamics::NoLoad{};
}

inline control::Scenario step_scenario(const Config& c, StiffnessMode mode, LoadKind load) {
  control::Scenario sc = base_scenario(c, mode);
  sc.kind = control::Step{c.amplitude * units::deg};
  sc.load = load_for(c, load);
  return sc;
}

inline control::Scenario sinusoid_scenario(const Config& c, StiffnessMode mode, LoadKind load) {
  control::Scenario sc = base_scenario(c, mode);
  sc.kind = sinusoid(c);
  sc.load = load_for(c, load);
  sc.duration = c.sinusoid_periods * c.period;
  return sc;
}

inline control::Scenario contact_scenario(const Config& c, StiffnessMode mode) {
  control::Scenario sc = base_scenario(c, mode);
  sc.kind = control::ContactStop{c.stop_angle * units::deg, c.sweep_end * units::deg,
                                 c.approach_rate * units::deg};
  return sc;
}

}  // namespace wave::config
