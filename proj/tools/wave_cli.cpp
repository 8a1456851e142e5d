// wave: command-line front end for the actuator toolkit.
//
// Exit codes: 0 success, 2 usage, 3 validation or parse error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wave/wave.hpp"

namespace fs = std::filesystem;
using namespace wave;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumerical = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::optional<double> dt_ms;
};

using Summary = std::vector<std::pair<std::string, std::string>>;

std::string num(double v) { return identify::format_value(v); }

config::Config load_config(const Globals& g) {
  config::Config c;
  if (g.config_path.empty()) {
    c = config::default_config();
  } else {
    std::ifstream in(g.config_path);
    if (!in) throw ValidationError("cannot open config file '" + g.config_path + "'");
    try {
      c = config::parse(in);
    } catch (const ParseError& e) {
      throw ParseError(g.config_path + ": " + e.what());
    }
  }
  if (g.dt_ms) c.dt = *g.dt_ms;
  c.validate();
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ValidationError("cannot write '" + p.string() + "'");
  body(os);
  if (!os) throw ValidationError("write failed for '" + p.string() + "'");
}

void emit_summary(const Globals& g, const std::string& name, const Summary& s) {
  std::ostringstream text;
  for (const auto& [k, v] : s) text << k << '=' << v << '\n';
  write_file(out_path(g, name), [&](std::ostream& os) { os << text.str(); });
  std::cout << text.str();
}

config::StiffnessMode parse_mode(const std::string& m) {
  return m == "high" ? config::StiffnessMode::High : config::StiffnessMode::Low;
}

config::LoadKind parse_load(const std::string& l) {
  if (l == "lateral") return config::LoadKind::Lateral;
  if (l == "vertical") return config::LoadKind::Vertical;
  return config::LoadKind::None;
}

std::string tag(double v) {
  std::string s = config::detail::shortest(v);
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = config::detail::trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": invalid number '" + item + "'");
    }
  }
  return out;
}

/// Timeseries CSV, SVG plot and energy closure for one simulation run.
/// A saturated run still writes its partial series before failing.
dynamics::Timeseries run_and_write(const Globals& g, const control::Scenario& sc,
                                   const dynamics::SimParams& params, const std::string& stem,
                                   const std::string& title) {
  auto write_series = [&](const dynamics::Timeseries& ts) {
    write_file(out_path(g, stem + ".csv"), [&](std::ostream& os) { dynamics::write_csv(os, ts); });
    svg::Chart chart{title, "t [s]", "angle [deg]", {}};
    svg::Series th{"theta", {}, {}}, cmd{"theta_cmd", {}, {}}, ref{"reference", {}, {}};
    for (const auto& s : ts.samples) {
      th.x.push_back(s.t);
      th.y.push_back(units::to_deg(s.state.theta));
      cmd.x.push_back(s.t);
      cmd.y.push_back(units::to_deg(s.state.theta_cmd));
      ref.x.push_back(s.t);
      ref.y.push_back(units::to_deg(s.reference));
    }
    chart.series = {th, cmd};
    if (sc.closed_loop()) chart.series.push_back(ref);
    write_file(out_path(g, stem + ".svg"), [&](std::ostream& os) { svg::write(os, chart); });
  };
  try {
    auto ts = dynamics::simulate(sc, params);
    write_series(ts);
    return ts;
  } catch (const dynamics::SimulationError& e) {
    write_series(e.partial());
    throw;
  }
}

void add_common(Summary& s, const dynamics::Timeseries& ts, const control::Scenario& sc,
                const dynamics::SimParams& params) {
  const auto& m = ts.metrics;
  const auto ledger = dynamics::energy_audit(ts, sc, params.dynamics);
  const double theta0 = ts.samples.front().state.theta;
  const double theta_end = ts.samples.back().state.theta;
  s.emplace_back("k_s_N_per_mm", num(sc.actuator.spring.k_s / units::n_per_mm));
  s.emplace_back("precompression_mm", num(units::to_mm(sc.actuator.spring.precompression)));
  s.emplace_back("samples", std::to_string(ts.size()));
  s.emplace_back("peak_deflection_deg", num(units::to_deg(m.peak_deflection)));
  s.emplace_back("final_deflection_deg", num(units::to_deg(m.final_deflection)));
  s.emplace_back("final_theta_change_deg", num(units::to_deg(theta_end - theta0)));
  s.emplace_back("motor_torque_peak_Nm", num(m.peak_motor_torque));
  s.emplace_back("motor_current_peak_mA", num(m.peak_motor_current * 1e3));
  s.emplace_back("energy_max_relative_error", num(ledger.max_relative_error));
}

std::string opt(const std::optional<double>& v, double scale = 1.0) {
  return v ? num(*v * scale) : std::string("none");
}

// --- subcommands --------------------------------------------------------------

void cmd_sweep(const Globals& g, const std::string& dl_text, std::optional<double> tau_max,
               int points, std::optional<double> k_s) {
  auto c = load_config(g);
  if (k_s) c.k_s = *k_s;
  c.validate();
  const auto dls = parse_list(dl_text, "--dl");
  if (dls.empty()) throw UsageError("--dl needs at least one precompression value");
  if (points < 2) throw UsageError("--points must be >= 2");

  const auto base = c.actuator();
  const auto& geom = base.geometry;
  const auto& trans = base.transmission;
  const double saturation = base.spring.k_s * base.spring.max_compression * geom.r_gear /
                            (trans.mu * geom.gear_ratio());
  const double t_max = tau_max.value_or(0.95 * saturation);

  std::vector<model::SpringPack> springs;
  for (double dl : dls) {
    auto sp = base.spring.with_precompression(dl * units::mm);
    sp.validate();
    springs.push_back(sp);
  }
  std::vector<std::future<std::vector<model::CurvePoint>>> jobs;
  for (const auto& sp : springs)
    jobs.push_back(std::async(std::launch::async, [&, sp] {
      return model::torque_deflection_curve(t_max, static_cast<std::size_t>(points), sp, geom,
                                            trans);
    }));
  std::vector<std::vector<model::CurvePoint>> curves;
  for (auto& j : jobs) curves.push_back(j.get());

  Summary s;
  s.emplace_back("k_s_N_per_mm", num(c.k_s));
  s.emplace_back("r_gear_mm", num(c.r_gear));
  s.emplace_back("mu", num(c.mu));
  s.emplace_back("gear_ratio", num(geom.gear_ratio()));
  s.emplace_back("asymptote_Nm_per_rad", num(model::asymptotic_stiffness(base.spring, geom, trans)));
  s.emplace_back("tau_max_Nm", num(t_max));
  svg::Chart chart{"Joint stiffness vs torque", "torque [N*m]", "stiffness [N*m/rad]", {}};
  for (std::size_t i = 0; i < dls.size(); ++i) {
    const std::string t = tag(dls[i]);
    write_file(out_path(g, "sweep_dl" + t + "mm.csv"), [&](std::ostream& os) {
      os << "tau_Nm,deflection_deg,stiffness_Nm_per_rad,state\n";
      for (const auto& p : curves[i]) {
        os << num(p.tau) << ',' << num(units::to_deg(p.deflection)) << ','
           << (p.stiffness.is_rigid() ? std::string("inf") : num(p.stiffness.value())) << ','
           << (p.stiffness.is_rigid() ? "RIGID" : "COMPLIANT") << '\n';
      }
    });
    s.emplace_back("threshold_dl" + t + "mm_Nm",
                   num(model::threshold_torque(springs[i], geom, trans)));
    svg::Series series{"dL = " + config::detail::shortest(dls[i]) + " mm", {}, {}};
    for (const auto& p : curves[i]) {
      if (p.stiffness.is_rigid()) continue;
      series.x.push_back(p.tau);
      series.y.push_back(p.stiffness.value());
    }
    chart.series.push_back(series);
  }
  write_file(out_path(g, "sweep.svg"), [&](std::ostream& os) { svg::write(os, chart); });
  emit_summary(g, "sweep_summary.txt", s);
}

void cmd_impact(const Globals& g, const std::string& mode, const std::string& kase) {
  const auto c = load_config(g);
  const bool rotating = kase == "rotating";
  const auto sc = config::impact_scenario(c, parse_mode(mode), rotating);
  const auto params = c.sim_params();
  const std::string stem = "impact_" + mode + "_" + kase;
  const auto ts = run_and_write(g, sc, params, stem, "Impact, " + mode + " stiffness, " + kase);
  Summary s;
  s.emplace_back("mode", mode);
  s.emplace_back("case", kase);
  add_common(s, ts, sc, params);
  s.emplace_back("recovery_time_s", opt(ts.metrics.recovery_time));
  if (rotating) {
    s.emplace_back("max_err_deg", opt(ts.metrics.max_tracking_error, 1.0 / units::deg));
    s.emplace_back("rmse_deg", opt(ts.metrics.rmse, 1.0 / units::deg));
  }
  emit_summary(g, stem + "_summary.txt", s);
}

void cmd_track(const Globals& g, const std::string& kind, const std::string& load,
               const std::string& mode) {
  const auto c = load_config(g);
  const auto sc = kind == "step" ? config::step_scenario(c, parse_mode(mode), parse_load(load))
                                 : config::sinusoid_scenario(c, parse_mode(mode), parse_load(load));
  const auto params = c.sim_params();
  const std::string stem = "track_" + kind + "_" + load + "_" + mode;
  const auto ts =
      run_and_write(g, sc, params, stem, "Tracking, " + kind + ", " + load + " load, " + mode);
  const auto& m = ts.metrics;
  Summary s;
  s.emplace_back("kind", kind);
  s.emplace_back("load", load);
  s.emplace_back("mode", mode);
  add_common(s, ts, sc, params);
  s.emplace_back("max_err_deg", opt(m.max_tracking_error, 1.0 / units::deg));
  s.emplace_back("rmse_deg", opt(m.rmse, 1.0 / units::deg));
  if (kind == "step") {
    s.emplace_back("settle_time_s", opt(m.settle_time));
    s.emplace_back("max_error_after_arrival_deg", opt(m.max_error_after_arrival, 1.0 / units::deg));
    s.emplace_back("steady_state_error_deg", opt(m.steady_state_error, 1.0 / units::deg));
  }
  emit_summary(g, stem + "_summary.txt", s);
}

void cmd_contact(const Globals& g, const std::string& mode) {
  const auto c = load_config(g);
  const auto sc = config::contact_scenario(c, parse_mode(mode));
  const auto params = c.sim_params();
  const std::string stem = "contact_" + mode;
  const auto r = control::run_contact(sc, params);
  write_file(out_path(g, stem + ".csv"),
             [&](std::ostream& os) { dynamics::write_csv(os, r.series); });
  Summary s;
  s.emplace_back("mode", mode);
  add_common(s, r.series, sc, params);
  s.emplace_back("contacted", r.contacted ? "true" : "false");
  s.emplace_back("contact_force_N", num(r.contact_force));
  s.emplace_back("peak_contact_force_N", num(r.peak_contact_force));
  s.emplace_back("contact_time_s", opt(r.series.metrics.contact_time));
  if (r.contacted)
    s.emplace_back("quasi_static_force_N",
                   num(control::quasi_static_contact_force(r.series, sc.actuator)));
  emit_summary(g, stem + "_summary.txt", s);
}

std::map<std::string, std::size_t> param_slots() {
  return {{"k_s", identify::KS}, {"delta_l", identify::DL}, {"mu", identify::MU},
          {"tau_f", identify::TF}};
}

/// Config units (N/mm, mm, -, N*m) to SI.
double param_scale(std::size_t i) {
  return i == identify::KS ? units::n_per_mm : i == identify::DL ? units::mm : 1.0;
}

std::vector<std::pair<std::string, std::string>> split_assignments(const std::string& text,
                                                                   const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = config::detail::trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError(what + ": expected name=value, got '" + item + "'");
    const auto key = config::detail::trim(item.substr(0, eq));
    if (!param_slots().count(key))
      throw UsageError(what + ": unknown parameter '" + key + "' (k_s, delta_l, mu, tau_f)");
    out.emplace_back(key, config::detail::trim(item.substr(eq + 1)));
  }
  return out;
}

double to_number(const std::string& text, const std::string& what) {
  const auto v = parse_list(text, what);
  if (v.size() != 1) throw UsageError(what + ": invalid number '" + text + "'");
  return v[0];
}

int cmd_fit(const Globals& g, const std::string& data, const std::string& fix,
            const std::string& bounds_text, const std::string& initial_text) {
  const auto c = load_config(g);
  const auto geom = c.actuator().geometry;
  std::ifstream in(data);
  if (!in) throw ValidationError("cannot open data file '" + data + "'");
  std::vector<identify::TorqueDeflectionSample> samples;
  try {
    samples = identify::read_samples(in);
  } catch (const ParseError& e) {
    throw ParseError(data + ": " + e.what());
  }

  identify::Bounds bounds;
  for (const auto& [k, v] : split_assignments(bounds_text, "--bounds")) {
    const auto i = param_slots().at(k);
    const auto colon = v.find(':');
    if (colon == std::string::npos) throw UsageError("--bounds: expected name=lo:hi");
    bounds.lower[i] = to_number(v.substr(0, colon), "--bounds") * param_scale(i);
    bounds.upper[i] = to_number(v.substr(colon + 1), "--bounds") * param_scale(i);
  }
  identify::FitParams initial;
  auto init = initial.to_array();
  for (const auto& [k, v] : split_assignments(initial_text, "--initial")) {
    const auto i = param_slots().at(k);
    init[i] = to_number(v, "--initial") * param_scale(i);
  }
  identify::FitOptions options;
  for (const auto& [k, v] : split_assignments(fix, "--fix")) {
    const auto i = param_slots().at(k);
    init[i] = to_number(v, "--fix") * param_scale(i);
    options.free[i] = false;
  }
  initial = identify::FitParams::from_array(init);

  const auto r = identify::fit(samples, bounds, initial, geom, options);
  write_file(out_path(g, "fit_curve.csv"),
             [&](std::ostream& os) { identify::write_fit_curve(os, samples, r.estimate, geom); });
  std::ostringstream report;
  identify::write_report(report, r, options.free);
  write_file(out_path(g, "fit_report.txt"), [&](std::ostream& os) { os << report.str(); });
  std::cout << report.str();

  svg::Chart chart{"Torque-deflection fit", "torque [N*m]", "deflection [deg]", {}};
  svg::Series meas{"measured", {}, {}}, model_curve{"fit", {}, {}};
  for (const auto& s : samples) {
    meas.x.push_back(s.tau);
    meas.y.push_back(units::to_deg(s.theta));
    model_curve.x.push_back(s.tau);
    model_curve.y.push_back(units::to_deg(identify::predict_deflection(s.tau, r.estimate, geom)));
  }
  chart.series = {meas, model_curve};
  write_file(out_path(g, "fit.svg"), [&](std::ostream& os) { svg::write(os, chart); });

  if (!r.converged) {
    std::cerr << "error: fit did not converge within " << options.max_iterations
              << " iterations\n";
    return kExitNumerical;
  }
  return 0;
}

void cmd_selflock(const Globals& g, double mu_f) {
  const auto c = load_config(g);
  const auto v = model::is_self_locking(c.actuator().geometry, mu_f);
  Summary s;
  s.emplace_back("verdict", v.locking ? "LOCKING" : "NOT LOCKING");
  s.emplace_back("lead_angle_deg", num(units::to_deg(v.lead_angle)));
  s.emplace_back("tan_lead", num(std::tan(v.lead_angle)));
  s.emplace_back("friction_coefficient", num(mu_f));
  emit_summary(g, "selflock_summary.txt", s);
}

void cmd_synth(const Globals& g, const std::string& truth_text, double sigma_deg, int points,
               double tau_max, const std::string& output) {
  const auto c = load_config(g);
  auto truth = identify::FitParams{800.0, 0.010, 0.9, 0.05}.to_array();
  for (const auto& [k, v] : split_assignments(truth_text, "--truth")) {
    const auto i = param_slots().at(k);
    truth[i] = to_number(v, "--truth") * param_scale(i);
  }
  if (points < 2) throw UsageError("--points must be >= 2");
  const auto taus = identify::uniform_grid(0.0, tau_max, static_cast<std::size_t>(points));
  const auto samples = identify::generate_synthetic(identify::FitParams::from_array(truth), taus,
                                                    sigma_deg * units::deg, g.seed,
                                                    c.actuator().geometry);
  const fs::path p = output.empty() ? out_path(g, "synthetic.csv") : fs::path(output);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, [&](std::ostream& os) { identify::write_samples(os, samples); });
  std::cout << "samples=" << samples.size() << "\nfile=" << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Worm-gear variable stiffness actuator toolkit", "wave"};
  app.require_subcommand(1);
  Globals g;
  double dt_ms = 0.0;
  app.add_option("--config", g.config_path, "Configuration file (default: built-in wave-default)");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  auto* dt_opt = app.add_option("--dt", dt_ms, "Integration step in ms (overrides config)");

  auto* sweep = app.add_subcommand("sweep", "Torque-deflection curves per precompression");
  std::string dl_text = "5,10,15";
  double tau_max = 0.0;
  int sweep_points = 201;
  double sweep_ks = 0.0;
  sweep->add_option("--dl", dl_text, "Precompression list, mm")->capture_default_str();
  auto* tau_max_opt = sweep->add_option("--tau-max", tau_max, "Largest torque, N*m");
  sweep->add_option("--points", sweep_points, "Samples per curve")->capture_default_str();
  auto* ks_opt = sweep->add_option("--k-s", sweep_ks, "Spring constant override, N/mm");

  auto* impact = app.add_subcommand("impact", "Impulse load on the joint");
  std::string mode = "low", kase = "at_rest";
  impact->add_option("--mode", mode)->check(CLI::IsMember({"low", "high"}))->capture_default_str();
  impact->add_option("--case", kase)
      ->check(CLI::IsMember({"at_rest", "rotating"}))
      ->capture_default_str();

  auto* track = app.add_subcommand("track", "Closed-loop position tracking");
  std::string kind = "sinusoid", load = "none";
  track->add_option("--kind", kind)->check(CLI::IsMember({"sinusoid", "step"}))->capture_default_str();
  track->add_option("--load", load)
      ->check(CLI::IsMember({"none", "lateral", "vertical"}))
      ->capture_default_str();
  track->add_option("--mode", mode)->check(CLI::IsMember({"low", "high"}))->capture_default_str();

  auto* contact = app.add_subcommand("contact", "Motor drives the link into a rigid stop");
  contact->add_option("--mode", mode)->check(CLI::IsMember({"low", "high"}))->capture_default_str();

  auto* fitc = app.add_subcommand("fit", "Identify spring parameters from a torque-deflection CSV");
  std::string data, fix, bounds, initial;
  fitc->add_option("data", data, "CSV with tau_Nm,theta_deg[,weight]")->required();
  fitc->add_option("--fix", fix, "Hold parameters, e.g. mu=0.9,tau_f=0.05");
  fitc->add_option("--bounds", bounds, "Override bounds, e.g. k_s=0.5:2,delta_l=0:20");
  fitc->add_option("--initial", initial, "Initial guess, e.g. k_s=1,delta_l=8");

  auto* selflock = app.add_subcommand("selflock", "Worm self-locking check");
  double mu_f = 0.1;
  selflock->add_option("--mu-f", mu_f, "Contact friction coefficient")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Synthetic torque-deflection samples");
  std::string truth, output;
  double sigma = 0.0, synth_tau_max = 0.6;
  int synth_points = 40;
  synth->add_option("--truth", truth, "True parameters, e.g. k_s=0.8,delta_l=10,mu=0.9,tau_f=0.05");
  synth->add_option("--sigma", sigma, "Noise on theta, deg")->capture_default_str();
  synth->add_option("--points", synth_points)->capture_default_str();
  synth->add_option("--tau-max", synth_tau_max, "N*m")->capture_default_str();
  synth->add_option("--output", output, "Output file (default <out>/synthetic.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  if (*dt_opt) g.dt_ms = dt_ms;

  try {
    if (*sweep)
      cmd_sweep(g, dl_text, *tau_max_opt ? std::optional(tau_max) : std::nullopt, sweep_points,
                *ks_opt ? std::optional(sweep_ks) : std::nullopt);
    else if (*impact)
      cmd_impact(g, mode, kase);
    else if (*track)
      cmd_track(g, kind, load, mode);
    else if (*contact)
      cmd_contact(g, mode);
    else if (*fitc)
      return cmd_fit(g, data, fix, bounds, initial);
    else if (*selflock)
      cmd_selflock(g, mu_f);
    else if (*synth)
      cmd_synth(g, truth, sigma, synth_points, synth_tau_max, output);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
