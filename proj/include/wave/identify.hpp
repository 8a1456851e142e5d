#pragma once

// Least-squares identification of (k_s, dL, mu, tau_f) from static
// torque-deflection samples.
//
// Beyond the knee the forward model is linear in tau:
//   theta = (tau - tau_f) / A - dL * G / r_gear,  A = k_s r_gear^2 / (mu G^2)
// so a single-precompression dataset pins down k_s / mu and one combination of
// dL and tau_f. The fit reports the Jacobian rank and marks parameters that lie
// in its null space with an infinite confidence half-width.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <future>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "wave/errors.hpp"
#include "wave/model.hpp"
#include "wave/units.hpp"

namespace wave::identify {

struct TorqueDeflectionSample {
  double tau = 0.0;     ///< N*m, >= 0
  double theta = 0.0;   ///< rad; may be slightly negative for noisy rigid samples
  double weight = 1.0;
};

inline constexpr std::size_t kParamCount = 4;
enum ParamIndex : std::size_t { KS = 0, DL = 1, MU = 2, TF = 3 };
inline constexpr std::array<const char*, kParamCount> kParamNames = {"k_s", "delta_l", "mu",
                                                                    "tau_f"};

/// Identification parameters in SI units.
struct FitParams {
  double k_s = 1000.0;       ///< N/m
  double delta_l = 0.010;    ///< m
  double mu = 0.8;
  double tau_friction = 0.05;  ///< N*m

  std::array<double, kParamCount> to_array() const { return {k_s, delta_l, mu, tau_friction}; }
  static FitParams from_array(const std::array<double, kParamCount>& a) {
    return {a[KS], a[DL], a[MU], a[TF]};
  }
  friend bool operator==(const FitParams&, const FitParams&) = default;
};

struct Bounds {
  std::array<double, kParamCount> lower = {100.0, 0.0, 0.3, 0.0};
  std::array<double, kParamCount> upper = {10000.0, 0.030, 1.0, 0.3};

  void validate() const {
    for (std::size_t i = 0; i < kParamCount; ++i) {
      if (!(std::isfinite(lower[i]) && std::isfinite(upper[i]) && lower[i] < upper[i]))
        throw ValidationError(std::string("bounds for ") + kParamNames[i] + " must satisfy lo < hi");
    }
    if (!(lower[KS] > 0.0)) throw ValidationError("k_s lower bound must be > 0");
    if (!(lower[MU] > 0.0 && upper[MU] <= 1.0)) throw ValidationError("mu bounds must lie in (0, 1]");
    if (lower[DL] < 0.0 || lower[TF] < 0.0)
      throw ValidationError("delta_l and tau_f bounds must be >= 0");
  }

  bool contains(const FitParams& p) const {
    const auto a = p.to_array();
    for (std::size_t i = 0; i < kParamCount; ++i)
      if (!(a[i] >= lower[i] && a[i] <= upper[i])) return false;
    return true;
  }
};

struct FitOptions {
  std::array<bool, kParamCount> free = {true, true, true, true};
  int max_iterations = 200;
  int grid = 5;                            ///< multi-start points per axis over (dL, mu)
  double rigid_tolerance = 0.5 * units::deg;  ///< |theta| at or below counts as rigid
  bool parallel = true;
};

struct FitResult {
  FitParams estimate;
  std::array<double, kParamCount> half_width{};  ///< 95 %, SI; inf when unidentified
  double residual_rms = 0.0;  ///< rad, weighted
  int iterations = 0;
  bool converged = false;
  int rank = 0;
  int free_count = 0;
  int starts = 0;
  int starts_converged = 0;
  double asymptote = 0.0;     ///< A, N*m/rad
  double knee_torque = 0.0;   ///< tau_th + tau_f, N*m

  bool rank_deficient() const { return rank < free_count; }
};

/// Static forward model with the Coulomb offset applied before the preload.
inline double predict_deflection(double tau, const FitParams& p, const model::Geometry& geom) {
  const double g = geom.gear_ratio();
  const double a = p.k_s * geom.r_gear * geom.r_gear / (p.mu * g * g);
  const double tau_th = p.k_s * p.delta_l * geom.r_gear / (p.mu * g);
  const double eff = std::max(0.0, tau - p.tau_friction);
  return eff <= tau_th ? 0.0 : (eff - tau_th) / a;
}

inline double knee_torque(const FitParams& p, const model::Geometry& geom) {
  return p.k_s * p.delta_l * geom.r_gear / (p.mu * geom.gear_ratio()) + p.tau_friction;
}

inline void validate(const TorqueDeflectionSample& s) {
  if (!(std::isfinite(s.tau) && s.tau >= 0.0)) throw ValidationError("sample tau must be >= 0");
  if (!std::isfinite(s.theta)) throw ValidationError("sample theta must be finite");
  if (!(std::isfinite(s.weight) && s.weight >= 0.0))
    throw ValidationError("sample weight must be >= 0");
}

namespace detail {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Problem {
public:
  Problem(const std::vector<TorqueDeflectionSample>& samples, const Bounds& bounds,
          const FitParams& base, const std::array<bool, kParamCount>& free,
          const model::Geometry& geom)
      : samples_(samples), bounds_(bounds), base_(base.to_array()), geom_(geom) {
    for (std::size_t i = 0; i < kParamCount; ++i)
      if (free[i]) index_.push_back(i);
  }

  std::size_t dims() const { return index_.size(); }
  std::size_t rows() const { return samples_.size(); }
  const std::vector<std::size_t>& index() const { return index_; }

  double span(std::size_t k) const {
    const auto i = index_[k];
    return bounds_.upper[i] - bounds_.lower[i];
  }

  FitParams params(const Vec& u) const {
    auto a = base_;
    for (std::size_t k = 0; k < index_.size(); ++k) {
      const auto i = index_[k];
      a[i] = bounds_.lower[i] + u[static_cast<Eigen::Index>(k)] * span(k);
    }
    return FitParams::from_array(a);
  }

  Vec normalize(const FitParams& p) const {
    const auto a = p.to_array();
    Vec u(static_cast<Eigen::Index>(dims()));
    for (std::size_t k = 0; k < index_.size(); ++k)
      u[static_cast<Eigen::Index>(k)] = (a[index_[k]] - bounds_.lower[index_[k]]) / span(k);
    return u;
  }

  Vec residual(const Vec& u) const {
    const FitParams p = params(u);
    Vec r(static_cast<Eigen::Index>(rows()));
    for (std::size_t n = 0; n < samples_.size(); ++n) {
      const auto& s = samples_[n];
      r[static_cast<Eigen::Index>(n)] =
          std::sqrt(s.weight) * (predict_deflection(s.tau, p, geom_) - s.theta);
    }
    return r;
  }

  /// Central differences in normalized coordinates, one-sided against the box.
  Mat jacobian(const Vec& u) const {
    constexpr double h = 1e-6;
    Mat j(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(dims()));
    for (Eigen::Index k = 0; k < j.cols(); ++k) {
      Vec up = u, dn = u;
      up[k] = std::min(1.0, u[k] + h);
      dn[k] = std::max(0.0, u[k] - h);
      j.col(k) = (residual(up) - residual(dn)) / (up[k] - dn[k]);
    }
    return j;
  }

private:
  const std::vector<TorqueDeflectionSample>& samples_;
  Bounds bounds_;
  std::array<double, kParamCount> base_;
  model::Geometry geom_;
  std::vector<std::size_t> index_;
};

struct RunResult {
  Vec u;
  double cost = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

inline Vec clamp_box(Vec u) { return u.cwiseMax(0.0).cwiseMin(1.0); }

inline RunResult levenberg_marquardt(const Problem& prob, Vec u, int max_iterations) {
  RunResult out;
  u = clamp_box(u);
  Vec r = prob.residual(u);
  double cost = 0.5 * r.squaredNorm();
  if (!std::isfinite(cost)) {
    out.diverged = true;
    return out;
  }
  Mat j = prob.jacobian(u);
  Mat a = j.transpose() * j;
  Vec g = j.transpose() * r;
  double lambda = 1e-3 * std::max(a.diagonal().maxCoeff(), 1e-12);

  int it = 0;
  bool converged = cost == 0.0;
  while (!converged && it < max_iterations) {
    ++it;
    Mat lhs = a;
    for (Eigen::Index k = 0; k < lhs.rows(); ++k)
      lhs(k, k) += lambda * std::max(a(k, k), 1e-12);
    const Vec delta = lhs.ldlt().solve(-g);
    if (!delta.allFinite()) {
      out.diverged = true;
      break;
    }
    const Vec trial = clamp_box(u + delta);
    const double step = (trial - u).norm();
    if (step <= 1e-8 * (u.norm() + 1e-8)) {
      converged = true;
      break;
    }
    const Vec r_trial = prob.residual(trial);
    const double cost_trial = 0.5 * r_trial.squaredNorm();
    if (!std::isfinite(cost_trial)) {
      lambda *= 10.0;
      continue;
    }
    if (cost_trial < cost) {
      const double decrease = cost - cost_trial;
      u = trial;
      r = r_trial;
      const double previous = cost;
      cost = cost_trial;
      if (cost == 0.0 || decrease < 1e-12 * previous) {
        converged = true;
        break;
      }
      j = prob.jacobian(u);
      a = j.transpose() * j;
      g = j.transpose() * r;
      lambda = std::max(lambda / 3.0, 1e-15);
    } else {
      lambda *= 4.0;
    }
  }
  out.u = u;
  out.cost = cost;
  out.iterations = it;
  out.converged = converged;
  return out;
}

}  // namespace detail

/// Classifies samples and throws InsufficientSamplesError unless the data has
/// at least 8 samples, 2 of them rigid and 4 compliant.
inline void check_coverage(const std::vector<TorqueDeflectionSample>& samples,
                           double rigid_tolerance) {
  std::size_t rigid = 0, compliant = 0;
  for (const auto& s : samples) {
    validate(s);
    if (std::abs(s.theta) <= rigid_tolerance)
      ++rigid;
    else if (s.theta > rigid_tolerance)
      ++compliant;
  }
  if (samples.size() < 8 || rigid < 2 || compliant < 4) {
    throw InsufficientSamplesError(
        "need >= 8 samples with >= 2 rigid and >= 4 compliant; got " +
        std::to_string(samples.size()) + " samples, " + std::to_string(rigid) + " rigid, " +
        std::to_string(compliant) + " compliant");
  }
}

/// Multi-start Levenberg-Marquardt over the box. The 5x5 start grid covers
/// the free axes among (dL, mu); the other free parameters start at `initial`.
inline FitResult fit(const std::vector<TorqueDeflectionSample>& samples, const Bounds& bounds,
                     const FitParams& initial, const model::Geometry& geom,
                     const FitOptions& options = {}) {
  bounds.validate();
  geom.validate();
  if (!bounds.contains(initial)) throw ValidationError("initial guess outside bounds");
  if (options.max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
  if (options.grid < 1) throw ValidationError("multi-start grid must be >= 1");
  check_coverage(samples, options.rigid_tolerance);

  const detail::Problem prob(samples, bounds, initial, options.free, geom);
  if (prob.dims() == 0) throw ValidationError("no free parameters");

  std::vector<detail::Vec> starts;
  const detail::Vec u0 = prob.normalize(initial);
  const auto& idx = prob.index();
  auto slot = [&](std::size_t p) -> Eigen::Index {
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (idx[k] == p) return static_cast<Eigen::Index>(k);
    return -1;
  };
  const Eigen::Index s_dl = slot(DL), s_mu = slot(MU);
  const int n_dl = s_dl >= 0 ? options.grid : 1;
  const int n_mu = s_mu >= 0 ? options.grid : 1;
  for (int i = 0; i < n_dl; ++i) {
    for (int k = 0; k < n_mu; ++k) {
      detail::Vec u = u0;
      if (s_dl >= 0) u[s_dl] = (i + 0.5) / options.grid;
      if (s_mu >= 0) u[s_mu] = (k + 0.5) / options.grid;
      starts.push_back(u);
    }
  }

  std::vector<detail::RunResult> runs(starts.size());
  if (options.parallel && starts.size() > 1) {
    std::vector<std::future<detail::RunResult>> jobs;
    jobs.reserve(starts.size());
    for (const auto& u : starts)
      jobs.push_back(std::async(std::launch::async, [&prob, u, &options] {
        return detail::levenberg_marquardt(prob, u, options.max_iterations);
      }));
    for (std::size_t i = 0; i < jobs.size(); ++i) runs[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < starts.size(); ++i)
      runs[i] = detail::levenberg_marquardt(prob, starts[i], options.max_iterations);
  }

  const detail::RunResult* best = nullptr;
  int n_converged = 0;
  auto key = [&](const detail::RunResult& r) {
    return std::tuple(r.cost, prob.params(r.u).to_array());
  };
  for (const auto& r : runs) {
    if (r.diverged) continue;
    if (r.converged) ++n_converged;
    if (!best || key(r) < key(*best)) best = &r;
  }
  if (!best) throw DivergedError("every multi-start candidate diverged");

  FitResult res;
  res.estimate = prob.params(best->u);
  res.iterations = best->iterations;
  res.converged = best->converged;
  res.starts = static_cast<int>(runs.size());
  res.starts_converged = n_converged;
  res.free_count = static_cast<int>(prob.dims());

  const detail::Vec r = prob.residual(best->u);
  double wsum = 0.0;
  for (const auto& s : samples) wsum += s.weight;
  res.residual_rms = wsum > 0.0 ? std::sqrt(r.squaredNorm() / wsum) : 0.0;

  const detail::Mat j = prob.jacobian(best->u);
  Eigen::JacobiSVD<detail::Mat> svd(j, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = 1e-7 * (sv.size() > 0 ? sv[0] : 0.0);
  int rank = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv[k] > tol) ++rank;
  res.rank = rank;

  const auto n = static_cast<double>(samples.size());
  const double s2 = n > rank ? r.squaredNorm() / (n - rank) : 0.0;
  const detail::Mat& v = svd.matrixV();
  res.half_width.fill(0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    double null_weight = 0.0, var = 0.0;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      if (c < rank)
        var += v(row, c) * v(row, c) / (sv[c] * sv[c]);
      else
        null_weight += v(row, c) * v(row, c);
    }
    res.half_width[idx[k]] = null_weight > 1e-6 ? std::numeric_limits<double>::infinity()
                                                : 1.96 * std::sqrt(s2 * var) * prob.span(k);
  }

  const auto& e = res.estimate;
  const double g = geom.gear_ratio();
  res.asymptote = e.k_s * geom.r_gear * geom.r_gear / (e.mu * g * g);
  res.knee_torque = knee_torque(e, geom);
  return res;
}

/// Samples of the forward model at each tau, theta perturbed by N(0, sigma).
inline std::vector<TorqueDeflectionSample> generate_synthetic(const FitParams& truth,
                                                              const std::vector<double>& taus,
                                                              double sigma, std::uint64_t seed,
                                                              const model::Geometry& geom) {
  if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<TorqueDeflectionSample> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    if (!(tau >= 0.0)) throw ValidationError("tau grid values must be >= 0");
    double theta = predict_deflection(tau, truth, geom);
    if (sigma > 0.0) theta += sigma * noise(rng);
    out.push_back({tau, theta, 1.0});
  }
  return out;
}

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw ValidationError("grid needs n >= 2 and hi > lo");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

// --- CSV ------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& text, const std::string& column, int line) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty())
    throw ParseError("column '" + column + "': invalid number '" + text + "'", line);
  return v;
}

}  // namespace detail

/// Reads `tau_Nm,theta_deg[,weight]`. Blank lines and lines starting with '#' are skipped.
inline std::vector<TorqueDeflectionSample> read_samples(std::istream& is) {
  static const std::array<std::string, 3> expected = {"tau_Nm", "theta_deg", "weight"};
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = detail::split_csv(t);
    break;
  }
  if (header.empty()) throw ParseError("missing header row", lineno);
  if (header.size() < 2 || header.size() > 3)
    throw ParseError("expected columns tau_Nm,theta_deg[,weight]", lineno);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != expected[i])
      throw ParseError("unexpected column '" + header[i] + "' at position " +
                           std::to_string(i + 1) + ", expected '" + expected[i] + "'",
                       lineno);
  }

  std::vector<TorqueDeflectionSample> out;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split_csv(t);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(cells.size()),
                       lineno);
    TorqueDeflectionSample s;
    s.tau = detail::parse_double(cells[0], header[0], lineno);
    s.theta = detail::parse_double(cells[1], header[1], lineno) * units::deg;
    if (cells.size() == 3) s.weight = detail::parse_double(cells[2], header[2], lineno);
    try {
      validate(s);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    }
    out.push_back(s);
  }
  return out;
}

inline std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  std::string s(buf);
  if (s == "-0") s = "0";
  return s;
}

inline void write_samples(std::ostream& os, const std::vector<TorqueDeflectionSample>& samples) {
  os << "tau_Nm,theta_deg,weight\n";
  for (const auto& s : samples)
    os << format_value(s.tau) << ',' << format_value(units::to_deg(s.theta)) << ','
       << format_value(s.weight) << '\n';
}

/// Measured and fitted deflection per sample, for overlay plots.
inline void write_fit_curve(std::ostream& os, const std::vector<TorqueDeflectionSample>& samples,
                            const FitParams& p, const model::Geometry& geom) {
  os << "tau_Nm,theta_measured_deg,theta_fit_deg,residual_deg\n";
  for (const auto& s : samples) {
    const double fitted = predict_deflection(s.tau, p, geom);
    os << format_value(s.tau) << ',' << format_value(units::to_deg(s.theta)) << ','
       << format_value(units::to_deg(fitted)) << ',' << format_value(units::to_deg(fitted - s.theta))
       << '\n';
  }
}

/// key=value report in config units (N/mm, mm, N*m).
inline void write_report(std::ostream& os, const FitResult& r,
                         const std::array<bool, kParamCount>& free) {
  const auto& e = r.estimate;
  const std::array<double, kParamCount> scale = {1.0 / units::n_per_mm, 1.0 / units::mm, 1.0, 1.0};
  const std::array<const char*, kParamCount> keys = {"k_s_N_per_mm", "delta_l_mm", "mu",
                                                     "tau_f_Nm"};
  const auto v = e.to_array();
  os << "converged=" << (r.converged ? "true" : "false") << '\n';
  os << "iterations=" << r.iterations << '\n';
  os << "starts=" << r.starts << '\n';
  os << "starts_converged=" << r.starts_converged << '\n';
  os << "residual_rms_deg=" << format_value(units::to_deg(r.residual_rms)) << '\n';
  os << "jacobian_rank=" << r.rank << '\n';
  os << "free_parameters=" << r.free_count << '\n';
  os << "rank_deficient=" << (r.rank_deficient() ? "true" : "false") << '\n';
  for (std::size_t i = 0; i < kParamCount; ++i) {
    os << keys[i] << '=' << format_value(v[i] * scale[i]) << '\n';
    os << keys[i] << "_halfwidth=" << format_value(r.half_width[i] * scale[i]) << '\n';
    os << keys[i] << "_free=" << (free[i] ? "true" : "false") << '\n';
  }
  os << "asymptote_Nm_per_rad=" << format_value(r.asymptote) << '\n';
  os << "knee_torque_Nm=" << format_value(r.knee_torque) << '\n';
  if (r.rank_deficient())
    os << "identifiable_combinations=asymptote_Nm_per_rad,knee_torque_Nm\n";
  if (free[MU] || free[TF]) os << "friction_split=not_unique\n";
}

}  // namespace wave::identify
