#pragma once

#include <numbers>

// Internal quantities are SI. These factors convert the units used in
// configuration files and reports.
namespace wave::units {

inline constexpr double mm = 1e-3;          // m
inline constexpr double n_per_mm = 1e3;     // N/m
inline constexpr double deg = std::numbers::pi / 180.0;  // rad
inline constexpr double ms = 1e-3;          // s
inline constexpr double gravity = 9.81;     // m/s^2

constexpr double to_deg(double rad) { return rad / deg; }
constexpr double to_mm(double m) { return m / mm; }

}  // namespace wave::units
