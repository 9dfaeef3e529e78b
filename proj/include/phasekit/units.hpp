#pragma once

#include <cmath>
#include <numbers>

namespace phasekit {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// All internal time is carried in microseconds. Frequencies are plain Hz,
// so this is the one place the Hz <-> us conversion lives.
inline constexpr double cycles(double freq_hz, double t_us) { return freq_hz * t_us * 1.0e-6; }

// Wrap into (-pi, pi].
inline double wrap_phase(double phi) {
    double w = std::remainder(phi, two_pi);
    if (w <= -std::numbers::pi) w += two_pi;
    return w;
}

}  // namespace phasekit
