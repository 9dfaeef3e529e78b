#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>

#include "phasekit/rng.hpp"

namespace phasekit {

// Two-port interferometer probe settings. N = flux * window is the mean
// photon number per measurement.
struct MeasurementConfig {
    double flux_per_us = 0.0;      // mu, photons/us
    double window_us = 1.0;        // tau
    double visibility = 1.0;       // V0
    double dark_rate_per_us = 0.0; // per detector

    void validate() const {
        if (!(flux_per_us >= 0.0)) throw std::invalid_argument("measurement: flux must be >= 0");
        if (!(window_us > 0.0)) throw std::invalid_argument("measurement: window must be > 0");
        if (!(visibility >= 0.0 && visibility <= 1.0))
            throw std::invalid_argument("measurement: visibility must be in [0, 1]");
        if (!(dark_rate_per_us >= 0.0)) throw std::invalid_argument("measurement: dark rate must be >= 0");
    }

    double mean_photons() const { return flux_per_us * window_us; }
};

struct PortCounts {
    long long n1 = 0;
    long long n2 = 0;
    long long total() const { return n1 + n2; }
};

// Mean counts at the two ports: lambda_{1,2} = N/2 (1 +/- V0 cos phi), plus
// dark counts. Their sum is phase independent.
inline std::pair<double, double> mean_counts(double phi, const MeasurementConfig& cfg) {
    cfg.validate();
    const double n = cfg.mean_photons();
    const double c = cfg.visibility * std::cos(phi);
    const double dark = cfg.dark_rate_per_us * cfg.window_us;
    return {0.5 * n * (1.0 + c) + dark, 0.5 * n * (1.0 - c) + dark};
}

inline long long poisson_draw(double lambda, std::mt19937_64& eng) {
    if (lambda <= 0.0) return 0;
    return std::poisson_distribution<long long>(lambda)(eng);
}

// Independent Poisson draws with the mean_counts rates.
inline PortCounts sample_counts(double phi, const MeasurementConfig& cfg, std::mt19937_64& eng) {
    const auto [l1, l2] = mean_counts(phi, cfg);
    return {poisson_draw(l1, eng), poisson_draw(l2, eng)};
}

// Classical Fisher information of the ideal (dark-count-free) Poisson model:
// I_F = N V0^2 sin^2 phi / (1 - V0^2 cos^2 phi). For V0 = 1 the expression
// reduces to N identically, which also resolves the 0/0 points at phi = 0, pi
// by their limiting value.
inline double fisher_info(double phi, const MeasurementConfig& cfg) {
    cfg.validate();
    const double n = cfg.mean_photons();
    const double v = cfg.visibility;
    if (v >= 1.0) return n;
    const double s = std::sin(phi), c = std::cos(phi);
    return n * v * v * s * s / (1.0 - v * v * c * c);
}

// Average information per measurement under Wiener diffusion:
// mu V0^2 tau e^{-D tau}.
inline double avg_fisher(const MeasurementConfig& cfg, double diffusion) {
    cfg.validate();
    if (!(diffusion >= 0.0)) throw std::invalid_argument("avg_fisher: D must be >= 0");
    return cfg.flux_per_us * cfg.visibility * cfg.visibility * cfg.window_us *
           std::exp(-diffusion * cfg.window_us);
}

// V(tau) = V0 e^{-D tau / 2}.
inline double effective_visibility(double v0, double diffusion, double tau_us) {
    if (!(v0 >= 0.0 && diffusion >= 0.0 && tau_us >= 0.0))
        throw std::invalid_argument("effective_visibility: inputs must be non-negative");
    return v0 * std::exp(-0.5 * diffusion * tau_us);
}

// Conventional tracking bound: e^{D tau}/(mu V0^2 tau) + D tau. First term is
// the measurement error, second the diffusion accumulated over the window.
inline double conv_variance_bound(const MeasurementConfig& cfg, double diffusion) {
    cfg.validate();
    const double gamma = cfg.flux_per_us * cfg.visibility * cfg.visibility;
    const double tau = cfg.window_us;
    return std::exp(diffusion * tau) / (gamma * tau) + diffusion * tau;
}

// Steady-state tracking shot-noise limit sqrt(D / (eta mu V0^2)).
inline double tracking_snl(double diffusion, double flux_per_us, double v0, double eta) {
    if (!(diffusion > 0.0 && flux_per_us > 0.0 && v0 > 0.0 && eta > 0.0))
        throw std::invalid_argument("tracking_snl: all inputs must be > 0");
    return std::sqrt(diffusion / (eta * flux_per_us * v0 * v0));
}

// Prior-assisted information 1 / (D tau + sigma_inf^2) with the tracking SNL
// as the stabilized prior variance.
inline double prior_fisher(const MeasurementConfig& cfg, double diffusion, double eta) {
    const double snl = tracking_snl(diffusion, cfg.flux_per_us, cfg.visibility, eta);
    return 1.0 / (diffusion * cfg.window_us + snl);
}

// Prior-assisted variance bound: 1 / (I_prior + avg_fisher) + D tau.
inline double bayes_variance_bound(const MeasurementConfig& cfg, double diffusion, double eta) {
    cfg.validate();
    if (!(diffusion > 0.0)) throw std::invalid_argument("bayes_variance_bound: D must be > 0");
    return 1.0 / (prior_fisher(cfg, diffusion, eta) + avg_fisher(cfg, diffusion)) +
           diffusion * cfg.window_us;
}

}  // namespace phasekit
