#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "phasekit/detail/stats.hpp"
#include "phasekit/rng.hpp"
#include "phasekit/units.hpp"

namespace phasekit {

struct Tone {
    double freq_hz = 0.0;
    double amp_rad = 0.0;
};

// Stochastic phase process: a Wiener floor plus optional discrete tones.
// For exponent p > 0.5 with no explicit tones, a tone bank is synthesized so
// that the increment std follows coeff * tau^p over [synth_tau_lo, synth_tau_hi],
// with coeff = sqrt(diffusion_coeff). p = 0.5 is the pure Wiener case and
// diffusion_coeff is then the usual D in rad^2/us.
struct NoiseModel {
    double diffusion_coeff = 0.0;  // D; rad^2/us^(2p)
    double exponent = 0.5;         // p
    std::vector<Tone> tones;
    double white_background = 0.0;  // rad^2/us, Wiener floor beneath tones
    double synth_tau_lo_us = 10.0;
    double synth_tau_hi_us = 1.0e4;

    void validate() const {
        if (!(diffusion_coeff >= 0.0)) throw std::invalid_argument("noise: diffusion_coeff must be >= 0");
        if (!(exponent >= 0.5 && exponent <= 1.0)) throw std::invalid_argument("noise: exponent must be in [0.5, 1]");
        if (!(white_background >= 0.0)) throw std::invalid_argument("noise: white_background must be >= 0");
        if (!(synth_tau_lo_us > 0.0 && synth_tau_hi_us > synth_tau_lo_us))
            throw std::invalid_argument("noise: synthesis tau window must satisfy 0 < lo < hi");
        for (const auto& t : tones) {
            if (!(t.freq_hz > 0.0)) throw std::invalid_argument("noise: tone frequency must be > 0");
            if (!(t.amp_rad >= 0.0)) throw std::invalid_argument("noise: tone amplitude must be >= 0");
        }
    }

    // Target increment std of the process the model stands for, coeff * tau^p.
    double target_std(double tau_us) const {
        return std::sqrt(diffusion_coeff) * std::pow(tau_us, exponent);
    }
};

struct PhaseTrajectory {
    double step_size_us = 0.0;
    std::vector<double> samples;  // unwrapped phase, samples[0] == 0
    std::uint64_t seed = 0;
};

// Amplitude response of a single tone A*sin(2*pi*f*t) as seen by the
// windowed increment statistic: sigma(tau) = A * sin^2(pi f tau) / (pi f tau).
inline double tone_response(double amp_rad, double freq_hz, double tau_us) {
    if (!(freq_hz > 0.0)) throw std::invalid_argument("tone_response: frequency must be > 0");
    if (!(tau_us > 0.0)) throw std::invalid_argument("tone_response: tau must be > 0");
    const double x = std::numbers::pi * cycles(freq_hz, tau_us);
    if (x < 1e-8) return amp_rad * x;  // small-angle drift regime
    const double s = std::sin(x);
    return amp_rad * s * s / x;
}

// Log-log slope of tone_response at (f, tau): beta = 2*pi*f*tau*cot(pi*f*tau) - 1.
inline double tone_slope(double freq_hz, double tau_us) {
    if (!(freq_hz > 0.0)) throw std::invalid_argument("tone_slope: frequency must be > 0");
    if (!(tau_us > 0.0)) throw std::invalid_argument("tone_slope: tau must be > 0");
    const double x = std::numbers::pi * cycles(freq_hz, tau_us);
    if (x < 1e-4) return 1.0 - 2.0 * x * x / 3.0;
    const double s = std::sin(x);
    if (std::fabs(s) < 1e-9) throw std::domain_error("tone_slope: cotangent pole, f*tau is an integer");
    return 2.0 * x * std::cos(x) / s - 1.0;
}

// Variance of plain increments phi(t+tau) - phi(t) for a concrete model
// (no synthesis applied): white*tau + sum 2 A_i^2 sin^2(pi f_i tau).
// Tones average over their uniformly random start phase.
inline double model_increment_variance(const NoiseModel& model, double tau_us) {
    double v = model.white_background * tau_us;
    for (const auto& t : model.tones) {
        const double s = std::sin(std::numbers::pi * cycles(t.freq_hz, tau_us));
        v += 2.0 * t.amp_rad * t.amp_rad * s * s;
    }
    return v;
}

namespace detail {

// Pick the tone-bank frequencies for power-law synthesis: response knees
// (pi f tau ~ 1) log-spaced across the declared tau window.
inline std::vector<double> synth_bank_freqs(double tau_lo, double tau_hi, int count = 5) {
    std::vector<double> freqs;
    const double t0 = 3.0 * tau_lo;
    const double t1 = tau_hi;
    for (int i = 0; i < count; ++i) {
        const double t = t0 * std::pow(t1 / t0, static_cast<double>(i) / (count - 1));
        freqs.push_back(1.0e6 / (std::numbers::pi * t));  // Hz with tau in us
    }
    return freqs;
}

}  // namespace detail

// Fit a white floor plus small tone bank whose plain-increment variance tracks
// coeff^2 * tau^(2p) over [tau_lo, tau_hi]. Non-negative least squares on a log
// tau grid with relative weighting.
inline NoiseModel design_tone_bank(double diffusion_coeff, double exponent,
                                   double tau_lo_us, double tau_hi_us) {
    if (!(diffusion_coeff > 0.0)) throw std::invalid_argument("design_tone_bank: diffusion_coeff must be > 0");
    const std::vector<double> freqs = detail::synth_bank_freqs(tau_lo_us, tau_hi_us);
    const int grid_n = 40;
    std::vector<double> taus(grid_n);
    for (int i = 0; i < grid_n; ++i)
        taus[i] = tau_lo_us * std::pow(tau_hi_us / tau_lo_us, static_cast<double>(i) / (grid_n - 1));

    std::vector<double> target(grid_n);
    for (int i = 0; i < grid_n; ++i)
        target[i] = diffusion_coeff * std::pow(taus[i], 2.0 * exponent);

    // Columns: white floor then one per tone; weight rows by 1/target so the
    // fit is uniform in relative error across the decades.
    std::vector<std::vector<double>> cols(freqs.size() + 1, std::vector<double>(grid_n));
    for (int i = 0; i < grid_n; ++i) {
        const double w = 1.0 / target[i];
        cols[0][i] = taus[i] * w;
        for (std::size_t j = 0; j < freqs.size(); ++j) {
            const double s = std::sin(std::numbers::pi * cycles(freqs[j], taus[i]));
            cols[j + 1][i] = 2.0 * s * s * w;
        }
    }
    std::vector<double> rhs(grid_n, 1.0);  // target * weight
    const std::vector<double> sol = detail::nnls(cols, rhs);

    NoiseModel bank;
    bank.diffusion_coeff = diffusion_coeff;
    bank.exponent = exponent;
    bank.synth_tau_lo_us = tau_lo_us;
    bank.synth_tau_hi_us = tau_hi_us;
    bank.white_background = sol[0];
    for (std::size_t j = 0; j < freqs.size(); ++j) {
        const double a2 = sol[j + 1];
        if (a2 > 0.0) bank.tones.push_back({freqs[j], std::sqrt(a2)});
    }
    return bank;
}

// Materialize the generative model: synthesizes the tone bank when the model
// declares a super-diffusive exponent without explicit tones. For p = 0.5 the
// aggregate coefficient and the white floor are the same quantity, so a model
// given only diffusion_coeff gets it promoted to the floor. The returned model
// is what trajectory generation actually uses and what run metadata records.
inline NoiseModel resolve_tone_bank(const NoiseModel& model) {
    model.validate();
    if (model.exponent > 0.5 && model.tones.empty() && model.diffusion_coeff > 0.0)
        return design_tone_bank(model.diffusion_coeff, model.exponent,
                                model.synth_tau_lo_us, model.synth_tau_hi_us);
    NoiseModel m = model;
    if (m.exponent == 0.5 && m.white_background == 0.0 && m.diffusion_coeff > 0.0)
        m.white_background = m.diffusion_coeff;
    return m;
}

namespace detail {

inline constexpr std::uint64_t kWienerStream = 0x57494e45ULL;  // stream tags
inline constexpr std::uint64_t kToneStream = 0x544f4e45ULL;

inline std::vector<double> tone_phases(const NoiseModel& model, std::uint64_t seed) {
    std::vector<double> phases(model.tones.size());
    for (std::size_t i = 0; i < model.tones.size(); ++i) {
        auto eng = make_engine(derive_seed(seed, {kToneStream, i}));
        phases[i] = std::uniform_real_distribution<double>(0.0, two_pi)(eng);
    }
    return phases;
}

}  // namespace detail

// Pure Wiener trajectory: increments ~ N(0, D * step). samples[0] = 0.
inline PhaseTrajectory generate_wiener(const NoiseModel& model, std::uint64_t seed,
                                       double step_us, std::size_t steps) {
    model.validate();
    if (!model.tones.empty()) throw std::invalid_argument("generate_wiener: model must have no tones");
    if (model.exponent != 0.5) throw std::invalid_argument("generate_wiener: exponent must be 0.5");
    if (!(step_us > 0.0)) throw std::invalid_argument("generate_wiener: step size must be > 0");
    if (steps < 1) throw std::invalid_argument("generate_wiener: need at least one step");

    PhaseTrajectory traj;
    traj.step_size_us = step_us;
    traj.seed = seed;
    traj.samples.resize(steps + 1);
    traj.samples[0] = 0.0;
    const double sigma = std::sqrt(model.diffusion_coeff * step_us);
    auto eng = make_engine(derive_seed(seed, {detail::kWienerStream}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t k = 0; k < steps; ++k) traj.samples[k + 1] = traj.samples[k] + sigma * gauss(eng);
    return traj;
}

// Composite trajectory: Wiener floor (white_background) plus tones with
// per-tone random start phase. Degenerates bit-exactly to generate_wiener
// when there are no tones and white_background == D.
inline PhaseTrajectory generate_composite(const NoiseModel& model_in, std::uint64_t seed,
                                          double step_us, std::size_t steps) {
    if (!(step_us > 0.0)) throw std::invalid_argument("generate_composite: step size must be > 0");
    if (steps < 1) throw std::invalid_argument("generate_composite: need at least one step");
    const NoiseModel model = resolve_tone_bank(model_in);

    PhaseTrajectory traj;
    traj.step_size_us = step_us;
    traj.seed = seed;
    traj.samples.assign(steps + 1, 0.0);

    const double sigma = std::sqrt(model.white_background * step_us);
    auto eng = make_engine(derive_seed(seed, {detail::kWienerStream}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    double w = 0.0;
    const std::vector<double> phases = detail::tone_phases(model, seed);
    for (std::size_t k = 0; k <= steps; ++k) {
        double v = w;
        const double t = static_cast<double>(k) * step_us;
        for (std::size_t i = 0; i < model.tones.size(); ++i)
            v += model.tones[i].amp_rad *
                 (std::sin(two_pi * cycles(model.tones[i].freq_hz, t) + phases[i]) - std::sin(phases[i]));
        traj.samples[k] = v;
        if (k < steps) w += sigma * gauss(eng);
    }
    return traj;
}

}  // namespace phasekit
