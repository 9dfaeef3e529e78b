#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "phasekit/detail/stats.hpp"
#include "phasekit/optics.hpp"
#include "phasekit/rng.hpp"
#include "phasekit/units.hpp"

namespace phasekit {

// Raised when an estimate is requested from a window that carries no
// information (zero total counts).
struct NoInformationError : std::runtime_error {
    NoInformationError() : std::runtime_error("no counts in measurement window") {}
};

// Gaussian posterior of the recursive estimator.
struct EstimatorState {
    double estimate = 0.0;   // posterior mean, unwrapped
    double variance = 0.0;   // posterior variance
    std::uint64_t step_index = 0;
};

// Innovation-filter settings. The prior scale follows the independently
// calibrated diffusion law: sigma_p(tau) = sqrt(D_p) * tau^p, which reduces to
// sqrt(D_p * tau) in the Wiener case p = 0.5.
struct FilterConfig {
    double kappa = 1.0;
    double prior_diffusion = 0.0;  // D_p
    double prior_exponent = 0.5;   // p

    void validate() const {
        if (!(kappa > 0.0)) throw std::invalid_argument("filter: kappa must be > 0");
        if (!(prior_diffusion >= 0.0)) throw std::invalid_argument("filter: prior_diffusion must be >= 0");
        if (!(prior_exponent >= 0.5 && prior_exponent <= 1.0))
            throw std::invalid_argument("filter: prior_exponent must be in [0.5, 1]");
    }

    double prior_sigma(double tau_us) const {
        return std::sqrt(prior_diffusion) * std::pow(tau_us, prior_exponent);
    }
};

// Per-window maximum-likelihood phase: phi = arccos((n1-n2)/(V0 n)), branch
// chosen nearest to the anchor. This is the exact argmax of the Poisson
// likelihood whenever the count ratio falls inside [-1, 1].
inline double mle_phase(const PortCounts& counts, const MeasurementConfig& cfg, double anchor) {
    if (counts.total() <= 0) throw NoInformationError();
    if (!(cfg.visibility > 0.0)) throw std::invalid_argument("mle_phase: visibility must be > 0");
    const double c = std::clamp(
        static_cast<double>(counts.n1 - counts.n2) / (cfg.visibility * static_cast<double>(counts.total())),
        -1.0, 1.0);
    const double base = std::acos(c);  // in [0, pi]
    const double m1 = std::round((anchor - base) / two_pi);
    const double m2 = std::round((anchor + base) / two_pi);
    const double cand1 = base + two_pi * m1;
    const double cand2 = -base + two_pi * m2;
    return std::fabs(cand1 - anchor) <= std::fabs(cand2 - anchor) ? cand1 : cand2;
}

struct ErrorSignal {
    double value = 0.0;
    bool informative = false;
};

// Linearized deviation from the pi/2 lock point. At phi = pi/2 + d the port
// imbalance estimates V0 sin d, so d_hat = arcsin(-(n1-n2)/(V0 n)) clamped to
// the principal branch. Zero-count windows carry no information and return 0.
inline ErrorSignal error_signal(const PortCounts& counts, const MeasurementConfig& cfg) {
    if (!(cfg.visibility > 0.0)) throw std::invalid_argument("error_signal: visibility must be > 0");
    ErrorSignal out;
    const long long n = counts.total();
    if (n <= 0) return out;
    const double s = std::clamp(
        -static_cast<double>(counts.n1 - counts.n2) / (cfg.visibility * static_cast<double>(n)), -1.0, 1.0);
    out.value = std::asin(s);
    out.informative = true;
    return out;
}

// Nonlinear innovation filter: identity inside the confidence band
// |delta| <= kappa sigma_p, soft saturation with an exponentially decaying
// overshoot term beyond it.
inline double innovation_filter(double delta, double sigma_prior, double kappa) {
    if (!(sigma_prior > 0.0)) throw std::invalid_argument("innovation_filter: sigma_prior must be > 0");
    if (!(kappa > 0.0)) throw std::invalid_argument("innovation_filter: kappa must be > 0");
    const double threshold = kappa * sigma_prior;
    const double mag = std::fabs(delta);
    if (mag <= threshold) return delta;
    const double excess = mag - threshold;
    return std::copysign(threshold + excess * std::exp(-excess / sigma_prior), delta);
}

// One predict+update cycle of the Gaussian recursion. The variance follows
// sigma_{k+1}^{-2} = (sigma_k^2 + drift)^{-1} + info; the mean moves by the
// precision-weighted gain sigma_{k+1}^2 * info applied to the (already
// filtered) innovation.
inline EstimatorState bayes_update(const EstimatorState& state, double innovation, double info,
                                   double drift_var) {
    if (!(drift_var >= 0.0)) throw std::invalid_argument("bayes_update: drift_var must be >= 0");
    if (!(info >= 0.0)) throw std::invalid_argument("bayes_update: info must be >= 0");
    EstimatorState next = state;
    next.step_index = state.step_index + 1;
    const double predicted = state.variance + drift_var;
    if (info == 0.0) {
        next.variance = predicted;
        return next;
    }
    if (!std::isfinite(info)) {
        next.variance = 0.0;
        next.estimate = state.estimate + innovation;
        return next;
    }
    const double vi = predicted * info;
    next.variance = predicted / (1.0 + vi);
    const double gain = vi / (1.0 + vi);
    next.estimate = state.estimate + gain * innovation;
    return next;
}

// Unique positive fixed point of
//   1/x = 1/(x + D tau) + Gamma tau e^{-D tau} eta,
// found by damped fixed-point iteration. The closed-form root of the
// equivalent quadratic seeds the iteration, so convergence is immediate; the
// iteration still verifies the mapping to 1e-12 relative.
inline double steady_state_variance(double diffusion, double tau_us, double flux_per_us, double v0,
                                    double eta) {
    if (!(diffusion > 0.0 && tau_us > 0.0 && flux_per_us > 0.0 && v0 > 0.0 && eta > 0.0))
        throw std::invalid_argument("steady_state_variance: all inputs must be > 0");
    const double a = diffusion * tau_us;
    const double info = flux_per_us * v0 * v0 * tau_us * std::exp(-a) * eta;
    const double ia = info * a;
    double x = (-ia + std::sqrt(ia * ia + 4.0 * ia)) / (2.0 * info);
    auto g = [&](double v) { return 1.0 / (1.0 / (v + a) + info); };
    const int max_iter = 100000;
    for (int i = 0; i < max_iter; ++i) {
        const double next = 0.5 * x + 0.5 * g(x);
        if (std::fabs(next - x) <= 1e-12 * std::max(next, 1e-300)) {
            x = next;
            const double lhs = 1.0 / x;
            const double rhs = 1.0 / (x + a) + info;
            if (std::fabs(lhs - rhs) > 1e-8 * lhs)
                throw std::runtime_error("steady_state_variance: fixed point check failed");
            return x;
        }
        x = next;
    }
    throw std::runtime_error("steady_state_variance: no convergence");
}

struct EtaEstimate {
    double eta = 0.0;
    double ci_halfwidth = 0.0;
    bool low_confidence = false;
};

// Monte-Carlo filter efficiency: track a diffusing phase around the lock
// point with the gated recursive estimator and compare the realized
// inverse-variance gain per update against the raw information Gamma tau
// e^{-D tau}. The gate scales with the predicted innovation spread
// sqrt(sigma_pred^2 + 1/info); with kappa -> infinity the estimator is the
// plain Gaussian recursion and eta -> 1.
inline EtaEstimate estimate_eta(double kappa, const MeasurementConfig& cfg, double diffusion,
                                std::size_t trials, std::uint64_t seed) {
    cfg.validate();
    if (!(kappa > 0.0)) throw std::invalid_argument("estimate_eta: kappa must be > 0");
    if (!(diffusion > 0.0)) throw std::invalid_argument("estimate_eta: D must be > 0");
    EtaEstimate out;
    out.low_confidence = trials < 1000;

    const double tau = cfg.window_us;
    const double drift = diffusion * tau;
    const double info = avg_fisher(cfg, diffusion);
    if (!(info > 0.0)) throw std::invalid_argument("estimate_eta: zero measurement information");

    auto truth_eng = make_engine(derive_seed(seed, {0x45544154ULL, 1}));
    auto count_eng = make_engine(derive_seed(seed, {0x45544154ULL, 2}));
    std::normal_distribution<double> gauss(0.0, 1.0);

    double phi = 0.0;       // true deviation from the lock point
    EstimatorState state{0.0, 10.0 * drift + 1.0 / info, 0};
    const std::size_t burn = trials / 5;
    std::vector<double> sq;
    sq.reserve(trials);
    for (std::size_t k = 0; k < trials + burn; ++k) {
        phi += std::sqrt(drift) * gauss(truth_eng);
        const PortCounts counts =
            sample_counts(std::numbers::pi / 2.0 + (phi - state.estimate), cfg, count_eng);
        const ErrorSignal sig = error_signal(counts, cfg);
        if (!sig.informative) {
            state = bayes_update(state, 0.0, 0.0, drift);
        } else {
            const double sigma_innov = std::sqrt(state.variance + drift + 1.0 / info);
            const double filtered = innovation_filter(sig.value, sigma_innov, kappa);
            state = bayes_update(state, filtered, info, drift);
        }
        if (k >= burn) {
            const double err = phi - state.estimate;
            sq.push_back(err * err);
        }
    }
    const double mse = detail::mean(sq);
    auto eta_of = [&](double m) {
        const double gain = 1.0 / m - 1.0 / (m + drift);
        return std::clamp(gain / info, 1e-6, 1.2);
    };
    out.eta = eta_of(mse);

    // Crude CI from block spread of the squared-error series.
    const std::size_t blocks = 10;
    if (sq.size() >= blocks * 10) {
        std::vector<double> block_eta;
        const std::size_t bl = sq.size() / blocks;
        for (std::size_t b = 0; b < blocks; ++b) {
            std::span<const double> part(sq.data() + b * bl, bl);
            block_eta.push_back(eta_of(detail::mean(part)));
        }
        out.ci_halfwidth = 2.0 * std::sqrt(detail::variance(block_eta) / static_cast<double>(blocks));
    }
    return out;
}

}  // namespace phasekit
