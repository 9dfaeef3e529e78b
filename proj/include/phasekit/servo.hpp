#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "phasekit/detail/stats.hpp"
#include "phasekit/noise.hpp"
#include "phasekit/optics.hpp"
#include "phasekit/tracker.hpp"

namespace phasekit {

enum class EstimatorKind { Mle, Bayes };

inline const char* to_string(EstimatorKind kind) {
    return kind == EstimatorKind::Mle ? "mle" : "bayes";
}

// Discrete-time servo settings. The engine ticks at slow_interval; probe
// windows of fast_interval are tiled into the duty-cycle block at the start
// of each sequence period (a final partial window of at least one tick is
// still measured). Corrections are spread over the ticks remaining until the
// next measurement completes, in DDS-style micro-increments.
struct ServoConfig {
    double fast_interval_us = 10.0;
    double slow_interval_us = 10.0;
    double duty_cycle = 1.0;
    double sequence_period_us = 10.0;
    double probe_offset_us = 0.0;
    double kp = 1.0;
    double ki = 0.02;
    double actuator_resolution_rad = 0.0;
    bool filter_per_slow_tick = false;
    FilterConfig filter;
    MeasurementConfig measurement;

    void validate() const {
        measurement.validate();
        filter.validate();
        if (!(slow_interval_us > 0.0)) throw std::invalid_argument("servo: slow_interval must be > 0");
        if (!(slow_interval_us <= fast_interval_us && fast_interval_us <= sequence_period_us))
            throw std::invalid_argument("servo: need slow <= fast <= sequence_period");
        if (!(duty_cycle >= 0.0 && duty_cycle <= 1.0))
            throw std::invalid_argument("servo: duty_cycle must be in [0, 1]");
        if (!(probe_offset_us >= 0.0)) throw std::invalid_argument("servo: probe_offset must be >= 0");
        if (!(actuator_resolution_rad >= 0.0))
            throw std::invalid_argument("servo: actuator_resolution must be >= 0");
        if (!std::isfinite(kp) || !std::isfinite(ki))
            throw std::invalid_argument("servo: PI gains must be finite");
        auto near_multiple = [&](double value) {
            const double q = value / slow_interval_us;
            return std::fabs(q - std::llround(q)) < 1e-6;
        };
        if (!near_multiple(fast_interval_us) || !near_multiple(sequence_period_us) ||
            !near_multiple(probe_offset_us))
            throw std::invalid_argument("servo: intervals must be integer multiples of slow_interval");
    }
};

struct RunResult {
    std::vector<double> residual_series;  // true - correction, per fast step, unwrapped
    double residual_variance = 0.0;       // mean square of the wrapped series after transient cut
    double visibility = 0.0;              // V0 exp(-residual_variance / 2)
    long lock_losses = 0;
    bool starved = false;
    nlohmann::json metadata;
};

namespace detail {

inline constexpr std::uint64_t kCountsStream = 0x434e5453ULL;
inline constexpr double kTransientFraction = 0.10;

// Recompute the headline statistic from a residual series: second moment of
// the wrapped residual about the lock point, after the transient cut.
inline double residual_variance_of(const std::vector<double>& series) {
    const std::size_t cut = static_cast<std::size_t>(series.size() * kTransientFraction);
    if (series.size() <= cut) return 0.0;
    double s = 0.0;
    for (std::size_t i = cut; i < series.size(); ++i) {
        const double w = wrap_phase(series[i]);
        s += w * w;
    }
    return s / static_cast<double>(series.size() - cut);
}

// Incremental tone evaluator: one complex rotor per tone, renormalized
// periodically so long runs stay on the unit circle.
class ToneBank {
public:
    ToneBank(const NoiseModel& model, std::uint64_t seed, double dt_us) {
        const std::vector<double> phases = tone_phases(model, seed);
        for (std::size_t i = 0; i < model.tones.size(); ++i) {
            Rotor r;
            r.amp = model.tones[i].amp_rad;
            const double step = two_pi * cycles(model.tones[i].freq_hz, dt_us);
            r.dc = std::cos(step);
            r.ds = std::sin(step);
            r.c = std::cos(phases[i]);
            r.s = std::sin(phases[i]);
            r.s0 = r.s;
            rotors_.push_back(r);
        }
    }

    double value() const {
        double v = 0.0;
        for (const Rotor& r : rotors_) v += r.amp * (r.s - r.s0);
        return v;
    }

    void advance() {
        for (Rotor& r : rotors_) {
            const double c = r.c * r.dc - r.s * r.ds;
            const double s = r.s * r.dc + r.c * r.ds;
            r.c = c;
            r.s = s;
        }
        if (++count_ % 8192 == 0)
            for (Rotor& r : rotors_) {
                const double norm = 1.0 / std::hypot(r.c, r.s);
                r.c *= norm;
                r.s *= norm;
            }
    }

private:
    struct Rotor {
        double amp, dc, ds, c, s, s0;
    };
    std::vector<Rotor> rotors_;
    std::uint64_t count_ = 0;
};

// Per-period schedule: for each in-period tick offset, how many ticks remain
// (counting the current one) until a measurement window completes. Used to
// spread pending corrections evenly.
inline std::vector<std::int64_t> spread_horizon(std::int64_t period_ticks, std::int64_t probe_ticks,
                                                std::int64_t fast_ticks) {
    std::vector<std::int64_t> ends;
    for (std::int64_t start = 0; start < probe_ticks; start += fast_ticks)
        ends.push_back(std::min(start + fast_ticks, probe_ticks));
    std::vector<std::int64_t> horizon(static_cast<std::size_t>(period_ticks), 1);
    if (ends.empty()) return horizon;
    for (std::int64_t ip = 0; ip < period_ticks; ++ip) {
        std::int64_t next = -1;
        for (std::int64_t e : ends)
            if (e > ip) {
                next = e;
                break;
            }
        horizon[static_cast<std::size_t>(ip)] = (next >= 0) ? next - ip : (period_ticks - ip) + ends.front();
    }
    return horizon;
}

}  // namespace detail

// Free-running phase: the residual series is the raw trajectory itself.
// metadata carries the variance-growth slope fitted from increment variances.
inline RunResult run_open_loop(const NoiseModel& noise, double duration_us, double step_us,
                               std::uint64_t seed) {
    if (!(step_us > 0.0) || duration_us < 100.0 * step_us)
        throw std::invalid_argument("run_open_loop: duration must cover >= 100 steps");
    const std::size_t steps = static_cast<std::size_t>(duration_us / step_us);
    const PhaseTrajectory traj = generate_composite(noise, seed, step_us, steps);

    RunResult out;
    out.residual_series = traj.samples;
    out.residual_variance = detail::residual_variance_of(out.residual_series);
    out.visibility = 0.0;
    out.lock_losses = 0;

    // Increment variance vs window length, fitted as var(T) = slope * T.
    std::vector<double> ts, vars;
    for (double frac : {0.001, 0.002, 0.005, 0.01, 0.02, 0.05}) {
        const std::size_t lag = std::max<std::size_t>(1, static_cast<std::size_t>(steps * frac));
        std::vector<double> inc;
        for (std::size_t i = 0; i + lag < traj.samples.size(); i += lag)
            inc.push_back(traj.samples[i + lag] - traj.samples[i]);
        if (inc.size() < 4) continue;
        ts.push_back(static_cast<double>(lag) * step_us);
        vars.push_back(detail::mean_square(inc));
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        num += vars[i] * ts[i];
        den += ts[i] * ts[i];
    }
    out.metadata["variance_slope_per_us"] = den > 0.0 ? num / den : 0.0;
    out.metadata["seed"] = seed;
    out.metadata["step_us"] = step_us;
    return out;
}

// Closed-loop run. Per probe window the two-port counts are integrated over
// the true residual, an error signal is formed, and the correction is applied
// through the common PI controller in per-tick micro-increments:
//   - MLE mode feeds the raw linearized deviation to the controller;
//   - Bayes mode passes it through the innovation filter whose scale is the
//     calibrated prior propagated over the time since the last informative
//     window. The Gaussian posterior runs alongside as bookkeeping.
inline RunResult run_closed_loop(const NoiseModel& noise_in, const ServoConfig& servo,
                                 EstimatorKind kind, double duration_us, std::uint64_t seed,
                                 bool keep_series = true) {
    servo.validate();
    if (kind == EstimatorKind::Bayes && !(servo.filter.prior_diffusion > 0.0))
        throw std::invalid_argument("run_closed_loop: Bayes mode needs a calibrated prior_diffusion > 0");
    const NoiseModel noise = resolve_tone_bank(noise_in);

    const double dt = servo.slow_interval_us;
    const std::int64_t n_ticks = static_cast<std::int64_t>(duration_us / dt);
    if (n_ticks < 10) throw std::invalid_argument("run_closed_loop: duration too short");
    const std::int64_t period_ticks = std::llround(servo.sequence_period_us / dt);
    const std::int64_t fast_ticks =
        servo.filter_per_slow_tick ? 1 : std::llround(servo.fast_interval_us / dt);
    const std::int64_t offset_ticks =
        period_ticks > 0 ? std::llround(servo.probe_offset_us / dt) % period_ticks : 0;
    const std::int64_t probe_ticks =
        std::min<std::int64_t>(period_ticks, std::llround(servo.duty_cycle * static_cast<double>(period_ticks)));

    RunResult out;
    out.starved = probe_ticks < 1;

    const MeasurementConfig& meas = servo.measurement;
    const double mu = meas.flux_per_us;
    const double v0 = meas.visibility;
    const double gamma = mu * v0 * v0;
    const double dark = meas.dark_rate_per_us;

    auto noise_eng = make_engine(derive_seed(seed, {detail::kWienerStream}));
    auto count_eng = make_engine(derive_seed(seed, {detail::kCountsStream}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double walk_sigma = std::sqrt(noise.white_background * dt);
    detail::ToneBank tones(noise, seed, dt);
    const std::vector<std::int64_t> horizon =
        detail::spread_horizon(period_ticks, probe_ticks, fast_ticks);

    double phi_walk = 0.0;    // Wiener component of the truth
    double correction = 0.0;  // applied actuator phase
    double integ = 0.0;       // PI integral state
    double pending = 0.0;     // correction awaiting micro-step application
    double quant_carry = 0.0; // actuator quantization remainder
    const double sigma_fast = servo.filter.prior_sigma(servo.fast_interval_us);
    EstimatorState state{0.0, sigma_fast * sigma_fast, 0};

    double lam_signal = 0.0;  // windowed sum of mu dt/2 V0 sin(residual)
    double lam_base = 0.0;
    double lam_dark = 0.0;
    std::int64_t window_ticks_left = 0;
    double window_len_us = 0.0;
    double last_info_end_us = 0.0;
    bool have_info_time = false;

    long lock_losses = 0;
    int loss_streak = 0;
    bool in_loss = false;

    const std::int64_t record_stride = std::llround(servo.fast_interval_us / dt);
    std::vector<double>& series = out.residual_series;
    if (keep_series) series.reserve(static_cast<std::size_t>(n_ticks / record_stride) + 1);
    const std::int64_t total_records = n_ticks / record_stride;
    const std::int64_t cut_index =
        static_cast<std::int64_t>(static_cast<double>(total_records) * detail::kTransientFraction);
    double sum_sq_wrapped = 0.0;
    std::int64_t recorded = 0, recorded_kept = 0;

    long n_measurements = 0, n_empty_windows = 0;

    for (std::int64_t tick = 0; tick < n_ticks; ++tick) {
        phi_walk += walk_sigma * gauss(noise_eng);
        tones.advance();
        const double phi_true = phi_walk + tones.value();

        const std::int64_t in_period =
            ((tick - offset_ticks) % period_ticks + period_ticks) % period_ticks;

        // Apply one micro-step of the pending correction before this tick's
        // light is integrated.
        if (pending != 0.0) {
            const std::int64_t left = horizon[static_cast<std::size_t>(in_period)];
            const double share = pending / static_cast<double>(left);
            pending -= share;
            double inc = share;
            if (servo.actuator_resolution_rad > 0.0) {
                const double q = servo.actuator_resolution_rad;
                const double want = share + quant_carry;
                inc = std::round(want / q) * q;
                quant_carry = want - inc;
            }
            correction += inc;
            state.estimate -= inc;
        }

        const double residual = phi_true - correction;

        const bool probe_on = !out.starved && in_period < probe_ticks;
        if (probe_on) {
            if (window_ticks_left == 0) {
                window_ticks_left = std::min<std::int64_t>(fast_ticks, probe_ticks - in_period);
                window_len_us = 0.0;
                lam_signal = lam_base = lam_dark = 0.0;
            }
            lam_base += 0.5 * mu * dt;
            lam_signal += 0.5 * mu * dt * v0 * std::sin(residual);
            lam_dark += dark * dt;
            window_len_us += dt;
            --window_ticks_left;

            if (window_ticks_left == 0) {
                const double l1 = std::max(0.0, lam_base - lam_signal) + lam_dark;
                const double l2 = std::max(0.0, lam_base + lam_signal) + lam_dark;
                const PortCounts counts{poisson_draw(l1, count_eng), poisson_draw(l2, count_eng)};
                const double t_end_us = static_cast<double>(tick + 1) * dt;
                const ErrorSignal sig = error_signal(counts, meas);
                if (!sig.informative) {
                    ++n_empty_windows;
                    state = bayes_update(state, 0.0, 0.0, noise.white_background * window_len_us);
                } else {
                    ++n_measurements;
                    const double dt_info = have_info_time
                                               ? std::max(window_len_us, t_end_us - last_info_end_us)
                                               : window_len_us;
                    last_info_end_us = t_end_us;
                    have_info_time = true;
                    double err;
                    if (kind == EstimatorKind::Bayes) {
                        const double sigma_p = servo.filter.prior_sigma(dt_info);
                        const double innov = sig.value - state.estimate;
                        const double filtered = innovation_filter(innov, sigma_p, servo.filter.kappa);
                        const double drift = sigma_p * sigma_p;
                        const double d_eff = drift / dt_info;
                        const double info =
                            gamma * window_len_us * std::exp(-d_eff * window_len_us);
                        state = bayes_update(state, filtered, info, drift);
                        err = filtered;  // FPGA-style: the filtered deviation drives the controller
                    } else {
                        err = sig.value;
                    }
                    integ += servo.ki * err;
                    pending += servo.kp * err + integ;
                }
            }
        }

        // Fast-cadence recording and lock monitoring.
        if ((tick + 1) % record_stride == 0) {
            if (keep_series) series.push_back(residual);
            const double w = wrap_phase(residual);
            if (recorded >= cut_index) {
                sum_sq_wrapped += w * w;
                ++recorded_kept;
            }
            ++recorded;
            if (std::fabs(w) > std::numbers::pi / 2.0) {
                if (++loss_streak >= 10 && !in_loss) {
                    ++lock_losses;
                    in_loss = true;
                }
            } else {
                loss_streak = 0;
                in_loss = false;
            }
        }
    }

    out.residual_variance =
        recorded_kept > 0 ? sum_sq_wrapped / static_cast<double>(recorded_kept) : 0.0;
    out.visibility = v0 * std::exp(-0.5 * out.residual_variance);
    out.lock_losses = lock_losses;
    out.metadata["seed"] = seed;
    out.metadata["estimator"] = to_string(kind);
    out.metadata["n_measurements"] = n_measurements;
    out.metadata["n_empty_windows"] = n_empty_windows;
    out.metadata["kp"] = servo.kp;
    out.metadata["ki"] = servo.ki;
    out.metadata["starved"] = out.starved;
    return out;
}

struct DualBandChannel {
    ServoConfig servo;
    NoiseModel noise;
};

// Link channel: continuous WDM loop on the fast fiber noise. Residual
// channel: duty-cycled TDM loop on the operational + conversion noise.
struct DualBandConfig {
    DualBandChannel link;
    DualBandChannel residual;
};

struct DualBandResult {
    RunResult link;
    RunResult residual;
    RunResult combined;
};

inline DualBandResult run_dual_band(const DualBandConfig& cfg, double duration_us,
                                    std::uint64_t seed, EstimatorKind kind = EstimatorKind::Bayes,
                                    bool keep_series = true) {
    DualBandResult out;
    out.link = run_closed_loop(cfg.link.noise, cfg.link.servo, kind, duration_us,
                               derive_seed(seed, {1}), keep_series);
    out.residual = run_closed_loop(cfg.residual.noise, cfg.residual.servo, kind, duration_us,
                                   derive_seed(seed, {2}), keep_series);

    // Combined residual: channel sum sampled on the coarser fast grid.
    const std::size_t nl = out.link.residual_series.size();
    const std::size_t nr = out.residual.residual_series.size();
    if (keep_series && nl > 0 && nr > 0) {
        const std::size_t n = std::min(nl, nr);
        const std::size_t sl = nl / n, sr = nr / n;
        out.combined.residual_series.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            out.combined.residual_series[i] = out.link.residual_series[(i + 1) * sl - 1] +
                                              out.residual.residual_series[(i + 1) * sr - 1];
        out.combined.residual_variance = detail::residual_variance_of(out.combined.residual_series);
    } else {
        out.combined.residual_variance =
            out.link.residual_variance + out.residual.residual_variance;
    }
    const double v0 = cfg.residual.servo.measurement.visibility;
    out.combined.visibility = v0 * std::exp(-0.5 * out.combined.residual_variance);
    out.combined.lock_losses = out.link.lock_losses + out.residual.lock_losses;
    out.combined.starved = out.link.starved || out.residual.starved;
    out.combined.metadata["sigma2_link"] = out.link.residual_variance;
    out.combined.metadata["sigma2_residual"] = out.residual.residual_variance;
    return out;
}

struct DutyRow {
    double duty = 0.0;
    EstimatorKind kind = EstimatorKind::Bayes;
    double visibility = 0.0;
    double residual_variance = 0.0;
    long lock_losses = 0;
    bool starved = false;
};

// Duty-cycle study: per duty and estimator mode, seeds are paired so the two
// modes face identical phase trajectories.
inline std::vector<DutyRow> duty_cycle_sweep(const NoiseModel& noise, const ServoConfig& base,
                                             const std::vector<double>& duties, double duration_us,
                                             std::uint64_t seed, std::size_t n_seeds = 1,
                                             unsigned jobs = 1) {
    if (duties.empty()) throw std::invalid_argument("duty_cycle_sweep: empty duty list");
    for (double d : duties)
        if (!(d > 0.0 && d <= 1.0))
            throw std::invalid_argument("duty_cycle_sweep: duty must be in (0, 1]");

    struct Cell {
        double duty;
        EstimatorKind kind;
    };
    std::vector<Cell> cells;
    for (double d : duties)
        for (EstimatorKind k : {EstimatorKind::Mle, EstimatorKind::Bayes}) cells.push_back({d, k});

    std::vector<DutyRow> rows(cells.size());
    detail::parallel_for(cells.size(), jobs, [&](std::size_t i) {
        ServoConfig cfg = base;
        cfg.duty_cycle = cells[i].duty;
        DutyRow row;
        row.duty = cells[i].duty;
        row.kind = cells[i].kind;
        double var_sum = 0.0, vis_sum = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const RunResult r = run_closed_loop(noise, cfg, cells[i].kind, duration_us,
                                                derive_seed(seed, {0xd417ULL, s}), false);
            var_sum += r.residual_variance;
            vis_sum += r.visibility;
            row.lock_losses += r.lock_losses;
            row.starved = row.starved || r.starved;
        }
        row.residual_variance = var_sum / static_cast<double>(n_seeds);
        row.visibility = vis_sum / static_cast<double>(n_seeds);
        rows[i] = row;
    });
    return rows;
}

}  // namespace phasekit
