#include "tse/privacy.hpp"

#include <cmath>

namespace tse::privacy {

namespace {
double upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
}  // namespace

double gaussian_tail_inverse(double delta) {
    if (!(delta > 0.0 && delta < 0.5))
        throw NumericalError("gaussian_tail_inverse: delta must lie in (0, 0.5)");
    // bracket, then Newton with bisection fallback
    double lo = 0.0, hi = 1.0;
    while (upper_tail(hi) > delta) hi *= 2.0;
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = upper_tail(x) - delta;
        if (std::abs(f) < 1e-16) break;
        (f > 0.0 ? lo : hi) = x;
        const double step = f / normal_pdf(x);  // Q' = -pdf
        double next = x + step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) < 1e-13 && std::abs(f) < 1e-10) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

double kappa(double epsilon, double delta) {
    if (!(epsilon > 0.0)) throw NumericalError("kappa: epsilon must be positive");
    const double K = gaussian_tail_inverse(delta);
    return (K + std::sqrt(K * K + 2.0 * epsilon)) / (2.0 * epsilon);
}

Sensitivities sensitivities(const arz::Params& p, int n_p_max, double t_avg_steps) {
    if (n_p_max < 0) throw ConfigError("n_p_max must be non-negative");
    if (n_p_max > 0 && !(t_avg_steps > 0.0)) throw ConfigError("t_avg must be positive");
    const double root = std::sqrt(2.0 * n_p_max * t_avg_steps);
    return {root / p.l, p.v_f / (p.rho_m * p.l) * root};
}

PrivacySpec PrivacySpec::derive(double epsilon, double delta, int n_p_max, double t_avg_steps,
                                const arz::Params& p) {
    PrivacySpec s;
    s.epsilon = epsilon;
    s.delta = delta;
    s.n_p_max = n_p_max;
    s.t_avg_steps = t_avg_steps;
    const auto sens = sensitivities(p, n_p_max, t_avg_steps);
    s.delta_rho = sens.delta_rho;
    s.delta_v = sens.delta_v;
    s.kappa = privacy::kappa(epsilon, delta);
    return s;
}

sensing::MeasurementBatch Mechanism::apply(const sensing::MeasurementBatch& batch) {
    sensing::MeasurementBatch out = batch;
    const double s_rho = spec_.sigma_rho();
    const double s_v = spec_.sigma_v();
    for (auto& e : out.entries) {
        const double sigma = (e.kind == sensing::Kind::Density) ? s_rho : s_v;
        if (sigma > 0.0) e.value += sigma * stream_.next();
    }
    return out;
}

sensing::MeasurementBatch privatize(const sensing::MeasurementBatch& batch,
                                    const PrivacySpec& spec, std::uint64_t seed) {
    Mechanism m(spec, seed);
    return m.apply(batch);
}

}  // namespace tse::privacy
