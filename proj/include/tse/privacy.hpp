#ifndef TSE_PRIVACY_HPP
#define TSE_PRIVACY_HPP

#include <cstdint>

#include "tse/arz.hpp"
#include "tse/rng.hpp"
#include "tse/sensing.hpp"

namespace tse::privacy {

// Inverse of the standard normal upper tail Q(x) = erfc(x/sqrt(2))/2,
// solved to 1e-10 by safeguarded Newton. Valid for delta in (0, 0.5).
double gaussian_tail_inverse(double delta);

// kappa_{delta,eps} = (K + sqrt(K^2 + 2 eps)) / (2 eps) with K = Q^{-1}(delta)
double kappa(double epsilon, double delta);

struct Sensitivities {
    double delta_rho;  // veh/km
    double delta_v;    // km/h
};

// Delta_rho = (1/l) sqrt(2 N_p T_avg), Delta_v = (v_f / (rho_m l)) sqrt(2 N_p T_avg)
Sensitivities sensitivities(const arz::Params& p, int n_p_max, double t_avg_steps);

// Privacy parameters plus the derived mechanism calibration.
struct PrivacySpec {
    double epsilon = 1.0;
    double delta = 0.05;
    int n_p_max = 0;          // max simultaneously measured segments
    double t_avg_steps = 0.0; // average segment transit time [steps]

    double delta_rho = 0.0;   // derived
    double delta_v = 0.0;
    double kappa = 0.0;

    double sigma_rho() const { return kappa * delta_rho; }
    double sigma_v() const { return kappa * delta_v; }

    static PrivacySpec derive(double epsilon, double delta, int n_p_max, double t_avg_steps,
                              const arz::Params& p);
};

// Gaussian mechanism: adds N(0, (kappa Delta)^2) noise per entry kind.
// Output is not clamped; estimators handle physical bounds downstream.
sensing::MeasurementBatch privatize(const sensing::MeasurementBatch& batch,
                                    const PrivacySpec& spec, std::uint64_t seed);

// Stream variant: applies the mechanism to consecutive batches drawn from one
// noise stream, so a run's noise is a single seeded sequence.
class Mechanism {
  public:
    Mechanism(const PrivacySpec& spec, std::uint64_t seed) : spec_(spec), stream_(seed) {}
    sensing::MeasurementBatch apply(const sensing::MeasurementBatch& batch);

  private:
    PrivacySpec spec_;
    GaussianStream stream_;
};

}  // namespace tse::privacy

#endif
