#ifndef TSE_SCENARIO_HPP
#define TSE_SCENARIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tse/arz.hpp"
#include "tse/estimators.hpp"
#include "tse/privacy.hpp"
#include "tse/sensing.hpp"

namespace tse::sim {

// piecewise-constant profile: value(t) = value of the interval containing t
struct ProfilePiece {
    double t_start_s, t_end_s, value;
};
using Profile = std::vector<ProfilePiece>;

double profile_value(const Profile& p, double t_s, double fallback = 0.0);

struct Incident {
    int segment;        // global 0-based
    double t_start_s, t_end_s;
    double speed_cap_kmh;
};

struct PlantNoise {
    double density_std = 0.0;   // veh/km per step
    double rel_flow_std = 0.0;  // veh/h per step
    bool enabled() const { return density_std > 0.0 || rel_flow_std > 0.0; }
};

struct EstimatorSettings {
    double q = 1e-2;
    std::optional<double> r;     // absent: per-kind (kappa Delta)^2 from the privacy spec
    bool strict_scalar_r = false;
    double p0 = 1e-3;
    est::UkfParams ukf{};
    int ensemble_size = 100;
    est::MheConfig mhe{};
};

struct ScenarioConfig {
    std::string name = "scenario";
    arz::Params params{};
    arz::Topology topology{};

    Profile mainline_demand;                 // veh/h
    double mainline_w_in_kmh = -1.0;         // -1: defaults to v_f
    double mainline_rho_out = 0.0;           // veh/km boundary density
    std::vector<Profile> onramp_demands;
    std::vector<double> offramp_rho_out;     // veh/km per off-ramp

    std::vector<Incident> incidents;
    sensing::SensorSchedule schedule{};

    double epsilon = 1.0;
    double delta = 0.05;
    int n_p_max = -1;         // negative: derived from the schedule
    double t_avg_steps = 0.0; // non-positive: ceil(l / (v_f T))

    EstimatorSettings est{};
    PlantNoise plant_noise{};
    // When false the estimators run the incident-free network model and the
    // speed caps act purely as plant/model mismatch, as with an unannounced
    // accident. When true the estimator model carries the caps too.
    bool estimator_knows_incident = false;

    int duration_steps = 700;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError

    // derived quantities
    Eigen::VectorXd input_at(int k) const;            // u[k]
    Eigen::VectorXd caps_at(int k) const;             // per-segment speed caps (NaN = none)
    privacy::PrivacySpec privacy_spec() const;        // with auto N_p / T_avg resolved
    int resolved_n_p() const;
    double resolved_t_avg() const;
    Eigen::VectorXd initial_state() const;            // equilibrium at initial demands
    int warmup_steps() const { return est.mhe.horizon + 1; }
};

ScenarioConfig load_scenario(const std::string& path);          // file or manifest
ScenarioConfig parse_scenario(const std::string& json_text);
std::string scenario_to_json(const ScenarioConfig& cfg);        // resolved echo

// The estimator-facing process model: the scenario's ARZ network including
// the incident schedule, with physical bounds attached.
est::StepModel make_step_model(const ScenarioConfig& cfg);

// Measurement adapter: noise model per kind from the privacy spec (or the
// scalar r override), observation map and Jacobian over the batch pattern.
est::MeasModel make_meas_model(const sensing::MeasurementBatch& batch,
                               const ScenarioConfig& cfg);

}  // namespace tse::sim

#endif
