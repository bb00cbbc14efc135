#ifndef TSE_HARNESS_HPP
#define TSE_HARNESS_HPP

#include <string>
#include <vector>

#include "tse/scenario.hpp"

namespace tse::sim {

enum class Technique { Ekf, Ukf, Enkf, Mhe };

std::string technique_name(Technique t);
Technique technique_from_name(const std::string& name);
std::vector<Technique> all_techniques();

struct PlantRun {
    std::vector<Eigen::VectorXd> x;  // states 0..K
    std::vector<Eigen::VectorXd> u;  // inputs 0..K-1
};

// Nonlinear ARZ plant over the scenario's demand/incident schedule, with the
// optional process-noise roughening drawn from noise_seed.
PlantRun run_plant(const ScenarioConfig& cfg, std::uint64_t noise_seed);

struct EstimateTrace {
    Technique technique{};
    std::vector<Eigen::VectorXd> x_hat;  // estimates 0..K (0 = initial guess)
    std::vector<double> step_seconds;    // wall time per estimation step
    int bound_violations = 0;
    int mhe_h_pd_failures = 0;
    int qp_failures = 0;
};

struct RmseReport {
    Technique technique{};
    double rmse_density = 0.0;  // veh/km, over all segments and post-warmup steps
    double rmse_speed = 0.0;    // km/h
    double mean_step_seconds = 0.0;
    int bound_violations = 0;   // published estimate coordinates outside the box
};

struct RunResult {
    PlantRun plant;
    std::vector<EstimateTrace> traces;
    std::vector<RmseReport> reports;
};

// plant -> measure -> privatize -> estimate -> RMSE, all streams derived
// from one run seed.
RunResult run_experiment(const ScenarioConfig& cfg, const std::vector<Technique>& techniques,
                         std::uint64_t seed);

RmseReport compute_rmse(const ScenarioConfig& cfg, const PlantRun& plant,
                        const EstimateTrace& trace);

struct SweepRow {
    Technique technique{};
    double axis_value = 0.0;
    std::uint64_t seed = 0;
    RmseReport report;
};

// Q1: CV-segment count, maximally spread placements, privacy fixed from cfg.
std::vector<SweepRow> sweep_cv_segments(const ScenarioConfig& cfg,
                                        const std::vector<int>& counts,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<Technique>& techniques);

// Q2: epsilon sweep at the config's delta, delta sweep at the config's epsilon.
std::vector<SweepRow> sweep_epsilon(const ScenarioConfig& cfg, const std::vector<double>& grid,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::vector<Technique>& techniques);
std::vector<SweepRow> sweep_delta(const ScenarioConfig& cfg, const std::vector<double>& grid,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::vector<Technique>& techniques);

// mean over seeds per (technique, axis_value), sorted
std::vector<SweepRow> summarize_over_seeds(const std::vector<SweepRow>& rows);

// --- files ---

// k,segment,rho_true,rho_hat,v_true,v_hat (post-warmup steps, 1-based segments)
void write_trajectory_csv(const std::string& path, const ScenarioConfig& cfg,
                          const PlantRun& plant, const EstimateTrace& trace);
// k,segment,rho,v for the plant alone
void write_truth_csv(const std::string& path, const ScenarioConfig& cfg, const PlantRun& plant);
// technique,axis_value,rmse_density,rmse_speed,mean_step_time_s
void write_report_csv(const std::string& path, const std::vector<SweepRow>& rows);
// long format: technique,axis_value,seed,rmse_density,rmse_speed,mean_step_time_s
void write_runs_csv(const std::string& path, const std::vector<SweepRow>& rows);

// Resolved scenario + derived privacy calibration + invocation details;
// feeding the manifest back in as --config reproduces the run bit-exactly.
void write_manifest(const std::string& path, const ScenarioConfig& cfg,
                    const std::string& command, const std::vector<std::string>& outputs);

}  // namespace tse::sim

#endif
