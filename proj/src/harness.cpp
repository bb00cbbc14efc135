#include "tse/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include <json.hpp>

#include "tse/rng.hpp"

namespace tse::sim {

namespace {
constexpr std::uint64_t kPlantTag = 1, kPrivacyTag = 2, kEnkfTag = 3;
}

std::string technique_name(Technique t) {
    switch (t) {
        case Technique::Ekf: return "ekf";
        case Technique::Ukf: return "ukf";
        case Technique::Enkf: return "enkf";
        case Technique::Mhe: return "mhe";
    }
    return "?";
}

Technique technique_from_name(const std::string& name) {
    if (name == "ekf") return Technique::Ekf;
    if (name == "ukf") return Technique::Ukf;
    if (name == "enkf") return Technique::Enkf;
    if (name == "mhe") return Technique::Mhe;
    throw ConfigError("unknown technique: " + name);
}

std::vector<Technique> all_techniques() {
    return {Technique::Ekf, Technique::Ukf, Technique::Enkf, Technique::Mhe};
}

PlantRun run_plant(const ScenarioConfig& cfg, std::uint64_t noise_seed) {
    PlantRun run;
    const int K = cfg.duration_steps;
    run.x.reserve(K + 1);
    run.u.reserve(K);

    GaussianStream noise(noise_seed);
    const Eigen::VectorXd lo = arz::state_min(cfg.topology);
    const Eigen::VectorXd hi = arz::state_max(cfg.topology, cfg.params);
    const int n_seg = cfg.topology.total_segments();

    Eigen::VectorXd x = cfg.initial_state();
    run.x.push_back(x);
    for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd u = cfg.input_at(k);
        run.u.push_back(u);
        x = arz::step(x, u, cfg.topology, cfg.params, cfg.caps_at(k));
        if (cfg.plant_noise.enabled()) {
            for (int s = 0; s < n_seg; ++s) {
                x[2 * s] += cfg.plant_noise.density_std * noise.next();
                x[2 * s + 1] += cfg.plant_noise.rel_flow_std * noise.next();
            }
            x = x.cwiseMax(lo).cwiseMin(hi);
        }
        run.x.push_back(x);
    }
    return run;
}

RmseReport compute_rmse(const ScenarioConfig& cfg, const PlantRun& plant,
                        const EstimateTrace& trace) {
    RmseReport rep;
    rep.technique = trace.technique;
    const int K = cfg.duration_steps;
    const int warmup = cfg.warmup_steps();
    const int n_seg = cfg.topology.total_segments();

    double se_rho = 0.0, se_v = 0.0;
    long count = 0;
    for (int k = warmup; k <= K; ++k) {
        const Eigen::VectorXd& xt = plant.x[k];
        const Eigen::VectorXd& xh = trace.x_hat[k];
        for (int s = 0; s < n_seg; ++s) {
            const double dr = xt[2 * s] - xh[2 * s];
            const double vt = arz::measured_speed(xt[2 * s], xt[2 * s + 1], cfg.params);
            const double vh = arz::measured_speed(xh[2 * s], xh[2 * s + 1], cfg.params);
            se_rho += dr * dr;
            se_v += (vt - vh) * (vt - vh);
            ++count;
        }
    }
    rep.rmse_density = std::sqrt(se_rho / count);
    rep.rmse_speed = std::sqrt(se_v / count);
    rep.bound_violations = trace.bound_violations;
    if (!trace.step_seconds.empty()) {
        double sum = 0.0;
        for (double s : trace.step_seconds) sum += s;
        rep.mean_step_seconds = sum / trace.step_seconds.size();
    }
    return rep;
}

RunResult run_experiment(const ScenarioConfig& cfg, const std::vector<Technique>& techniques,
                         std::uint64_t seed) {
    RunResult result;
    result.plant = run_plant(cfg, derive_seed(seed, kPlantTag));
    const int K = cfg.duration_steps;

    // one seeded mechanism stream across the whole run
    privacy::Mechanism mech(cfg.privacy_spec(), derive_seed(seed, kPrivacyTag));
    std::vector<est::MeasModel> meas(K + 1);
    for (int k = 1; k <= K; ++k) {
        const auto batch =
            sensing::measure(result.plant.x[k], cfg.schedule, k, cfg.topology, cfg.params);
        meas[k] = make_meas_model(mech.apply(batch), cfg);
    }

    const est::StepModel model = make_step_model(cfg);
    const Eigen::VectorXd x0 = cfg.initial_state();
    const Eigen::VectorXd lo = model.x_min, hi = model.x_max;

    for (Technique tech : techniques) {
        EstimateTrace trace;
        trace.technique = tech;
        trace.x_hat.reserve(K + 1);
        trace.step_seconds.reserve(K);

        est::Ekf ekf(model, cfg.est.q, cfg.est.p0);
        est::Ukf ukf(model, cfg.est.ukf, cfg.est.q, cfg.est.p0);
        est::Enkf enkf(model, cfg.est.ensemble_size, cfg.est.q, cfg.est.p0,
                       derive_seed(seed, kEnkfTag));
        est::MheConfig mhe_cfg = cfg.est.mhe;
        mhe_cfg.q = cfg.est.q;
        mhe_cfg.p0 = cfg.est.p0;
        est::Mhe mhe(model, mhe_cfg);

        switch (tech) {
            case Technique::Ekf: ekf.set_state(x0); break;
            case Technique::Ukf: ukf.set_state(x0); break;
            case Technique::Enkf: enkf.set_state(x0); break;
            case Technique::Mhe: mhe.set_state(x0); break;
        }
        trace.x_hat.push_back(x0);

        for (int k = 1; k <= K; ++k) {
            const Eigen::VectorXd& u = result.plant.u[k - 1];
            const est::MeasModel* mm = meas[k].rows() > 0 ? &meas[k] : nullptr;
            const auto t0 = std::chrono::steady_clock::now();
            Eigen::VectorXd xh;
            switch (tech) {
                case Technique::Ekf:
                    ekf.step(u, k, mm);
                    xh = ekf.estimate();
                    break;
                case Technique::Ukf:
                    ukf.step(u, k, mm);
                    xh = ukf.estimate();
                    break;
                case Technique::Enkf:
                    enkf.step(u, k, mm);
                    xh = enkf.estimate();
                    break;
                case Technique::Mhe:
                    mhe.step(u, k, mm);
                    xh = mhe.estimate();
                    break;
            }
            const auto t1 = std::chrono::steady_clock::now();
            trace.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
            for (int i = 0; i < xh.size(); ++i)
                if (xh[i] < lo[i] - 1e-12 || xh[i] > hi[i] + 1e-12) ++trace.bound_violations;
            trace.x_hat.push_back(std::move(xh));
        }
        trace.mhe_h_pd_failures = mhe.hessian_pd_failures();
        trace.qp_failures = mhe.qp_failure_count();

        result.reports.push_back(compute_rmse(cfg, result.plant, trace));
        result.traces.push_back(std::move(trace));
    }
    return result;
}

namespace {

std::vector<SweepRow> sweep_generic(const ScenarioConfig& base,
                                    const std::vector<double>& axis_values,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::vector<Technique>& techniques,
                                    const std::function<void(ScenarioConfig&, double)>& apply) {
    std::vector<SweepRow> rows;
    for (double v : axis_values) {
        ScenarioConfig cfg = base;
        apply(cfg, v);
        cfg.validate();
        for (std::uint64_t seed : seeds) {
            const RunResult res = run_experiment(cfg, techniques, seed);
            for (const auto& rep : res.reports)
                rows.push_back({rep.technique, v, seed, rep});
        }
    }
    return rows;
}

}  // namespace

std::vector<SweepRow> sweep_cv_segments(const ScenarioConfig& cfg, const std::vector<int>& counts,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<Technique>& techniques) {
    std::vector<double> axis(counts.begin(), counts.end());
    return sweep_generic(cfg, axis, seeds, techniques, [](ScenarioConfig& c, double v) {
        c.schedule.cv_initial_segments =
            sensing::spread_cv_segments(static_cast<int>(v), c.topology.n_mainline);
        c.n_p_max = -1;  // re-derive the sensitivity for the new sensor count
    });
}

std::vector<SweepRow> sweep_epsilon(const ScenarioConfig& cfg, const std::vector<double>& grid,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::vector<Technique>& techniques) {
    return sweep_generic(cfg, grid, seeds, techniques,
                         [](ScenarioConfig& c, double v) { c.epsilon = v; });
}

std::vector<SweepRow> sweep_delta(const ScenarioConfig& cfg, const std::vector<double>& grid,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::vector<Technique>& techniques) {
    return sweep_generic(cfg, grid, seeds, techniques,
                         [](ScenarioConfig& c, double v) { c.delta = v; });
}

std::vector<SweepRow> summarize_over_seeds(const std::vector<SweepRow>& rows) {
    std::map<std::pair<int, double>, std::pair<SweepRow, int>> acc;
    for (const auto& r : rows) {
        const auto key = std::make_pair(static_cast<int>(r.technique), r.axis_value);
        auto it = acc.find(key);
        if (it == acc.end()) {
            SweepRow s = r;
            s.seed = 0;
            acc.emplace(key, std::make_pair(s, 1));
        } else {
            it->second.first.report.rmse_density += r.report.rmse_density;
            it->second.first.report.rmse_speed += r.report.rmse_speed;
            it->second.first.report.mean_step_seconds += r.report.mean_step_seconds;
            it->second.second += 1;
        }
    }
    std::vector<SweepRow> out;
    for (auto& [key, v] : acc) {
        v.first.report.rmse_density /= v.second;
        v.first.report.rmse_speed /= v.second;
        v.first.report.mean_step_seconds /= v.second;
        out.push_back(v.first);
    }
    return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open output file: " + path);
    out << std::setprecision(12);
    return out;
}

}  // namespace

void write_trajectory_csv(const std::string& path, const ScenarioConfig& cfg,
                          const PlantRun& plant, const EstimateTrace& trace) {
    auto out = open_out(path);
    out << "k,segment,rho_true,rho_hat,v_true,v_hat\n";
    const int n_seg = cfg.topology.total_segments();
    for (int k = cfg.warmup_steps(); k <= cfg.duration_steps; ++k) {
        for (int s = 0; s < n_seg; ++s) {
            const auto& xt = plant.x[k];
            const auto& xh = trace.x_hat[k];
            out << k << ',' << s + 1 << ',' << xt[2 * s] << ',' << xh[2 * s] << ','
                << arz::measured_speed(xt[2 * s], xt[2 * s + 1], cfg.params) << ','
                << arz::measured_speed(xh[2 * s], xh[2 * s + 1], cfg.params) << '\n';
        }
    }
}

void write_truth_csv(const std::string& path, const ScenarioConfig& cfg, const PlantRun& plant) {
    auto out = open_out(path);
    out << "k,segment,rho,v\n";
    const int n_seg = cfg.topology.total_segments();
    for (size_t k = 0; k < plant.x.size(); ++k) {
        for (int s = 0; s < n_seg; ++s) {
            const auto& x = plant.x[k];
            out << k << ',' << s + 1 << ',' << x[2 * s] << ','
                << arz::measured_speed(x[2 * s], x[2 * s + 1], cfg.params) << '\n';
        }
    }
}

void write_report_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    auto out = open_out(path);
    out << "technique,axis_value,rmse_density,rmse_speed,mean_step_time_s\n";
    for (const auto& r : rows)
        out << technique_name(r.technique) << ',' << r.axis_value << ','
            << r.report.rmse_density << ',' << r.report.rmse_speed << ','
            << r.report.mean_step_seconds << '\n';
}

void write_runs_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    auto out = open_out(path);
    out << "technique,axis_value,seed,rmse_density,rmse_speed,mean_step_time_s\n";
    for (const auto& r : rows)
        out << technique_name(r.technique) << ',' << r.axis_value << ',' << r.seed << ','
            << r.report.rmse_density << ',' << r.report.rmse_speed << ','
            << r.report.mean_step_seconds << '\n';
}

void write_manifest(const std::string& path, const ScenarioConfig& cfg,
                    const std::string& command, const std::vector<std::string>& outputs) {
    const privacy::PrivacySpec spec = cfg.privacy_spec();
    nlohmann::json j;
    j["scenario"] = nlohmann::json::parse(scenario_to_json(cfg));
    j["command"] = command;
    j["outputs"] = outputs;
    j["derived"] = {{"n_p_max", spec.n_p_max},
                    {"t_avg_steps", spec.t_avg_steps},
                    {"delta_rho", spec.delta_rho},
                    {"delta_v", spec.delta_v},
                    {"kappa", spec.kappa},
                    {"sigma_rho", spec.sigma_rho()},
                    {"sigma_v", spec.sigma_v()},
                    {"warmup_steps", cfg.warmup_steps()}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

}  // namespace tse::sim
