#include "tse/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace tse::sim {

using nlohmann::json;

double profile_value(const Profile& p, double t_s, double fallback) {
    for (const auto& piece : p)
        if (t_s >= piece.t_start_s && t_s < piece.t_end_s) return piece.value;
    return fallback;
}

void ScenarioConfig::validate() const {
    params.validate();
    topology.validate();
    schedule.validate(topology);

    auto check_profile = [](const Profile& p, const std::string& what) {
        for (size_t i = 0; i < p.size(); ++i) {
            if (!(p[i].t_start_s < p[i].t_end_s))
                throw ConfigError(what + ": interval must have t_start < t_end");
            if (p[i].value < 0.0) throw ConfigError(what + ": demand must be non-negative");
            for (size_t j = i + 1; j < p.size(); ++j) {
                const bool disjoint =
                    p[i].t_end_s <= p[j].t_start_s || p[j].t_end_s <= p[i].t_start_s;
                if (!disjoint) throw ConfigError(what + ": intervals overlap");
            }
        }
    };
    check_profile(mainline_demand, "mainline demand");
    if (onramp_demands.size() != topology.on_ramps.size())
        throw ConfigError("need one demand profile per on-ramp");
    for (size_t r = 0; r < onramp_demands.size(); ++r)
        check_profile(onramp_demands[r], "on-ramp " + std::to_string(r + 1) + " demand");
    if (offramp_rho_out.size() != topology.off_ramps.size())
        throw ConfigError("need one boundary density per off-ramp");
    for (double rho : offramp_rho_out)
        if (rho < 0.0 || rho > params.rho_m)
            throw ConfigError("off-ramp boundary density outside [0, rho_m]");
    if (mainline_rho_out < 0.0 || mainline_rho_out > params.rho_m)
        throw ConfigError("mainline boundary density outside [0, rho_m]");

    for (const auto& inc : incidents) {
        if (inc.segment < 0 || inc.segment >= topology.total_segments())
            throw ConfigError("incident segment out of range");
        if (!(inc.t_start_s < inc.t_end_s)) throw ConfigError("incident interval empty");
        if (!(inc.speed_cap_kmh > 0.0)) throw ConfigError("incident speed cap must be positive");
    }
    if (duration_steps < est.mhe.horizon + 1)
        throw ConfigError("duration must cover at least one full estimation horizon");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("delta must lie in (0, 0.5)");
    if (!(est.q > 0.0) || !(est.p0 > 0.0)) throw ConfigError("q and p0 must be positive");
    if (est.r && !(*est.r > 0.0)) throw ConfigError("r must be positive");
    if (est.ensemble_size < 2) throw ConfigError("ensemble size must be at least 2");
    if (est.mhe.horizon < 1) throw ConfigError("MHE horizon must be at least 1");
}

Eigen::VectorXd ScenarioConfig::input_at(int k) const {
    const double t = k * params.T * 3600.0;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(topology.input_dim());
    u[arz::Topology::kInMainDemand] = profile_value(mainline_demand, t);
    u[arz::Topology::kInMainW] = mainline_w_in_kmh > 0.0 ? mainline_w_in_kmh : params.v_f;
    u[arz::Topology::kInMainRhoOut] = mainline_rho_out;
    for (size_t r = 0; r < topology.on_ramps.size(); ++r) {
        u[topology.input_onramp_demand(static_cast<int>(r))] =
            profile_value(onramp_demands[r], t);
        u[topology.input_onramp_w(static_cast<int>(r))] = params.v_f;
    }
    for (size_t r = 0; r < topology.off_ramps.size(); ++r)
        u[topology.input_offramp_rho(static_cast<int>(r))] = offramp_rho_out[r];
    return u;
}

Eigen::VectorXd ScenarioConfig::caps_at(int k) const {
    if (incidents.empty()) return Eigen::VectorXd();
    const double t = k * params.T * 3600.0;
    Eigen::VectorXd caps = Eigen::VectorXd::Constant(
        topology.total_segments(), std::numeric_limits<double>::quiet_NaN());
    bool any = false;
    for (const auto& inc : incidents) {
        if (t >= inc.t_start_s && t < inc.t_end_s) {
            const double cur = caps[inc.segment];
            caps[inc.segment] = std::isnan(cur) ? inc.speed_cap_kmh
                                                : std::min(cur, inc.speed_cap_kmh);
            any = true;
        }
    }
    return any ? caps : Eigen::VectorXd();
}

int ScenarioConfig::resolved_n_p() const {
    if (n_p_max >= 0) return n_p_max;
    return sensing::max_simultaneous_segments(schedule, topology);
}

double ScenarioConfig::resolved_t_avg() const {
    if (t_avg_steps > 0.0) return t_avg_steps;
    return std::ceil(params.l / (params.v_f * params.T));  // free-flow transit time
}

privacy::PrivacySpec ScenarioConfig::privacy_spec() const {
    return privacy::PrivacySpec::derive(epsilon, delta, resolved_n_p(), resolved_t_avg(),
                                        params);
}

Eigen::VectorXd ScenarioConfig::initial_state() const {
    std::vector<double> ramp_demands;
    for (size_t r = 0; r < topology.on_ramps.size(); ++r)
        ramp_demands.push_back(profile_value(onramp_demands[r], 0.0));
    return arz::equilibrium_state(topology, params, profile_value(mainline_demand, 0.0),
                                  ramp_demands);
}

namespace {

Profile parse_profile(const json& j, const std::string& what) {
    Profile p;
    if (!j.is_array()) throw ConfigError(what + ": expected an array of intervals");
    for (const auto& piece : j)
        p.push_back({piece.at("t_start_s").get<double>(), piece.at("t_end_s").get<double>(),
                     piece.at("value_veh_per_h").get<double>()});
    return p;
}

json profile_to_json(const Profile& p) {
    json j = json::array();
    for (const auto& piece : p)
        j.push_back({{"t_start_s", piece.t_start_s},
                     {"t_end_s", piece.t_end_s},
                     {"value_veh_per_h", piece.value}});
    return j;
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (j.contains("scenario")) j = j.at("scenario");  // accept a run manifest

    ScenarioConfig cfg;
    try {
        cfg.name = j.value("name", std::string("scenario"));

        const auto& a = j.at("arz");
        cfg.params = arz::Params::from_human(
            a.at("v_f_kmh").get<double>(), a.at("rho_m_veh_per_km").get<double>(),
            a.at("tau_steps").get<double>(), a.at("gamma").get<double>(),
            a.at("segment_length_km").get<double>(), a.at("time_step_s").get<double>());

        const auto& t = j.at("topology");
        cfg.topology.n_mainline = t.at("mainline_segments").get<int>();
        for (const auto& r : t.value("on_ramps", json::array()))
            cfg.topology.on_ramps.push_back({r.at("attach_segment").get<int>(),
                                             r.value("ramp_segments", 1),
                                             r.value("merge_priority", 0.7)});
        for (const auto& r : t.value("off_ramps", json::array()))
            cfg.topology.off_ramps.push_back({r.at("detach_segment").get<int>(),
                                              r.value("ramp_segments", 1),
                                              r.value("split_ratio", 0.15)});

        const auto& d = j.at("demand");
        cfg.mainline_demand = parse_profile(d.at("mainline_veh_per_h"), "mainline demand");
        cfg.mainline_w_in_kmh = d.value("mainline_w_in_kmh", -1.0);
        cfg.mainline_rho_out = d.value("mainline_rho_out_veh_per_km", 0.0);
        for (const auto& rp : d.value("on_ramps_veh_per_h", json::array()))
            cfg.onramp_demands.push_back(parse_profile(rp, "on-ramp demand"));
        if (d.contains("off_ramp_rho_out_veh_per_km"))
            cfg.offramp_rho_out =
                d.at("off_ramp_rho_out_veh_per_km").get<std::vector<double>>();
        else
            cfg.offramp_rho_out.assign(cfg.topology.off_ramps.size(), 0.0);

        for (const auto& inc : j.value("incidents", json::array()))
            cfg.incidents.push_back({inc.at("segment").get<int>() - 1,
                                     inc.at("t_start_s").get<double>(),
                                     inc.at("t_end_s").get<double>(),
                                     inc.at("speed_cap_kmh").get<double>()});

        const auto& s = j.at("sensors");
        for (int seg : s.at("fixed_segments").get<std::vector<int>>())
            cfg.schedule.fixed_segments.push_back(seg - 1);
        if (s.contains("cv_initial_segments")) {
            for (int seg : s.at("cv_initial_segments").get<std::vector<int>>())
                cfg.schedule.cv_initial_segments.push_back(seg - 1);
        } else {
            cfg.schedule.cv_initial_segments = sensing::spread_cv_segments(
                s.value("cv_segment_count", 0), cfg.topology.n_mainline);
        }
        cfg.schedule.rotation_period = s.value("rotation_period_steps", 4);

        const auto& pr = j.at("privacy");
        cfg.epsilon = pr.at("epsilon").get<double>();
        cfg.delta = pr.at("delta").get<double>();
        cfg.n_p_max = pr.value("n_p_max", -1);
        cfg.t_avg_steps = pr.value("t_avg_steps", 0.0);

        if (j.contains("estimators")) {
            const auto& e = j.at("estimators");
            cfg.est.q = e.value("q", 1e-2);
            if (e.contains("r") && e.at("r").is_number())
                cfg.est.r = e.at("r").get<double>();
            cfg.est.strict_scalar_r = e.value("strict_scalar_r", false);
            cfg.est.p0 = e.value("p0", 1e-3);
            if (e.contains("ukf")) {
                cfg.est.ukf.alpha = e.at("ukf").value("alpha", 0.1);
                cfg.est.ukf.kappa = e.at("ukf").value("kappa", -4.0);
                cfg.est.ukf.beta = e.at("ukf").value("beta", 2.0);
            }
            cfg.est.ensemble_size = e.value("ensemble_size", 100);
            if (e.contains("mhe")) {
                cfg.est.mhe.horizon = e.at("mhe").value("horizon", 10);
                cfg.est.mhe.mu = e.at("mhe").value("mu", 0.0);
                cfg.est.mhe.w1 = e.at("mhe").value("w1", 0.0);
                cfg.est.mhe.w2 = e.at("mhe").value("w2", 0.0);
            }
        }

        if (j.contains("plant_noise")) {
            cfg.plant_noise.density_std = j.at("plant_noise").value("density_std", 0.0);
            cfg.plant_noise.rel_flow_std = j.at("plant_noise").value("rel_flow_std", 0.0);
        }

        cfg.estimator_knows_incident = j.value("estimator_knows_incident", false);
        cfg.duration_steps = j.at("duration_steps").get<int>();
        cfg.seed = j.value("seed", 1);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

std::string scenario_to_json(const ScenarioConfig& cfg) {
    json t;
    t["mainline_segments"] = cfg.topology.n_mainline;
    t["on_ramps"] = json::array();
    for (const auto& r : cfg.topology.on_ramps)
        t["on_ramps"].push_back({{"attach_segment", r.attach},
                                 {"ramp_segments", r.segments},
                                 {"merge_priority", r.priority}});
    t["off_ramps"] = json::array();
    for (const auto& r : cfg.topology.off_ramps)
        t["off_ramps"].push_back({{"detach_segment", r.detach},
                                  {"ramp_segments", r.segments},
                                  {"split_ratio", r.split}});

    json d;
    d["mainline_veh_per_h"] = profile_to_json(cfg.mainline_demand);
    d["mainline_w_in_kmh"] = cfg.mainline_w_in_kmh;
    d["mainline_rho_out_veh_per_km"] = cfg.mainline_rho_out;
    d["on_ramps_veh_per_h"] = json::array();
    for (const auto& p : cfg.onramp_demands) d["on_ramps_veh_per_h"].push_back(profile_to_json(p));
    d["off_ramp_rho_out_veh_per_km"] = cfg.offramp_rho_out;

    json incs = json::array();
    for (const auto& inc : cfg.incidents)
        incs.push_back({{"segment", inc.segment + 1},
                        {"t_start_s", inc.t_start_s},
                        {"t_end_s", inc.t_end_s},
                        {"speed_cap_kmh", inc.speed_cap_kmh}});

    json sens;
    sens["fixed_segments"] = json::array();
    for (int s : cfg.schedule.fixed_segments) sens["fixed_segments"].push_back(s + 1);
    sens["cv_initial_segments"] = json::array();
    for (int s : cfg.schedule.cv_initial_segments) sens["cv_initial_segments"].push_back(s + 1);
    sens["rotation_period_steps"] = cfg.schedule.rotation_period;

    json est;
    est["q"] = cfg.est.q;
    if (cfg.est.r) est["r"] = *cfg.est.r;
    est["strict_scalar_r"] = cfg.est.strict_scalar_r;
    est["p0"] = cfg.est.p0;
    est["ukf"] = {{"alpha", cfg.est.ukf.alpha},
                  {"kappa", cfg.est.ukf.kappa},
                  {"beta", cfg.est.ukf.beta}};
    est["ensemble_size"] = cfg.est.ensemble_size;
    est["mhe"] = {{"horizon", cfg.est.mhe.horizon},
                  {"mu", cfg.est.mhe.mu},
                  {"w1", cfg.est.mhe.w1},
                  {"w2", cfg.est.mhe.w2}};

    json j;
    j["name"] = cfg.name;
    j["arz"] = {{"v_f_kmh", cfg.params.v_f},
                {"rho_m_veh_per_km", cfg.params.rho_m},
                {"tau_steps", cfg.params.tau},
                {"gamma", cfg.params.gamma},
                {"segment_length_km", cfg.params.l},
                {"time_step_s", cfg.params.T * 3600.0}};
    j["topology"] = t;
    j["demand"] = d;
    j["incidents"] = incs;
    j["sensors"] = sens;
    j["privacy"] = {{"epsilon", cfg.epsilon},
                    {"delta", cfg.delta},
                    {"n_p_max", cfg.n_p_max},
                    {"t_avg_steps", cfg.t_avg_steps}};
    j["estimators"] = est;
    j["plant_noise"] = {{"density_std", cfg.plant_noise.density_std},
                        {"rel_flow_std", cfg.plant_noise.rel_flow_std}};
    j["estimator_knows_incident"] = cfg.estimator_knows_incident;
    j["duration_steps"] = cfg.duration_steps;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

est::StepModel make_step_model(const ScenarioConfig& cfg) {
    est::StepModel m;
    m.nx = cfg.topology.state_dim();
    m.x_min = arz::state_min(cfg.topology);
    m.x_max = arz::state_max(cfg.topology, cfg.params);
    // sigma-point floor: the speed map's 1/rho curvature is what the strictly
    // positive lower bound protects against, so keep sigma densities at or
    // above one vehicle per km
    m.sigma_lower = Eigen::VectorXd::Constant(m.nx, arz::kRhoFloor);
    for (int seg = 0; seg < cfg.topology.total_segments(); ++seg)
        m.sigma_lower[2 * seg] = 1.0;
    const arz::Topology topo = cfg.topology;
    const arz::Params p = cfg.params;
    const bool with_caps = cfg.estimator_knows_incident;
    const ScenarioConfig cfg_copy = cfg;
    m.f = [topo, p, cfg_copy, with_caps](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                         int k) {
        return arz::step(x, u, topo, p,
                         with_caps ? cfg_copy.caps_at(k) : Eigen::VectorXd());
    };
    m.df = [topo, p, cfg_copy, with_caps](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                          int k) {
        const arz::Linearization lin = arz::linearize(
            x, u, topo, p, with_caps ? cfg_copy.caps_at(k) : Eigen::VectorXd());
        return est::Linearized{lin.A, lin.B, lin.c1};
    };
    return m;
}

est::MeasModel make_meas_model(const sensing::MeasurementBatch& batch,
                               const ScenarioConfig& cfg) {
    est::MeasModel m;
    const int rows = batch.size();
    m.y.resize(rows);
    m.r_diag.resize(rows);

    const privacy::PrivacySpec spec = cfg.privacy_spec();
    const double r_rho = cfg.est.r ? *cfg.est.r
                                   : std::max(spec.sigma_rho() * spec.sigma_rho(), 1e-9);
    const double r_v = cfg.est.strict_scalar_r || cfg.est.r
                           ? r_rho
                           : std::max(spec.sigma_v() * spec.sigma_v(), 1e-9);

    std::vector<std::pair<int, sensing::Kind>> pattern(rows);
    m.z_min = Eigen::VectorXd::Zero(rows);
    m.z_max.resize(rows);
    for (int i = 0; i < rows; ++i) {
        m.y[i] = batch.entries[i].value;
        pattern[i] = {batch.entries[i].segment, batch.entries[i].kind};
        const bool is_density = batch.entries[i].kind == sensing::Kind::Density;
        m.r_diag[i] = is_density ? r_rho : r_v;
        m.z_max[i] = is_density ? cfg.params.rho_m : cfg.params.v_f;
    }

    const arz::Params p = cfg.params;
    m.h = [pattern, p](const Eigen::VectorXd& x) {
        Eigen::VectorXd out(static_cast<int>(pattern.size()));
        for (size_t i = 0; i < pattern.size(); ++i) {
            const auto [seg, kind] = pattern[i];
            out[static_cast<int>(i)] =
                kind == sensing::Kind::Density
                    ? x[2 * seg]
                    : arz::measured_speed(x[2 * seg], x[2 * seg + 1], p);
        }
        return out;
    };
    m.H = [pattern, p](const Eigen::VectorXd& x) {
        Eigen::MatrixXd J =
            Eigen::MatrixXd::Zero(static_cast<int>(pattern.size()), x.size());
        for (size_t i = 0; i < pattern.size(); ++i) {
            const auto [seg, kind] = pattern[i];
            const int row = static_cast<int>(i);
            const double rho = x[2 * seg], psi = x[2 * seg + 1];
            if (kind == sensing::Kind::Density) {
                J(row, 2 * seg) = 1.0;
            } else if (rho > arz::kRhoFloor) {
                const double v = arz::speed_from_state(rho, psi, p);
                if (v > 0.0 && v < p.v_f) {  // capped speeds carry no sensitivity
                    J(row, 2 * seg) = -psi / (rho * rho) - arz::pressure_deriv(rho, p);
                    J(row, 2 * seg + 1) = 1.0 / rho;
                }
            }  // at the floor the speed is pinned to v_f: zero row
        }
        return J;
    };
    return m;
}

}  // namespace tse::sim
