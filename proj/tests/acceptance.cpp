// Acceptance suite: one pass/fail line per criterion. Run with no arguments
// for the full suite or with a criterion number to run one.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "tse/harness.hpp"

using namespace tse;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Criterion {
    int id;
    std::string label;
    std::function<bool(std::string&)> run;
};

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

sim::ScenarioConfig default_scenario() {
    return sim::load_scenario(std::string(TSE_SOURCE_DIR) + "/data/scenario_default.json");
}

std::vector<std::uint64_t> seeds5(std::uint64_t base) { return {base, base + 1, base + 2, base + 3, base + 4}; }

std::map<std::pair<int, double>, double> mean_density_rmse(const std::vector<sim::SweepRow>& rows) {
    std::map<std::pair<int, double>, std::pair<double, int>> acc;
    for (const auto& r : rows) {
        auto& slot = acc[{static_cast<int>(r.technique), r.axis_value}];
        slot.first += r.report.rmse_density;
        slot.second += 1;
    }
    std::map<std::pair<int, double>, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / v.second;
    return out;
}

int total_bound_violations(const std::vector<sim::SweepRow>& rows) {
    int n = 0;
    for (const auto& r : rows) n += r.report.bound_violations;
    return n;
}

// --- criteria ---

bool c1_conservation(std::string& detail) {
    const double t0 = now_seconds();
    const auto p = arz::Params::from_human(102.0, 333.0, 60.0, 2.0, 0.1, 1.0);
    const int n = 19;
    std::mt19937 gen(2024);
    std::uniform_real_distribution<double> rho_d(5.0, 320.0), v_d(1.0, 100.0);
    VectorXd x(2 * n);
    for (int i = 0; i < n; ++i) {
        const double rho = rho_d(gen);
        x[2 * i] = rho;
        x[2 * i + 1] = rho * (v_d(gen) + arz::pressure(rho, p));
    }
    double total0 = 0.0;
    for (int i = 0; i < n; ++i) total0 += x[2 * i] * p.l;
    for (int k = 0; k < 1000; ++k) x = arz::step_ring(x, n, p);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += x[2 * i] * p.l;
    const double drift = std::abs(total - total0) / total0;
    const double dt = now_seconds() - t0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "relative drift %.3e over 1000 steps, %.2fs", drift, dt);
    detail = buf;
    return drift < 1e-9 && dt < 1.0;
}

bool c2_jacobians(std::string& detail) {
    const double t0 = now_seconds();
    const auto cfg = default_scenario();
    const auto& topo = cfg.topology;
    const auto& p = cfg.params;
    const int nx = topo.state_dim(), nu = topo.input_dim();
    std::mt19937 gen(71);
    std::uniform_real_distribution<double> rho_d(5.0, 300.0), v_d(5.0, p.v_f - 5.0);
    std::uniform_real_distribution<double> dem(100.0, 8000.0), wd(40.0, 150.0), rb(0.0, 320.0);

    double worst = 0.0;
    int accepted = 0, attempts = 0;
    while (accepted < 100 && attempts < 20000) {
        ++attempts;
        VectorXd x(nx);
        for (int s = 0; s < topo.total_segments(); ++s) {
            const double rho = rho_d(gen);
            x[2 * s] = rho;
            x[2 * s + 1] = rho * (v_d(gen) + arz::pressure(rho, p));
        }
        VectorXd u(nu);
        u[arz::Topology::kInMainDemand] = dem(gen);
        u[arz::Topology::kInMainW] = wd(gen);
        u[arz::Topology::kInMainRhoOut] = rb(gen);
        for (size_t r = 0; r < topo.on_ramps.size(); ++r) {
            u[topo.input_onramp_demand(static_cast<int>(r))] = 0.25 * dem(gen);
            u[topo.input_onramp_w(static_cast<int>(r))] = wd(gen);
        }
        for (size_t r = 0; r < topo.off_ramps.size(); ++r)
            u[topo.input_offramp_rho(static_cast<int>(r))] = rb(gen);

        if (arz::branch_margin(x, u, topo, p) < 1e-4) continue;  // near a branch switch
        ++accepted;

        const auto lin = arz::linearize(x, u, topo, p);
        VectorXd z(nx + nu);
        z << x, u;
        const MatrixXd fd = oracle::fd_jacobian(
            [&](const VectorXd& zz) { return arz::step(zz.head(nx), zz.tail(nu), topo, p); }, z,
            1e-6);
        const double ea = (lin.A - fd.leftCols(nx)).cwiseAbs().maxCoeff() /
                          std::max(1.0, lin.A.cwiseAbs().maxCoeff());
        const double eb = (lin.B - fd.rightCols(nu)).cwiseAbs().maxCoeff() /
                          std::max(1.0, lin.B.cwiseAbs().maxCoeff());
        worst = std::max({worst, ea, eb});
    }
    const double dt = now_seconds() - t0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d points, worst relative error %.3e, %.2fs", accepted,
                  worst, dt);
    detail = buf;
    return accepted == 100 && worst < 1e-5 && dt < 10.0;
}

bool c3_mechanism(std::string& detail) {
    const double t0 = now_seconds();
    const double k_lib = privacy::kappa(1.0, 0.05);
    const double K_oracle = oracle::gaussian_tail_inverse(0.05);
    const double k_oracle = (K_oracle + std::sqrt(K_oracle * K_oracle + 2.0)) / 2.0;
    const bool kappa_ok = std::abs(k_lib - k_oracle) <= 1e-4;

    const auto p = arz::Params::from_human(102.0, 333.0, 60.0, 2.0, 0.1, 1.0);
    auto spec = privacy::PrivacySpec::derive(1.0, 0.05, 8, 4.0, p);
    privacy::Mechanism mech(spec, 321);
    sensing::MeasurementBatch batch;
    batch.entries = {{0, sensing::Kind::Density, 0.0}};
    const int n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = mech.apply(batch).entries[0].value;
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double stddev = std::sqrt(sumsq / n - mean * mean);
    const double target = spec.sigma_rho();
    const bool std_ok = std::abs(stddev - target) <= 0.005 * target;
    const double dt = now_seconds() - t0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "kappa %.6f vs oracle %.6f; 1e6-draw std %.4f vs %.4f (%.2f%%), %.2fs", k_lib,
                  k_oracle, stddev, target, 100.0 * std::abs(stddev - target) / target, dt);
    detail = buf;
    return kappa_ok && std_ok && dt < 5.0;
}

bool c4_qp(std::string& detail) {
    const double t0 = now_seconds();
    std::mt19937 gen(2718);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<int> dim_d(8, 66);
    std::uniform_real_distribution<double> shift_d(0.05, 0.6), box_d(0.2, 2.5);

    double worst_kkt = 0.0, worst_gap = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = dim_d(gen);
        MatrixXd M = MatrixXd::Zero(n, n);
        const int kb = std::max(2, n / (1 + trial % 3));
        for (int i = 0; i < n; ++i)
            for (int j = std::max(0, i - kb); j <= i; ++j) M(i, j) = nd(gen);
        MatrixXd H = M * M.transpose();
        H.diagonal().array() += shift_d(gen) * n;
        VectorXd q(n), lo(n), hi(n);
        for (int i = 0; i < n; ++i) {
            q[i] = 10.0 * nd(gen);
            lo[i] = -box_d(gen);
            hi[i] = box_d(gen);
        }
        qp::BoxQP prob;
        prob.H = qp::BandMatrix::from_dense(H);
        prob.q = q;
        prob.z_min = lo;
        prob.z_max = hi;
        const auto res = qp::solve(prob);
        if (!res.converged) {
            detail = "solver failed to converge";
            return false;
        }
        worst_kkt = std::max(worst_kkt, res.kkt_residual);
        const VectorXd zo = oracle::projected_gradient_qp(H, q, lo, hi);
        const double fo = zo.dot(H * zo) + q.dot(zo);
        worst_gap = std::max(worst_gap, prob.objective(res.z) - fo);
    }
    const double dt = now_seconds() - t0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "200 problems: worst KKT %.2e, worst objective gap vs oracle %.2e, %.2fs",
                  worst_kkt, worst_gap, dt);
    detail = buf;
    return worst_kkt <= 1e-8 && worst_gap <= 1e-6 && dt < 30.0;
}

bool c5_mhe_pd(std::string& detail) {
    const double t0 = now_seconds();
    const auto cfg = default_scenario();
    const auto res = sim::run_experiment(cfg, {sim::Technique::Mhe}, cfg.seed);
    const auto& trace = res.traces[0];
    const double dt = now_seconds() - t0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "%d steps: %d Hessian PD failures, %d QP failures, rmse_d %.2f, %.1fs",
                  cfg.duration_steps, trace.mhe_h_pd_failures, trace.qp_failures,
                  res.reports[0].rmse_density, dt);
    detail = buf;
    return trace.mhe_h_pd_failures == 0 && trace.qp_failures == 0 && dt < 120.0;
}

bool c6_cv_trend(std::string& detail) {
    const double t0 = now_seconds();
    const auto cfg = default_scenario();
    const auto rows =
        sim::sweep_cv_segments(cfg, {5, 11}, seeds5(cfg.seed), sim::all_techniques());
    const auto means = mean_density_rmse(rows);
    bool ok = total_bound_violations(rows) == 0;
    std::string parts;
    for (auto tech : sim::all_techniques()) {
        const double at5 = means.at({static_cast<int>(tech), 5.0});
        const double at11 = means.at({static_cast<int>(tech), 11.0});
        ok = ok && at11 < at5;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " %s:%.2f->%.2f", sim::technique_name(tech).c_str(),
                      at5, at11);
        parts += buf;
    }
    const double dt = now_seconds() - t0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), " (%.0fs)", dt);
    detail = "mean density RMSE 5->11 CV segments:" + parts + buf;
    return ok && dt < 1200.0;
}

bool c7_privacy_trend(std::string& detail) {
    const double t0 = now_seconds();
    const auto cfg = default_scenario();
    const auto seeds = seeds5(cfg.seed);
    const auto eps_rows = sim::sweep_epsilon(cfg, {0.1, 1.0}, seeds, sim::all_techniques());
    const auto del_rows =
        sim::sweep_delta(cfg, {0.01, 0.05, 0.1}, seeds, sim::all_techniques());
    const auto eps_means = mean_density_rmse(eps_rows);
    const auto del_means = mean_density_rmse(del_rows);
    bool ok = total_bound_violations(eps_rows) + total_bound_violations(del_rows) == 0;

    std::string parts;
    for (auto tech : sim::all_techniques()) {
        const int t = static_cast<int>(tech);
        const double hard = eps_means.at({t, 0.1});
        const double easy = eps_means.at({t, 1.0});
        const bool eps_ok = hard >= 1.2 * easy;

        const double d1 = del_means.at({t, 0.01});
        const double d5 = del_means.at({t, 0.05});
        const double d10 = del_means.at({t, 0.1});
        const double mean = (d1 + d5 + d10) / 3.0;
        const bool del_ok = std::abs(d1 - mean) <= 0.1 * mean &&
                            std::abs(d5 - mean) <= 0.1 * mean &&
                            std::abs(d10 - mean) <= 0.1 * mean;
        ok = ok && eps_ok && del_ok;
        char buf[160];
        std::snprintf(buf, sizeof(buf), " %s[eps0.1/eps1=%.2f, delta spread %.1f%%]",
                      sim::technique_name(tech).c_str(), hard / easy,
                      100.0 * (std::max({d1, d5, d10}) - std::min({d1, d5, d10})) / mean);
        parts += buf;
    }
    const double dt = now_seconds() - t0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), " (%.0fs)", dt);
    detail = parts + buf;
    return ok && dt < 1800.0;
}

bool c8_bounds(std::string& detail) {
    const auto base = default_scenario();
    int violations = 0, runs = 0;
    for (std::uint64_t seed : {base.seed, base.seed + 1}) {
        const auto res = sim::run_experiment(base, sim::all_techniques(), seed);
        for (const auto& trace : res.traces) violations += trace.bound_violations;
        runs += static_cast<int>(res.traces.size());
    }
    auto hard = base;  // extreme privacy noise hammers the projection paths
    hard.epsilon = 0.05;
    hard.duration_steps = 300;
    const auto res = sim::run_experiment(hard, sim::all_techniques(), base.seed + 9);
    for (const auto& trace : res.traces) violations += trace.bound_violations;
    runs += static_cast<int>(res.traces.size());
    detail = std::to_string(runs) + " runs, " + std::to_string(violations) +
             " out-of-bounds published estimates";
    return violations == 0;
}

bool c9_toy_agreement(std::string& detail) {
    MatrixXd A(2, 2);
    const double a = 0.9, th = 0.3;
    A << a * std::cos(th), -a * std::sin(th), a * std::sin(th), a * std::cos(th);
    const double q = 0.01, r = 0.04, p0 = 0.02;
    const int steps = 20;

    est::StepModel model;
    model.nx = 2;
    model.x_min = VectorXd::Constant(2, -1e9);
    model.x_max = VectorXd::Constant(2, 1e9);
    model.sigma_lower = model.x_min;
    model.f = [A](const VectorXd& x, const VectorXd&, int) -> VectorXd { return A * x; };
    model.df = [A](const VectorXd&, const VectorXd&, int) {
        return est::Linearized{A, MatrixXd::Zero(2, 0), VectorXd::Zero(2)};
    };

    GaussianStream g(9090);
    VectorXd x(2);
    x << 1.0, 0.0;
    std::vector<VectorXd> ys;
    for (int k = 1; k <= steps; ++k) {
        VectorXd w(2), v(2);
        for (int i = 0; i < 2; ++i) w[i] = std::sqrt(q) * g.next();
        x = A * x + w;
        for (int i = 0; i < 2; ++i) v[i] = std::sqrt(r) * g.next();
        ys.push_back(x + v);
    }
    auto make_meas = [&](const VectorXd& y) {
        est::MeasModel m;
        m.y = y;
        m.r_diag = VectorXd::Constant(2, r);
        m.h = [](const VectorXd& z) { return z; };
        m.H = [](const VectorXd& z) { return MatrixXd::Identity(2, z.size()); };
        return m;
    };

    VectorXd x0(2);
    x0 << 0.8, 0.1;
    oracle::Kf kf;
    kf.A = A;
    kf.H = MatrixXd::Identity(2, 2);
    kf.Q = q * MatrixXd::Identity(2, 2);
    kf.R = r * MatrixXd::Identity(2, 2);
    kf.x = x0;
    kf.P = p0 * MatrixXd::Identity(2, 2);

    est::Ekf ekf(model, q, p0);
    ekf.set_state(x0);
    est::Ukf ukf(model, est::UkfParams{1.0, 1.0, 2.0}, q, p0);
    ukf.set_state(x0);
    est::Enkf enkf(model, 10000, q, p0, 112233);
    enkf.set_state(x0);
    est::MheConfig mcfg;
    mcfg.horizon = steps + 1;  // growing window: full-information least squares
    mcfg.q = q;
    mcfg.p0 = p0;
    est::Mhe mhe(model, mcfg);
    mhe.set_state(x0);

    double e_ekf = 0.0, e_ukf = 0.0, e_mhe = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const auto m = make_meas(ys[k - 1]);
        kf.step(VectorXd::Zero(2), ys[k - 1]);
        ekf.step(VectorXd(), k, &m);
        ukf.step(VectorXd(), k, &m);
        enkf.step(VectorXd(), k, &m);
        mhe.step(VectorXd(), k, &m);
        e_ekf = std::max(e_ekf, (ekf.estimate() - kf.x).lpNorm<Eigen::Infinity>());
        e_ukf = std::max(e_ukf, (ukf.estimate() - kf.x).lpNorm<Eigen::Infinity>());
        e_mhe = std::max(e_mhe, (mhe.estimate() - kf.x).lpNorm<Eigen::Infinity>());
    }
    const double e_enkf = (enkf.estimate() - kf.x).norm() / std::sqrt(kf.P.trace());
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "max dev vs KF: ekf %.2e, ukf %.2e, mhe %.2e; enkf %.3f of state std", e_ekf,
                  e_ukf, e_mhe, e_enkf);
    detail = buf;
    return e_ekf < 1e-6 && e_ukf < 1e-6 && e_mhe < 1e-4 && e_enkf < 0.05;
}

bool c10_throughput(std::string& detail) {
    const double t0 = now_seconds();
    const auto cfg = default_scenario();
    const auto res = sim::run_experiment(cfg, sim::all_techniques(), cfg.seed);
    const double total = now_seconds() - t0;

    double mhe_max_step = 0.0;
    for (const auto& trace : res.traces)
        if (trace.technique == sim::Technique::Mhe)
            for (double s : trace.step_seconds) mhe_max_step = std::max(mhe_max_step, s);

    std::string times;
    for (const auto& rep : res.reports) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %s:%.3fs/step", sim::technique_name(rep.technique).c_str(),
                      rep.mean_step_seconds);
        times += buf;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "; slowest MHE step %.3fs; scenario total %.0fs",
                  mhe_max_step, total);
    detail = times + buf;
    return mhe_max_step < 1.0 && total < 900.0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria = {
        {1, "closed-ring conservation", c1_conservation},
        {2, "analytic Jacobian fidelity", c2_jacobians},
        {3, "Gaussian mechanism calibration", c3_mechanism},
        {4, "box QP correctness", c4_qp},
        {5, "MHE Hessian positive definite over the scenario", c5_mhe_pd},
        {6, "density RMSE improves from 5 to 11 CV segments", c6_cv_trend},
        {7, "epsilon dominates delta in the privacy trade-off", c7_privacy_trend},
        {8, "published estimates respect physical bounds", c8_bounds},
        {9, "estimators agree with the closed-form KF on a linear toy", c9_toy_agreement},
        {10, "throughput", c10_throughput},
    };

    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);

    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", c.id, c.label.c_str(),
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
