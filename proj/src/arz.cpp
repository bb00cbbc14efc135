#include "tse/arz.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace tse::arz {

namespace {

constexpr double kDomainTol = 1e-9;

// Forward-mode scalar carrying up to 8 partial derivatives. Each interface
// flux depends on at most 6 state scalars plus 2 inputs, so one fixed width
// covers every interface kind.
struct Dual {
    double v = 0.0;
    std::array<double, 8> d{};

    Dual() = default;
    /*implicit*/ Dual(double value) : v(value) {}
    static Dual seeded(double value, int slot) {
        Dual r(value);
        r.d[slot] = 1.0;
        return r;
    }
};

inline Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (int i = 0; i < 8; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}
inline Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (int i = 0; i < 8; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}
inline Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < 8; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}
inline Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const double inv2 = 1.0 / (b.v * b.v);
    for (int i = 0; i < 8; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv2;
    return r;
}
inline Dual operator-(const Dual& a) {
    Dual r(-a.v);
    for (int i = 0; i < 8; ++i) r.d[i] = -a.d[i];
    return r;
}

inline double val(double x) { return x; }
inline double val(const Dual& x) { return x.v; }

inline double pow_pos(double base, double expo) { return std::pow(base, expo); }
inline Dual pow_pos(const Dual& a, double expo) {
    // base assumed > 0 wherever the derivative is consumed
    Dual r(std::pow(a.v, expo));
    const double g = a.v > 0.0 ? expo * std::pow(a.v, expo - 1.0) : 0.0;
    for (int i = 0; i < 8; ++i) r.d[i] = g * a.d[i];
    return r;
}

// Branch-switch bookkeeping. `acc` collects the minimum normalized distance
// to any derivative discontinuity encountered during an evaluation.
struct Margin {
    double* acc = nullptr;
    void note(double dist) const {
        if (acc && dist < *acc) *acc = dist;
    }
};

// ---- templated Godunov closure ----

template <class S>
S pressure_t(const S& rho, const Params& p) {
    return S(p.v_f) * pow_pos(rho / S(p.rho_m), p.gamma);
}

// w = psi/rho with the empty-cell floor rule
template <class S>
S characteristic_t(const S& rho, const S& psi, const Params& p, Margin m) {
    m.note(std::abs(val(rho) - kRhoFloor) / p.rho_m);
    if (val(rho) <= kRhoFloor) return S(p.v_f);
    return psi / rho;
}

template <class S>
S speed_t(const S& rho, const S& psi, const Params& p, Margin m) {
    m.note(std::abs(val(rho) - kRhoFloor) / p.rho_m);
    if (val(rho) <= kRhoFloor) return S(p.v_f);
    return psi / rho - pressure_t(rho, p);
}

// incident cap on the sending side: w <- min(w, cap + p(rho))
template <class S>
S cap_characteristic_t(const S& w, const S& rho, double cap, const Params& p, Margin m) {
    if (std::isnan(cap)) return w;
    const S lim = S(cap) + pressure_t(rho, p);
    m.note(std::abs(val(w) - val(lim)) / p.v_f);
    return val(w) > val(lim) ? lim : w;
}

// incident cap on the receiving side: v <- min(v, cap)
template <class S>
S cap_speed_t(const S& v, double cap, Margin m, const Params& p) {
    if (std::isnan(cap)) return v;
    m.note(std::abs(val(v) - cap) / p.v_f);
    return val(v) > cap ? S(cap) : v;
}

template <class S>
S critical_density_t(const S& w, const Params& p, Margin) {
    // the sigma clamp and the w<=0 switch are C1 in every flux that uses
    // sigma, so they contribute no margin
    if (val(w) <= 0.0) return S(0.0);
    const S a = w / S((p.gamma + 1.0) * p.v_f);
    if (val(a) >= 1.0) return S(p.rho_m);
    return S(p.rho_m) * pow_pos(a, 1.0 / p.gamma);
}

template <class S>
S critical_flux_t(const S& w, const Params& p, Margin m) {
    if (val(w) <= 0.0) return S(0.0);
    const S s = critical_density_t(w, p, m);
    return s * (w - pressure_t(s, p));
}

// demand is C1 at rho = sigma(w); no margin needed there
template <class S>
S demand_t(const S& rho, const S& w, const Params& p, Margin m) {
    if (val(w) <= 0.0) return S(0.0);
    const S sigma = critical_density_t(w, p, m);
    if (val(rho) <= val(sigma)) return rho * (w - pressure_t(rho, p));
    return critical_flux_t(w, p, m);
}

template <class S>
S supply_t(const S& rho_star, const S& w_up, const Params& p, Margin m) {
    if (val(w_up) <= 0.0) return S(0.0);
    const S sigma = critical_density_t(w_up, p, m);
    if (val(rho_star) <= val(sigma)) return critical_flux_t(w_up, p, m);
    const S raw = rho_star * (w_up - pressure_t(rho_star, p));
    m.note(std::abs(val(raw)) / std::max(1.0, critical_flux(p.v_f, p)));
    if (val(raw) <= 0.0) return S(0.0);  // saturated: nothing accepted
    return raw;
}

template <class S>
S intermediate_density_t(const S& w_up, const S& v_down, const Params& p, Margin m) {
    const S z = (w_up - v_down) / S(p.v_f);
    m.note(std::abs(val(z)));
    m.note(std::abs(1.0 - val(z)));
    if (val(z) <= 0.0) return S(0.0);
    if (val(z) >= 1.0) return S(p.rho_m);
    return S(p.rho_m) * pow_pos(z, 1.0 / p.gamma);
}

// min(demand, supply); ties resolve to the demand branch
template <class S>
S min_demand_supply(const S& d, const S& s, Margin m) {
    m.note(std::abs(val(d) - val(s)) / std::max(1.0, std::abs(val(d)) + std::abs(val(s))));
    return val(d) <= val(s) ? d : s;
}

template <class S>
struct Flux {
    S q, phi;
};

// interior interface: upstream cell (rho_u, psi_u) into downstream (rho_d, psi_d)
template <class S>
Flux<S> pair_flux_t(const S& rho_u, const S& psi_u, const S& rho_d, const S& psi_d,
                    double cap_u, double cap_d, const Params& p, Margin m) {
    S w = characteristic_t(rho_u, psi_u, p, m);
    w = cap_characteristic_t(w, rho_u, cap_u, p, m);
    S v = speed_t(rho_d, psi_d, p, m);
    v = cap_speed_t(v, cap_d, m, p);
    const S rs = intermediate_density_t(w, v, p, m);
    const S q = min_demand_supply(demand_t(rho_u, w, p, m), supply_t(rs, w, p, m), m);
    return {q, q * w};
}

// network entry: q = min(D_in, supply at the first cell), phi = q w_in
template <class S>
Flux<S> entry_flux_t(const S& d_in, const S& w_in, const S& rho_c, const S& psi_c,
                     double cap_c, const Params& p, Margin m) {
    S v = speed_t(rho_c, psi_c, p, m);
    v = cap_speed_t(v, cap_c, m, p);
    const S rs = intermediate_density_t(w_in, v, p, m);
    S d = d_in;
    if (val(d) < 0.0) d = S(0.0);
    const S q = min_demand_supply(d, supply_t(rs, w_in, p, m), m);
    return {q, q * w_in};
}

// network exit: ghost cell at density rho_out in equilibrium
template <class S>
Flux<S> exit_flux_t(const S& rho_c, const S& psi_c, const S& rho_out, double cap_c,
                    const Params& p, Margin m) {
    S w = characteristic_t(rho_c, psi_c, p, m);
    w = cap_characteristic_t(w, rho_c, cap_c, p, m);
    const S v_ghost = S(p.v_f) - pressure_t(rho_out, p);
    const S rs = intermediate_density_t(w, v_ghost, p, m);
    const S q = min_demand_supply(demand_t(rho_c, w, p, m), supply_t(rs, w, p, m), m);
    return {q, q * w};
}

// priority merge: mainline cell M and ramp cell R feed downstream cell D.
// Free if both demands fit the supply; otherwise the supply splits
// priority/(1-priority) with any unused share handed to the other stream.
template <class S>
struct MergeFlux {
    Flux<S> main, ramp;
};

template <class S>
MergeFlux<S> merge_flux_t(const S& rho_m_, const S& psi_m_, const S& rho_r, const S& psi_r,
                          const S& rho_d, const S& psi_d, double priority,
                          double cap_m, double cap_r, double cap_d, const Params& p, Margin m) {
    S w_m = characteristic_t(rho_m_, psi_m_, p, m);
    w_m = cap_characteristic_t(w_m, rho_m_, cap_m, p, m);
    S w_r = characteristic_t(rho_r, psi_r, p, m);
    w_r = cap_characteristic_t(w_r, rho_r, cap_r, p, m);
    const S d_m = demand_t(rho_m_, w_m, p, m);
    const S d_r = demand_t(rho_r, w_r, p, m);

    S v_d = speed_t(rho_d, psi_d, p, m);
    v_d = cap_speed_t(v_d, cap_d, m, p);
    const S rs = intermediate_density_t(w_m, v_d, p, m);
    const S s = supply_t(rs, w_m, p, m);

    S q_m, q_r;
    const double scale = std::max(1.0, val(d_m) + val(d_r) + val(s));
    m.note(std::abs(val(d_m) + val(d_r) - val(s)) / scale);
    if (val(d_m) + val(d_r) <= val(s)) {
        q_m = d_m;
        q_r = d_r;
    } else {
        const S share_m = S(priority) * s;
        const S share_r = S(1.0 - priority) * s;
        m.note(std::abs(val(d_m) - val(share_m)) / scale);
        m.note(std::abs(val(d_r) - val(share_r)) / scale);
        if (val(d_m) <= val(share_m)) {
            q_m = d_m;
            q_r = s - d_m;
        } else if (val(d_r) <= val(share_r)) {
            q_r = d_r;
            q_m = s - d_r;
        } else {
            q_m = share_m;
            q_r = share_r;
        }
    }
    return {{q_m, q_m * w_m}, {q_r, q_r * w_r}};
}

// FIFO diverge: cell U splits beta to the ramp cell, 1-beta to mainline cell.
template <class S>
struct DivergeFlux {
    S q_total;        // leaves U, phi_total = q_total w_u
    Flux<S> main;     // enters mainline downstream
    Flux<S> ramp;     // enters the off-ramp
    S w_u;
};

template <class S>
DivergeFlux<S> diverge_flux_t(const S& rho_u, const S& psi_u, const S& rho_md, const S& psi_md,
                              const S& rho_rd, const S& psi_rd, double beta,
                              double cap_u, double cap_md, double cap_rd,
                              const Params& p, Margin m) {
    S w = characteristic_t(rho_u, psi_u, p, m);
    w = cap_characteristic_t(w, rho_u, cap_u, p, m);
    const S d = demand_t(rho_u, w, p, m);

    S v_md = speed_t(rho_md, psi_md, p, m);
    v_md = cap_speed_t(v_md, cap_md, m, p);
    const S s_main = supply_t(intermediate_density_t(w, v_md, p, m), w, p, m);

    S q_tot = d;
    if (beta < 1.0) {
        const S lim = s_main / S(1.0 - beta);
        m.note(std::abs(val(q_tot) - val(lim)) / std::max(1.0, val(q_tot) + val(lim)));
        if (val(lim) < val(q_tot)) q_tot = lim;
    }
    if (beta > 0.0) {
        S v_rd = speed_t(rho_rd, psi_rd, p, m);
        v_rd = cap_speed_t(v_rd, cap_rd, m, p);
        const S s_ramp = supply_t(intermediate_density_t(w, v_rd, p, m), w, p, m);
        const S lim = s_ramp / S(beta);
        m.note(std::abs(val(q_tot) - val(lim)) / std::max(1.0, val(q_tot) + val(lim)));
        if (val(lim) < val(q_tot)) q_tot = lim;
    }
    const S q_main = S(1.0 - beta) * q_tot;
    const S q_ramp = S(beta) * q_tot;
    return {q_tot, {q_main, q_main * w}, {q_ramp, q_ramp * w}, w};
}

double cap_of(const Eigen::VectorXd& caps, int seg) {
    if (caps.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    return caps[seg];
}

// ---- network evaluation ----
//
// Fluxes are accumulated per cell as (q_in, phi_in, q_out, phi_out); the
// conservation update and clamp produce the next state. The dual-number path
// additionally scatters each interface's partials into A and B.

struct Accum {
    Eigen::VectorXd q_in, phi_in, q_out, phi_out;
    explicit Accum(int n)
        : q_in(Eigen::VectorXd::Zero(n)),
          phi_in(Eigen::VectorXd::Zero(n)),
          q_out(Eigen::VectorXd::Zero(n)),
          phi_out(Eigen::VectorXd::Zero(n)) {}
};

// slot -> column bookkeeping for the dual path. Column >= 0: state index;
// column < 0: input index (encoded as -1 - u_index).
struct SlotMap {
    std::array<int, 8> col{};
    int used = 0;
    int add_state(int idx) {
        col[used] = idx;
        return used++;
    }
    int add_input(int idx) {
        col[used] = -1 - idx;
        return used++;
    }
};

struct JacAccum {
    Eigen::MatrixXd dq_in_dx, dphi_in_dx, dq_out_dx, dphi_out_dx;
    Eigen::MatrixXd dq_in_du, dphi_in_du, dq_out_du, dphi_out_du;
    JacAccum(int n, int nx, int nu)
        : dq_in_dx(Eigen::MatrixXd::Zero(n, nx)),
          dphi_in_dx(Eigen::MatrixXd::Zero(n, nx)),
          dq_out_dx(Eigen::MatrixXd::Zero(n, nx)),
          dphi_out_dx(Eigen::MatrixXd::Zero(n, nx)),
          dq_in_du(Eigen::MatrixXd::Zero(n, nu)),
          dphi_in_du(Eigen::MatrixXd::Zero(n, nu)),
          dq_out_du(Eigen::MatrixXd::Zero(n, nu)),
          dphi_out_du(Eigen::MatrixXd::Zero(n, nu)) {}
};

// double path: plain accumulation
struct ValueSink {
    Accum* acc;
    void in(int seg, const Flux<double>& f, const SlotMap&) {
        acc->q_in[seg] += f.q;
        acc->phi_in[seg] += f.phi;
    }
    void out(int seg, const Flux<double>& f, const SlotMap&) {
        acc->q_out[seg] += f.q;
        acc->phi_out[seg] += f.phi;
    }
};

// dual path: accumulate values and scatter partials
struct JacSink {
    Accum* acc;
    JacAccum* jac;
    void scatter(Eigen::MatrixXd& mx, Eigen::MatrixXd& mu, int seg, const Dual& s,
                 const SlotMap& slots) {
        for (int i = 0; i < slots.used; ++i) {
            const int c = slots.col[i];
            if (c >= 0)
                mx(seg, c) += s.d[i];
            else
                mu(seg, -1 - c) += s.d[i];
        }
    }
    void in(int seg, const Flux<Dual>& f, const SlotMap& slots) {
        acc->q_in[seg] += f.q.v;
        acc->phi_in[seg] += f.phi.v;
        scatter(jac->dq_in_dx, jac->dq_in_du, seg, f.q, slots);
        scatter(jac->dphi_in_dx, jac->dphi_in_du, seg, f.phi, slots);
    }
    void out(int seg, const Flux<Dual>& f, const SlotMap& slots) {
        acc->q_out[seg] += f.q.v;
        acc->phi_out[seg] += f.phi.v;
        scatter(jac->dq_out_dx, jac->dq_out_du, seg, f.q, slots);
        scatter(jac->dphi_out_dx, jac->dphi_out_du, seg, f.phi, slots);
    }
};

template <class S>
S seed_state(const Eigen::VectorXd& x, int idx, SlotMap& slots);
template <>
double seed_state<double>(const Eigen::VectorXd& x, int idx, SlotMap&) {
    return x[idx];
}
template <>
Dual seed_state<Dual>(const Eigen::VectorXd& x, int idx, SlotMap& slots) {
    const int slot = slots.add_state(idx);
    return Dual::seeded(x[idx], slot);
}

template <class S>
S seed_input(const Eigen::VectorXd& u, int idx, SlotMap& slots);
template <>
double seed_input<double>(const Eigen::VectorXd& u, int idx, SlotMap&) {
    return u[idx];
}
template <>
Dual seed_input<Dual>(const Eigen::VectorXd& u, int idx, SlotMap& slots) {
    const int slot = slots.add_input(idx);
    return Dual::seeded(u[idx], slot);
}

template <class S, class Sink>
void evaluate_fluxes(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Topology& topo,
                     const Params& p, const Eigen::VectorXd& caps, Sink sink, Margin m) {
    const int n_main = topo.n_mainline;

    // junction lookup by mainline boundary: boundary b sits between mainline
    // cells b-1 and b (1 <= b <= n_main-1)
    std::vector<int> merge_at(n_main, -1), diverge_at(n_main, -1);
    for (int r = 0; r < static_cast<int>(topo.on_ramps.size()); ++r)
        merge_at[topo.on_ramps[r].attach] = r;  // boundary index == 1-based attach segment
    for (int r = 0; r < static_cast<int>(topo.off_ramps.size()); ++r)
        diverge_at[topo.off_ramps[r].detach] = r;

    auto cell = [&](int seg, SlotMap& slots, S& rho, S& psi) {
        rho = seed_state<S>(x, 2 * seg, slots);
        psi = seed_state<S>(x, 2 * seg + 1, slots);
    };

    // mainline entry
    {
        SlotMap slots;
        S d_in = seed_input<S>(u, Topology::kInMainDemand, slots);
        S w_in = seed_input<S>(u, Topology::kInMainW, slots);
        S rho, psi;
        cell(0, slots, rho, psi);
        auto f = entry_flux_t(d_in, w_in, rho, psi, cap_of(caps, 0), p, m);
        sink.in(0, f, slots);
    }

    // mainline interior boundaries
    for (int b = 1; b < n_main; ++b) {
        const int up = b - 1, down = b;
        if (merge_at[b] >= 0) {
            const int r = merge_at[b];
            const int ramp_cell = topo.onramp_last(r);
            SlotMap slots;
            S rho_u, psi_u, rho_r, psi_r, rho_d, psi_d;
            cell(up, slots, rho_u, psi_u);
            cell(ramp_cell, slots, rho_r, psi_r);
            cell(down, slots, rho_d, psi_d);
            auto f = merge_flux_t(rho_u, psi_u, rho_r, psi_r, rho_d, psi_d,
                                  topo.on_ramps[r].priority, cap_of(caps, up),
                                  cap_of(caps, ramp_cell), cap_of(caps, down), p, m);
            sink.out(up, f.main, slots);
            sink.out(ramp_cell, f.ramp, slots);
            sink.in(down, Flux<S>{f.main.q + f.ramp.q, f.main.phi + f.ramp.phi}, slots);
        } else if (diverge_at[b] >= 0) {
            const int r = diverge_at[b];
            const int ramp_cell = topo.offramp_first(r);
            SlotMap slots;
            S rho_u, psi_u, rho_d, psi_d, rho_r, psi_r;
            cell(up, slots, rho_u, psi_u);
            cell(down, slots, rho_d, psi_d);
            cell(ramp_cell, slots, rho_r, psi_r);
            auto f = diverge_flux_t(rho_u, psi_u, rho_d, psi_d, rho_r, psi_r,
                                    topo.off_ramps[r].split, cap_of(caps, up),
                                    cap_of(caps, down), cap_of(caps, ramp_cell), p, m);
            sink.out(up, Flux<S>{f.q_total, f.q_total * f.w_u}, slots);
            sink.in(down, f.main, slots);
            sink.in(ramp_cell, f.ramp, slots);
        } else {
            SlotMap slots;
            S rho_u, psi_u, rho_d, psi_d;
            cell(up, slots, rho_u, psi_u);
            cell(down, slots, rho_d, psi_d);
            auto f = pair_flux_t(rho_u, psi_u, rho_d, psi_d, cap_of(caps, up),
                                 cap_of(caps, down), p, m);
            sink.out(up, f, slots);
            sink.in(down, f, slots);
        }
    }

    // mainline exit
    {
        SlotMap slots;
        const int last = n_main - 1;
        S rho, psi;
        cell(last, slots, rho, psi);
        S rho_out = seed_input<S>(u, Topology::kInMainRhoOut, slots);
        auto f = exit_flux_t(rho, psi, rho_out, cap_of(caps, last), p, m);
        sink.out(last, f, slots);
    }

    // on-ramp chains: entry + interior (merge handled above)
    for (int r = 0; r < static_cast<int>(topo.on_ramps.size()); ++r) {
        const int first = topo.onramp_first(r);
        {
            SlotMap slots;
            S d_in = seed_input<S>(u, topo.input_onramp_demand(r), slots);
            S w_in = seed_input<S>(u, topo.input_onramp_w(r), slots);
            S rho, psi;
            cell(first, slots, rho, psi);
            auto f = entry_flux_t(d_in, w_in, rho, psi, cap_of(caps, first), p, m);
            sink.in(first, f, slots);
        }
        for (int c = first; c < topo.onramp_last(r); ++c) {
            SlotMap slots;
            S rho_u, psi_u, rho_d, psi_d;
            cell(c, slots, rho_u, psi_u);
            cell(c + 1, slots, rho_d, psi_d);
            auto f = pair_flux_t(rho_u, psi_u, rho_d, psi_d, cap_of(caps, c),
                                 cap_of(caps, c + 1), p, m);
            sink.out(c, f, slots);
            sink.in(c + 1, f, slots);
        }
    }

    // off-ramp chains: interior + exit (diverge handled above)
    for (int r = 0; r < static_cast<int>(topo.off_ramps.size()); ++r) {
        const int first = topo.offramp_first(r);
        const int last = topo.offramp_last(r);
        for (int c = first; c < last; ++c) {
            SlotMap slots;
            S rho_u, psi_u, rho_d, psi_d;
            cell(c, slots, rho_u, psi_u);
            cell(c + 1, slots, rho_d, psi_d);
            auto f = pair_flux_t(rho_u, psi_u, rho_d, psi_d, cap_of(caps, c),
                                 cap_of(caps, c + 1), p, m);
            sink.out(c, f, slots);
            sink.in(c + 1, f, slots);
        }
        {
            SlotMap slots;
            S rho, psi;
            cell(last, slots, rho, psi);
            S rho_out = seed_input<S>(u, topo.input_offramp_rho(r), slots);
            auto f = exit_flux_t(rho, psi, rho_out, cap_of(caps, last), p, m);
            sink.out(last, f, slots);
        }
    }
}

void check_dims(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Topology& topo,
                const Eigen::VectorXd& caps) {
    if (x.size() != topo.state_dim()) throw ConfigError("state dimension mismatch");
    if (u.size() != topo.input_dim()) throw ConfigError("input dimension mismatch");
    if (caps.size() != 0 && caps.size() != topo.total_segments())
        throw ConfigError("speed-cap vector dimension mismatch");
}

}  // namespace

Params Params::from_human(double v_f_kmh, double rho_m_veh_km, double tau_steps, double gamma,
                          double l_km, double T_s) {
    Params p{v_f_kmh, rho_m_veh_km, tau_steps, gamma, l_km, T_s / 3600.0};
    p.validate();
    return p;
}

void Params::validate() const {
    if (!(v_f > 0.0)) throw ConfigError("v_f must be positive");
    if (!(rho_m > 0.0)) throw ConfigError("rho_m must be positive");
    if (!(l > 0.0)) throw ConfigError("segment length must be positive");
    if (!(T > 0.0)) throw ConfigError("time step must be positive");
    if (!(tau > 1.0)) throw ConfigError("tau must exceed one time step");
    if (gamma < 1.0 || gamma > 2.0) throw ConfigError("gamma must lie in [1, 2]");
    if (v_f * T > l + 1e-12) throw ConfigError("CFL violated: v_f * T must not exceed l");
}

void Topology::validate() const {
    if (n_mainline < 3) throw ConfigError("need at least 3 mainline segments");
    std::vector<int> junctions;
    int prev = 0;
    for (const auto& r : on_ramps) {
        if (r.attach <= 1 || r.attach >= n_mainline)
            throw ConfigError("on-ramp attach segment must be strictly interior");
        if (r.attach <= prev) throw ConfigError("on-ramp attach segments must strictly increase");
        prev = r.attach;
        if (r.segments < 1) throw ConfigError("on-ramp needs at least one segment");
        if (!(r.priority > 0.0 && r.priority < 1.0))
            throw ConfigError("merge priority must lie in (0,1)");
        junctions.push_back(r.attach);
    }
    prev = 0;
    for (const auto& r : off_ramps) {
        if (r.detach <= 1 || r.detach >= n_mainline)
            throw ConfigError("off-ramp detach segment must be strictly interior");
        if (r.detach <= prev) throw ConfigError("off-ramp detach segments must strictly increase");
        prev = r.detach;
        if (r.segments < 1) throw ConfigError("off-ramp needs at least one segment");
        if (!(r.split >= 0.0 && r.split < 1.0))
            throw ConfigError("split ratio must lie in [0,1)");
        junctions.push_back(r.detach);
    }
    std::sort(junctions.begin(), junctions.end());
    if (std::adjacent_find(junctions.begin(), junctions.end()) != junctions.end())
        throw ConfigError("two junctions share a mainline segment");
}

int Topology::onramp_cells() const {
    int n = 0;
    for (const auto& r : on_ramps) n += r.segments;
    return n;
}

int Topology::offramp_cells() const {
    int n = 0;
    for (const auto& r : off_ramps) n += r.segments;
    return n;
}

int Topology::onramp_first(int r) const {
    int idx = n_mainline;
    for (int i = 0; i < r; ++i) idx += on_ramps[i].segments;
    return idx;
}

int Topology::offramp_first(int r) const {
    int idx = n_mainline + onramp_cells();
    for (int i = 0; i < r; ++i) idx += off_ramps[i].segments;
    return idx;
}

std::vector<int> Topology::output_segments() const {
    std::vector<int> out{n_mainline - 1};
    for (int r = 0; r < static_cast<int>(off_ramps.size()); ++r) out.push_back(offramp_last(r));
    return out;
}

Eigen::VectorXd state_min(const Topology& topo) {
    return Eigen::VectorXd::Zero(topo.state_dim());
}

Eigen::VectorXd state_max(const Topology& topo, const Params& p) {
    Eigen::VectorXd hi(topo.state_dim());
    for (int s = 0; s < topo.total_segments(); ++s) {
        hi[2 * s] = p.rho_m;
        hi[2 * s + 1] = p.rho_m * p.v_f;
    }
    return hi;
}

double pressure(double rho, const Params& p) {
    if (rho < -kDomainTol || rho > p.rho_m + kDomainTol)
        throw NumericalError("pressure: density outside [0, rho_m]");
    return pressure_t(clamp(rho, 0.0, p.rho_m), p);
}

double pressure_deriv(double rho, const Params& p) {
    if (rho < -kDomainTol || rho > p.rho_m + kDomainTol)
        throw NumericalError("pressure_deriv: density outside [0, rho_m]");
    const double r = clamp(rho, 0.0, p.rho_m);
    if (r <= 0.0) return p.gamma > 1.0 ? 0.0 : p.v_f / p.rho_m;
    return p.v_f * p.gamma * std::pow(r / p.rho_m, p.gamma - 1.0) / p.rho_m;
}

double equilibrium_speed(double rho, const Params& p) { return p.v_f - pressure(rho, p); }

double speed_from_state(double rho, double psi, const Params& p) {
    if (rho <= kRhoFloor) throw NumericalError("speed_from_state: degenerate density");
    return psi / rho - pressure(rho, p);
}

double speed_or_freeflow(double rho, double psi, const Params& p) {
    return speed_t(rho, psi, p, Margin{});
}

double measured_speed(double rho, double psi, const Params& p) {
    return clamp(speed_t(rho, psi, p, Margin{}), 0.0, p.v_f);
}

double critical_density(double w, const Params& p) {
    return critical_density_t(w, p, Margin{});
}

double critical_flux(double w, const Params& p) { return critical_flux_t(w, p, Margin{}); }

double demand(double rho, double w, const Params& p) {
    if (rho < -kDomainTol || rho > p.rho_m + kDomainTol)
        throw NumericalError("demand: density outside [0, rho_m]");
    return demand_t(clamp(rho, 0.0, p.rho_m), w, p, Margin{});
}

double supply(double rho_star, double w_up, const Params& p) {
    return supply_t(rho_star, w_up, p, Margin{});
}

double intermediate_density(double w_up, double v_down, const Params& p) {
    return intermediate_density_t(w_up, v_down, p, Margin{});
}

FluxValue interface_flux(CellState up, CellState down, const Params& p) {
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    auto f = pair_flux_t(up.rho, up.psi, down.rho, down.psi, nan, nan, p, Margin{});
    return {f.q, f.phi};
}

Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Topology& topo,
                     const Params& p, const Eigen::VectorXd& caps) {
    check_dims(x, u, topo, caps);
    const int n = topo.total_segments();
    Accum acc(n);
    evaluate_fluxes<double>(x, u, topo, p, caps, ValueSink{&acc}, Margin{});

    const double a = p.T / p.l;
    const double keep = (p.tau - 1.0) / p.tau;
    const double relax = p.v_f / p.tau;
    Eigen::VectorXd next(2 * n);
    for (int s = 0; s < n; ++s) {
        const double rho = x[2 * s], psi = x[2 * s + 1];
        next[2 * s] = clamp(rho + a * (acc.q_in[s] - acc.q_out[s]), 0.0, p.rho_m);
        next[2 * s + 1] = clamp(keep * psi + a * (acc.phi_in[s] - acc.phi_out[s]) + relax * rho,
                                0.0, p.rho_m * p.v_f);
    }
    return next;
}

Linearization linearize(const Eigen::VectorXd& x0, const Eigen::VectorXd& u0,
                        const Topology& topo, const Params& p, const Eigen::VectorXd& caps) {
    check_dims(x0, u0, topo, caps);
    const int n = topo.total_segments();
    const int nx = topo.state_dim(), nu = topo.input_dim();
    Accum acc(n);
    JacAccum jac(n, nx, nu);
    evaluate_fluxes<Dual>(x0, u0, topo, p, caps, JacSink{&acc, &jac}, Margin{});

    const double a = p.T / p.l;
    const double keep = (p.tau - 1.0) / p.tau;
    const double relax = p.v_f / p.tau;

    Linearization lin;
    lin.A = Eigen::MatrixXd::Zero(nx, nx);
    lin.B = Eigen::MatrixXd::Zero(nx, nu);
    lin.c1 = Eigen::VectorXd::Zero(nx);

    for (int s = 0; s < n; ++s) {
        const double rho = x0[2 * s], psi = x0[2 * s + 1];
        const double rho_raw = rho + a * (acc.q_in[s] - acc.q_out[s]);
        const double psi_raw = keep * psi + a * (acc.phi_in[s] - acc.phi_out[s]) + relax * rho;

        if (rho_raw >= 0.0 && rho_raw <= p.rho_m) {
            lin.A.row(2 * s) = a * (jac.dq_in_dx.row(s) - jac.dq_out_dx.row(s));
            lin.A(2 * s, 2 * s) += 1.0;
            lin.B.row(2 * s) = a * (jac.dq_in_du.row(s) - jac.dq_out_du.row(s));
        }
        if (psi_raw >= 0.0 && psi_raw <= p.rho_m * p.v_f) {
            lin.A.row(2 * s + 1) = a * (jac.dphi_in_dx.row(s) - jac.dphi_out_dx.row(s));
            lin.A(2 * s + 1, 2 * s + 1) += keep;
            lin.A(2 * s + 1, 2 * s) += relax;
            lin.B.row(2 * s + 1) = a * (jac.dphi_in_du.row(s) - jac.dphi_out_du.row(s));
        }
    }

    Eigen::VectorXd fx = step(x0, u0, topo, p, caps);
    lin.c1 = fx - lin.A * x0 - lin.B * u0;
    return lin;
}

double branch_margin(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Topology& topo,
                     const Params& p, const Eigen::VectorXd& caps) {
    check_dims(x, u, topo, caps);
    const int n = topo.total_segments();
    double margin = std::numeric_limits<double>::infinity();
    Accum acc(n);
    evaluate_fluxes<double>(x, u, topo, p, caps, ValueSink{&acc}, Margin{&margin});

    // distance of each raw update to the clamp boundaries
    const double a = p.T / p.l;
    const double keep = (p.tau - 1.0) / p.tau;
    const double relax = p.v_f / p.tau;
    for (int s = 0; s < n; ++s) {
        const double rho_raw = x[2 * s] + a * (acc.q_in[s] - acc.q_out[s]);
        const double psi_raw =
            keep * x[2 * s + 1] + a * (acc.phi_in[s] - acc.phi_out[s]) + relax * x[2 * s];
        margin = std::min(margin, std::abs(rho_raw) / p.rho_m);
        margin = std::min(margin, std::abs(p.rho_m - rho_raw) / p.rho_m);
        margin = std::min(margin, std::abs(psi_raw) / (p.rho_m * p.v_f));
        margin = std::min(margin, std::abs(p.rho_m * p.v_f - psi_raw) / (p.rho_m * p.v_f));
    }
    return margin;
}

Eigen::VectorXd step_ring(const Eigen::VectorXd& x, int n_segments, const Params& p) {
    if (x.size() != 2 * n_segments) throw ConfigError("ring state dimension mismatch");
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd q(n_segments), phi(n_segments);  // outflow of cell i into i+1
    for (int i = 0; i < n_segments; ++i) {
        const int j = (i + 1) % n_segments;
        auto f = pair_flux_t(x[2 * i], x[2 * i + 1], x[2 * j], x[2 * j + 1], nan, nan, p,
                             Margin{});
        q[i] = f.q;
        phi[i] = f.phi;
    }
    const double a = p.T / p.l;
    const double keep = (p.tau - 1.0) / p.tau;
    const double relax = p.v_f / p.tau;
    Eigen::VectorXd next(2 * n_segments);
    for (int i = 0; i < n_segments; ++i) {
        const int prev = (i + n_segments - 1) % n_segments;
        next[2 * i] = clamp(x[2 * i] + a * (q[prev] - q[i]), 0.0, p.rho_m);
        next[2 * i + 1] = clamp(keep * x[2 * i + 1] + a * (phi[prev] - phi[i]) + relax * x[2 * i],
                                0.0, p.rho_m * p.v_f);
    }
    return next;
}

double equilibrium_density_for_flux(double flux, const Params& p) {
    if (flux <= 0.0) return 0.0;
    const double sigma = critical_density(p.v_f, p);
    if (flux >= critical_flux(p.v_f, p)) return sigma;
    double lo = 0.0, hi = sigma;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mid * (p.v_f - pressure_t(mid, p)) < flux ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Eigen::VectorXd equilibrium_state(const Topology& topo, const Params& p, double mainline_demand,
                                  const std::vector<double>& onramp_demands) {
    if (onramp_demands.size() != topo.on_ramps.size())
        throw ConfigError("equilibrium_state: one demand per on-ramp required");
    Eigen::VectorXd x = Eigen::VectorXd::Zero(topo.state_dim());
    auto fill = [&](int first, int count, double flux) {
        const double rho = equilibrium_density_for_flux(flux, p);
        for (int c = first; c < first + count; ++c) {
            x[2 * c] = rho;
            x[2 * c + 1] = rho * p.v_f;  // equilibrium: w = v + p(rho) = v_f
        }
    };
    fill(0, topo.n_mainline, mainline_demand);
    for (int r = 0; r < static_cast<int>(topo.on_ramps.size()); ++r)
        fill(topo.onramp_first(r), topo.on_ramps[r].segments, onramp_demands[r]);
    for (int r = 0; r < static_cast<int>(topo.off_ramps.size()); ++r)
        fill(topo.offramp_first(r), topo.off_ramps[r].segments,
             topo.off_ramps[r].split * mainline_demand);
    return x;
}

}  // namespace tse::arz
