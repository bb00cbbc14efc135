#ifndef TSE_ARZ_HPP
#define TSE_ARZ_HPP

#include <Eigen/Dense>
#include <vector>

#include "tse/common.hpp"

namespace tse::arz {

// Densities at or below this value are treated as an empty cell: the driver
// characteristic w and the speed v fall back to the free-flow speed.
inline constexpr double kRhoFloor = 1e-6;  // veh/km

// Model parameters in internal units (veh/km, km/h, hours).
struct Params {
    double v_f;    // free-flow speed [km/h]
    double rho_m;  // jam density [veh/km]
    double tau;    // relaxation constant [time steps]
    double gamma;  // pressure exponent
    double l;      // segment length [km]
    double T;      // time step [h]

    // Builds from the human-facing units used in scenario files.
    static Params from_human(double v_f_kmh, double rho_m_veh_km, double tau_steps,
                             double gamma, double l_km, double T_s);

    void validate() const;  // throws ConfigError, including on CFL violation

    double cfl_number() const { return v_f * T / l; }
    double psi_max() const { return rho_m * v_f; }
};

struct OnRamp {
    int attach;      // 1-based mainline segment; junction at its downstream boundary
    int segments;    // ramp cell count
    double priority; // mainline share of downstream supply when merge is congested
};

struct OffRamp {
    int detach;      // 1-based mainline segment; junction at its downstream boundary
    int segments;    // ramp cell count
    double split;    // fraction of the diverging flow sent to the ramp
};

// Segment layout: mainline cells first, then every on-ramp's cells in listing
// order, then every off-ramp's cells. State x stacks (rho, psi) per cell in
// that order; inputs are [D_in, w_in, rho_out, (D_r, w_r) per on-ramp,
// rho_out_r per off-ramp].
struct Topology {
    int n_mainline = 0;
    std::vector<OnRamp> on_ramps;
    std::vector<OffRamp> off_ramps;

    void validate() const;  // throws ConfigError

    int onramp_cells() const;
    int offramp_cells() const;
    int total_segments() const { return n_mainline + onramp_cells() + offramp_cells(); }
    int state_dim() const { return 2 * total_segments(); }
    int input_dim() const {
        return 3 + 2 * static_cast<int>(on_ramps.size()) + static_cast<int>(off_ramps.size());
    }

    // global index of the first cell of ramp r
    int onramp_first(int r) const;
    int offramp_first(int r) const;
    int onramp_last(int r) const { return onramp_first(r) + on_ramps[r].segments - 1; }
    int offramp_last(int r) const { return offramp_first(r) + off_ramps[r].segments - 1; }

    // input vector layout
    static constexpr int kInMainDemand = 0;
    static constexpr int kInMainW = 1;
    static constexpr int kInMainRhoOut = 2;
    int input_onramp_demand(int r) const { return 3 + 2 * r; }
    int input_onramp_w(int r) const { return 4 + 2 * r; }
    int input_offramp_rho(int r) const { return 3 + 2 * static_cast<int>(on_ramps.size()) + r; }

    // segments whose outflow leaves the network: mainline exit + off-ramp exits
    std::vector<int> output_segments() const;
};

Eigen::VectorXd state_min(const Topology& topo);
Eigen::VectorXd state_max(const Topology& topo, const Params& p);

// --- scalar pieces of the Godunov closure ---

// p(rho) = v_f (rho/rho_m)^gamma. Domain-checked to [0, rho_m] within 1e-9.
double pressure(double rho, const Params& p);
double pressure_deriv(double rho, const Params& p);

// V_e(rho) = v_f (1 - (rho/rho_m)^gamma)
double equilibrium_speed(double rho, const Params& p);

// v = psi/rho - p(rho). Throws NumericalError at or below the density floor.
double speed_from_state(double rho, double psi, const Params& p);
// Same, but applies the floor rule (returns v_f) instead of throwing.
double speed_or_freeflow(double rho, double psi, const Params& p);
// Speed as a sensor or report would state it: floor rule plus capping to
// [0, v_f]. A box-admissible (rho, psi) pair does not bound psi/rho, so raw
// conversions of sparse cells can exceed any physical speed.
double measured_speed(double rho, double psi, const Params& p);

// critical density sigma(w) = rho_m (w / ((gamma+1) v_f))^(1/gamma), clamped
double critical_density(double w, const Params& p);
// flux at the critical density, sigma(w) (w - p(sigma(w)))
double critical_flux(double w, const Params& p);

// sending capacity of a cell at density rho with characteristic w
double demand(double rho, double w, const Params& p);
// receiving capacity given the Riemann intermediate density rho_star
double supply(double rho_star, double w_up, const Params& p);
// rho* solving w_up - p(rho*) = v_down, clamped to [0, rho_m]
double intermediate_density(double w_up, double v_down, const Params& p);

struct CellState {
    double rho, psi;
};
struct FluxValue {
    double q, phi;  // traffic flow [veh/h], relative flux [veh.km/h^2]
};

// Godunov flux across an interior interface, q = min(demand, supply), phi = q w_up.
FluxValue interface_flux(CellState up, CellState down, const Params& p);

// --- full-network step ---

// caps: optional per-segment speed cap [km/h] (incident modeling); empty or
// NaN entries mean uncapped. Applies to the capped cell both as sender
// (w limited to cap + p(rho)) and as receiver (perceived speed limited to cap).
Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     const Topology& topo, const Params& p,
                     const Eigen::VectorXd& caps = Eigen::VectorXd());

struct Linearization {
    Eigen::MatrixXd A;   // d step / d x
    Eigen::MatrixXd B;   // d step / d u
    Eigen::VectorXd c1;  // step(x0,u0) - A x0 - B u0
};

// First-order expansion of step() about (x0, u0). Piecewise branches take the
// evaluated side; min ties take the demand branch, saturated clamps and floors
// carry zero derivative.
Linearization linearize(const Eigen::VectorXd& x0, const Eigen::VectorXd& u0,
                        const Topology& topo, const Params& p,
                        const Eigen::VectorXd& caps = Eigen::VectorXd());

// Minimum normalized distance from (x,u) to any derivative discontinuity of
// step(): min-branch ties, supply floor, rho* clamps, density floor, junction
// branch switches and state clamping. Used to screen finite-difference probes.
double branch_margin(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     const Topology& topo, const Params& p,
                     const Eigen::VectorXd& caps = Eigen::VectorXd());

// Periodic ring of n identical cells, no ramps or boundary inputs. Used for
// conservation and equilibrium checks.
Eigen::VectorXd step_ring(const Eigen::VectorXd& x, int n_segments, const Params& p);

// Density of the free-flow equilibrium carrying the given flux (w = v_f),
// obtained by bisection on rho (v_f - p(rho)); saturates at the critical
// density when the flux exceeds capacity.
double equilibrium_density_for_flux(double flux, const Params& p);

// Uniform equilibrium state: every cell of every branch at the density that
// carries its entry demand under w = v_f.
Eigen::VectorXd equilibrium_state(const Topology& topo, const Params& p,
                                  double mainline_demand,
                                  const std::vector<double>& onramp_demands);

}  // namespace tse::arz

#endif
