#ifndef TSE_ESTIMATORS_HPP
#define TSE_ESTIMATORS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "tse/qp.hpp"
#include "tse/rng.hpp"

namespace tse::est {

struct Linearized {
    Eigen::MatrixXd A, B;
    Eigen::VectorXd c;
};

// Time-varying nonlinear process model with box bounds on the state.
struct StepModel {
    int nx = 0;
    Eigen::VectorXd x_min, x_max;
    // lower bound for UKF sigma points (strictly positive floor for densities)
    Eigen::VectorXd sigma_lower;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&, int)> f;
    std::function<Linearized(const Eigen::VectorXd&, const Eigen::VectorXd&, int)> df;

    Eigen::VectorXd clamp_state(const Eigen::VectorXd& x) const {
        return x.cwiseMax(x_min).cwiseMin(x_max);
    }
};

// One time step's measurement: observed vector, per-row noise variance, and
// the (possibly nonlinear) observation map with its Jacobian.
struct MeasModel {
    Eigen::VectorXd y;
    Eigen::VectorXd r_diag;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> H;
    // physical range of each measured quantity; empty means unbounded.
    // Sample-based filters clamp predicted measurements to this range so
    // that near-degenerate states cannot blow up the innovation statistics.
    Eigen::VectorXd z_min, z_max;

    int rows() const { return static_cast<int>(y.size()); }
    Eigen::VectorXd clamp_z(Eigen::VectorXd z) const {
        if (z_min.size() == z.size()) z = z.cwiseMax(z_min);
        if (z_max.size() == z.size()) z = z.cwiseMin(z_max);
        return z;
    }
};

class Ekf {
  public:
    Ekf(StepModel model, double q, double p0);

    void set_state(const Eigen::VectorXd& x0);
    // predict with u = u[k-1], then update with the measurement at k (may be null/empty)
    void step(const Eigen::VectorXd& u, int k, const MeasModel* meas);

    const Eigen::VectorXd& estimate() const { return x_; }
    const Eigen::MatrixXd& covariance() const { return P_; }
    int regularization_count() const { return regularized_; }

  private:
    StepModel model_;
    double q_;
    Eigen::VectorXd x_;
    Eigen::MatrixXd P_;
    int regularized_ = 0;
};

struct UkfParams {
    double alpha = 0.1;
    double kappa = -4.0;
    double beta = 2.0;
};

class Ukf {
  public:
    Ukf(StepModel model, UkfParams params, double q, double p0);

    void set_state(const Eigen::VectorXd& x0);
    void step(const Eigen::VectorXd& u, int k, const MeasModel* meas);

    const Eigen::VectorXd& estimate() const { return x_; }
    const Eigen::MatrixXd& covariance() const { return P_; }
    int repair_count() const { return repairs_; }

    double lambda() const { return lambda_; }
    double weight_mean0() const { return wm0_; }

  private:
    Eigen::MatrixXd sigma_points(const Eigen::VectorXd& mean,
                                 const Eigen::MatrixXd& cov) const;  // jitter retry inside

    StepModel model_;
    UkfParams up_;
    double q_;
    double lambda_, wm0_, wc0_, wi_;
    Eigen::VectorXd x_;
    Eigen::MatrixXd P_;
    int repairs_ = 0;
};

class Enkf {
  public:
    Enkf(StepModel model, int members, double q, double p0, std::uint64_t seed);

    void set_state(const Eigen::VectorXd& x0);  // re-draws the ensemble around x0
    void step(const Eigen::VectorXd& u, int k, const MeasModel* meas);

    const Eigen::VectorXd& estimate() const { return mean_; }
    const Eigen::MatrixXd& ensemble() const { return members_; }
    int reinflation_count() const { return reinflated_; }

  private:
    void refresh_mean();

    StepModel model_;
    int m_;
    double q_, p0_;
    GaussianStream rng_;
    Eigen::MatrixXd members_;  // nx x m
    Eigen::VectorXd mean_;
    int reinflated_ = 0;
};

struct MheConfig {
    int horizon = 10;       // N
    double mu = 0.0;        // arrival weight; 0 -> 1/p0
    double w1 = 0.0;        // measurement weight; 0 -> per-row inverse variance
    double w2 = 0.0;        // model weight; 0 -> 1/q
    double q = 1e-2;        // for the w2 default
    double p0 = 1e-3;       // for the mu default
    qp::SolveOptions qp_opts{};
};

// Linearized moving-horizon estimator. Each step rebuilds the window QP
// around the previous window solution (mean of the previous solution for the
// newest index) and solves it with the banded box-QP solver. Steps before a
// full window use a growing horizon anchored at the initial state.
class Mhe {
  public:
    Mhe(StepModel model, MheConfig cfg);

    void set_state(const Eigen::VectorXd& x0);
    // u = u[k-1]; meas = measurement at time k (empty rows allowed)
    void step(const Eigen::VectorXd& u, int k, const MeasModel* meas);

    const Eigen::VectorXd& estimate() const { return x_; }
    const std::vector<Eigen::VectorXd>& window_solution() const { return solution_; }

    int qp_failure_count() const { return qp_failures_; }
    int hessian_pd_failures() const { return h_pd_failures_; }
    // objective of the last QP at its solution and at the shifted warm start
    double last_objective() const { return last_objective_; }
    double last_warmstart_objective() const { return last_warm_objective_; }

  private:
    struct Stage {
        Eigen::VectorXd u_in;  // input that drove the transition into this time
        MeasModel meas;        // measurement at this time
    };

    StepModel model_;
    MheConfig cfg_;
    Eigen::VectorXd x_;
    Eigen::VectorXd x0_anchor_;
    std::deque<Stage> window_;          // stages k-N .. k
    std::vector<Eigen::VectorXd> solution_;  // previous window solution
    int qp_failures_ = 0;
    int h_pd_failures_ = 0;
    double last_objective_ = 0.0;
    double last_warm_objective_ = 0.0;
};

}  // namespace tse::est

#endif
