#include "tse/estimators.hpp"

#include <cmath>
#include <iostream>

namespace tse::est {

namespace {

void symmetrize(Eigen::MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

// Clamp negative eigenvalues to zero; returns true if a repair was needed.
bool psd_repair(Eigen::MatrixXd& P) {
    symmetrize(P);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
    const double floor = -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() >= floor) return false;
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    symmetrize(P);
    return true;
}

}  // namespace

// ---------------------------------------------------------------- EKF

Ekf::Ekf(StepModel model, double q, double p0) : model_(std::move(model)), q_(q) {
    x_ = Eigen::VectorXd::Zero(model_.nx);
    P_ = p0 * Eigen::MatrixXd::Identity(model_.nx, model_.nx);
}

void Ekf::set_state(const Eigen::VectorXd& x0) { x_ = model_.clamp_state(x0); }

void Ekf::step(const Eigen::VectorXd& u, int k, const MeasModel* meas) {
    const Linearized lin = model_.df(x_, u, k - 1);
    Eigen::VectorXd x_pred = model_.f(x_, u, k - 1);
    P_ = lin.A * P_ * lin.A.transpose();
    P_.diagonal().array() += q_;
    symmetrize(P_);

    if (meas && meas->rows() > 0) {
        const Eigen::MatrixXd H = meas->H(x_pred);
        const Eigen::VectorXd innov = meas->y - meas->h(x_pred);
        Eigen::MatrixXd S = H * P_ * H.transpose();
        S.diagonal() += meas->r_diag;

        Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
        const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * dmax) {
            S.diagonal().array() += 1e-9;
            ldlt.compute(S);
            ++regularized_;
        }
        const Eigen::MatrixXd K = ldlt.solve(H * P_).transpose();
        x_pred += K * innov;
        const Eigen::MatrixXd IKH =
            Eigen::MatrixXd::Identity(model_.nx, model_.nx) - K * H;
        P_ = IKH * P_ * IKH.transpose() + K * meas->r_diag.asDiagonal() * K.transpose();
        symmetrize(P_);
    }
    x_ = model_.clamp_state(x_pred);
}

// ---------------------------------------------------------------- UKF

Ukf::Ukf(StepModel model, UkfParams params, double q, double p0)
    : model_(std::move(model)), up_(params), q_(q) {
    const double n = model_.nx;
    lambda_ = up_.alpha * up_.alpha * (n + up_.kappa) - n;
    if (!(n + lambda_ > 0.0))
        throw ConfigError("UKF: alpha^2 (n + kappa) must be positive");
    wm0_ = lambda_ / (n + lambda_);
    wc0_ = wm0_ + (1.0 - up_.alpha * up_.alpha + up_.beta);
    wi_ = 0.5 / (n + lambda_);
    x_ = Eigen::VectorXd::Zero(model_.nx);
    P_ = p0 * Eigen::MatrixXd::Identity(model_.nx, model_.nx);
    if (model_.sigma_lower.size() == 0) model_.sigma_lower = model_.x_min;
}

void Ukf::set_state(const Eigen::VectorXd& x0) { x_ = model_.clamp_state(x0); }

Eigen::MatrixXd Ukf::sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) const {
    const int n = model_.nx;
    Eigen::MatrixXd scaled = (n + lambda_) * cov;
    Eigen::LLT<Eigen::MatrixXd> llt(scaled);
    if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().allFinite()) {
        const double jitter = 1e-9 + 1e-12 * scaled.diagonal().cwiseAbs().maxCoeff();
        scaled.diagonal().array() += (n + lambda_) * jitter;
        llt.compute(scaled);
        if (llt.info() != Eigen::Success)
            throw NumericalError("UKF: covariance square root failed after jitter");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    // Bound every sigma point inside [sigma_lower, x_max]. Each +/- pair is
    // scaled by its largest feasible factor rather than clamped coordinate-
    // wise: the pairs stay symmetric about the centre, which the strongly
    // negative centre weight requires for a sane recombination.
    const Eigen::VectorXd centre =
        mean.cwiseMax(model_.sigma_lower).cwiseMin(model_.x_max);
    Eigen::MatrixXd chi(n, 2 * n + 1);
    chi.col(0) = centre;
    for (int i = 0; i < n; ++i) {
        double alpha = 1.0;
        for (int j = 0; j < n; ++j) {
            const double lij = std::abs(L(j, i));
            if (lij == 0.0) continue;
            const double room =
                std::min(model_.x_max[j] - centre[j], centre[j] - model_.sigma_lower[j]);
            alpha = std::min(alpha, std::max(room, 0.0) / lij);
        }
        chi.col(1 + i) = centre + alpha * L.col(i);
        chi.col(1 + n + i) = centre - alpha * L.col(i);
    }
    return chi;
}

void Ukf::step(const Eigen::VectorXd& u, int k, const MeasModel* meas) {
    const int n = model_.nx;
    const int ns = 2 * n + 1;
    Eigen::MatrixXd chi = sigma_points(x_, P_);

    Eigen::MatrixXd prop(n, ns);
    for (int c = 0; c < ns; ++c) prop.col(c) = model_.f(chi.col(c), u, k - 1);

    Eigen::VectorXd x_pred = wm0_ * prop.col(0);
    for (int c = 1; c < ns; ++c) x_pred += wi_ * prop.col(c);

    Eigen::MatrixXd P_pred = Eigen::MatrixXd::Zero(n, n);
    {
        const Eigen::VectorXd d0 = prop.col(0) - x_pred;
        P_pred += wc0_ * d0 * d0.transpose();
        for (int c = 1; c < ns; ++c) {
            const Eigen::VectorXd d = prop.col(c) - x_pred;
            P_pred += wi_ * d * d.transpose();
        }
    }
    P_pred.diagonal().array() += q_;

    if (meas && meas->rows() > 0) {
        // redraw around the predicted moments so the process noise reaches
        // the measurement statistics
        if (psd_repair(P_pred)) ++repairs_;
        x_pred = model_.clamp_state(x_pred);
        const Eigen::MatrixXd chi2 = sigma_points(x_pred, P_pred);

        const int nz = meas->rows();
        Eigen::MatrixXd Z(nz, ns);
        for (int c = 0; c < ns; ++c) Z.col(c) = meas->clamp_z(meas->h(chi2.col(c)));
        Eigen::VectorXd x_mean = wm0_ * chi2.col(0);
        Eigen::VectorXd z_pred = wm0_ * Z.col(0);
        for (int c = 1; c < ns; ++c) {
            x_mean += wi_ * chi2.col(c);
            z_pred += wi_ * Z.col(c);
        }

        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nz, nz);
        Eigen::MatrixXd Pxz = Eigen::MatrixXd::Zero(n, nz);
        {
            const Eigen::VectorXd dz0 = Z.col(0) - z_pred;
            const Eigen::VectorXd dx0 = chi2.col(0) - x_mean;
            S += wc0_ * dz0 * dz0.transpose();
            Pxz += wc0_ * dx0 * dz0.transpose();
            for (int c = 1; c < ns; ++c) {
                const Eigen::VectorXd dz = Z.col(c) - z_pred;
                const Eigen::VectorXd dx = chi2.col(c) - x_mean;
                S += wi_ * dz * dz.transpose();
                Pxz += wi_ * dx * dz.transpose();
            }
        }
        // the negative centre weight can push the statistical part of S off
        // the PSD cone near strong curvature; project before adding R
        if (psd_repair(S)) ++repairs_;
        S.diagonal() += meas->r_diag;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
        const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * dmax) {
            S.diagonal().array() += 1e-9;
            ldlt.compute(S);
        }
        const Eigen::MatrixXd K = ldlt.solve(Pxz.transpose()).transpose();
        x_pred += K * (meas->y - z_pred);
        P_pred -= K * S * K.transpose();
    }

    if (psd_repair(P_pred)) ++repairs_;
    P_ = P_pred;
    x_ = model_.clamp_state(x_pred);
}

// ---------------------------------------------------------------- EnKF

Enkf::Enkf(StepModel model, int members, double q, double p0, std::uint64_t seed)
    : model_(std::move(model)), m_(members), q_(q), p0_(p0), rng_(seed) {
    if (m_ < 2) throw ConfigError("EnKF needs at least 2 ensemble members");
    members_ = Eigen::MatrixXd::Zero(model_.nx, m_);
    mean_ = Eigen::VectorXd::Zero(model_.nx);
}

void Enkf::set_state(const Eigen::VectorXd& x0) {
    const double s = std::sqrt(p0_);
    for (int j = 0; j < m_; ++j) {
        Eigen::VectorXd v = x0;
        for (int i = 0; i < model_.nx; ++i) v[i] += s * rng_.next();
        members_.col(j) = model_.clamp_state(v);
    }
    refresh_mean();
}

void Enkf::refresh_mean() { mean_ = model_.clamp_state(members_.rowwise().mean()); }

void Enkf::step(const Eigen::VectorXd& u, int k, const MeasModel* meas) {
    const double sq = std::sqrt(q_);
    for (int j = 0; j < m_; ++j) {
        Eigen::VectorXd v = model_.f(members_.col(j), u, k - 1);
        for (int i = 0; i < model_.nx; ++i) v[i] += sq * rng_.next();
        members_.col(j) = model_.clamp_state(v);
    }

    // ensemble collapse guard
    Eigen::VectorXd mu = members_.rowwise().mean();
    if ((members_.colwise() - mu).cwiseAbs().maxCoeff() < 1e-12) {
        for (int j = 0; j < m_; ++j) {
            Eigen::VectorXd v = members_.col(j);
            for (int i = 0; i < model_.nx; ++i) v[i] += sq * rng_.next();
            members_.col(j) = model_.clamp_state(v);
        }
        mu = members_.rowwise().mean();
        ++reinflated_;
    }

    if (meas && meas->rows() > 0) {
        const int nz = meas->rows();
        Eigen::MatrixXd Z(nz, m_);
        for (int j = 0; j < m_; ++j) Z.col(j) = meas->clamp_z(meas->h(members_.col(j)));
        const Eigen::VectorXd z_mean = Z.rowwise().mean();

        const Eigen::MatrixXd Ax = members_.colwise() - mu;
        const Eigen::MatrixXd Az = Z.colwise() - z_mean;
        Eigen::MatrixXd Pzz = Az * Az.transpose() / (m_ - 1.0);
        Pzz.diagonal() += meas->r_diag;
        const Eigen::MatrixXd Pxz = Ax * Az.transpose() / (m_ - 1.0);

        Eigen::LDLT<Eigen::MatrixXd> ldlt(Pzz);
        const Eigen::MatrixXd K = ldlt.solve(Pxz.transpose()).transpose();

        // perturbed observations
        for (int j = 0; j < m_; ++j) {
            Eigen::VectorXd yj = meas->y;
            for (int r = 0; r < nz; ++r) yj[r] += std::sqrt(meas->r_diag[r]) * rng_.next();
            members_.col(j) =
                model_.clamp_state(members_.col(j) + K * (yj - Z.col(j)));
        }
    }
    refresh_mean();
}

// ---------------------------------------------------------------- MHE

Mhe::Mhe(StepModel model, MheConfig cfg) : model_(std::move(model)), cfg_(cfg) {
    if (cfg_.horizon < 1) throw ConfigError("MHE horizon must be at least 1");
    if (cfg_.mu <= 0.0) cfg_.mu = 1.0 / cfg_.p0;
    if (cfg_.w2 <= 0.0) cfg_.w2 = 1.0 / cfg_.q;
    x_ = Eigen::VectorXd::Zero(model_.nx);
}

void Mhe::set_state(const Eigen::VectorXd& x0) {
    x_ = model_.clamp_state(x0);
    x0_anchor_ = x_;
    window_.clear();
    window_.push_back(Stage{Eigen::VectorXd(), MeasModel{}});  // time 0, no arrival input
    solution_.clear();
    solution_.push_back(x_);
}

void Mhe::step(const Eigen::VectorXd& u, int k, const MeasModel* meas) {
    const int nx = model_.nx;
    MeasModel m;
    if (meas) m = *meas;

    // Stage at time t stores the input u[t-1] that drove the transition into
    // t, plus the measurement taken at t. Window covers times [t0 .. k].
    window_.push_back(Stage{u, std::move(m)});

    // Arrival anchor: the initial state while the window still reaches back
    // to time 0; once the oldest stage drops off, the model prediction from
    // the previous window's oldest solved state.
    Eigen::VectorXd anchor;
    if (static_cast<int>(window_.size()) > cfg_.horizon + 1) {
        const Eigen::VectorXd dropped = solution_.front();  // state at the dropped time
        window_.pop_front();
        const int t0 = k - static_cast<int>(window_.size()) + 1;
        anchor = model_.clamp_state(model_.f(dropped, window_.front().u_in, t0 - 1));
    } else {
        anchor = x0_anchor_;
    }

    const int stages = static_cast<int>(window_.size());
    const int t0 = k - stages + 1;

    // linearization points: previous solution where it covers the time, mean
    // of the previous solution for the newest stage
    Eigen::VectorXd x_o = Eigen::VectorXd::Zero(nx);
    for (const auto& s : solution_) x_o += s;
    x_o /= static_cast<double>(solution_.size());
    x_o = model_.clamp_state(x_o);

    const int prev_t0 = (k - 1) - static_cast<int>(solution_.size()) + 1;
    std::vector<Eigen::VectorXd> lin(stages);
    for (int j = 0; j < stages; ++j) {
        const int pi = (t0 + j) - prev_t0;
        if (pi >= 0 && pi < static_cast<int>(solution_.size()))
            lin[j] = solution_[pi];
        else
            lin[j] = x_o;
    }

    // assemble the QP
    const int dim = stages * nx;
    const int kb = std::min(dim - 1, 2 * nx - 1);
    qp::BoxQP qp;
    qp.H = qp::BandMatrix(dim, kb);
    qp.q = Eigen::VectorXd::Zero(dim);
    qp.z_min.resize(dim);
    qp.z_max.resize(dim);
    for (int j = 0; j < stages; ++j) {
        qp.z_min.segment(j * nx, nx) = model_.x_min;
        qp.z_max.segment(j * nx, nx) = model_.x_max;
    }

    // arrival cost
    for (int i = 0; i < nx; ++i) qp.H.add(i, i, cfg_.mu);
    qp.q.head(nx) -= 2.0 * cfg_.mu * anchor;

    // measurement terms
    for (int j = 0; j < stages; ++j) {
        const MeasModel& mm = window_[j].meas;
        if (mm.rows() == 0) continue;
        const Eigen::MatrixXd C = mm.H(lin[j]);
        const Eigen::VectorXd c2 = mm.h(lin[j]) - C * lin[j];
        Eigen::VectorXd w1(mm.rows());
        for (int r = 0; r < mm.rows(); ++r)
            w1[r] = cfg_.w1 > 0.0 ? cfg_.w1 : 1.0 / std::max(mm.r_diag[r], 1e-12);
        const Eigen::MatrixXd CtW = C.transpose() * w1.asDiagonal();
        const Eigen::MatrixXd block = CtW * C;
        for (int a = 0; a < nx; ++a)
            for (int b = 0; b <= a; ++b)
                if (block(a, b) != 0.0) qp.H.add(j * nx + a, j * nx + b, block(a, b));
        qp.q.segment(j * nx, nx) -= 2.0 * (CtW * (mm.y - c2));
    }

    // model terms between consecutive stages; u[t] lives on stage j+1
    for (int j = 0; j + 1 < stages; ++j) {
        const int t = t0 + j;
        const Eigen::VectorXd& ut = window_[j + 1].u_in;
        const Linearized ld = model_.df(lin[j], ut, t);
        const Eigen::VectorXd d = ld.B * ut + ld.c;
        const Eigen::MatrixXd AtA = ld.A.transpose() * ld.A;
        for (int a = 0; a < nx; ++a) {
            qp.H.add((j + 1) * nx + a, (j + 1) * nx + a, cfg_.w2);
            for (int b = 0; b <= a; ++b)
                if (AtA(a, b) != 0.0) qp.H.add(j * nx + a, j * nx + b, cfg_.w2 * AtA(a, b));
            for (int b = 0; b < nx; ++b)
                if (ld.A(a, b) != 0.0)
                    qp.H.add((j + 1) * nx + a, j * nx + b, -cfg_.w2 * ld.A(a, b));
        }
        qp.q.segment((j + 1) * nx, nx) -= 2.0 * cfg_.w2 * d;
        qp.q.segment(j * nx, nx) += 2.0 * cfg_.w2 * ld.A.transpose() * d;
    }

    // normalize scale; the minimizer is unchanged
    const double scale = qp.H.max_abs();
    if (scale > 0.0) {
        qp.H.scale(1.0 / scale);
        qp.q /= scale;
    }

    if (!qp::is_positive_definite(qp.H)) ++h_pd_failures_;

    // warm start: previous solution shifted onto this window's times, with
    // the newest stage seeded by the one-step prediction
    Eigen::VectorXd warm(dim);
    for (int j = 0; j < stages; ++j) warm.segment(j * nx, nx) = lin[j];
    warm.tail(nx) =
        model_.clamp_state(model_.f(solution_.back(), window_.back().u_in, k - 1));

    qp::SolveResult sr;
    try {
        sr = qp::solve(qp, &warm, cfg_.qp_opts);
    } catch (const NumericalError&) {
        ++qp_failures_;
        sr.z = warm.cwiseMax(qp.z_min).cwiseMin(qp.z_max);
        sr.converged = false;
    }
    if (!sr.converged) {
        if (sr.z.size() == 0) sr.z = warm.cwiseMax(qp.z_min).cwiseMin(qp.z_max);
        ++qp_failures_;
        std::cerr << "mhe: QP did not converge at step " << k
                  << " (kkt=" << sr.kkt_residual << "), using best iterate\n";
    }

    last_objective_ = qp.objective(sr.z);
    last_warm_objective_ = qp.objective(warm.cwiseMax(qp.z_min).cwiseMin(qp.z_max));

    solution_.clear();
    solution_.reserve(stages);
    for (int j = 0; j < stages; ++j) solution_.push_back(sr.z.segment(j * nx, nx));
    x_ = solution_.back();
}

}  // namespace tse::est
