#include "tse/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tse::qp {

Eigen::VectorXd BandMatrix::multiply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
    for (int j = 0; j < n_; ++j) {
        y[j] += band_(0, j) * x[j];
        const int rmax = std::min(kb_, n_ - 1 - j);
        for (int r = 1; r <= rmax; ++r) {
            const double v = band_(r, j);
            y[j + r] += v * x[j];
            y[j] += v * x[j + r];
        }
    }
    return y;
}

Eigen::MatrixXd BandMatrix::dense() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_, n_);
    for (int j = 0; j < n_; ++j) {
        const int rmax = std::min(kb_, n_ - 1 - j);
        for (int r = 0; r <= rmax; ++r) {
            a(j + r, j) = band_(r, j);
            a(j, j + r) = band_(r, j);
        }
    }
    return a;
}

BandMatrix BandMatrix::from_dense(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    int kb = 0;
    for (int j = 0; j < n; ++j)
        for (int i = j + 1; i < n; ++i)
            if (a(i, j) != 0.0) kb = std::max(kb, i - j);
    BandMatrix b(n, kb);
    for (int j = 0; j < n; ++j)
        for (int i = j; i <= std::min(n - 1, j + kb); ++i) b.set(i, j, a(i, j));
    return b;
}

bool band_cholesky(BandMatrix& a) {
    const int n = a.size(), kb = a.half_bandwidth();
    for (int j = 0; j < n; ++j) {
        double d = a(j, j);
        for (int k = std::max(0, j - kb); k < j; ++k) {
            const double l = a(j, k);
            d -= l * l;
        }
        if (!(d > 0.0)) return false;
        const double ljj = std::sqrt(d);
        a.set(j, j, ljj);
        const int imax = std::min(n - 1, j + kb);
        for (int i = j + 1; i <= imax; ++i) {
            double s = a(i, j);
            for (int k = std::max(0, i - kb); k < j; ++k) s -= a(i, k) * a(j, k);
            a.set(i, j, s / ljj);
        }
    }
    return true;
}

Eigen::VectorXd band_cholesky_solve(const BandMatrix& chol, const Eigen::VectorXd& b) {
    const int n = chol.size(), kb = chol.half_bandwidth();
    Eigen::VectorXd y = b;
    for (int i = 0; i < n; ++i) {
        double s = y[i];
        for (int k = std::max(0, i - kb); k < i; ++k) s -= chol(i, k) * y[k];
        y[i] = s / chol(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = y[i];
        const int kmax = std::min(n - 1, i + kb);
        for (int k = i + 1; k <= kmax; ++k) s -= chol(k, i) * y[k];
        y[i] = s / chol(i, i);
    }
    return y;
}

bool is_positive_definite(const BandMatrix& a) {
    BandMatrix c = a;
    return band_cholesky(c);
}

void BoxQP::validate() const {
    const int n = H.size();
    if (q.size() != n || z_min.size() != n || z_max.size() != n)
        throw ConfigError("BoxQP: dimension mismatch");
    for (int i = 0; i < n; ++i)
        if (!(z_min[i] <= z_max[i])) throw ConfigError("BoxQP: z_min must not exceed z_max");
}

double BoxQP::objective(const Eigen::VectorXd& z) const {
    return z.dot(H.multiply(z)) + q.dot(z);
}

Eigen::VectorXd BoxQP::gradient(const Eigen::VectorXd& z) const {
    return 2.0 * H.multiply(z) + q;
}

double BoxQP::kkt_residual(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd g = gradient(z);
    double r = 0.0;
    for (int i = 0; i < z.size(); ++i) {
        const double proj = clamp(z[i] - g[i], z_min[i], z_max[i]);
        r = std::max(r, std::abs(z[i] - proj));
    }
    return r;
}

namespace {

Eigen::VectorXd clip(const Eigen::VectorXd& z, const Eigen::VectorXd& lo,
                     const Eigen::VectorXd& hi) {
    return z.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

// Gradient projection identifies and releases the active set (it can move
// many coordinates on or off their bounds per sweep); subspace Newton over
// the strictly-interior coordinates finishes each face. Both phases strictly
// decrease the objective, so the alternation terminates.
SolveResult solve(const BoxQP& qp, const Eigen::VectorXd* warm_start, const SolveOptions& opts) {
    qp.validate();
    const int n = qp.H.size();
    const int kb = qp.H.half_bandwidth();

    Eigen::VectorXd z = warm_start ? clip(*warm_start, qp.z_min, qp.z_max)
                                   : clip(Eigen::VectorXd::Zero(n), qp.z_min, qp.z_max);

    // snap to bounds so "strictly inside" is well separated from "pinned"
    auto snap = [&](Eigen::VectorXd& v) {
        for (int i = 0; i < n; ++i) {
            if (v[i] - qp.z_min[i] <= 1e-14 * (1.0 + std::abs(qp.z_min[i]))) v[i] = qp.z_min[i];
            if (qp.z_max[i] - v[i] <= 1e-14 * (1.0 + std::abs(qp.z_max[i]))) v[i] = qp.z_max[i];
        }
    };
    snap(z);

    // Lipschitz bound for the gradient step: 2 ||H||_inf
    double lip = 0.0;
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = std::max(0, i - kb); j <= std::min(n - 1, i + kb); ++j)
            row += std::abs(qp.H(i, j));
        lip = std::max(lip, 2.0 * row);
    }
    if (lip <= 0.0) lip = 1.0;

    SolveResult res;
    std::vector<int> free;
    free.reserve(n);

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        res.iterations = iter;
        Eigen::VectorXd g = qp.gradient(z);

        double resid = 0.0;
        for (int i = 0; i < n; ++i)
            resid = std::max(resid, std::abs(z[i] - clamp(z[i] - g[i], qp.z_min[i], qp.z_max[i])));
        res.kkt_residual = resid;
        if (resid <= opts.tolerance) {
            res.z = z;
            res.converged = true;
            return res;
        }

        bool progressed = false;

        // --- gradient-projection sweep ---
        {
            const double f0 = qp.objective(z);
            const double f_noise = 4e-15 * (1.0 + std::abs(f0));
            double alpha = 4.0 / lip;
            for (int ls = 0; ls < 40; ++ls) {
                Eigen::VectorXd cand = clip(z - alpha * g, qp.z_min, qp.z_max);
                const double fc = qp.objective(cand);
                if (fc <= f0 + 1e-4 * g.dot(cand - z) + f_noise && fc <= f0 + f_noise) {
                    snap(cand);
                    progressed = progressed || (cand - z).lpNorm<Eigen::Infinity>() > 0.0;
                    z = std::move(cand);
                    break;
                }
                alpha *= 0.5;
            }
        }

        // --- subspace Newton on the current face, with ratio-test capping ---
        for (int inner = 0; inner < 50; ++inner) {
            g = qp.gradient(z);
            free.clear();
            for (int i = 0; i < n; ++i)
                if (z[i] > qp.z_min[i] && z[i] < qp.z_max[i]) free.push_back(i);
            const int m = static_cast<int>(free.size());
            if (m == 0) break;

            // reduced Hessian keeps the band: index gaps only grow
            const int kbr = std::min(kb, m - 1);
            BandMatrix hff(m, kbr);
            for (int a = 0; a < m; ++a)
                for (int b = a; b <= std::min(m - 1, a + kbr); ++b)
                    if (free[b] - free[a] <= kb) {
                        const double v = 2.0 * qp.H(free[b], free[a]);
                        if (v != 0.0) hff.set(b, a, v);
                    }
            if (!band_cholesky(hff))
                throw NumericalError("BoxQP solve: reduced Hessian is not positive definite");

            Eigen::VectorXd gf(m);
            for (int a = 0; a < m; ++a) gf[a] = g[free[a]];
            const Eigen::VectorXd df = band_cholesky_solve(hff, -gf);
            const double dnorm = df.lpNorm<Eigen::Infinity>();
            if (dnorm < 1e-300) break;

            // furthest step inside the box along df
            double alpha = 1.0;
            for (int a = 0; a < m; ++a) {
                const int i = free[a];
                if (df[a] > 0.0)
                    alpha = std::min(alpha, (qp.z_max[i] - z[i]) / df[a]);
                else if (df[a] < 0.0)
                    alpha = std::min(alpha, (qp.z_min[i] - z[i]) / df[a]);
            }
            if (alpha <= 0.0) break;
            for (int a = 0; a < m; ++a) z[free[a]] += alpha * df[a];
            snap(z);
            progressed = true;
            if (alpha >= 1.0) break;  // face minimizer reached
        }

        if (!progressed) {  // neither phase can move at machine precision
            res.z = z;
            res.kkt_residual = qp.kkt_residual(z);
            res.converged = res.kkt_residual <= opts.tolerance;
            return res;
        }
    }

    res.z = z;
    res.kkt_residual = qp.kkt_residual(z);
    res.converged = res.kkt_residual <= opts.tolerance;
    return res;
}

}  // namespace tse::qp
