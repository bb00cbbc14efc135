// Independent reference implementations used only by the test suites. These
// deliberately avoid the library's code paths: quadrature instead of erfc,
// grid search instead of closed forms, dense linear algebra instead of the
// banded solver.
#ifndef TSE_TESTS_ORACLES_HPP
#define TSE_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// adaptive Simpson quadrature
inline double simpson(const std::function<double(double)>& f, double a, double b, double fa,
                      double fb, double fm, double eps, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * eps)
        return left + right + (left + right - whole) / 15.0;
    return simpson(f, a, m, fa, fm, flm, eps / 2.0, depth - 1) +
           simpson(f, m, b, fm, fb, frm, eps / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-14) {
    const double m = 0.5 * (a + b);
    return simpson(f, a, b, f(a), f(b), f(m), eps, 48);
}

// standard normal upper tail by quadrature (integrates the density to 40)
inline double gaussian_upper_tail(double x) {
    auto pdf = [](double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI); };
    if (x >= 40.0) return 0.0;
    return integrate(pdf, x, 40.0, 1e-15);
}

// bisection inverse of the quadrature tail
inline double gaussian_tail_inverse(double delta) {
    double lo = 0.0, hi = 1.0;
    while (gaussian_upper_tail(hi) > delta) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (gaussian_upper_tail(mid) > delta ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// argmax of rho (w - p(rho)) over [0, rho_m] by coarse grid + refinement
inline double critical_density_grid(double w, double v_f, double rho_m, double gamma) {
    auto flux = [&](double rho) { return rho * (w - v_f * std::pow(rho / rho_m, gamma)); };
    double lo = 0.0, hi = rho_m;
    for (int round = 0; round < 40; ++round) {
        double best = lo, best_val = -1e300;
        const int n = 64;
        for (int i = 0; i <= n; ++i) {
            const double rho = lo + (hi - lo) * i / n;
            if (flux(rho) > best_val) {
                best_val = flux(rho);
                best = rho;
            }
        }
        const double width = (hi - lo) / n;
        lo = std::max(0.0, best - width);
        hi = std::min(rho_m, best + width);
    }
    return 0.5 * (lo + hi);
}

// tiny-step projected gradient descent on z^T H z + q^T z over a box
inline Eigen::VectorXd projected_gradient_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& q,
                                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                             int iterations = 200000) {
    Eigen::VectorXd z = 0.5 * (lo + hi);
    const double lip = 2.0 * H.operatorNorm();
    const double step = 1.0 / lip;
    for (int i = 0; i < iterations; ++i) {
        const Eigen::VectorXd g = 2.0 * H * z + q;
        const Eigen::VectorXd next = (z - step * g).cwiseMax(lo).cwiseMin(hi);
        if ((next - z).lpNorm<Eigen::Infinity>() < 1e-15) return next;
        z = next;
    }
    return z;
}

// closed-form Kalman filter for a linear-Gaussian system
struct Kf {
    Eigen::MatrixXd A, H, Q, R;
    Eigen::VectorXd x;
    Eigen::MatrixXd P;

    void step(const Eigen::VectorXd& u_addition, const Eigen::VectorXd& y) {
        x = A * x + u_addition;
        P = A * P * A.transpose() + Q;
        const Eigen::MatrixXd S = H * P * H.transpose() + R;
        const Eigen::MatrixXd K = P * H.transpose() * S.inverse();
        x += K * (y - H * x);
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(x.size(), x.size());
        P = (I - K * H) * P;
        P = 0.5 * (P + P.transpose()).eval();
    }
};

// central finite-difference Jacobian of f at x
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double rel_h = 1e-6) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    for (int j = 0; j < x.size(); ++j) {
        const double h = rel_h * std::max(1.0, std::abs(x[j]));
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

}  // namespace oracle

#endif
