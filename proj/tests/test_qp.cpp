#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tse/qp.hpp"

using namespace tse;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

qp::BoxQP make_qp(const MatrixXd& H, const VectorXd& q, const VectorXd& lo, const VectorXd& hi) {
    qp::BoxQP prob;
    prob.H = qp::BandMatrix::from_dense(H);
    prob.q = q;
    prob.z_min = lo;
    prob.z_max = hi;
    return prob;
}

MatrixXd random_pd(std::mt19937& gen, int n, double band_fraction = 1.0) {
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd M = MatrixXd::Zero(n, n);
    const int kb = std::max(1, static_cast<int>(band_fraction * n));
    for (int i = 0; i < n; ++i)
        for (int j = std::max(0, i - kb); j <= i; ++j) M(i, j) = nd(gen);
    MatrixXd H = M * M.transpose();
    H.diagonal().array() += 0.5 * n;
    return H;
}

}  // namespace

TEST_CASE("band storage round-trips and multiplies like the dense matrix") {
    std::mt19937 gen(5);
    const MatrixXd H = random_pd(gen, 12, 0.3);
    const auto band = qp::BandMatrix::from_dense(H);
    CHECK((band.dense() - H).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd x(12);
    for (int i = 0; i < 12; ++i) x[i] = nd(gen);
    CHECK((band.multiply(x) - H * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("banded cholesky factors and solves against Eigen") {
    std::mt19937 gen(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + trial;
        const MatrixXd H = random_pd(gen, n, 0.4);
        auto band = qp::BandMatrix::from_dense(H);
        CHECK(qp::is_positive_definite(band));
        auto chol = band;
        REQUIRE(qp::band_cholesky(chol));
        VectorXd b(n);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int i = 0; i < n; ++i) b[i] = nd(gen);
        const VectorXd x = qp::band_cholesky_solve(chol, b);
        CHECK((H * x - b).lpNorm<Eigen::Infinity>() < 1e-8 * b.lpNorm<Eigen::Infinity>() * n);
    }
    // indefinite matrix is rejected
    MatrixXd bad = MatrixXd::Identity(4, 4);
    bad(2, 2) = -1.0;
    auto band = qp::BandMatrix::from_dense(bad);
    CHECK(!qp::is_positive_definite(band));
}

TEST_CASE("interior minimizer: H=I, q=-2*1, box [0,10]") {
    const int n = 6;
    const auto prob = make_qp(MatrixXd::Identity(n, n), VectorXd::Constant(n, -2.0),
                              VectorXd::Zero(n), VectorXd::Constant(n, 10.0));
    const auto res = qp::solve(prob);
    CHECK(res.converged);
    CHECK(res.kkt_residual <= 1e-8);
    for (int i = 0; i < n; ++i) CHECK(res.z[i] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("active bound: H=I, q=-2*1, box [2,3]") {
    const int n = 6;
    const auto prob = make_qp(MatrixXd::Identity(n, n), VectorXd::Constant(n, -2.0),
                              VectorXd::Constant(n, 2.0), VectorXd::Constant(n, 3.0));
    const auto res = qp::solve(prob);
    CHECK(res.converged);
    for (int i = 0; i < n; ++i) CHECK(res.z[i] == doctest::Approx(2.0));
}

TEST_CASE("random PD problems match the projected-gradient oracle") {
    std::mt19937 gen(21);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.2, 2.0);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 20;
        const MatrixXd H = random_pd(gen, n);
        VectorXd q(n), lo(n), hi(n);
        for (int i = 0; i < n; ++i) {
            q[i] = 10.0 * nd(gen);
            lo[i] = -ud(gen);
            hi[i] = ud(gen);
        }
        const auto prob = make_qp(H, q, lo, hi);
        const auto res = qp::solve(prob);
        CHECK(res.converged);
        CHECK(res.kkt_residual <= 1e-8);
        const VectorXd zo = oracle::projected_gradient_qp(H, q, lo, hi);
        const double fo = zo.dot(H * zo) + q.dot(zo);
        CHECK(prob.objective(res.z) <= fo + 1e-6);
        CHECK(std::abs(prob.objective(res.z) - fo) < 1e-6 * std::max(1.0, std::abs(fo)));
    }
}

TEST_CASE("two warm starts converge to the same point") {
    std::mt19937 gen(33);
    const int n = 30;
    const MatrixXd H = random_pd(gen, n, 0.2);
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd q(n);
    for (int i = 0; i < n; ++i) q[i] = 5.0 * nd(gen);
    const auto prob = make_qp(H, q, VectorXd::Constant(n, -1.0), VectorXd::Constant(n, 1.0));
    VectorXd w1 = VectorXd::Constant(n, -1.0), w2 = VectorXd::Constant(n, 1.0);
    const auto r1 = qp::solve(prob, &w1);
    const auto r2 = qp::solve(prob, &w2);
    CHECK(r1.converged);
    CHECK(r2.converged);
    CHECK((r1.z - r2.z).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("solution beats random feasible points and satisfies complementarity") {
    std::mt19937 gen(41);
    const int n = 24;
    const MatrixXd H = random_pd(gen, n);
    std::normal_distribution<double> nd(0.0, 1.0);
    VectorXd q(n);
    for (int i = 0; i < n; ++i) q[i] = 8.0 * nd(gen);
    const VectorXd lo = VectorXd::Constant(n, -0.8), hi = VectorXd::Constant(n, 0.8);
    const auto prob = make_qp(H, q, lo, hi);
    const auto res = qp::solve(prob);
    REQUIRE(res.converged);
    const double fstar = prob.objective(res.z);
    std::uniform_real_distribution<double> ud(-0.8, 0.8);
    for (int trial = 0; trial < 1000; ++trial) {
        VectorXd z(n);
        for (int i = 0; i < n; ++i) z[i] = ud(gen);
        CHECK(fstar <= prob.objective(z) + 1e-10);
    }
    const VectorXd g = prob.gradient(res.z);
    for (int i = 0; i < n; ++i)
        if (res.z[i] > lo[i] + 1e-9 && res.z[i] < hi[i] - 1e-9) CHECK(std::abs(g[i]) <= 1e-7);
}

TEST_CASE("non-PD Hessian raises a factorization error") {
    MatrixXd H = MatrixXd::Identity(4, 4);
    H(1, 1) = -2.0;
    const auto prob = make_qp(H, VectorXd::Constant(4, 1.0), VectorXd::Constant(4, -5.0),
                              VectorXd::Constant(4, 5.0));
    CHECK_THROWS_AS(qp::solve(prob), NumericalError);
}

TEST_CASE("bound ordering is validated") {
    const auto prob = make_qp(MatrixXd::Identity(2, 2), VectorXd::Zero(2),
                              VectorXd::Constant(2, 1.0), VectorXd::Constant(2, -1.0));
    CHECK_THROWS_AS(qp::solve(prob), ConfigError);
}
