#ifndef TSE_QP_HPP
#define TSE_QP_HPP

#include <Eigen/Dense>

#include "tse/common.hpp"

namespace tse::qp {

// Symmetric banded matrix, lower-band storage: band(r, j) holds A(j+r, j)
// for 0 <= r <= half_bandwidth.
class BandMatrix {
  public:
    BandMatrix() = default;
    BandMatrix(int n, int half_bandwidth)
        : n_(n), kb_(half_bandwidth), band_(Eigen::MatrixXd::Zero(half_bandwidth + 1, n)) {}

    int size() const { return n_; }
    int half_bandwidth() const { return kb_; }

    double operator()(int i, int j) const {
        const int r = i >= j ? i - j : j - i;
        if (r > kb_) return 0.0;
        return band_(r, i >= j ? j : i);
    }
    // accumulate into the lower triangle; (i, j) with i >= j
    void add(int i, int j, double v) { band_(i - j, j) += v; }
    void set(int i, int j, double v) { band_(i - j, j) = v; }

    Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd dense() const;
    static BandMatrix from_dense(const Eigen::MatrixXd& a);
    void scale(double s) { band_ *= s; }
    double max_abs() const { return band_.cwiseAbs().maxCoeff(); }

  private:
    int n_ = 0;
    int kb_ = 0;
    Eigen::MatrixXd band_;
};

// In-place banded Cholesky A = L L^T. Returns false on a non-positive pivot.
bool band_cholesky(BandMatrix& a);
// Solve L L^T x = b given the factor from band_cholesky.
Eigen::VectorXd band_cholesky_solve(const BandMatrix& chol, const Eigen::VectorXd& b);
// Convenience: does the banded Cholesky of a copy succeed (is A numerically PD)?
bool is_positive_definite(const BandMatrix& a);

// minimize z^T H z + q^T z  subject to  z_min <= z <= z_max, H symmetric PD
struct BoxQP {
    BandMatrix H;
    Eigen::VectorXd q, z_min, z_max;

    void validate() const;  // dimension and bound ordering checks
    double objective(const Eigen::VectorXd& z) const;
    Eigen::VectorXd gradient(const Eigen::VectorXd& z) const;  // 2 H z + q
    // projected-gradient optimality residual ||z - clip(z - g)||_inf
    double kkt_residual(const Eigen::VectorXd& z) const;
};

struct SolveOptions {
    double tolerance = 1e-8;
    int max_iterations = 500;
};

struct SolveResult {
    Eigen::VectorXd z;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Projected Newton over the free set, banded Cholesky on the reduced Hessian.
// Throws NumericalError if H (restricted to a free set) is not PD; an
// exhausted iteration budget returns converged=false with the best iterate.
SolveResult solve(const BoxQP& qp, const Eigen::VectorXd* warm_start = nullptr,
                  const SolveOptions& opts = {});

}  // namespace tse::qp

#endif
