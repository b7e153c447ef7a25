#pragma once

// Numerics on the manifold of symmetric positive-definite matrices.
//
// Every spectral function goes through a symmetric eigendecomposition; the
// covariance dimensions handled here are small (<= 64 channels) so accuracy
// wins over speed. SpdMatrix caches its own eigendecomposition so chained
// operations (log, sqrt, distances) do not decompose the same matrix twice.

#include <mibci/error.hpp>

#include <Eigen/Dense>

#include <span>
#include <utility>

namespace mibci::spd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative Frobenius tolerance for accepting an input as symmetric.
inline constexpr double kSymmetryTolerance = 1e-10;
/// Eigenvalues below dim * kFloorRatio * lambda_max are raised to that floor.
inline constexpr double kFloorRatio = 1e-12;

/// Symmetric matrix, possibly indefinite. Holds matrix-logarithm images.
class SymMatrix {
public:
    explicit SymMatrix(const Matrix& values);

    static SymMatrix zero(Index dim);

    Index dim() const { return values_.rows(); }
    const Matrix& matrix() const { return values_; }
    double operator()(Index i, Index j) const { return values_(i, j); }

    SymMatrix operator+(const SymMatrix& other) const;
    SymMatrix operator-(const SymMatrix& other) const;
    SymMatrix operator*(double scale) const;
    friend SymMatrix operator*(double scale, const SymMatrix& m) { return m * scale; }

    double frobenius_norm() const { return values_.norm(); }

private:
    Matrix values_;
};

/// Symmetric positive-definite matrix with a cached eigendecomposition.
///
/// Construction validates symmetry (relative Frobenius 1e-10), finiteness and
/// a positive spectrum. Eigenvalues smaller than dim * 1e-12 * lambda_max are
/// floored and floored() reports it; rank-deficient covariances (e.g. after
/// common-average referencing) land here.
class SpdMatrix {
public:
    explicit SpdMatrix(const Matrix& values);

    /// Builds V diag(values) V^T from an orthonormal basis, flooring as above.
    static SpdMatrix from_eigen(const Matrix& vectors, const Vector& values);
    static SpdMatrix identity(Index dim);
    static SpdMatrix diagonal(const Vector& values);
    /// Rebuilds a stored matrix and its decomposition verbatim. The parts
    /// must agree to 1e-8 relative Frobenius error.
    static SpdMatrix restore(const Matrix& values, const Matrix& vectors, const Vector& eigenvalues, bool floored);

    Index dim() const { return values_.rows(); }
    const Matrix& matrix() const { return values_; }
    double operator()(Index i, Index j) const { return values_(i, j); }

    /// Ascending eigenvalues and matching orthonormal eigenvectors.
    const Vector& eigenvalues() const { return eigenvalues_; }
    const Matrix& eigenvectors() const { return eigenvectors_; }

    bool floored() const { return floored_; }
    double trace() const { return values_.trace(); }

    /// V f(L) V^T for an elementwise spectral function f.
    template <typename F>
    Matrix spectral(F&& f) const
    {
        Vector mapped = eigenvalues_.unaryExpr(std::forward<F>(f));
        return eigenvectors_ * mapped.asDiagonal() * eigenvectors_.transpose();
    }

private:
    SpdMatrix() = default;
    void decompose_and_floor(const Matrix& symmetric);
    void assemble_from(const Matrix& vectors, Vector values);

    Matrix values_;
    Matrix eigenvectors_;
    Vector eigenvalues_;
    bool floored_ = false;
};

/// (M + M^T) / 2.
Matrix symmetrize(const Matrix& m);

SymMatrix spd_log(const SpdMatrix& s);
SpdMatrix spd_exp(const SymMatrix& m);
/// S^p for real p.
SpdMatrix spd_power(const SpdMatrix& s, double p);

struct SqrtPair {
    SpdMatrix sqrt;
    SpdMatrix invsqrt;
};
SqrtPair spd_sqrt_invsqrt(const SpdMatrix& s);

/// Affine-invariant distance ||log(A^{-1/2} B A^{-1/2})||_F.
double airm_distance(const SpdMatrix& a, const SpdMatrix& b);

/// Repeated distances from one fixed reference without re-deriving its
/// inverse square root.
class DistanceFrom {
public:
    explicit DistanceFrom(const SpdMatrix& reference);
    double operator()(const SpdMatrix& other) const;
    /// Distance from the reference to W S W^T, for square W applied to each sample.
    DistanceFrom after(const Matrix& w) const;
    Index dim() const { return invsqrt_.rows(); }

private:
    Matrix invsqrt_;
};

/// W S W^T, re-symmetrized. Rejects singular W.
SpdMatrix congruence(const SpdMatrix& s, const Matrix& w);
/// W S W with W SPD (always invertible).
SpdMatrix congruence(const SpdMatrix& s, const SpdMatrix& w);

/// Point at fraction t along the AIRM geodesic from a (t = 0) to b (t = 1).
SpdMatrix geodesic(const SpdMatrix& a, const SpdMatrix& b, double t);

struct FrechetConfig {
    double tol = 1e-7;
    int max_iter = 50;
    double step = 1.0;

    void validate() const;
};

struct FrechetResult {
    SpdMatrix mean;
    int iterations = 0;
    double residual = 0.0;
};

/// Raised when the Karcher flow hits max_iter; carries the last iterate.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, SpdMatrix last_iterate, double residual)
        : Error(ErrorKind::Convergence, what), last_iterate_(std::move(last_iterate)), residual_(residual)
    {
    }

    const SpdMatrix& last_iterate() const { return last_iterate_; }
    double residual() const { return residual_; }

private:
    SpdMatrix last_iterate_;
    double residual_;
};

/// Riemannian (Karcher) mean by fixed-step gradient descent, initialised at
/// the log-Euclidean mean.
FrechetResult frechet_mean_detailed(std::span<const SpdMatrix> samples, const FrechetConfig& cfg = {});
SpdMatrix frechet_mean(std::span<const SpdMatrix> samples, const FrechetConfig& cfg = {});

/// exp(mean_i log S_i).
SpdMatrix log_euclidean_mean(std::span<const SpdMatrix> samples);

/// V diag((1 - lambda) l + lambda * mean(l)) V^T. Preserves the trace.
SpdMatrix eigenvalue_shrink(const SpdMatrix& s, double lambda);

/// exp((1 - alpha) log S): geodesic contraction toward the identity.
SpdMatrix identity_shrink(const SpdMatrix& s, double alpha);

/// Relative Frobenius asymmetry ||M - M^T|| / ||M||.
double asymmetry(const Matrix& m);

} // namespace mibci::spd
