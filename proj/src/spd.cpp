#include <mibci/spd.hpp>

#include <cmath>
#include <limits>
#include <string>

namespace mibci::spd {

namespace {

// exp() of anything above this overflows a double.
constexpr double kMaxExpArgument = 709.0;

bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

void require_square(const Matrix& m, const char* what)
{
    if (m.rows() != m.cols() || m.rows() == 0) {
        throw Error(ErrorKind::Shape, std::string(what) + ": expected a non-empty square matrix, got " +
                                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

void require_same_dim(Index a, Index b, const char* what)
{
    if (a != b) {
        throw Error(ErrorKind::Shape,
                    std::string(what) + ": dimension mismatch " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

void require_symmetric(const Matrix& m, const char* what)
{
    if (!all_finite(m)) {
        throw Error(ErrorKind::NumericDomain, std::string(what) + ": non-finite entries");
    }
    if (asymmetry(m) > kSymmetryTolerance) {
        throw Error(ErrorKind::Argument, std::string(what) + ": matrix is not symmetric");
    }
}

} // namespace

double asymmetry(const Matrix& m)
{
    const double scale = m.norm();
    if (scale == 0.0) {
        return 0.0;
    }
    return (m - m.transpose()).norm() / scale;
}

Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

// ---------------------------------------------------------------- SymMatrix

SymMatrix::SymMatrix(const Matrix& values)
{
    require_square(values, "SymMatrix");
    require_symmetric(values, "SymMatrix");
    values_ = symmetrize(values);
}

SymMatrix SymMatrix::zero(Index dim)
{
    return SymMatrix(Matrix::Zero(dim, dim));
}

SymMatrix SymMatrix::operator+(const SymMatrix& other) const
{
    require_same_dim(dim(), other.dim(), "SymMatrix +");
    return SymMatrix(values_ + other.values_);
}

SymMatrix SymMatrix::operator-(const SymMatrix& other) const
{
    require_same_dim(dim(), other.dim(), "SymMatrix -");
    return SymMatrix(values_ - other.values_);
}

SymMatrix SymMatrix::operator*(double scale) const
{
    return SymMatrix(values_ * scale);
}

// ---------------------------------------------------------------- SpdMatrix

SpdMatrix::SpdMatrix(const Matrix& values)
{
    require_square(values, "SpdMatrix");
    require_symmetric(values, "SpdMatrix");
    decompose_and_floor(symmetrize(values));
}

void SpdMatrix::decompose_and_floor(const Matrix& symmetric)
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix: eigendecomposition failed");
    }
    const Vector& vals = solver.eigenvalues();
    if (!(vals(vals.size() - 1) > 0.0)) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix: matrix has no positive eigenvalue");
    }
    const double floor = static_cast<double>(vals.size()) * kFloorRatio * vals(vals.size() - 1);
    if (vals(0) < floor) {
        assemble_from(solver.eigenvectors(), vals);
    } else {
        values_ = symmetric;
        eigenvectors_ = solver.eigenvectors();
        eigenvalues_ = vals;
        floored_ = false;
    }
}

void SpdMatrix::assemble_from(const Matrix& vectors, Vector values)
{
    const Index n = values.size();
    const double top = values.maxCoeff();
    if (!(top > 0.0) || !std::isfinite(top)) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix: spectrum is not positive and finite");
    }
    const double floor = static_cast<double>(n) * kFloorRatio * top;
    floored_ = false;
    for (Index i = 0; i < n; ++i) {
        if (!(values(i) >= floor)) {
            values(i) = floor;
            floored_ = true;
        }
    }
    eigenvectors_ = vectors;
    eigenvalues_ = std::move(values);
    values_ = symmetrize(eigenvectors_ * eigenvalues_.asDiagonal() * eigenvectors_.transpose());
}

SpdMatrix SpdMatrix::from_eigen(const Matrix& vectors, const Vector& values)
{
    if (vectors.rows() != vectors.cols() || vectors.cols() != values.size() || values.size() == 0) {
        throw Error(ErrorKind::Shape, "SpdMatrix::from_eigen: inconsistent eigensystem");
    }
    if (!vectors.allFinite() || !values.allFinite()) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix::from_eigen: non-finite eigensystem");
    }
    SpdMatrix out;
    out.assemble_from(vectors, values);
    return out;
}

SpdMatrix SpdMatrix::restore(const Matrix& values, const Matrix& vectors, const Vector& eigenvalues, bool floored)
{
    require_square(values, "SpdMatrix::restore");
    if (vectors.rows() != values.rows() || vectors.cols() != values.cols() || eigenvalues.size() != values.rows()) {
        throw Error(ErrorKind::Shape, "SpdMatrix::restore: inconsistent eigensystem");
    }
    if (!values.allFinite() || !vectors.allFinite() || !eigenvalues.allFinite()) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix::restore: non-finite entries");
    }
    require_symmetric(values, "SpdMatrix::restore");
    for (Index i = 0; i < eigenvalues.size(); ++i) {
        if (!(eigenvalues(i) > 0.0) || (i > 0 && eigenvalues(i) < eigenvalues(i - 1))) {
            throw Error(ErrorKind::NumericDomain, "SpdMatrix::restore: eigenvalues must be positive and ascending");
        }
    }
    const Matrix rebuilt = vectors * eigenvalues.asDiagonal() * vectors.transpose();
    if ((rebuilt - values).norm() > 1e-8 * values.norm()) {
        throw Error(ErrorKind::NumericDomain, "SpdMatrix::restore: decomposition does not match the values");
    }
    SpdMatrix out;
    out.values_ = values;
    out.eigenvectors_ = vectors;
    out.eigenvalues_ = eigenvalues;
    out.floored_ = floored;
    return out;
}

SpdMatrix SpdMatrix::identity(Index dim)
{
    return from_eigen(Matrix::Identity(dim, dim), Vector::Ones(dim));
}

SpdMatrix SpdMatrix::diagonal(const Vector& values)
{
    return SpdMatrix(Matrix(values.asDiagonal()));
}

// ---------------------------------------------------------------- spectral functions

SymMatrix spd_log(const SpdMatrix& s)
{
    return SymMatrix(symmetrize(s.spectral([](double l) { return std::log(l); })));
}

SpdMatrix spd_exp(const SymMatrix& m)
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m.matrix());
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorKind::NumericDomain, "spd_exp: eigendecomposition failed");
    }
    const Vector& vals = solver.eigenvalues();
    if (vals.maxCoeff() > kMaxExpArgument) {
        throw Error(ErrorKind::NumericDomain, "spd_exp: eigenvalue too large, exp overflows");
    }
    return SpdMatrix::from_eigen(solver.eigenvectors(), vals.array().exp().matrix());
}

SpdMatrix spd_power(const SpdMatrix& s, double p)
{
    Vector vals = s.eigenvalues().array().pow(p).matrix();
    return SpdMatrix::from_eigen(s.eigenvectors(), vals);
}

SqrtPair spd_sqrt_invsqrt(const SpdMatrix& s)
{
    Vector root = s.eigenvalues().array().sqrt().matrix();
    Vector inv_root = root.cwiseInverse();
    return SqrtPair{SpdMatrix::from_eigen(s.eigenvectors(), root), SpdMatrix::from_eigen(s.eigenvectors(), inv_root)};
}

// ---------------------------------------------------------------- geometry

DistanceFrom::DistanceFrom(const SpdMatrix& reference)
    : invsqrt_(reference.spectral([](double l) { return 1.0 / std::sqrt(l); }))
{
}

DistanceFrom DistanceFrom::after(const Matrix& w) const
{
    require_same_dim(invsqrt_.cols(), w.rows(), "DistanceFrom::after");
    DistanceFrom d = *this;
    d.invsqrt_ = invsqrt_ * w;
    return d;
}

double DistanceFrom::operator()(const SpdMatrix& other) const
{
    require_same_dim(invsqrt_.rows(), other.dim(), "airm_distance");
    const Matrix whitened = symmetrize(invsqrt_ * other.matrix() * invsqrt_.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(whitened, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorKind::NumericDomain, "airm_distance: eigendecomposition failed");
    }
    const double tiny = std::numeric_limits<double>::min();
    double sum = 0.0;
    for (Index i = 0; i < solver.eigenvalues().size(); ++i) {
        const double l = std::log(std::max(solver.eigenvalues()(i), tiny));
        sum += l * l;
    }
    return std::sqrt(sum);
}

double airm_distance(const SpdMatrix& a, const SpdMatrix& b)
{
    require_same_dim(a.dim(), b.dim(), "airm_distance");
    return DistanceFrom(a)(b);
}

SpdMatrix congruence(const SpdMatrix& s, const Matrix& w)
{
    if (w.rows() != w.cols()) {
        throw Error(ErrorKind::Shape, "congruence: transform must be square");
    }
    require_same_dim(s.dim(), w.rows(), "congruence");
    if (!w.allFinite()) {
        throw Error(ErrorKind::NumericDomain, "congruence: non-finite transform");
    }
    Eigen::JacobiSVD<Matrix> svd(w);
    const Vector& sv = svd.singularValues();
    if (!(sv(sv.size() - 1) > static_cast<double>(w.rows()) * 1e-14 * sv(0))) {
        throw Error(ErrorKind::NumericDomain, "congruence: transform is singular");
    }
    return SpdMatrix(symmetrize(w * s.matrix() * w.transpose()));
}

SpdMatrix congruence(const SpdMatrix& s, const SpdMatrix& w)
{
    require_same_dim(s.dim(), w.dim(), "congruence");
    return SpdMatrix(symmetrize(w.matrix() * s.matrix() * w.matrix()));
}

SpdMatrix geodesic(const SpdMatrix& a, const SpdMatrix& b, double t)
{
    require_same_dim(a.dim(), b.dim(), "geodesic");
    if (t == 0.0) {
        return a;
    }
    if (t == 1.0) {
        return b;
    }
    const SqrtPair roots = spd_sqrt_invsqrt(a);
    const SpdMatrix inner(symmetrize(roots.invsqrt.matrix() * b.matrix() * roots.invsqrt.matrix()));
    return congruence(spd_power(inner, t), roots.sqrt);
}

// ---------------------------------------------------------------- means

void FrechetConfig::validate() const
{
    if (!(tol > 0.0)) {
        throw Error(ErrorKind::Argument, "FrechetConfig: tol must be > 0");
    }
    if (max_iter < 1) {
        throw Error(ErrorKind::Argument, "FrechetConfig: max_iter must be >= 1");
    }
    if (!(step > 0.0 && step <= 1.0)) {
        throw Error(ErrorKind::Argument, "FrechetConfig: step must lie in (0, 1]");
    }
}

namespace {

void require_common_dim(std::span<const SpdMatrix> samples, const char* what)
{
    if (samples.empty()) {
        throw Error(ErrorKind::Argument, std::string(what) + ": empty sample set");
    }
    for (const auto& s : samples) {
        require_same_dim(samples.front().dim(), s.dim(), what);
    }
}

} // namespace

SpdMatrix log_euclidean_mean(std::span<const SpdMatrix> samples)
{
    require_common_dim(samples, "log_euclidean_mean");
    if (samples.size() == 1) {
        return samples.front();
    }
    Matrix acc = Matrix::Zero(samples.front().dim(), samples.front().dim());
    for (const auto& s : samples) {
        acc += spd_log(s).matrix();
    }
    acc /= static_cast<double>(samples.size());
    return spd_exp(SymMatrix(symmetrize(acc)));
}

FrechetResult frechet_mean_detailed(std::span<const SpdMatrix> samples, const FrechetConfig& cfg)
{
    cfg.validate();
    require_common_dim(samples, "frechet_mean");
    if (samples.size() == 1) {
        return FrechetResult{samples.front(), 0, 0.0};
    }

    const Index n = samples.front().dim();
    SpdMatrix current = log_euclidean_mean(samples);
    double residual = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        const SqrtPair roots = spd_sqrt_invsqrt(current);
        Matrix gradient = Matrix::Zero(n, n);
        for (const auto& s : samples) {
            const SpdMatrix local(symmetrize(roots.invsqrt.matrix() * s.matrix() * roots.invsqrt.matrix()));
            gradient += spd_log(local).matrix();
        }
        gradient /= static_cast<double>(samples.size());
        residual = gradient.norm();
        if (residual <= cfg.tol) {
            return FrechetResult{current, iter, residual};
        }
        const SpdMatrix update = spd_exp(SymMatrix(symmetrize(cfg.step * gradient)));
        current = congruence(update, roots.sqrt);
    }
    throw ConvergenceError("frechet_mean: no convergence after " + std::to_string(cfg.max_iter) +
                               " iterations (residual " + std::to_string(residual) + ")",
                           current, residual);
}

SpdMatrix frechet_mean(std::span<const SpdMatrix> samples, const FrechetConfig& cfg)
{
    return frechet_mean_detailed(samples, cfg).mean;
}

// ---------------------------------------------------------------- shrinkage

SpdMatrix eigenvalue_shrink(const SpdMatrix& s, double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw Error(ErrorKind::Argument, "eigenvalue_shrink: lambda must lie in [0, 1]");
    }
    if (lambda == 0.0) {
        return s;
    }
    const double mean = s.eigenvalues().mean();
    Vector shrunk = ((1.0 - lambda) * s.eigenvalues().array() + lambda * mean).matrix();
    return SpdMatrix::from_eigen(s.eigenvectors(), shrunk);
}

SpdMatrix identity_shrink(const SpdMatrix& s, double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error(ErrorKind::Argument, "identity_shrink: alpha must lie in [0, 1]");
    }
    if (alpha == 0.0) {
        return s;
    }
    return spd_power(s, 1.0 - alpha);
}

} // namespace mibci::spd
