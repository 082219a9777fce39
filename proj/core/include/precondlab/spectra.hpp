#pragma once

// Dense symmetric linear algebra used to build covariance-power
// preconditioners and the Gram quantities they induce.

#include <Eigen/Dense>

namespace precondlab::spectra {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
/// Each eigenvector has its largest-magnitude entry positive.
struct SymEig {
    Vector eigenvalues;
    Matrix eigenvectors;  // columns, same order as eigenvalues
};

/// X = left * diag(singulars) * right^T with left d_x x d_x and right N x d_x.
struct ThinSvd {
    Matrix left;
    Vector singulars;  // descending, nonnegative
    Matrix right;
};

/// P = Sigma^power, with the eigenvalue floor that was applied for negative powers.
struct Preconditioner {
    Matrix matrix;
    double power = 0.0;
    double floor = 0.0;

    Eigen::Index dim() const { return matrix.rows(); }
};

inline constexpr double kDefaultEigenFloor = 1e-10;

/// Cyclic Jacobi eigendecomposition. Throws SymmetryError when `a` is not
/// symmetric to 1e-10 (scaled by max(1, max|a_ij|)).
SymEig sym_eig(const Matrix& a);

/// One-sided Jacobi thin SVD of a d_x x N matrix with d_x <= N.
/// Throws DimensionError when d_x > N.
ThinSvd thin_svd(const Matrix& x);

/// Sigma^p through the eigendecomposition of Sigma. For p < 0 eigenvalues are
/// clamped to max(lambda_i, floor * lambda_max) first; p == 0 yields the exact
/// identity. Throws SingularityError for an all-zero Sigma with p < 0.
Preconditioner matrix_power(const Matrix& sigma, double p, double floor = kDefaultEigenFloor);

/// Identity preconditioner of dimension d (plain gradient descent geometry).
Preconditioner identity_preconditioner(Eigen::Index d);

/// Uncentered second-moment matrix X X^T.
Matrix covariance(const Matrix& x);

/// G_P = X^T P X (N x N), symmetrized.
Matrix gram(const Matrix& x, const Preconditioner& p);

/// c_P = X^T P x for a single input x.
Vector cross_gram(const Matrix& x, const Preconditioner& p, const Vector& point);

/// Frobenius-norm relative difference ||a - b|| / max(||b||, tiny).
double relative_frobenius(const Matrix& a, const Matrix& b);

/// True when the largest elementwise asymmetry is within tol * max(1, max|a_ij|).
bool is_symmetric(const Matrix& a, double tol);

}  // namespace precondlab::spectra
