#include <cmath>

#include <doctest.h>

#include "helpers.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/spectra.hpp"

using namespace precondlab;
using testutil::gaussian;
using testutil::Matrix;
using testutil::rel_fro;
using testutil::Vector;

TEST_SUITE("spectra") {

TEST_CASE("sym_eig of identity and diagonal matrices") {
    const auto id = spectra::sym_eig(Matrix::Identity(3, 3));
    CHECK((id.eigenvalues - Vector::Ones(3)).norm() == doctest::Approx(0.0));
    // columns are a permutation of the identity up to sign
    CHECK((id.eigenvectors.cwiseAbs().colwise().sum() - Eigen::RowVectorXd::Ones(3)).norm() < 1e-12);
    CHECK((id.eigenvectors.transpose() * id.eigenvectors - Matrix::Identity(3, 3)).norm() < 1e-12);

    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 10.0;
    d(1, 1) = 0.1;
    const auto eig = spectra::sym_eig(d);
    CHECK(eig.eigenvalues(0) == doctest::Approx(10.0));
    CHECK(eig.eigenvalues(1) == doctest::Approx(0.1));
    CHECK(std::abs(eig.eigenvectors(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(eig.eigenvectors(1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eig reconstructs a random SPD matrix built as M M^T") {
    const Matrix m = gaussian(5, 5, 1);
    const Matrix a = m * m.transpose();
    const auto eig = spectra::sym_eig(a);
    for (Eigen::Index i = 1; i < 5; ++i) CHECK(eig.eigenvalues(i - 1) >= eig.eigenvalues(i));
    const Matrix rec = eig.eigenvectors * eig.eigenvalues.asDiagonal() * eig.eigenvectors.transpose();
    CHECK(rel_fro(rec, a) < 1e-9);
}

TEST_CASE("sym_eig rejects asymmetric input") {
    Matrix a = Matrix::Identity(2, 2);
    a(0, 1) = 1.0;
    CHECK_THROWS_AS(spectra::sym_eig(a), SymmetryError);
}

TEST_CASE("thin_svd on constructed inputs") {
    Matrix x = Matrix::Zero(3, 5);
    x.leftCols(3) = Matrix::Identity(3, 3);
    const auto svd = spectra::thin_svd(x);
    CHECK((svd.singulars - Vector::Ones(3)).norm() < 1e-12);

    // orthonormal rows scaled by (sqrt 10, 1/sqrt 10)
    const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian(6, 2, 2)).householderQ() * Matrix::Identity(6, 2);
    Matrix rows = q.transpose();
    rows.row(0) *= std::sqrt(10.0);
    rows.row(1) /= std::sqrt(10.0);
    const auto s2 = spectra::thin_svd(rows);
    CHECK(s2.singulars(0) == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
    CHECK(s2.singulars(1) == doctest::Approx(1.0 / std::sqrt(10.0)).epsilon(1e-12));
}

TEST_CASE("thin_svd of a random 4x20 matrix has orthonormal factors") {
    const Matrix x = gaussian(4, 20, 3);
    const auto svd = spectra::thin_svd(x);
    CHECK((svd.left.transpose() * svd.left - Matrix::Identity(4, 4)).norm() < 1e-10);
    CHECK((svd.right.transpose() * svd.right - Matrix::Identity(4, 4)).norm() < 1e-10);
    CHECK(rel_fro(svd.left * svd.singulars.asDiagonal() * svd.right.transpose(), x) < 1e-9);
}

TEST_CASE("matrix_power special cases") {
    const Matrix m = gaussian(4, 4, 4);
    const Matrix spd = m * m.transpose() + Matrix::Identity(4, 4);
    CHECK((spectra::matrix_power(spd, 0.0).matrix - Matrix::Identity(4, 4)).norm() < 1e-12);

    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 10.0;
    d(1, 1) = 0.1;
    const Matrix inv = spectra::matrix_power(d, -1.0, 0.0).matrix;
    CHECK(inv(0, 0) == doctest::Approx(0.1));
    CHECK(inv(1, 1) == doctest::Approx(10.0));
    CHECK(std::abs(inv(0, 1)) < 1e-15);

    const Matrix r = spectra::matrix_power(spd, -0.5).matrix;
    CHECK((r * r * spd - Matrix::Identity(4, 4)).norm() < 1e-8);
}

TEST_CASE("gram and cross_gram against direct products and the SVD assembly") {
    const Matrix x = gaussian(4, 9, 5);
    const auto id = spectra::identity_preconditioner(4);
    CHECK(rel_fro(spectra::gram(x, id), x.transpose() * x) < 1e-14);
    CHECK(spectra::cross_gram(x, id, Vector::Zero(4)).norm() == 0.0);
    CHECK(rel_fro(spectra::cross_gram(x, id, x.col(2)), (x.transpose() * x).col(2)) < 1e-14);

    const Matrix sigma = x * x.transpose();
    const auto svd = spectra::thin_svd(x);

    const auto p_inv = spectra::matrix_power(sigma, -1.0, 0.0);
    const Matrix g_inv = spectra::gram(x, p_inv);
    CHECK((g_inv * g_inv - g_inv).norm() < 1e-8);
    CHECK(rel_fro(g_inv, svd.right * svd.right.transpose()) < 1e-9);

    const auto p_half = spectra::matrix_power(sigma, 0.5, 0.0);
    const Vector s3 = svd.singulars.array().pow(3.0);
    CHECK(rel_fro(spectra::gram(x, p_half), svd.right * s3.asDiagonal() * svd.right.transpose()) < 1e-9);

    // x = U S beta, so at p = -1 the cross-Gram is V beta
    const Vector point = gaussian(4, 1, 6);
    const Vector beta = svd.singulars.cwiseInverse().asDiagonal() * (svd.left.transpose() * point);
    CHECK(rel_fro(spectra::cross_gram(x, p_inv, point), svd.right * beta) < 1e-9);
}

TEST_CASE("covariance is X X^T without normalization") {
    const Matrix x = gaussian(3, 7, 7);
    CHECK(rel_fro(spectra::covariance(x), x * x.transpose()) < 1e-15);
}

}
