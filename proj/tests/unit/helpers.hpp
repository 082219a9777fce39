#pragma once

#include <random>

#include <Eigen/Dense>

namespace testutil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
    return m;
}

inline double rel_fro(const Matrix& a, const Matrix& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

}  // namespace testutil
