#include "precondlab/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "precondlab/errors.hpp"

namespace precondlab::spectra {

namespace {

constexpr int kMaxSweeps = 100;

// Permutes eigen/singular pairs into descending order.
void sort_descending(Vector& values, Matrix& vectors, Matrix* partner = nullptr) {
    const auto n = values.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });
    Vector sorted_values(n);
    Matrix sorted_vectors(vectors.rows(), n);
    Matrix sorted_partner;
    if (partner != nullptr) sorted_partner.resize(partner->rows(), n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto src = order[static_cast<std::size_t>(k)];
        sorted_values(k) = values(src);
        sorted_vectors.col(k) = vectors.col(src);
        if (partner != nullptr) sorted_partner.col(k) = partner->col(src);
    }
    values = std::move(sorted_values);
    vectors = std::move(sorted_vectors);
    if (partner != nullptr) *partner = std::move(sorted_partner);
}

// Flips column k so that its largest-magnitude entry is positive; mirrors the
// flip onto `partner` when given.
void fix_signs(Matrix& vectors, Matrix* partner = nullptr) {
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            const double mag = std::abs(vectors(i, k));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (vectors(arg, k) < 0.0) {
            vectors.col(k) *= -1.0;
            if (partner != nullptr) partner->col(k) *= -1.0;
        }
    }
}

}  // namespace

bool is_symmetric(const Matrix& a, double tol) {
    if (a.rows() != a.cols()) return false;
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

double relative_frobenius(const Matrix& a, const Matrix& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

SymEig sym_eig(const Matrix& input) {
    if (input.rows() != input.cols()) {
        std::ostringstream msg;
        msg << "sym_eig: matrix is " << input.rows() << "x" << input.cols() << ", expected square";
        throw DimensionError(msg.str());
    }
    const auto n = input.rows();
    if (n == 0) return {};
    if (!is_symmetric(input, 1e-10)) {
        const double asym = (input - input.transpose()).cwiseAbs().maxCoeff();
        std::ostringstream msg;
        msg << "sym_eig: input is not symmetric (max |a_ij - a_ji| = " << asym << ")";
        throw SymmetryError(msg.str());
    }

    Matrix a = 0.5 * (input + input.transpose());
    Matrix v = Matrix::Identity(n, n);
    const double total = a.norm();

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(2.0 * off) <= 1e-15 * total || off == 0.0) break;

        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                // A <- J^T A J restricted to rows/cols p, q.
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    SymEig out;
    out.eigenvalues = a.diagonal();
    out.eigenvectors = std::move(v);
    sort_descending(out.eigenvalues, out.eigenvectors);
    fix_signs(out.eigenvectors);
    return out;
}

ThinSvd thin_svd(const Matrix& x) {
    const auto d = x.rows();
    const auto n = x.cols();
    if (d > n) {
        std::ostringstream msg;
        msg << "thin_svd: requires d_x <= N, got " << d << "x" << n;
        throw DimensionError(msg.str());
    }

    // Orthogonalize the rows of A = Q^T X pairwise; at convergence A = S V^T and U = Q.
    Matrix a = x;
    Matrix q = Matrix::Identity(d, d);
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (Eigen::Index i = 0; i < d - 1; ++i) {
            for (Eigen::Index j = i + 1; j < d; ++j) {
                const double alpha = a.row(i).squaredNorm();
                const double beta = a.row(j).squaredNorm();
                const double gamma = a.row(i).dot(a.row(j));
                if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                const Eigen::RowVectorXd ai = a.row(i);
                a.row(i) = c * ai - s * a.row(j);
                a.row(j) = s * ai + c * a.row(j);
                const Vector qi = q.col(i);
                q.col(i) = c * qi - s * q.col(j);
                q.col(j) = s * qi + c * q.col(j);
            }
        }
        if (!rotated) break;
    }

    ThinSvd out;
    out.singulars = a.rowwise().norm();
    out.right = a.transpose();  // N x d, columns scaled by singulars for now
    out.left = std::move(q);
    sort_descending(out.singulars, out.left, &out.right);

    const double smax = d > 0 ? out.singulars(0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < d; ++k) {
        if (out.singulars(k) > 0.0 && out.singulars(k) > smax * 1e-14) {
            out.right.col(k) /= out.singulars(k);
            ++rank;
        } else {
            out.singulars(k) = std::max(out.singulars(k), 0.0);
            out.right.col(k).setZero();
        }
    }
    // Complete the null directions of V with an orthonormal basis (Gram-Schmidt on e_i).
    Eigen::Index next_basis = 0;
    for (Eigen::Index k = rank; k < d; ++k) {
        while (next_basis < n) {
            Vector cand = Vector::Unit(n, next_basis++);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index m = 0; m < k; ++m)
                    cand -= out.right.col(m).dot(cand) * out.right.col(m);
            const double norm = cand.norm();
            if (norm > 1e-8) {
                out.right.col(k) = cand / norm;
                break;
            }
        }
    }
    fix_signs(out.left, &out.right);
    return out;
}

Preconditioner identity_preconditioner(Eigen::Index d) {
    return Preconditioner{Matrix::Identity(d, d), 0.0, 0.0};
}

Preconditioner matrix_power(const Matrix& sigma, double p, double floor) {
    if (floor < 0.0) throw Error("matrix_power: floor must be nonnegative");
    if (p == 0.0) {
        if (sigma.rows() != sigma.cols()) throw DimensionError("matrix_power: sigma must be square");
        return Preconditioner{Matrix::Identity(sigma.rows(), sigma.cols()), 0.0, floor};
    }
    const SymEig eig = sym_eig(sigma);
    const auto n = eig.eigenvalues.size();
    const double lmax = n > 0 ? eig.eigenvalues.maxCoeff() : 0.0;
    Vector powered(n);
    if (p < 0.0) {
        if (!(lmax > 0.0)) {
            throw SingularityError("matrix_power: negative power of a zero (or non-PSD) matrix");
        }
        const double clamp = floor * lmax;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lam = std::max(eig.eigenvalues(i), clamp);
            // floor == 0 with an exactly singular direction: treat as pseudo-inverse.
            powered(i) = lam > 0.0 ? std::pow(lam, p) : 0.0;
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) powered(i) = std::pow(std::max(eig.eigenvalues(i), 0.0), p);
    }
    Matrix m = eig.eigenvectors * powered.asDiagonal() * eig.eigenvectors.transpose();
    m = 0.5 * (m + m.transpose());
    return Preconditioner{std::move(m), p, floor};
}

Matrix covariance(const Matrix& x) {
    Matrix s = x * x.transpose();
    return 0.5 * (s + s.transpose());
}

Matrix gram(const Matrix& x, const Preconditioner& p) {
    if (p.matrix.rows() != x.rows() || p.matrix.cols() != x.rows()) {
        std::ostringstream msg;
        msg << "gram: preconditioner is " << p.matrix.rows() << "x" << p.matrix.cols()
            << " but data has d_x = " << x.rows();
        throw DimensionError(msg.str());
    }
    Matrix g = x.transpose() * (p.matrix * x);
    return 0.5 * (g + g.transpose());
}

Vector cross_gram(const Matrix& x, const Preconditioner& p, const Vector& point) {
    if (p.matrix.rows() != x.rows() || point.size() != x.rows()) {
        std::ostringstream msg;
        msg << "cross_gram: dimension mismatch (P " << p.matrix.rows() << ", X rows " << x.rows()
            << ", x " << point.size() << ")";
        throw DimensionError(msg.str());
    }
    return x.transpose() * (p.matrix * point);
}

}  // namespace precondlab::spectra
