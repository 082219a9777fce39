#include "precondlab/model.hpp"

#include <cmath>
#include <sstream>

#include "precondlab/errors.hpp"
#include "precondlab/random.hpp"

namespace precondlab::model {

MlpParams MlpParams::zeros(Eigen::Index d_x, Eigen::Index d_h, Eigen::Index d_y) {
    return MlpParams{Matrix::Zero(d_x, d_h), Matrix::Zero(d_h, d_y), Vector::Zero(d_y)};
}

Vector MlpParams::flatten() const {
    Vector flat(size());
    flat.head(W1.size()) = W1.reshaped();
    flat.segment(W1.size(), W2.size()) = W2.reshaped();
    flat.tail(b2.size()) = b2;
    return flat;
}

MlpParams MlpParams::unflatten(const Vector& flat, Eigen::Index d_x, Eigen::Index d_h,
                               Eigen::Index d_y) {
    const Eigen::Index expected = d_x * d_h + d_h * d_y + d_y;
    if (flat.size() != expected) {
        std::ostringstream msg;
        msg << "unflatten: got " << flat.size() << " entries, expected " << expected;
        throw DimensionError(msg.str());
    }
    MlpParams out;
    out.W1 = flat.head(d_x * d_h).reshaped(d_x, d_h);
    out.W2 = flat.segment(d_x * d_h, d_h * d_y).reshaped(d_h, d_y);
    out.b2 = flat.tail(d_y);
    return out;
}

void MlpParams::validate() const {
    if (W2.rows() != W1.cols() || b2.size() != W2.cols()) {
        std::ostringstream msg;
        msg << "MlpParams: inconsistent shapes W1 " << W1.rows() << "x" << W1.cols() << ", W2 "
            << W2.rows() << "x" << W2.cols() << ", b2 " << b2.size();
        throw DimensionError(msg.str());
    }
}

bool MlpParams::all_finite() const {
    return W1.allFinite() && W2.allFinite() && b2.allFinite();
}

MlpParams& MlpParams::operator+=(const MlpParams& other) {
    W1 += other.W1;
    W2 += other.W2;
    b2 += other.b2;
    return *this;
}

MlpParams& MlpParams::operator-=(const MlpParams& other) {
    W1 -= other.W1;
    W2 -= other.W2;
    b2 -= other.b2;
    return *this;
}

MlpParams& MlpParams::operator*=(double scale) {
    W1 *= scale;
    W2 *= scale;
    b2 *= scale;
    return *this;
}

double MlpParams::dot(const MlpParams& other) const {
    return W1.cwiseProduct(other.W1).sum() + W2.cwiseProduct(other.W2).sum() + b2.dot(other.b2);
}

MlpParams operator+(MlpParams a, const MlpParams& b) { return a += b; }
MlpParams operator-(MlpParams a, const MlpParams& b) { return a -= b; }
MlpParams operator*(double s, MlpParams a) { return a *= s; }

Matrix init_p_isotropic(const spectra::Preconditioner& p, double sigma, Eigen::Index d_h,
                        std::uint64_t seed) {
    const auto d_x = p.dim();
    Rng rng(seed);
    Matrix u = gaussian_matrix(d_x, d_h, sigma, rng);
    if (p.power == 0.0 && p.matrix.isIdentity(0.0)) return u;

    const spectra::SymEig eig = spectra::sym_eig(p.matrix);
    // P = S^T S with S = diag(sqrt(lambda)) V^T, so W1 = S^T u = V diag(sqrt(lambda)) u.
    Vector root(eig.eigenvalues.size());
    for (Eigen::Index i = 0; i < root.size(); ++i) root(i) = std::sqrt(std::max(eig.eigenvalues(i), 0.0));
    return eig.eigenvectors * (root.asDiagonal() * u);
}

void init_readout(MlpParams& params, std::uint64_t seed) {
    Rng rng(seed);
    const auto d_h = params.W1.cols();
    const auto d_y = params.W2.cols() > 0 ? params.W2.cols() : params.b2.size();
    params.W2 = gaussian_matrix(d_h, d_y, 1.0 / std::sqrt(static_cast<double>(d_h)), rng);
    params.b2 = Vector::Zero(d_y);
}

ForwardCache forward(const MlpParams& params, const Matrix& x) {
    params.validate();
    if (x.rows() != params.d_x()) {
        std::ostringstream msg;
        msg << "forward: input has " << x.rows() << " rows, model expects d_x = " << params.d_x();
        throw DimensionError(msg.str());
    }
    ForwardCache cache;
    cache.Z.noalias() = params.W1.transpose() * x;
    cache.H = cache.Z.cwiseMax(0.0);
    cache.Yhat.noalias() = params.W2.transpose() * cache.H;
    cache.Yhat.colwise() += params.b2;
    return cache;
}

double mse_loss(const Matrix& yhat, const Matrix& y) {
    if (yhat.rows() != y.rows() || yhat.cols() != y.cols()) {
        std::ostringstream msg;
        msg << "mse_loss: shape mismatch " << yhat.rows() << "x" << yhat.cols() << " vs " << y.rows()
            << "x" << y.cols();
        throw DimensionError(msg.str());
    }
    if (y.cols() == 0) return 0.0;
    return (yhat - y).squaredNorm() / static_cast<double>(y.cols());
}

Grads backward(const MlpParams& params, const Matrix& x, const Matrix& y, const ForwardCache& cache) {
    const auto n = x.cols();
    if (cache.Z.rows() != params.d_h() || cache.Z.cols() != n || cache.Yhat.rows() != y.rows() ||
        cache.Yhat.cols() != y.cols() || y.cols() != n) {
        throw DimensionError("backward: cache does not match (params, X, Y)");
    }
    const Matrix residual = (2.0 / static_cast<double>(n)) * (cache.Yhat - y);  // d_y x N

    Grads g;
    g.dW2.noalias() = cache.H * residual.transpose();
    g.db2 = residual.rowwise().sum();
    g.dZ.noalias() = params.W2 * residual;
    g.dZ = (cache.Z.array() > 0.0).select(g.dZ, 0.0);
    g.dW1.noalias() = x * g.dZ.transpose();
    return g;
}

Grads gradient(const MlpParams& params, const Matrix& x, const Matrix& y) {
    return backward(params, x, y, forward(params, x));
}

Vector hvp(const MlpParams& params, const Matrix& x, const Matrix& y, const Vector& v) {
    if (v.size() != params.size()) {
        std::ostringstream msg;
        msg << "hvp: direction has " << v.size() << " entries, parameters have " << params.size();
        throw DimensionError(msg.str());
    }
    const double vnorm = v.norm();
    if (vnorm == 0.0) return Vector::Zero(v.size());
    const double theta_norm = std::sqrt(params.squared_norm());
    const double h = 1e-4 * (1.0 + theta_norm) / (1.0 + vnorm);

    const MlpParams dir = MlpParams::unflatten(v, params.d_x(), params.d_h(), params.d_y());
    const MlpParams plus = params + h * dir;
    const MlpParams minus = params - h * dir;
    const Vector gp = gradient(plus, x, y).as_params().flatten();
    const Vector gm = gradient(minus, x, y).as_params().flatten();
    return (gp - gm) / (2.0 * h);
}

NeuronHessian per_neuron_hessian(const MlpParams& params, const Matrix& x, const Matrix& /*y*/,
                                 Eigen::Index j, double margin) {
    params.validate();
    if (j < 0 || j >= params.d_h()) {
        std::ostringstream msg;
        msg << "per_neuron_hessian: neuron index " << j << " outside [0, " << params.d_h() << ")";
        throw DimensionError(msg.str());
    }
    if (x.rows() != params.d_x()) throw DimensionError("per_neuron_hessian: input dimension mismatch");

    const auto n = x.cols();
    const Eigen::RowVectorXd z = params.W1.col(j).transpose() * x;
    const double readout = params.W2.row(j).squaredNorm();

    NeuronHessian out;
    out.hessian = Matrix::Zero(params.d_x(), params.d_x());
    out.min_abs_preactivation = n > 0 ? z.cwiseAbs().minCoeff() : 0.0;
    out.near_kink = out.min_abs_preactivation < margin;
    const double scale = 2.0 / static_cast<double>(n) * readout;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (z(i) > 0.0) out.hessian.noalias() += scale * x.col(i) * x.col(i).transpose();
    }
    return out;
}

std::vector<int> argmax_columns(const Matrix& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        Eigen::Index arg = 0;
        scores.col(c).maxCoeff(&arg);
        out[static_cast<std::size_t>(c)] = static_cast<int>(arg);
    }
    return out;
}

}  // namespace precondlab::model
