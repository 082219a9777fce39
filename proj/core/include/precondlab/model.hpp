#pragma once

// Two-layer ReLU MLP: z = W1^T x, h = max(z, 0), yhat = W2^T h + b2.
// The first layer has no bias. Loss is mean squared error without the 1/2 factor.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "precondlab/spectra.hpp"

namespace precondlab::model {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MlpParams {
    Matrix W1;  // d_x x d_h
    Matrix W2;  // d_h x d_y
    Vector b2;  // d_y

    Eigen::Index d_x() const { return W1.rows(); }
    Eigen::Index d_h() const { return W1.cols(); }
    Eigen::Index d_y() const { return W2.cols(); }
    Eigen::Index size() const { return W1.size() + W2.size() + b2.size(); }

    static MlpParams zeros(Eigen::Index d_x, Eigen::Index d_h, Eigen::Index d_y);

    // Flat layout: W1 (column-major), W2 (column-major), b2.
    Vector flatten() const;
    static MlpParams unflatten(const Vector& flat, Eigen::Index d_x, Eigen::Index d_h,
                               Eigen::Index d_y);
    MlpParams zeros_like() const { return zeros(d_x(), d_h(), d_y()); }

    /// Throws DimensionError when the three blocks disagree on d_h / d_y.
    void validate() const;
    bool all_finite() const;

    MlpParams& operator+=(const MlpParams& other);
    MlpParams& operator-=(const MlpParams& other);
    MlpParams& operator*=(double scale);
    double dot(const MlpParams& other) const;
    double squared_norm() const { return dot(*this); }
};

MlpParams operator+(MlpParams a, const MlpParams& b);
MlpParams operator-(MlpParams a, const MlpParams& b);
MlpParams operator*(double s, MlpParams a);

struct ForwardCache {
    Matrix Z;     // d_h x N pre-activations
    Matrix H;     // d_h x N post-ReLU
    Matrix Yhat;  // d_y x N
};

struct Grads {
    Matrix dW1;
    Matrix dW2;
    Vector db2;
    Matrix dZ;  // d_h x N, dL/dZ

    MlpParams as_params() const { return MlpParams{dW1, dW2, db2}; }
};

/// W1 columns drawn as S^T u with u ~ N(0, sigma^2 I) and P = S^T S, S = diag(sqrt(lambda)) V^T.
/// Deterministic in `seed`.
Matrix init_p_isotropic(const spectra::Preconditioner& p, double sigma, Eigen::Index d_h,
                        std::uint64_t seed);

/// W2 ~ N(0, 1/d_h) i.i.d., b2 = 0.
void init_readout(MlpParams& params, std::uint64_t seed);

ForwardCache forward(const MlpParams& params, const Matrix& x);

/// (1/N) sum_i ||yhat_i - y_i||^2.
double mse_loss(const Matrix& yhat, const Matrix& y);

Grads backward(const MlpParams& params, const Matrix& x, const Matrix& y, const ForwardCache& cache);

/// Convenience: forward + backward.
Grads gradient(const MlpParams& params, const Matrix& x, const Matrix& y);

/// Loss Hessian times v (flat, parameter-shaped) via central differences of exact gradients.
Vector hvp(const MlpParams& params, const Matrix& x, const Matrix& y, const Vector& v);

struct NeuronHessian {
    Matrix hessian;              // d_x x d_x
    bool near_kink = false;      // some |z_ij| < margin: the closed form may not match the true Hessian
    double min_abs_preactivation = 0.0;
};

/// Closed-form Hessian of the loss w.r.t. first-layer column j:
/// sum_i b_ij x_i x_i^T with b_ij = (2/N) 1[z_ij > 0] ||W2 row j||^2.
NeuronHessian per_neuron_hessian(const MlpParams& params, const Matrix& x, const Matrix& y,
                                 Eigen::Index j, double margin = 1e-3);

/// Argmax over rows of each column.
std::vector<int> argmax_columns(const Matrix& scores);

}  // namespace precondlab::model
