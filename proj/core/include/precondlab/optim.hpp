#pragma once

// Full-batch update rules. Every stepper takes the current parameters and
// returns the updated ones; optimizer memory lives in OptimState.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "precondlab/model.hpp"
#include "precondlab/spectra.hpp"

namespace precondlab::optim {

using model::Matrix;
using model::MlpParams;
using model::Vector;

enum class Kind { gd, cov_power, adahessian, adam, sam_gd };

std::string_view to_string(Kind kind);
/// Throws ConfigError on an unknown name.
Kind kind_from_string(std::string_view name);

struct PreconditionerSpec {
    Kind kind = Kind::gd;
    double p = 0.0;                  // cov_power, adahessian
    double lr = 1e-2;
    double weight_decay = 0.0;       // coupled L2
    double beta1 = 0.9;              // adam, adahessian
    double beta2 = 0.999;            // adam, adahessian
    double eps = 1e-8;               // denominator damping
    double rho = 0.05;               // sam_gd
    int hutchinson_samples = 1;      // adahessian
    int hessian_interval = 1;        // adahessian: refresh the curvature estimate every k steps
    bool precondition_readout = true;  // adahessian: false leaves (W2, b2) on plain GD
    double eigen_floor = spectra::kDefaultEigenFloor;  // cov_power

    /// Throws ConfigError when a field required by `kind` is out of range.
    void validate() const;
};

struct OptimState {
    std::int64_t t = 0;
    std::int64_t curvature_updates = 0;  // adahessian: number of Hutchinson refreshes
    std::optional<MlpParams> m;          // first moment
    std::optional<MlpParams> v;          // second moment (adam: g^2, adahessian: D^2)
    std::optional<spectra::Preconditioner> preconditioner;  // cov_power
};

/// P = (X X^T)^p, built once from the training inputs.
spectra::Preconditioner covariance_preconditioner(const Matrix& x_train, double p,
                                                  double floor = spectra::kDefaultEigenFloor);

MlpParams step_gd(const MlpParams& params, const Matrix& x, const Matrix& y,
                  const PreconditionerSpec& spec, OptimState& state);

/// W1 <- W1 - lr * P (dW1 + wd W1); (W2, b2) take a plain GD step.
/// Builds state.preconditioner from x on first use.
MlpParams step_cov_power(const MlpParams& params, const Matrix& x, const Matrix& y,
                         const PreconditionerSpec& spec, OptimState& state);

/// AdaHessian with the diagonal curvature raised to the power p:
/// dtheta = -lr * mhat / (sqrt(vhat)^(-p) + eps); p = 0 is heavy-ball momentum, p = -1 the usual AdaHessian.
/// Throws NumericError when the curvature estimate is not finite.
MlpParams step_adahessian(const MlpParams& params, const Matrix& x, const Matrix& y,
                          const PreconditionerSpec& spec, OptimState& state, std::uint64_t seed);

MlpParams step_adam(const MlpParams& params, const Matrix& x, const Matrix& y,
                    const PreconditionerSpec& spec, OptimState& state);

/// Sharpness-aware minimization on top of GD. Falls back to a GD step when ||g|| < 1e-12.
MlpParams step_sam(const MlpParams& params, const Matrix& x, const Matrix& y,
                   const PreconditionerSpec& spec, OptimState& state);

/// Dispatches on spec.kind. `seed` is only consumed by adahessian.
MlpParams step(const MlpParams& params, const Matrix& x, const Matrix& y,
               const PreconditionerSpec& spec, OptimState& state, std::uint64_t seed);

/// Hutchinson estimate of diag(Hessian): mean over samples of r .* (H r), r Rademacher.
Vector hutchinson_diagonal(const MlpParams& params, const Matrix& x, const Matrix& y, int samples,
                           std::uint64_t seed);

struct RidgeSolution {
    Matrix W2;  // d_h x d_y
    Vector b2;  // d_y
    bool used_pseudo_inverse = false;
};

/// Centered ridge regression of Y (d_y x N) on features H (d_h x N).
/// With lambda = 0 and a singular system the eigen-floored pseudo-inverse is used and flagged.
RidgeSolution ridge_closed_form(const Matrix& h, const Matrix& y, double lambda);

/// sum_i ||W2^T h_i + b2 - y_i||^2 + lambda ||W2||_F^2 (the objective ridge_closed_form minimizes).
double ridge_objective(const Matrix& h, const Matrix& y, const Matrix& w2, const Vector& b2,
                       double lambda);

}  // namespace precondlab::optim
