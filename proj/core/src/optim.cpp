#include "precondlab/optim.hpp"

#include <cmath>
#include <sstream>

#include "precondlab/errors.hpp"
#include "precondlab/random.hpp"

namespace precondlab::optim {

namespace {

void require_kind(const PreconditionerSpec& spec, Kind expected, const char* who) {
    if (spec.kind != expected) {
        std::ostringstream msg;
        msg << who << ": spec.kind is " << to_string(spec.kind) << ", expected " << to_string(expected);
        throw ConfigError(msg.str());
    }
}

// Gradient of L + (wd/2) ||theta||^2.
MlpParams regularized_gradient(const MlpParams& params, const Matrix& x, const Matrix& y,
                               double weight_decay) {
    MlpParams g = model::gradient(params, x, y).as_params();
    if (weight_decay != 0.0) g += weight_decay * params;
    return g;
}

template <typename F>
void apply_elementwise(MlpParams& out, const MlpParams& a, const MlpParams& b, F&& f) {
    out.W1 = a.W1.binaryExpr(b.W1, f);
    out.W2 = a.W2.binaryExpr(b.W2, f);
    out.b2 = a.b2.binaryExpr(b.b2, f);
}

}  // namespace

std::string_view to_string(Kind kind) {
    switch (kind) {
        case Kind::gd: return "gd";
        case Kind::cov_power: return "cov_power";
        case Kind::adahessian: return "adahessian";
        case Kind::adam: return "adam";
        case Kind::sam_gd: return "sam_gd";
    }
    return "unknown";
}

Kind kind_from_string(std::string_view name) {
    if (name == "gd") return Kind::gd;
    if (name == "cov_power") return Kind::cov_power;
    if (name == "adahessian") return Kind::adahessian;
    if (name == "adam") return Kind::adam;
    if (name == "sam_gd" || name == "sam") return Kind::sam_gd;
    throw ConfigError("unknown optimizer kind '" + std::string(name) + "'");
}

void PreconditionerSpec::validate() const {
    auto fail = [this](const std::string& what) {
        throw ConfigError(std::string(to_string(kind)) + ": " + what);
    };
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("learning rate must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!std::isfinite(p)) fail("power p must be finite");
    if (kind == Kind::adam || kind == Kind::adahessian) {
        if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
        if (!(eps > 0.0)) fail("eps must be > 0");
    }
    if (kind == Kind::adahessian) {
        if (hutchinson_samples < 1) fail("hutchinson_samples must be >= 1");
        if (hessian_interval < 1) fail("hessian_interval must be >= 1");
    }
    if (kind == Kind::sam_gd && !(rho > 0.0)) fail("rho must be > 0");
    if (kind == Kind::cov_power && !(eigen_floor >= 0.0)) fail("eigen_floor must be >= 0");
}

spectra::Preconditioner covariance_preconditioner(const Matrix& x_train, double p, double floor) {
    return spectra::matrix_power(spectra::covariance(x_train), p, floor);
}

MlpParams step_gd(const MlpParams& params, const Matrix& x, const Matrix& y,
                  const PreconditionerSpec& spec, OptimState& state) {
    const MlpParams g = regularized_gradient(params, x, y, spec.weight_decay);
    ++state.t;
    return params - spec.lr * g;
}

MlpParams step_cov_power(const MlpParams& params, const Matrix& x, const Matrix& y,
                         const PreconditionerSpec& spec, OptimState& state) {
    require_kind(spec, Kind::cov_power, "step_cov_power");
    if (!state.preconditioner) state.preconditioner = covariance_preconditioner(x, spec.p, spec.eigen_floor);
    const spectra::Preconditioner& precond = *state.preconditioner;
    if (precond.dim() != params.d_x() || x.rows() != params.d_x()) {
        std::ostringstream msg;
        msg << "step_cov_power: preconditioner is " << precond.dim() << "-dimensional, data/params have d_x = "
            << x.rows() << "/" << params.d_x();
        throw DimensionError(msg.str());
    }
    const MlpParams g = regularized_gradient(params, x, y, spec.weight_decay);
    MlpParams next = params;
    if (precond.power == 0.0) {
        next.W1 -= spec.lr * g.W1;
    } else {
        next.W1.noalias() -= spec.lr * (precond.matrix * g.W1);
    }
    next.W2 -= spec.lr * g.W2;
    next.b2 -= spec.lr * g.b2;
    ++state.t;
    return next;
}

Vector hutchinson_diagonal(const MlpParams& params, const Matrix& x, const Matrix& y, int samples,
                           std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution coin(0.5);
    const auto n = params.size();
    Vector diag = Vector::Zero(n);
    for (int s = 0; s < samples; ++s) {
        Vector r(n);
        for (Eigen::Index i = 0; i < n; ++i) r(i) = coin(rng) ? 1.0 : -1.0;
        diag += r.cwiseProduct(model::hvp(params, x, y, r));
    }
    return diag / static_cast<double>(samples);
}

MlpParams step_adahessian(const MlpParams& params, const Matrix& x, const Matrix& y,
                          const PreconditionerSpec& spec, OptimState& state, std::uint64_t seed) {
    require_kind(spec, Kind::adahessian, "step_adahessian");
    if (!state.m) state.m = params.zeros_like();
    if (!state.v) state.v = params.zeros_like();

    const MlpParams g = regularized_gradient(params, x, y, spec.weight_decay);
    if (state.t % spec.hessian_interval == 0) {
        const Vector flat = hutchinson_diagonal(params, x, y, spec.hutchinson_samples,
                                                derive_seed(seed, static_cast<std::uint64_t>(state.t)));
        if (!flat.allFinite()) {
            std::ostringstream msg;
            msg << "step_adahessian: non-finite curvature estimate at step " << state.t;
            throw NumericError(msg.str());
        }
        const MlpParams diag = MlpParams::unflatten(flat, params.d_x(), params.d_h(), params.d_y());
        MlpParams sq = diag;
        apply_elementwise(sq, diag, diag, [](double a, double b) { return a * b; });
        *state.v *= spec.beta2;
        *state.v += (1.0 - spec.beta2) * sq;
        ++state.curvature_updates;
    }
    *state.m *= spec.beta1;
    *state.m += (1.0 - spec.beta1) * g;
    ++state.t;

    const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(state.curvature_updates));
    const double p = spec.p;
    const double eps = spec.eps;
    MlpParams update = params.zeros_like();
    apply_elementwise(update, *state.m, *state.v, [=](double m, double v) {
        const double scale = p == 0.0 ? 1.0 : 1.0 / (std::pow(std::sqrt(v / bc2), -p) + eps);
        return (m / bc1) * scale;
    });
    if (!spec.precondition_readout) {
        update.W2 = g.W2;
        update.b2 = g.b2;
    }
    return params - spec.lr * update;
}

MlpParams step_adam(const MlpParams& params, const Matrix& x, const Matrix& y,
                    const PreconditionerSpec& spec, OptimState& state) {
    require_kind(spec, Kind::adam, "step_adam");
    if (!state.m) state.m = params.zeros_like();
    if (!state.v) state.v = params.zeros_like();

    const MlpParams g = regularized_gradient(params, x, y, spec.weight_decay);
    MlpParams g2 = g;
    apply_elementwise(g2, g, g, [](double a, double b) { return a * b; });
    *state.m *= spec.beta1;
    *state.m += (1.0 - spec.beta1) * g;
    *state.v *= spec.beta2;
    *state.v += (1.0 - spec.beta2) * g2;
    ++state.t;

    const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(state.t));
    const double eps = spec.eps;
    MlpParams update = params.zeros_like();
    apply_elementwise(update, *state.m, *state.v,
                      [=](double m, double v) { return (m / bc1) / (std::sqrt(v / bc2) + eps); });
    return params - spec.lr * update;
}

MlpParams step_sam(const MlpParams& params, const Matrix& x, const Matrix& y,
                   const PreconditionerSpec& spec, OptimState& state) {
    require_kind(spec, Kind::sam_gd, "step_sam");
    const MlpParams g = model::gradient(params, x, y).as_params();
    const double gnorm = std::sqrt(g.squared_norm());
    ++state.t;
    if (gnorm < 1e-12) {
        MlpParams decayed = g;
        if (spec.weight_decay != 0.0) decayed += spec.weight_decay * params;
        return params - spec.lr * decayed;
    }
    const MlpParams ascent = params + (spec.rho / gnorm) * g;
    MlpParams g_sharp = model::gradient(ascent, x, y).as_params();
    if (spec.weight_decay != 0.0) g_sharp += spec.weight_decay * params;
    return params - spec.lr * g_sharp;
}

MlpParams step(const MlpParams& params, const Matrix& x, const Matrix& y,
               const PreconditionerSpec& spec, OptimState& state, std::uint64_t seed) {
    switch (spec.kind) {
        case Kind::gd: return step_gd(params, x, y, spec, state);
        case Kind::cov_power: return step_cov_power(params, x, y, spec, state);
        case Kind::adahessian: return step_adahessian(params, x, y, spec, state, seed);
        case Kind::adam: return step_adam(params, x, y, spec, state);
        case Kind::sam_gd: return step_sam(params, x, y, spec, state);
    }
    throw ConfigError("step: unknown optimizer kind");
}

double ridge_objective(const Matrix& h, const Matrix& y, const Matrix& w2, const Vector& b2,
                       double lambda) {
    Matrix pred = w2.transpose() * h;
    pred.colwise() += b2;
    return (pred - y).squaredNorm() + lambda * w2.squaredNorm();
}

RidgeSolution ridge_closed_form(const Matrix& h, const Matrix& y, double lambda) {
    const auto n = h.cols();
    if (n < 1) throw DimensionError("ridge_closed_form: need at least one sample");
    if (y.cols() != n) throw DimensionError("ridge_closed_form: features and targets disagree on N");
    if (!(lambda >= 0.0)) throw ConfigError("ridge_closed_form: lambda must be >= 0");

    const Vector h_mean = h.rowwise().mean();
    const Vector y_mean = y.rowwise().mean();
    const Matrix hc = h.colwise() - h_mean;
    const Matrix yc = y.colwise() - y_mean;
    Matrix a = hc * hc.transpose();
    a = 0.5 * (a + a.transpose());
    a.diagonal().array() += lambda;
    const Matrix rhs = hc * yc.transpose();

    RidgeSolution out;
    bool solved = false;
    if (lambda > 0.0) {
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() == Eigen::Success) {
            out.W2 = llt.solve(rhs);
            solved = out.W2.allFinite();
        }
    }
    if (!solved) {
        // Pseudo-inverse on the eigenbasis; directions below the floor are dropped.
        const spectra::SymEig eig = spectra::sym_eig(a);
        const double lmax = eig.eigenvalues.size() > 0 ? eig.eigenvalues(0) : 0.0;
        const double cutoff = std::max(lmax, 0.0) * 1e-12;
        Vector inv(eig.eigenvalues.size());
        bool dropped = false;
        for (Eigen::Index i = 0; i < inv.size(); ++i) {
            if (eig.eigenvalues(i) > cutoff && eig.eigenvalues(i) > 0.0) {
                inv(i) = 1.0 / eig.eigenvalues(i);
            } else {
                inv(i) = 0.0;
                dropped = true;
            }
        }
        out.W2 = eig.eigenvectors * inv.asDiagonal() * (eig.eigenvectors.transpose() * rhs);
        out.used_pseudo_inverse = dropped;
    }
    out.b2 = y_mean - out.W2.transpose() * h_mean;
    return out;
}

}  // namespace precondlab::optim
