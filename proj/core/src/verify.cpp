#include "precondlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "precondlab/csv.hpp"
#include "precondlab/model.hpp"
#include "precondlab/optim.hpp"
#include "precondlab/random.hpp"
#include "precondlab/spectra.hpp"

namespace precondlab::verify {

namespace {

CheckReport make_report(std::string name, std::string instance, double deviation, double tolerance) {
    CheckReport r;
    r.name = std::move(name);
    r.instance = std::move(instance);
    r.deviation = deviation;
    r.tolerance = tolerance;
    r.passed = std::isfinite(deviation) && deviation <= tolerance;
    return r;
}

// Inputs with a spread spectrum (singular values between ~0.3 and ~3), so negative powers matter.
Matrix spread_inputs(int d_x, int n, Rng& rng) {
    Matrix g = gaussian_matrix(d_x, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
    Vector scale(d_x);
    for (int i = 0; i < d_x; ++i) {
        scale(i) = std::pow(10.0, 0.5 - static_cast<double>(i) / std::max(1, d_x - 1));
    }
    return scale.asDiagonal() * g;
}

struct PairedTrace {
    double z_train = 0.0;   // max_t ||Z - Z'||_inf
    double readout = 0.0;   // max_t max |theta2 - theta2'|
    double z_test = 0.0;    // max_t ||z(x) - z'(Ox)||_inf
    double prediction = 0.0;
};

PairedTrace paired_training(const InvarianceSetup& s, const Vector& x_test_in) {
    Rng rng(derive_seed({"verify", "invariance", "data", std::to_string(s.seed)}));
    const Matrix x = spread_inputs(s.d_x, s.n, rng);
    const Matrix y = gaussian_matrix(1, s.n, 1.0, rng);
    const Vector x_test = x_test_in.size() == s.d_x ? x_test_in : Vector(gaussian_matrix(s.d_x, 1, 0.3, rng));
    const Matrix o = s.identity_rotation ? Matrix::Identity(s.d_x, s.d_x)
                                         : random_orthogonal(s.d_x, derive_seed({"verify", "rotation", std::to_string(s.seed)}));
    const Matrix x2 = o * x;
    const Vector x2_test = o * x_test;

    optim::PreconditionerSpec spec;
    spec.kind = optim::Kind::cov_power;
    spec.p = s.p;
    spec.lr = s.lr;
    spec.weight_decay = 1e-6;

    const spectra::Preconditioner p1 = optim::covariance_preconditioner(x, s.p, spec.eigen_floor);
    const double trace_g = spectra::gram(x, p1).trace();
    const double sigma = std::sqrt(static_cast<double>(s.n) / trace_g);

    model::MlpParams a = model::MlpParams::zeros(s.d_x, s.d_h, 1);
    a.W1 = model::init_p_isotropic(p1, sigma, s.d_h, derive_seed({"verify", "init", std::to_string(s.seed)}));
    model::init_readout(a, derive_seed({"verify", "readout", std::to_string(s.seed)}));
    model::MlpParams b = a;
    b.W1 = o * a.W1;

    optim::OptimState sa;
    optim::OptimState sb;
    PairedTrace trace;
    auto compare = [&]() {
        const Matrix za = a.W1.transpose() * x;
        const Matrix zb = b.W1.transpose() * x2;
        trace.z_train = std::max(trace.z_train, (za - zb).cwiseAbs().maxCoeff());
        trace.readout = std::max({trace.readout, (a.W2 - b.W2).cwiseAbs().maxCoeff(),
                                  (a.b2 - b.b2).cwiseAbs().maxCoeff()});
        const Vector ta = a.W1.transpose() * x_test;
        const Vector tb = b.W1.transpose() * x2_test;
        trace.z_test = std::max(trace.z_test, (ta - tb).cwiseAbs().maxCoeff());
    };
    compare();
    for (int t = 0; t < s.steps; ++t) {
        a = optim::step_cov_power(a, x, y, spec, sa);
        b = optim::step_cov_power(b, x2, y, spec, sb);
        compare();
    }
    const Matrix fa = model::forward(a, x_test).Yhat;
    const Matrix fb = model::forward(b, x2_test).Yhat;
    trace.prediction = (fa - fb).cwiseAbs().maxCoeff();
    return trace;
}

std::string describe(const InvarianceSetup& s) {
    std::ostringstream out;
    out << "p=" << format_real(s.p) << " d_x=" << s.d_x << " d_h=" << s.d_h << " N=" << s.n
        << " steps=" << s.steps << " seed=" << s.seed << (s.identity_rotation ? " O=I" : " O=random");
    return out.str();
}

double relative_vector(const Vector& a, const Vector& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

}  // namespace

Matrix random_orthogonal(int d, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix g = gaussian_matrix(d, d, 1.0, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(d, d);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < d; ++i) {
        if (r(i, i) < 0.0) q.col(i) *= -1.0;
    }
    return q;
}

CheckReport train_trajectory_invariance(const InvarianceSetup& setup, double tolerance) {
    const PairedTrace t = paired_training(setup, Vector());
    return make_report("train_trajectory_invariance", describe(setup), std::max(t.z_train, t.readout),
                       tolerance);
}

std::vector<CheckReport> test_point_invariance(const InvarianceSetup& setup, const Vector& x_test,
                                               double tolerance) {
    const PairedTrace t = paired_training(setup, x_test);
    return {make_report("test_point_invariance", describe(setup), t.z_test, tolerance),
            make_report("test_point_prediction", describe(setup), t.prediction, tolerance)};
}

std::vector<CheckReport> spectral_identity_checks(const std::vector<double>& p_list, int instances,
                                                  std::uint64_t seed, double tolerance) {
    const int d_x = 6;
    const int n = 40;
    std::vector<double> gram_dev(p_list.size(), 0.0);
    std::vector<double> cross_dev(p_list.size(), 0.0);
    double projector_dev = 0.0;
    bool has_minus_one = false;

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed({"verify", "identities", std::to_string(seed), std::to_string(k)}));
        const Matrix x = spread_inputs(d_x, n, rng);
        const Vector point = gaussian_matrix(d_x, 1, 1.0, rng);
        const spectra::ThinSvd svd = spectra::thin_svd(x);
        const Matrix sigma = spectra::covariance(x);
        const Vector beta = svd.singulars.cwiseInverse().asDiagonal() * (svd.left.transpose() * point);
        for (std::size_t i = 0; i < p_list.size(); ++i) {
            const double p = p_list[i];
            const spectra::Preconditioner pm = spectra::matrix_power(sigma, p, 0.0);
            Vector weights(d_x);
            for (int r = 0; r < d_x; ++r) weights(r) = std::pow(svd.singulars(r), 2.0 * (p + 1.0));
            const Matrix assembled = svd.right * weights.asDiagonal() * svd.right.transpose();
            const Matrix direct = spectra::gram(x, pm);
            gram_dev[i] = std::max(gram_dev[i], spectra::relative_frobenius(direct, assembled));

            const Vector c_direct = spectra::cross_gram(x, pm, point);
            const Vector c_assembled = svd.right * (weights.asDiagonal() * beta);
            cross_dev[i] = std::max(cross_dev[i], relative_vector(c_direct, c_assembled));

            if (p == -1.0) {
                has_minus_one = true;
                projector_dev = std::max(projector_dev, spectra::relative_frobenius(direct * direct, direct));
            }
        }
    }

    std::vector<CheckReport> out;
    const std::string inst = std::to_string(instances) + " instances d_x=6 N=40";
    for (std::size_t i = 0; i < p_list.size(); ++i) {
        out.push_back(make_report("gram_svd_identity", "p=" + format_real(p_list[i]) + " " + inst,
                                  gram_dev[i], tolerance));
        out.push_back(make_report("cross_gram_svd_identity", "p=" + format_real(p_list[i]) + " " + inst,
                                  cross_dev[i], tolerance));
    }
    if (has_minus_one) out.push_back(make_report("gram_projector_idempotent", "p=-1 " + inst, projector_dev, tolerance));
    return out;
}

std::vector<CheckReport> hessian_structure_check(int instances, std::uint64_t seed, double tolerance) {
    // Fewer samples than input dimensions, so the span condition is not vacuous.
    const int d_x = 8;
    const int d_h = 4;
    const int n = 6;
    const double margin = 1e-3;
    std::vector<CheckReport> out;
    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed({"verify", "hessian", std::to_string(seed), std::to_string(k)}));
        model::MlpParams params;
        Matrix x;
        Matrix y;
        Eigen::Index neuron = -1;
        for (int attempt = 0; attempt < 1000 && neuron < 0; ++attempt) {
            x = gaussian_matrix(d_x, n, 1.0, rng);
            y = gaussian_matrix(1, n, 1.0, rng);
            params = model::MlpParams::zeros(d_x, d_h, 1);
            params.W1 = gaussian_matrix(d_x, d_h, 1.0 / std::sqrt(static_cast<double>(d_x)), rng);
            params.W2 = gaussian_matrix(d_h, 1, 1.0, rng);
            params.b2 = gaussian_matrix(1, 1, 0.1, rng).col(0);
            const Matrix z = params.W1.transpose() * x;
            for (Eigen::Index j = 0; j < d_h; ++j) {
                const bool kink_free = (z.row(j).array().abs() > margin).all();
                const bool active = (z.row(j).array() > 0.0).any();
                if (kink_free && active) {
                    neuron = j;
                    break;
                }
            }
        }
        const std::string inst = "instance " + std::to_string(k) + " neuron " + std::to_string(neuron);
        if (neuron < 0) {
            out.push_back(make_report("per_neuron_hessian_vs_fd", inst + " (no kink-free neuron)",
                                      std::numeric_limits<double>::infinity(), tolerance));
            continue;
        }
        const model::NeuronHessian closed = model::per_neuron_hessian(params, x, y, neuron, margin);

        // Finite-difference block: columns are HVPs with unit vectors on W1(:, neuron).
        Matrix fd(d_x, d_x);
        const auto total = params.size();
        for (int i = 0; i < d_x; ++i) {
            Vector e = Vector::Zero(total);
            e(neuron * d_x + i) = 1.0;
            const Vector hv = model::hvp(params, x, y, e);
            fd.col(i) = hv.segment(neuron * d_x, d_x);
        }
        fd = 0.5 * (fd + fd.transpose());
        out.push_back(make_report("per_neuron_hessian_vs_fd", inst,
                                  spectra::relative_frobenius(closed.hessian, fd), tolerance));

        const Eigen::HouseholderQR<Matrix> qr(x);
        const Matrix q = qr.householderQ() * Matrix::Identity(d_x, n);
        const Matrix residual = closed.hessian - q * (q.transpose() * closed.hessian);
        const double scale = std::max(closed.hessian.norm(), 1e-300);
        out.push_back(make_report("per_neuron_hessian_in_span", inst, residual.norm() / scale, 1e-8));
    }
    return out;
}

std::vector<CheckReport> gradient_suite(int instances, std::uint64_t seed) {
    const int d_x = 5;
    const int d_h = 8;
    const int n = 16;
    const double h = 1e-5;
    double worst_grad = 0.0;
    double worst_linearity = 0.0;
    double worst_zero = 0.0;
    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed({"verify", "gradient", std::to_string(seed), std::to_string(k)}));
        model::MlpParams params;
        Matrix x;
        Matrix y;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            x = gaussian_matrix(d_x, n, 1.0, rng);
            y = gaussian_matrix(1, n, 1.0, rng);
            params = model::MlpParams::zeros(d_x, d_h, 1);
            params.W1 = gaussian_matrix(d_x, d_h, 1.0 / std::sqrt(static_cast<double>(d_x)), rng);
            params.W2 = gaussian_matrix(d_h, 1, 1.0 / std::sqrt(static_cast<double>(d_h)), rng);
            params.b2 = gaussian_matrix(1, 1, 0.1, rng).col(0);
            // Central differences across a ReLU kink are meaningless; redraw such instances.
            if (((params.W1.transpose() * x).array().abs() > 1e-3).all()) break;
        }
        const Vector g = model::gradient(params, x, y).as_params().flatten();
        const Vector theta = params.flatten();
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            Vector tp = theta;
            Vector tm = theta;
            tp(i) += h;
            tm(i) -= h;
            const auto lp = model::mse_loss(
                model::forward(model::MlpParams::unflatten(tp, d_x, d_h, 1), x).Yhat, y);
            const auto lm = model::mse_loss(
                model::forward(model::MlpParams::unflatten(tm, d_x, d_h, 1), x).Yhat, y);
            const double fd = (lp - lm) / (2.0 * h);
            const double a = std::abs(g(i));
            const double dev = a < 1e-8 && std::abs(fd) < 1e-8 ? std::abs(g(i) - fd)
                                                                : std::abs(g(i) - fd) / std::max(a, std::abs(fd));
            worst_grad = std::max(worst_grad, dev);
        }

        const Vector v1 = gaussian_matrix(theta.size(), 1, 1.0, rng).col(0);
        const Vector v2 = gaussian_matrix(theta.size(), 1, 1.0, rng).col(0);
        const Vector h12 = model::hvp(params, x, y, v1 + v2);
        const Vector sum = model::hvp(params, x, y, v1) + model::hvp(params, x, y, v2);
        worst_linearity = std::max(worst_linearity, relative_vector(sum, h12));

        // Labels equal to the model's own predictions: zero residual.
        const Matrix own = model::forward(params, x).Yhat;
        const Vector g0 = model::gradient(params, x, own).as_params().flatten();
        worst_zero = std::max(worst_zero, g0.cwiseAbs().maxCoeff());
    }
    const std::string inst = std::to_string(instances) + " instances d_x=5 d_h=8 N=16";
    return {make_report("gradient_vs_central_difference", inst, worst_grad, 1e-5),
            make_report("hvp_linearity", inst, worst_linearity, 1e-4),
            make_report("zero_residual_gradient", inst, worst_zero, 1e-12)};
}

std::vector<CheckReport> run_all(const config::VerifySettings& s) {
    std::vector<CheckReport> out;
    for (double p : s.invariance_p) {
        InvarianceSetup setup;
        setup.d_x = s.d_x;
        setup.d_h = s.d_h;
        setup.n = s.n;
        setup.p = p;
        setup.steps = s.steps;
        setup.lr = s.lr;
        setup.seed = s.seed;
        out.push_back(train_trajectory_invariance(setup));
        for (auto& r : test_point_invariance(setup)) out.push_back(std::move(r));
    }
    for (auto& r : spectral_identity_checks(s.identity_p, s.identity_instances, s.seed)) out.push_back(std::move(r));
    for (auto& r : hessian_structure_check(s.hessian_instances, s.seed)) out.push_back(std::move(r));
    for (auto& r : gradient_suite(s.gradient_instances, s.seed)) out.push_back(std::move(r));
    return out;
}

void write_report(const std::vector<CheckReport>& reports, const std::filesystem::path& path) {
    csv::Table table({"check", "instance", "passed", "deviation", "tolerance"});
    for (const auto& r : reports) {
        table.add_row({r.name, r.instance, r.passed ? "1" : "0", csv::number(r.deviation),
                       csv::number(r.tolerance)});
    }
    table.write(path);
}

bool all_passed(const std::vector<CheckReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed; });
}

}  // namespace precondlab::verify
