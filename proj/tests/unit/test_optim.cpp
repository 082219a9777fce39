#include <cmath>
#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/model.hpp"
#include "precondlab/optim.hpp"
#include "precondlab/random.hpp"

using namespace precondlab;
using model::MlpParams;
using optim::Kind;
using optim::OptimState;
using optim::PreconditionerSpec;
using testutil::gaussian;
using testutil::Matrix;
using testutil::rel_fro;
using testutil::Vector;

namespace {

MlpParams random_params(Eigen::Index dx, Eigen::Index dh, Eigen::Index dy, unsigned seed) {
    return MlpParams{gaussian(dx, dh, seed), gaussian(dh, dy, seed + 1) / std::sqrt(double(dh)),
                     gaussian(dy, 1, seed + 2)};
}

PreconditionerSpec spec_of(Kind k, double lr = 0.1) {
    PreconditionerSpec s;
    s.kind = k;
    s.lr = lr;
    return s;
}

double max_diff(const MlpParams& a, const MlpParams& b) { return (a.flatten() - b.flatten()).cwiseAbs().maxCoeff(); }

// Scalar model f = W2 * relu(W1 * 1) + b2 on one sample with target 0.
MlpParams scalar_model(double w1, double w2) {
    MlpParams p = MlpParams::zeros(1, 1, 1);
    p.W1(0, 0) = w1;
    p.W2(0, 0) = w2;
    return p;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("kind names round-trip and unknown names are config errors") {
    for (Kind k : {Kind::gd, Kind::cov_power, Kind::adahessian, Kind::adam, Kind::sam_gd})
        CHECK(optim::kind_from_string(optim::to_string(k)) == k);
    CHECK_THROWS_AS(optim::kind_from_string("kfac"), ConfigError);
}

TEST_CASE("spec validation") {
    auto s = spec_of(Kind::sam_gd);
    s.rho = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    auto a = spec_of(Kind::adam);
    a.beta1 = 1.0;
    CHECK_THROWS_AS(a.validate(), ConfigError);
    CHECK_NOTHROW(spec_of(Kind::gd).validate());
}

TEST_CASE("cov_power: p = 0 equals GD, no gradient no motion, diagonal scaling") {
    const MlpParams p = random_params(3, 4, 1, 1);
    const Matrix x = gaussian(3, 6, 2);
    const Matrix y = gaussian(1, 6, 3);
    OptimState s1, s2;
    auto cov = spec_of(Kind::cov_power);
    CHECK(max_diff(optim::step_cov_power(p, x, y, cov, s1), optim::step_gd(p, x, y, spec_of(Kind::gd), s2)) < 1e-15);

    OptimState s3;
    const Matrix yself = model::forward(p, x).Yhat;
    cov.p = -1.0;
    CHECK(max_diff(optim::step_cov_power(p, x, yself, cov, s3), p) == 0.0);

    // X X^T = diag(10, 0.1): the W1 step is the gradient scaled by (0.1, 10) per input coordinate.
    Matrix xd = Matrix::Zero(2, 2);
    xd(0, 0) = std::sqrt(10.0);
    xd(1, 1) = std::sqrt(0.1);
    const MlpParams q = random_params(2, 3, 1, 4);
    const Matrix yd = gaussian(1, 2, 5);
    OptimState s4;
    const MlpParams next = optim::step_cov_power(q, xd, yd, cov, s4);
    const Matrix g = model::gradient(q, xd, yd).dW1;
    Matrix expected = g;
    expected.row(0) *= 0.1;
    expected.row(1) *= 10.0;
    CHECK(rel_fro((q.W1 - next.W1) / cov.lr, expected) < 1e-10);
    CHECK(rel_fro((q.W2 - next.W2) / cov.lr, model::gradient(q, xd, yd).dW2) < 1e-12);
}

TEST_CASE("adahessian: p = 0 with beta1 = 0 is a plain GD step") {
    const MlpParams p = random_params(3, 4, 2, 10);
    const Matrix x = gaussian(3, 5, 11);
    const Matrix y = gaussian(2, 5, 12);
    auto ada = spec_of(Kind::adahessian);
    ada.p = 0.0;
    ada.beta1 = 0.0;
    OptimState s1, s2;
    CHECK(max_diff(optim::step_adahessian(p, x, y, ada, s1, 7), optim::step_gd(p, x, y, spec_of(Kind::gd), s2)) <
          1e-15);
}

TEST_CASE("hutchinson diagonal converges to the Hessian diagonal") {
    const MlpParams p = random_params(2, 3, 1, 20);
    const Matrix x = gaussian(2, 4, 21);
    const Matrix y = gaussian(1, 4, 22);
    Vector exact(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        Vector e = Vector::Zero(p.size());
        e(i) = 1.0;
        exact(i) = model::hvp(p, x, y, e)(i);
    }
    const Vector est = optim::hutchinson_diagonal(p, x, y, 20000, 5);
    CHECK((est - exact).cwiseAbs().maxCoeff() < 0.05 * exact.cwiseAbs().maxCoeff());
}

TEST_CASE("adahessian: 1-D quadratic probe gives a Newton-like step at p = -1") {
    // loss = (W1 W2)^2 = a * W2^2 with a = W1^2; the W2 curvature is 2a.
    const double a = 3.0;
    const double w2 = 0.8;
    const MlpParams p = scalar_model(std::sqrt(a), w2);
    const Matrix x = Matrix::Ones(1, 1);
    const Matrix y = Matrix::Zero(1, 1);
    auto ada = spec_of(Kind::adahessian, 0.1);
    ada.p = -1.0;
    ada.beta1 = 0.0;
    ada.beta2 = 0.0;
    ada.eps = 1e-12;
    ada.hutchinson_samples = 20000;
    OptimState s;
    const MlpParams next = optim::step_adahessian(p, x, y, ada, s, 3);
    const double g = 2.0 * a * w2;
    CHECK(next.W2(0, 0) - w2 == doctest::Approx(-ada.lr * g / (2.0 * a)).epsilon(0.05));
}

TEST_CASE("adahessian: update formula against an independent elementwise evaluation") {
    const MlpParams p = random_params(3, 2, 1, 30);
    const Matrix x = gaussian(3, 6, 31);
    const Matrix y = gaussian(1, 6, 32);
    for (double power : {1.0, -0.5, -1.0, -2.0}) {
        auto ada = spec_of(Kind::adahessian, 0.05);
        ada.p = power;
        ada.eps = 1e-4;
        OptimState s;
        const std::uint64_t seed = 99;
        const MlpParams next = optim::step_adahessian(p, x, y, ada, s, seed);
        // one step: mhat = g, vhat = D^2
        const Vector d = optim::hutchinson_diagonal(p, x, y, 1, derive_seed(seed, 0));
        const Vector g = model::gradient(p, x, y).as_params().flatten();
        Vector expected = p.flatten();
        for (Eigen::Index i = 0; i < g.size(); ++i)
            expected(i) -= ada.lr * g(i) / (std::pow(std::abs(d(i)), -power) + ada.eps);
        CHECK(rel_fro(p.flatten() - next.flatten(), p.flatten() - expected) < 1e-10);
    }
}

TEST_CASE("adahessian: readout stays on plain GD when not preconditioned") {
    const MlpParams p = random_params(3, 2, 1, 35);
    const Matrix x = gaussian(3, 6, 36);
    const Matrix y = gaussian(1, 6, 37);
    auto ada = spec_of(Kind::adahessian, 0.05);
    ada.p = -1.0;
    ada.precondition_readout = false;
    OptimState s;
    const MlpParams next = optim::step_adahessian(p, x, y, ada, s, 1);
    const auto g = model::gradient(p, x, y);
    CHECK(rel_fro(p.W2 - next.W2, ada.lr * g.dW2) < 1e-12);
}

TEST_CASE("adahessian: equal seeds give bitwise-equal trajectories") {
    const MlpParams p = random_params(3, 4, 1, 40);
    const Matrix x = gaussian(3, 8, 41);
    const Matrix y = gaussian(1, 8, 42);
    auto ada = spec_of(Kind::adahessian, 0.01);
    ada.p = -1.0;
    MlpParams a = p, b = p;
    OptimState sa, sb;
    for (int t = 0; t < 5; ++t) {
        a = optim::step_adahessian(a, x, y, ada, sa, 123);
        b = optim::step_adahessian(b, x, y, ada, sb, 123);
    }
    CHECK(max_diff(a, b) == 0.0);
}

TEST_CASE("adam: zero gradient, unit-size first step and a hand-stepped trace") {
    const MlpParams p = random_params(2, 3, 1, 50);
    const Matrix x = gaussian(2, 4, 51);
    OptimState s0;
    const Matrix yself = model::forward(p, x).Yhat;
    auto adam = spec_of(Kind::adam, 0.01);
    MlpParams still = p;
    for (int t = 0; t < 3; ++t) still = optim::step_adam(still, x, yself, adam, s0);
    CHECK(max_diff(still, p) == 0.0);

    const Matrix y = gaussian(1, 4, 52);
    OptimState s1;
    const MlpParams first = optim::step_adam(p, x, y, adam, s1);
    const Vector g = model::gradient(p, x, y).as_params().flatten();
    const Vector step = (p.flatten() - first.flatten()).cwiseAbs();
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (std::abs(g(i)) > 1e-3) CHECK(step(i) == doctest::Approx(adam.lr).epsilon(1e-4));
    }

    // three iterations, scalar recursions per coordinate
    OptimState s2;
    MlpParams cur = p;
    Vector theta = p.flatten(), m = Vector::Zero(p.size()), v = Vector::Zero(p.size());
    for (int t = 1; t <= 3; ++t) {
        const Vector gt =
            model::gradient(MlpParams::unflatten(theta, 2, 3, 1), x, y).as_params().flatten();
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            m(i) = 0.9 * m(i) + 0.1 * gt(i);
            v(i) = 0.999 * v(i) + 0.001 * gt(i) * gt(i);
            const double mh = m(i) / (1.0 - std::pow(0.9, t));
            const double vh = v(i) / (1.0 - std::pow(0.999, t));
            theta(i) -= adam.lr * mh / (std::sqrt(vh) + adam.eps);
        }
        cur = optim::step_adam(cur, x, y, adam, s2);
    }
    CHECK((cur.flatten() - theta).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("sam: rho = 0, zero gradient and the perturbed-point step") {
    const MlpParams p = random_params(2, 3, 1, 60);
    const Matrix x = gaussian(2, 5, 61);
    const Matrix y = gaussian(1, 5, 62);
    auto sam = spec_of(Kind::sam_gd, 0.05);
    sam.rho = 0.0;
    OptimState s1, s2;
    CHECK(max_diff(optim::step_sam(p, x, y, sam, s1), optim::step_gd(p, x, y, spec_of(Kind::gd, 0.05), s2)) == 0.0);

    sam.rho = 0.1;
    OptimState s3;
    CHECK(max_diff(optim::step_sam(p, x, model::forward(p, x).Yhat, sam, s3), p) == 0.0);

    // scalar: loss = (W1 W2)^2 in W2 with W1 = 1, ascent to w + rho * sign(g) over all coordinates
    const MlpParams q = scalar_model(1.0, 0.5);
    const Matrix x1 = Matrix::Ones(1, 1), y1 = Matrix::Zero(1, 1);
    // g = (dW1, dW2, db2) = (2 w2 f, 2 w1 f, 2 f) with f = w1 w2 = 0.5 -> (0.5, 1, 1)
    const double gn = std::sqrt(0.25 + 1.0 + 1.0);
    const double w1a = 1.0 + 0.1 * 0.5 / gn, w2a = 0.5 + 0.1 * 1.0 / gn, b2a = 0.1 * 1.0 / gn;
    const double fa = w1a * w2a + b2a;
    OptimState s4;
    const MlpParams next = optim::step_sam(q, x1, y1, sam, s4);
    CHECK(next.W1(0, 0) == doctest::Approx(1.0 - 0.05 * 2.0 * w2a * fa).epsilon(1e-12));
    CHECK(next.W2(0, 0) == doctest::Approx(0.5 - 0.05 * 2.0 * w1a * fa).epsilon(1e-12));
    CHECK(next.b2(0) == doctest::Approx(-0.05 * 2.0 * fa).epsilon(1e-12));
}

TEST_CASE("ridge: exact interpolation, strong penalty limit and perturbation optimality") {
    const Eigen::Index n = 6;
    const Matrix h = Matrix::Identity(n, n);
    const Matrix y = gaussian(1, n, 70);
    const auto exact = optim::ridge_closed_form(h, y, 0.0);
    Matrix pred = exact.W2.transpose() * h;
    pred.colwise() += exact.b2;
    CHECK((pred - y).cwiseAbs().maxCoeff() < 1e-10);

    const Matrix hr = gaussian(4, 30, 71);
    const Matrix yr = gaussian(2, 30, 72);
    const auto big = optim::ridge_closed_form(hr, yr, 1e12);
    CHECK(big.W2.cwiseAbs().maxCoeff() < 1e-9);
    CHECK((big.b2 - yr.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-9);

    const double lambda = 0.3;
    const auto sol = optim::ridge_closed_form(hr, yr, lambda);
    const double best = optim::ridge_objective(hr, yr, sol.W2, sol.b2, lambda);
    std::mt19937_64 rng(73);
    std::normal_distribution<double> nd(0.0, 1e-3);
    int worse = 0;
    for (int k = 0; k < 10000; ++k) {
        Matrix w = sol.W2;
        Vector b = sol.b2;
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += nd(rng);
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) += nd(rng);
        worse += optim::ridge_objective(hr, yr, w, b, lambda) >= best;
    }
    CHECK(worse == 10000);
}

}
