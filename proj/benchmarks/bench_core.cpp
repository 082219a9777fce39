#include <benchmark/benchmark.h>

#include "precondlab/model.hpp"
#include "precondlab/optim.hpp"
#include "precondlab/random.hpp"
#include "precondlab/spectra.hpp"

using namespace precondlab;
using Matrix = Eigen::MatrixXd;

namespace {

Matrix draw(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian_matrix(r, c, 1.0, rng);
}

void BM_SymEig(benchmark::State& state) {
    const auto d = state.range(0);
    const Matrix m = draw(d, d, 1);
    const Matrix a = m * m.transpose();
    for (auto _ : state) benchmark::DoNotOptimize(spectra::sym_eig(a));
}
BENCHMARK(BM_SymEig)->Arg(10)->Arg(64)->Arg(256);

void BM_ThinSvd(benchmark::State& state) {
    const Matrix x = draw(state.range(0), state.range(1), 2);
    for (auto _ : state) benchmark::DoNotOptimize(spectra::thin_svd(x));
}
BENCHMARK(BM_ThinSvd)->Args({10, 200})->Args({64, 1000});

void BM_MatrixPower(benchmark::State& state) {
    const Matrix x = draw(state.range(0), 200, 3);
    const Matrix sigma = x * x.transpose();
    for (auto _ : state) benchmark::DoNotOptimize(spectra::matrix_power(sigma, -1.0));
}
BENCHMARK(BM_MatrixPower)->Arg(10)->Arg(100);

// Forward plus backward for one full batch.
void BM_Gradient(benchmark::State& state) {
    const auto d_x = state.range(0), d_h = state.range(1), n = state.range(2);
    model::MlpParams p{draw(d_x, d_h, 4), draw(d_h, 1, 5), Eigen::VectorXd::Zero(1)};
    const Matrix x = draw(d_x, n, 6);
    const Matrix y = draw(1, n, 7);
    for (auto _ : state) benchmark::DoNotOptimize(model::gradient(p, x, y));
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Gradient)->Args({10, 256, 200})->Args({784, 64, 1000})->Args({784, 64, 2000});

void BM_AdaHessianStep(benchmark::State& state) {
    model::MlpParams p{draw(10, 256, 8), draw(256, 1, 9), Eigen::VectorXd::Zero(1)};
    const Matrix x = draw(10, 200, 10);
    const Matrix y = draw(1, 200, 11);
    optim::PreconditionerSpec spec;
    spec.kind = optim::Kind::adahessian;
    spec.p = -1.0;
    spec.eps = 1e-4;
    optim::OptimState st;
    for (auto _ : state) p = optim::step_adahessian(p, x, y, spec, st, 12);
}
BENCHMARK(BM_AdaHessianStep);

}  // namespace
BENCHMARK_MAIN();
