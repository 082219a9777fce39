#pragma once

// Experiment sweeps: noise robustness, class-noise OOD comparison, forward
// transfer, and the verification suite. Each writes CSV tables plus a
// manifest.json into the output directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "precondlab/config.hpp"
#include "precondlab/data.hpp"
#include "precondlab/model.hpp"
#include "precondlab/optim.hpp"
#include "precondlab/spectra.hpp"
#include "precondlab/training.hpp"
#include "precondlab/verify.hpp"

namespace precondlab::runners {

using config::ExperimentConfig;

struct RunOptions {
    std::filesystem::path out_dir = "out";
    int jobs = 1;
    std::function<void(const std::string&)> progress;  // optional, called from worker threads
};

struct ExperimentResult {
    std::vector<std::filesystem::path> files;  // written CSVs, manifest last
    bool success = true;                       // verify: every check passed
};

/// Runs f(0..n-1) on `jobs` worker threads. The first exception (by index) is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f);

/// sigma with mean_i ||P^{1/2} x_i||^2 sigma^2 = preact_var, i.e. sqrt(preact_var * N / tr(X^T P X)).
double init_sigma(const Matrix& x, const spectra::Preconditioner& p, double preact_var);

/// z-scoring of regression targets with training statistics.
struct LabelScaler {
    double mean = 0.0;
    double scale = 1.0;

    static LabelScaler fit(const Matrix& y, bool enabled);
    Matrix apply(const Matrix& y) const;
};

/// Optimizer settings for one run of the synthetic experiments.
optim::PreconditionerSpec synthetic_spec(const ExperimentConfig& config, optim::Kind kind, double p);

/// Initial parameters: P-isotropic first layer for cov_power (P = (X X^T)^p), isotropic otherwise.
model::MlpParams initial_params(const ExperimentConfig& config, const Matrix& x_train, optim::Kind kind,
                                double p, Eigen::Index d_y, std::uint64_t init_seed,
                                std::uint64_t readout_seed);

/// mean and sample standard deviation (n - 1 denominator; 0 for a single value) of finite entries.
struct Moments {
    double mean = 0.0;
    double std = 0.0;
    int count = 0;
};
Moments moments(const std::vector<double>& values);

/// Ridge penalties tried for the Task-2 readout (config value or 9 log-spaced points 1e-6..1e2).
std::vector<double> ridge_grid(const ExperimentConfig& config);

/// Classification accuracy in percent of argmax(f(X)) against labels.
double accuracy(const model::MlpParams& params, const data::LabeledImages& split);

ExperimentResult run_robustness(const ExperimentConfig& config, const RunOptions& options);
ExperimentResult run_transfer(const ExperimentConfig& config, const RunOptions& options);
ExperimentResult run_ood(const ExperimentConfig& config, const RunOptions& options);
ExperimentResult run_verify(const ExperimentConfig& config, const RunOptions& options);

/// Dispatches on config.experiment.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// manifest.json: config echo, seeds, per-file git blob hashes, and a combined content hash over
/// every deterministic output (timings.csv is listed but excluded from the combined hash).
std::filesystem::path write_manifest(const ExperimentConfig& config,
                                     const std::vector<std::filesystem::path>& files,
                                     const std::filesystem::path& out_dir);

}  // namespace precondlab::runners
