#pragma once

// Executable checks of the Gram-invariance theorems, the spectral identities,
// the per-neuron Hessian structure and the gradient / HVP machinery.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "precondlab/config.hpp"

namespace precondlab::verify {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct CheckReport {
    std::string name;
    std::string instance;
    bool passed = false;
    double deviation = 0.0;
    double tolerance = 0.0;
};

struct InvarianceSetup {
    int d_x = 10;
    int d_h = 32;
    int n = 50;
    double p = 0.0;
    int steps = 100;
    double lr = 1e-2;
    std::uint64_t seed = 0;
    bool identity_rotation = false;  // O = I instead of a random orthogonal matrix
};

/// Random orthogonal matrix (QR of a Gaussian matrix, sign-fixed so the draw is deterministic).
Matrix random_orthogonal(int d, std::uint64_t seed);

/// Trains (X, W1) and the pushforward (O X, O W1) with covariance-power steps and compares the
/// training pre-activations and readout parameters at every step.
CheckReport train_trajectory_invariance(const InvarianceSetup& setup, double tolerance = 1e-8);

/// Same paired construction evaluated on a test point x and its image O x. `x_test` empty means
/// a random point. Returns the pre-activation trajectory check and the final prediction check.
std::vector<CheckReport> test_point_invariance(const InvarianceSetup& setup, const Vector& x_test = Vector(),
                                               double tolerance = 1e-8);

/// Gram and cross-Gram against their SVD assemblies for every p, plus projector idempotence at p = -1.
std::vector<CheckReport> spectral_identity_checks(const std::vector<double>& p_list, int instances,
                                                  std::uint64_t seed, double tolerance = 1e-9);

/// Closed-form per-neuron Hessian against a finite-difference block, and its column space
/// against span{x_i}.
std::vector<CheckReport> hessian_structure_check(int instances, std::uint64_t seed,
                                                 double tolerance = 1e-6);

/// Backward pass against central differences, zero-residual gradients, HVP linearity.
std::vector<CheckReport> gradient_suite(int instances, std::uint64_t seed);

/// Runs every check with the settings of config.verify.
std::vector<CheckReport> run_all(const config::VerifySettings& settings);

/// verify_report.csv: check,instance,passed,deviation,tolerance.
void write_report(const std::vector<CheckReport>& reports, const std::filesystem::path& path);

bool all_passed(const std::vector<CheckReport>& reports);

}  // namespace precondlab::verify
