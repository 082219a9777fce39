#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "precondlab/model.hpp"
#include "precondlab/optim.hpp"

namespace precondlab::runners {

using model::Matrix;
using model::MlpParams;

struct TrainOptions {
    int steps = 10000;
    int log_every = 50;
    double divergence_threshold = 1e12;
    std::uint64_t seed = 0;  // optimizer randomness (Hutchinson probes)
};

struct TrajectoryRow {
    int step = 0;
    double train_mse = 0.0;
    double test_mse = 0.0;
};

struct TrainResult {
    MlpParams params;
    std::vector<TrajectoryRow> trajectory;  // step 0, every log_every steps, and the last step
    int steps_completed = 0;
    bool diverged = false;
    std::string diverged_reason;
};

/// Full-batch training. Rows are logged at step 0, every `log_every` steps and at the end.
/// A run whose loss becomes non-finite or exceeds the divergence threshold stops early and is flagged.
/// `x_test` / `y_test` may be empty matrices, in which case test_mse is NaN.
TrainResult train_full_batch(MlpParams params, const Matrix& x_train, const Matrix& y_train,
                             const Matrix& x_test, const Matrix& y_test,
                             const optim::PreconditionerSpec& spec, const TrainOptions& options);

}  // namespace precondlab::runners
