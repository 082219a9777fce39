#include "precondlab/training.hpp"

#include <cmath>
#include <limits>

#include "precondlab/errors.hpp"

namespace precondlab::runners {

namespace {

double evaluate(const MlpParams& params, const Matrix& x, const Matrix& y) {
    if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
    return model::mse_loss(model::forward(params, x).Yhat, y);
}

}  // namespace

TrainResult train_full_batch(MlpParams params, const Matrix& x_train, const Matrix& y_train,
                             const Matrix& x_test, const Matrix& y_test,
                             const optim::PreconditionerSpec& spec, const TrainOptions& options) {
    spec.validate();
    if (options.steps < 0) throw ConfigError("train_full_batch: steps must be >= 0");
    const int log_every = options.log_every > 0 ? options.log_every : options.steps;

    TrainResult result;
    optim::OptimState state;

    auto diverged = [&](double loss, const char* why) {
        result.diverged = true;
        result.diverged_reason = why;
        result.trajectory.push_back({result.steps_completed, loss, evaluate(params, x_test, y_test)});
    };
    auto log_row = [&]() -> bool {
        const double train = evaluate(params, x_train, y_train);
        if (!std::isfinite(train) || train > options.divergence_threshold) {
            diverged(train, "training loss non-finite or above the divergence threshold");
            return false;
        }
        result.trajectory.push_back({result.steps_completed, train, evaluate(params, x_test, y_test)});
        return true;
    };

    if (!log_row()) {
        result.params = std::move(params);
        return result;
    }
    for (int t = 1; t <= options.steps; ++t) {
        try {
            params = optim::step(params, x_train, y_train, spec, state, options.seed);
        } catch (const NumericError& e) {
            diverged(std::numeric_limits<double>::quiet_NaN(), e.what());
            break;
        }
        result.steps_completed = t;
        if (!params.all_finite()) {
            diverged(std::numeric_limits<double>::quiet_NaN(), "parameters became non-finite");
            break;
        }
        if (t % log_every == 0 || t == options.steps) {
            if (!log_row()) break;
        }
    }
    result.params = std::move(params);
    return result;
}

}  // namespace precondlab::runners
