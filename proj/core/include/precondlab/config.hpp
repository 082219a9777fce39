#pragma once

// Experiment configuration: JSON in, strict schema, dotted-path overrides.
// Every key of a config file must exist in the defaults of its experiment,
// so typos surface as ConfigError instead of silently using a default.

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace precondlab::config {

using Json = nlohmann::ordered_json;

struct AdaHessianSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-4;
    int hutchinson_samples = 1;
    int hessian_interval = 1;
    bool precondition_readout = true;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TransferSettings {
    std::vector<std::string> directions{"HighToLow", "LowToHigh"};
    double snr = 1.0;
    int n_val = 200;
    std::vector<double> ridge_grid;  // empty -> 9 log-spaced points 1e-6 .. 1e2
};

struct OodSettings {
    std::string mnist_images = "data/mnist/images.idx3-ubyte";
    std::string mnist_labels = "data/mnist/labels.idx1-ubyte";
    double sigma_n = 0.1;
    int n_val = 500;
    int n_test = 2000;
    std::vector<std::string> optimizers{"gd", "sam_gd", "adam", "adahessian"};
    std::vector<double> adahessian_p{1.0, 0.0, -1.0, -2.0};
    std::vector<double> lr_grid{1e-3, 1e-2, 1e-1};
    std::vector<double> rho_grid{0.01, 0.05, 0.1};
    int tune_seeds = 0;  // grid search uses the first k seeds; 0 means all
};

struct VerifySettings {
    std::vector<double> invariance_p{-2.0, -1.0, -0.5, 0.0};
    std::vector<double> identity_p{-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0};
    int d_x = 10;
    int d_h = 32;
    int n = 50;
    int steps = 100;
    double lr = 1e-2;
    int identity_instances = 20;
    int hessian_instances = 10;
    int gradient_instances = 20;
    unsigned long long seed = 0;
};

struct ExperimentConfig {
    std::string experiment = "robustness";  // robustness | ood | transfer | verify
    std::vector<std::string> cases{"High", "Low"};
    std::vector<std::string> preconditioners{"cov_power", "adahessian"};
    std::vector<double> p_list{0.0, -0.5, -1.0, -1.5, -2.0};
    std::vector<double> snr_list{5.0, 4.0, 3.0, 2.0, 1.0};
    std::vector<int> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    int steps = 10000;
    int log_every = 50;
    double lr = 1e-2;
    double weight_decay = 1e-6;
    int d_x = 10;
    int d_h = 256;
    int n_train = 200;
    int n_test = 10000;
    double lambda = 10.0;
    double init_preact_var = 0.1;
    bool standardize_labels = true;
    double eigen_floor = 1e-10;
    double divergence_threshold = 1e12;
    double sam_rho = 0.05;
    AdaHessianSettings adahessian;
    AdamSettings adam;
    TransferSettings transfer;
    OodSettings ood;
    VerifySettings verify;
    std::string output_dir = "out";

    /// Throws ConfigError on out-of-range or inconsistent fields.
    void validate() const;
};

/// Defaults for an experiment tag. Throws ConfigError on an unknown tag.
ExperimentConfig default_config(std::string_view experiment);

Json to_json(const ExperimentConfig& config);
/// Strict conversion: every field must have the right type. Throws ConfigError.
ExperimentConfig from_json(const Json& j);

/// Parses JSON text; syntax errors become ConfigError with line and column.
Json parse_json_text(const std::string& text, const std::string& origin);

/// Recursively overlays `patch` onto `base`. Keys absent from `base` are rejected.
void merge_strict(Json& base, const Json& patch, const std::string& path = "");

/// Applies `a.b.c=value`; the value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(Json& base, const std::string& assignment);

/// defaults(experiment) <- file (optional) <- overrides. `experiment` may be empty, in which case
/// the file's "experiment" field (or "robustness") decides which defaults apply.
ExperimentConfig load_config(std::string_view experiment, const std::string& config_path,
                             const std::vector<std::string>& overrides);

}  // namespace precondlab::config
