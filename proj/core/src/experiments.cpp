#include "precondlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "precondlab/csv.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/random.hpp"

#ifndef PRECONDLAB_VERSION
#define PRECONDLAB_VERSION "unknown"
#endif

namespace precondlab::runners {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string seed_text(int seed) { return std::to_string(seed); }

void report(const RunOptions& options, std::atomic<std::size_t>& done, std::size_t total,
            const std::string& what, double secs) {
    const std::size_t k = ++done;
    if (!options.progress) return;
    std::ostringstream msg;
    msg << "[" << k << "/" << total << "] " << what << " (" << csv::number(std::round(secs * 100.0) / 100.0)
        << " s)";
    options.progress(msg.str());
}

std::string bool_text(bool b) { return b ? "1" : "0"; }

struct Timing {
    std::string run_id;
    double seconds = 0.0;
};

std::filesystem::path write_timings(const std::vector<Timing>& timings, const std::filesystem::path& dir) {
    csv::Table t({"run_id", "wall_seconds"});
    for (const auto& x : timings) t.add_row({x.run_id, csv::number(x.seconds)});
    const auto path = dir / "timings.csv";
    t.write(path);
    return path;
}

double last_train(const TrainResult& r) { return r.trajectory.empty() ? kNaN : r.trajectory.back().train_mse; }
double last_test(const TrainResult& r) { return r.trajectory.empty() ? kNaN : r.trajectory.back().test_mse; }

}  // namespace

// ---------------------------------------------------------------------------
// shared helpers

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double init_sigma(const Matrix& x, const spectra::Preconditioner& p, double preact_var) {
    const double trace = (x.transpose() * p.matrix * x).trace();
    if (!(trace > 0.0)) throw NumericError("init_sigma: tr(X^T P X) must be positive");
    return std::sqrt(preact_var * static_cast<double>(x.cols()) / trace);
}

LabelScaler LabelScaler::fit(const Matrix& y, bool enabled) {
    LabelScaler s;
    if (!enabled || y.size() == 0) return s;
    s.mean = y.mean();
    const double var = (y.array() - s.mean).square().mean();
    s.scale = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
}

Matrix LabelScaler::apply(const Matrix& y) const { return (y.array() - mean) / scale; }

optim::PreconditionerSpec synthetic_spec(const ExperimentConfig& c, optim::Kind kind, double p) {
    optim::PreconditionerSpec s;
    s.kind = kind;
    s.p = p;
    s.lr = c.lr;
    s.weight_decay = c.weight_decay;
    s.eigen_floor = c.eigen_floor;
    s.rho = c.sam_rho;
    if (kind == optim::Kind::adahessian) {
        s.beta1 = c.adahessian.beta1;
        s.beta2 = c.adahessian.beta2;
        s.eps = c.adahessian.eps;
        s.hutchinson_samples = c.adahessian.hutchinson_samples;
        s.hessian_interval = c.adahessian.hessian_interval;
        s.precondition_readout = c.adahessian.precondition_readout;
    } else if (kind == optim::Kind::adam) {
        s.beta1 = c.adam.beta1;
        s.beta2 = c.adam.beta2;
        s.eps = c.adam.eps;
    }
    return s;
}

model::MlpParams initial_params(const ExperimentConfig& c, const Matrix& x_train, optim::Kind kind, double p,
                                Eigen::Index d_y, std::uint64_t init_seed, std::uint64_t readout_seed) {
    const spectra::Preconditioner metric = kind == optim::Kind::cov_power
                                               ? optim::covariance_preconditioner(x_train, p, c.eigen_floor)
                                               : spectra::identity_preconditioner(x_train.rows());
    model::MlpParams params = model::MlpParams::zeros(x_train.rows(), c.d_h, d_y);
    params.W1 = model::init_p_isotropic(metric, init_sigma(x_train, metric, c.init_preact_var), c.d_h, init_seed);
    model::init_readout(params, readout_seed);
    return params;
}

Moments moments(const std::vector<double>& values) {
    Moments m;
    double sum = 0.0;
    for (double v : values) {
        if (std::isfinite(v)) {
            sum += v;
            ++m.count;
        }
    }
    if (m.count == 0) {
        m.mean = kNaN;
        m.std = kNaN;
        return m;
    }
    m.mean = sum / m.count;
    if (m.count > 1) {
        double ss = 0.0;
        for (double v : values) {
            if (std::isfinite(v)) ss += (v - m.mean) * (v - m.mean);
        }
        m.std = std::sqrt(ss / (m.count - 1));
    }
    return m;
}

std::vector<double> ridge_grid(const ExperimentConfig& c) {
    if (!c.transfer.ridge_grid.empty()) return c.transfer.ridge_grid;
    std::vector<double> grid;
    for (int k = 0; k < 9; ++k) grid.push_back(std::pow(10.0, -6.0 + k));
    return grid;
}

double accuracy(const model::MlpParams& params, const data::LabeledImages& split) {
    if (split.labels.empty()) return kNaN;
    if (!params.all_finite()) return kNaN;
    const std::vector<int> pred = model::argmax_columns(model::forward(params, split.X).Yhat);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == split.labels[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::filesystem::path write_manifest(const ExperimentConfig& c, const std::vector<std::filesystem::path>& files,
                                     const std::filesystem::path& out_dir) {
    config::Json m;
    m["tool"] = "precondlab";
    m["version"] = PRECONDLAB_VERSION;
    m["experiment"] = c.experiment;
    m["seeds"] = c.seeds;
    m["config"] = config::to_json(c);
    config::Json outputs = config::Json::array();
    std::string listing;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        const bool deterministic = name != "timings.csv";
        const std::string sha = csv::git_blob_sha1_file(f);
        outputs.push_back({{"file", name},
                           {"bytes", std::filesystem::file_size(f)},
                           {"git_blob_sha1", sha},
                           {"deterministic", deterministic}});
        if (deterministic) listing += sha + "  " + name + "\n";
    }
    m["outputs"] = outputs;
    m["content_hash"] = csv::git_blob_sha1(listing);
    const auto path = out_dir / "manifest.json";
    csv::write_file_atomic(path, m.dump(2) + "\n");
    return path;
}

// ---------------------------------------------------------------------------
// robustness

namespace {

struct SyntheticRun {
    TrainResult result;
    double sigma_noise = 0.0;
    double noise_floor = 0.0;  // label-noise variance in the reported (scaled) units
    double seconds = 0.0;
};

// Seeds depend on (experiment, case, snr, seed index) only, so every p and preconditioner sees the
// same data and the same Gaussian draw for its initial weights.
SyntheticRun robustness_run(const ExperimentConfig& c, data::Case cs, optim::Kind kind, double p, double snr,
                            int seed) {
    const auto start = Clock::now();
    const std::string case_name(data::to_string(cs));
    const std::string snr_text = format_real(snr);
    const std::string s = seed_text(seed);
    const data::SpectrumSpec spectrum = data::make_spectrum(cs, c.d_x, c.lambda);
    const data::TeacherSpec teacher = data::make_teacher(cs, c.d_x);

    data::Dataset train = data::synth_generate(spectrum, teacher, c.n_train, snr,
                                               derive_seed({"robustness", "train", case_name, snr_text, s}));
    data::Dataset test = data::synth_generate_with_sigma(spectrum, teacher, c.n_test, train.meta.sigma_noise,
                                                         derive_seed({"robustness", "test", case_name, snr_text, s}));
    const LabelScaler scaler = LabelScaler::fit(train.Y, c.standardize_labels);
    const Matrix y_train = scaler.apply(train.Y);
    const Matrix y_test = scaler.apply(test.Y);

    const model::MlpParams init = initial_params(c, train.X, kind, p, 1,
                                                 derive_seed({"robustness", "init", case_name, snr_text, s}),
                                                 derive_seed({"robustness", "readout", case_name, snr_text, s}));
    TrainOptions opts;
    opts.steps = c.steps;
    opts.log_every = c.log_every;
    opts.divergence_threshold = c.divergence_threshold;
    opts.seed = derive_seed({"robustness", "optimizer", case_name, std::string(optim::to_string(kind)),
                             format_real(p), snr_text, s});

    SyntheticRun run;
    run.result = train_full_batch(init, train.X, y_train, test.X, y_test, synthetic_spec(c, kind, p), opts);
    run.sigma_noise = train.meta.sigma_noise;
    run.noise_floor = std::pow(train.meta.sigma_noise / scaler.scale, 2);
    run.seconds = seconds_since(start);
    return run;
}

}  // namespace

ExperimentResult run_robustness(const ExperimentConfig& c, const RunOptions& options) {
    struct Task {
        std::string case_name;
        std::string precond;
        double p;
        double snr;
        int seed;
    };
    std::vector<Task> tasks;
    for (const auto& cs : c.cases)
        for (const auto& k : c.preconditioners)
            for (double p : c.p_list)
                for (double snr : c.snr_list)
                    for (int seed : c.seeds) tasks.push_back({cs, k, p, snr, seed});

    std::vector<SyntheticRun> runs(tasks.size());
    std::atomic<std::size_t> done{0};
    auto run_id = [&](const Task& t) {
        return "robustness/" + t.case_name + "/" + t.precond + "/p=" + format_real(t.p) +
               "/snr=" + format_real(t.snr) + "/seed=" + seed_text(t.seed);
    };
    parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
        const Task& t = tasks[i];
        runs[i] = robustness_run(c, data::case_from_string(t.case_name), optim::kind_from_string(t.precond), t.p,
                                 t.snr, t.seed);
        report(options, done, tasks.size(), run_id(t), runs[i].seconds);
    });

    std::filesystem::create_directories(options.out_dir);
    csv::Table traj({"case", "preconditioner", "p", "snr", "seed", "step", "train_mse", "test_mse"});
    csv::Table runs_csv({"case", "preconditioner", "p", "snr", "seed", "steps_completed", "diverged", "sigma_noise",
                         "noise_floor", "final_train_mse", "final_test_mse"});
    std::vector<Timing> timings;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Task& t = tasks[i];
        const SyntheticRun& r = runs[i];
        const std::vector<std::string> key{t.case_name, t.precond, format_real(t.p), format_real(t.snr),
                                           seed_text(t.seed)};
        for (const auto& row : r.result.trajectory) {
            auto fields = key;
            fields.push_back(std::to_string(row.step));
            fields.push_back(csv::number(row.train_mse));
            fields.push_back(csv::number(row.test_mse));
            traj.add_row(std::move(fields));
        }
        auto fields = key;
        fields.push_back(std::to_string(r.result.steps_completed));
        fields.push_back(bool_text(r.result.diverged));
        fields.push_back(csv::number(r.sigma_noise));
        fields.push_back(csv::number(r.noise_floor));
        fields.push_back(csv::number(last_train(r.result)));
        fields.push_back(csv::number(last_test(r.result)));
        runs_csv.add_row(std::move(fields));
        timings.push_back({run_id(t), r.seconds});
    }

    csv::Table summary({"case", "preconditioner", "p", "snr", "n_seeds", "n_diverged", "mean_final_test_mse",
                        "std_final_test_mse", "mean_final_train_mse", "std_final_train_mse"});
    const std::size_t per_cell = c.seeds.size();
    for (std::size_t start = 0; start < tasks.size(); start += per_cell) {
        std::vector<double> test;
        std::vector<double> train;
        int diverged = 0;
        for (std::size_t i = start; i < start + per_cell; ++i) {
            if (runs[i].result.diverged) {
                ++diverged;
                continue;
            }
            test.push_back(last_test(runs[i].result));
            train.push_back(last_train(runs[i].result));
        }
        const Task& t = tasks[start];
        const Moments mt = moments(test);
        const Moments mr = moments(train);
        summary.add_row({t.case_name, t.precond, format_real(t.p), format_real(t.snr), std::to_string(per_cell),
                         std::to_string(diverged), csv::number(mt.mean), csv::number(mt.std), csv::number(mr.mean),
                         csv::number(mr.std)});
    }

    ExperimentResult out;
    const auto dir = options.out_dir;
    traj.write(dir / "robustness_traj.csv");
    runs_csv.write(dir / "robustness_runs.csv");
    summary.write(dir / "robustness_summary.csv");
    out.files = {dir / "robustness_summary.csv", dir / "robustness_runs.csv", dir / "robustness_traj.csv",
                 write_timings(timings, dir)};
    out.files.push_back(write_manifest(c, out.files, dir));
    return out;
}

// ---------------------------------------------------------------------------
// transfer

namespace {

struct TransferRun {
    TrainResult task1;
    double task2_lambda = kNaN;
    double task2_val_mse = kNaN;
    double task2_test_mse = kNaN;
    bool task2_pseudo_inverse = false;
    double seconds = 0.0;
};

TransferRun transfer_run(const ExperimentConfig& c, data::Direction dir, optim::Kind kind, double p, int seed) {
    const auto start = Clock::now();
    const std::string d(data::to_string(dir));
    const std::string s = seed_text(seed);
    const data::TransferSetup setup = data::make_transfer_setup(dir, c.d_x, c.lambda);
    const double snr = c.transfer.snr;

    data::Dataset t1 = data::synth_generate(setup.spectrum, setup.task1, c.n_train, snr,
                                            derive_seed({"transfer", "task1-train", d, s}));
    data::Dataset t1_test = data::synth_generate_with_sigma(setup.spectrum, setup.task1, c.n_test, t1.meta.sigma_noise,
                                                            derive_seed({"transfer", "task1-test", d, s}));
    data::Dataset t2 = data::synth_generate(setup.spectrum, setup.task2, c.n_train, snr,
                                            derive_seed({"transfer", "task2-train", d, s}));
    data::Dataset t2_val = data::synth_generate_with_sigma(setup.spectrum, setup.task2, c.transfer.n_val,
                                                           t2.meta.sigma_noise, derive_seed({"transfer", "task2-val", d, s}));
    data::Dataset t2_test = data::synth_generate_with_sigma(setup.spectrum, setup.task2, c.n_test, t2.meta.sigma_noise,
                                                            derive_seed({"transfer", "task2-test", d, s}));

    const LabelScaler s1 = LabelScaler::fit(t1.Y, c.standardize_labels);
    const LabelScaler s2 = LabelScaler::fit(t2.Y, c.standardize_labels);

    const model::MlpParams init = initial_params(c, t1.X, kind, p, 1, derive_seed({"transfer", "init", d, s}),
                                                 derive_seed({"transfer", "readout", d, s}));
    TrainOptions opts;
    opts.steps = c.steps;
    opts.log_every = c.log_every;
    opts.divergence_threshold = c.divergence_threshold;
    opts.seed = derive_seed({"transfer", "optimizer", d, std::string(optim::to_string(kind)), format_real(p), s});

    TransferRun run;
    run.task1 = train_full_batch(init, t1.X, s1.apply(t1.Y), t1_test.X, s1.apply(t1_test.Y),
                                 synthetic_spec(c, kind, p), opts);

    if (run.task1.params.all_finite()) {
        const model::MlpParams& f = run.task1.params;
        const Matrix h_train = model::forward(f, t2.X).H;
        const Matrix h_val = model::forward(f, t2_val.X).H;
        const Matrix h_test = model::forward(f, t2_test.X).H;
        const Matrix y_train = s2.apply(t2.Y);
        const Matrix y_val = s2.apply(t2_val.Y);
        const Matrix y_test = s2.apply(t2_test.Y);
        auto mse = [](const optim::RidgeSolution& sol, const Matrix& h, const Matrix& y) {
            Matrix pred = sol.W2.transpose() * h;
            pred.colwise() += sol.b2;
            return (pred - y).squaredNorm() / static_cast<double>(y.cols());
        };
        for (double lambda : ridge_grid(c)) {
            const optim::RidgeSolution sol = optim::ridge_closed_form(h_train, y_train, lambda);
            const double val = mse(sol, h_val, y_val);
            if (std::isfinite(val) && !(val >= run.task2_val_mse)) {
                run.task2_val_mse = val;
                run.task2_lambda = lambda;
                run.task2_test_mse = mse(sol, h_test, y_test);
                run.task2_pseudo_inverse = sol.used_pseudo_inverse;
            }
        }
    }
    run.seconds = seconds_since(start);
    return run;
}

}  // namespace

ExperimentResult run_transfer(const ExperimentConfig& c, const RunOptions& options) {
    struct Task {
        std::string direction;
        std::string precond;
        double p;
        int seed;
    };
    std::vector<Task> tasks;
    for (const auto& d : c.transfer.directions)
        for (const auto& k : c.preconditioners)
            for (double p : c.p_list)
                for (int seed : c.seeds) tasks.push_back({d, k, p, seed});

    std::vector<TransferRun> runs(tasks.size());
    std::atomic<std::size_t> done{0};
    auto run_id = [](const Task& t) {
        return "transfer/" + t.direction + "/" + t.precond + "/p=" + format_real(t.p) + "/seed=" + seed_text(t.seed);
    };
    parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
        const Task& t = tasks[i];
        runs[i] = transfer_run(c, data::direction_from_string(t.direction), optim::kind_from_string(t.precond), t.p,
                               t.seed);
        report(options, done, tasks.size(), run_id(t), runs[i].seconds);
    });

    std::filesystem::create_directories(options.out_dir);
    csv::Table traj({"direction", "preconditioner", "p", "seed", "step", "train_mse", "test_mse"});
    csv::Table runs_csv({"direction", "preconditioner", "p", "seed", "task1_diverged", "task1_final_train_mse",
                         "task1_final_test_mse", "task2_ridge_lambda", "task2_pseudo_inverse", "task2_val_mse",
                         "task2_test_mse"});
    std::vector<Timing> timings;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Task& t = tasks[i];
        const TransferRun& r = runs[i];
        const std::vector<std::string> key{t.direction, t.precond, format_real(t.p), seed_text(t.seed)};
        for (const auto& row : r.task1.trajectory) {
            auto fields = key;
            fields.push_back(std::to_string(row.step));
            fields.push_back(csv::number(row.train_mse));
            fields.push_back(csv::number(row.test_mse));
            traj.add_row(std::move(fields));
        }
        auto fields = key;
        fields.push_back(bool_text(r.task1.diverged));
        fields.push_back(csv::number(last_train(r.task1)));
        fields.push_back(csv::number(last_test(r.task1)));
        fields.push_back(csv::number(r.task2_lambda));
        fields.push_back(bool_text(r.task2_pseudo_inverse));
        fields.push_back(csv::number(r.task2_val_mse));
        fields.push_back(csv::number(r.task2_test_mse));
        runs_csv.add_row(std::move(fields));
        timings.push_back({run_id(t), r.seconds});
    }

    csv::Table summary({"direction", "preconditioner", "p", "n_seeds", "n_diverged", "mean_task1_test_mse",
                        "std_task1_test_mse", "mean_task2_test_mse", "std_task2_test_mse"});
    const std::size_t per_cell = c.seeds.size();
    for (std::size_t start = 0; start < tasks.size(); start += per_cell) {
        std::vector<double> t1;
        std::vector<double> t2;
        int diverged = 0;
        for (std::size_t i = start; i < start + per_cell; ++i) {
            if (runs[i].task1.diverged) {
                ++diverged;
                continue;
            }
            t1.push_back(last_test(runs[i].task1));
            t2.push_back(runs[i].task2_test_mse);
        }
        const Task& t = tasks[start];
        const Moments m1 = moments(t1);
        const Moments m2 = moments(t2);
        summary.add_row({t.direction, t.precond, format_real(t.p), std::to_string(per_cell), std::to_string(diverged),
                         csv::number(m1.mean), csv::number(m1.std), csv::number(m2.mean), csv::number(m2.std)});
    }

    ExperimentResult out;
    const auto dir = options.out_dir;
    traj.write(dir / "transfer_traj.csv");
    runs_csv.write(dir / "transfer_runs.csv");
    summary.write(dir / "transfer_summary.csv");
    out.files = {dir / "transfer_summary.csv", dir / "transfer_runs.csv", dir / "transfer_traj.csv",
                 write_timings(timings, dir)};
    out.files.push_back(write_manifest(c, out.files, dir));
    return out;
}

// ---------------------------------------------------------------------------
// OOD

namespace {

struct Method {
    optim::Kind kind;
    double p;  // NaN unless adahessian
};

struct GridPoint {
    double lr;
    double rho;  // NaN unless sam_gd
};

struct OodRun {
    TrainResult result;
    double val_acc = kNaN;
    double flip_noise_acc = kNaN;
    double flip_digit_acc = kNaN;
    double seconds = 0.0;
};

std::string p_text(double p) { return std::isnan(p) ? "" : format_real(p); }

std::string method_id(const Method& m) {
    std::string id(optim::to_string(m.kind));
    if (!std::isnan(m.p)) id += "/p=" + format_real(m.p);
    return id;
}

std::string grid_id(const GridPoint& g) {
    std::string id = "lr=" + format_real(g.lr);
    if (!std::isnan(g.rho)) id += "/rho=" + format_real(g.rho);
    return id;
}

OodRun ood_run(const ExperimentConfig& c, const data::OodDataset& ds, const Matrix& targets, const Method& m,
               const GridPoint& g, int seed) {
    const auto start = Clock::now();
    const std::string s = seed_text(seed);
    optim::PreconditionerSpec spec = synthetic_spec(c, m.kind, std::isnan(m.p) ? 0.0 : m.p);
    spec.lr = g.lr;
    if (!std::isnan(g.rho)) spec.rho = g.rho;

    const model::MlpParams init = initial_params(c, ds.train.X, m.kind, 0.0, ds.num_classes,
                                                 derive_seed({"ood", "init", s}), derive_seed({"ood", "readout", s}));
    TrainOptions opts;
    opts.steps = c.steps;
    opts.log_every = c.log_every;
    opts.divergence_threshold = c.divergence_threshold;
    opts.seed = derive_seed({"ood", "optimizer", method_id(m), grid_id(g), s});

    OodRun run;
    run.result = train_full_batch(init, ds.train.X, targets, Matrix(ds.train.X.rows(), 0),
                                  Matrix(ds.num_classes, 0), spec, opts);
    if (!run.result.diverged) {
        run.val_acc = accuracy(run.result.params, ds.val);
        run.flip_noise_acc = accuracy(run.result.params, ds.test_flip_noise);
        run.flip_digit_acc = accuracy(run.result.params, ds.test_flip_digit);
    }
    run.seconds = seconds_since(start);
    return run;
}

}  // namespace

ExperimentResult run_ood(const ExperimentConfig& c, const RunOptions& options) {
    const std::filesystem::path images = c.ood.mnist_images;
    const std::filesystem::path labels = c.ood.mnist_labels;
    if (!std::filesystem::exists(images) || !std::filesystem::exists(labels)) {
        throw DataError("MNIST files not found: '" + images.string() + "', '" + labels.string() + "'");
    }
    const data::ImageSet source = data::load_mnist_idx(images, labels);
    data::OodSizes sizes;
    sizes.train = c.n_train;
    sizes.val = c.ood.n_val;
    sizes.test = c.ood.n_test;

    std::vector<data::OodDataset> datasets(c.seeds.size());
    std::vector<Matrix> targets(c.seeds.size());
    for (std::size_t k = 0; k < c.seeds.size(); ++k) {
        datasets[k] = data::build_ood(source, c.ood.sigma_n, derive_seed({"ood", "data", seed_text(c.seeds[k])}), sizes);
        targets[k] = data::one_hot(datasets[k].train.labels, datasets[k].num_classes);
    }

    std::vector<Method> methods;
    for (const auto& name : c.ood.optimizers) {
        const optim::Kind kind = optim::kind_from_string(name);
        if (kind == optim::Kind::adahessian) {
            for (double p : c.ood.adahessian_p) methods.push_back({kind, p});
        } else {
            methods.push_back({kind, kNaN});
        }
    }
    auto grid_for = [&](const Method& m) {
        std::vector<GridPoint> grid;
        for (double lr : c.ood.lr_grid) {
            if (m.kind == optim::Kind::sam_gd) {
                const std::vector<double> rhos = c.ood.rho_grid.empty() ? std::vector<double>{c.sam_rho}
                                                                        : c.ood.rho_grid;
                for (double rho : rhos) grid.push_back({lr, rho});
            } else {
                grid.push_back({lr, kNaN});
            }
        }
        return grid;
    };
    const std::size_t n_tune =
        c.ood.tune_seeds <= 0 ? c.seeds.size() : std::min<std::size_t>(c.seeds.size(), c.ood.tune_seeds);

    struct Task {
        std::size_t method;
        GridPoint grid;
        std::size_t seed_index;
    };
    auto run_id = [&](const Task& t) {
        return "ood/" + method_id(methods[t.method]) + "/" + grid_id(t.grid) + "/seed=" +
               seed_text(c.seeds[t.seed_index]);
    };
    std::atomic<std::size_t> done{0};
    std::vector<Timing> timings;

    // Phase 1: grid search on ID validation accuracy over the tuning seeds.
    std::vector<Task> tune;
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
        for (const auto& g : grid_for(methods[mi]))
            for (std::size_t k = 0; k < n_tune; ++k) tune.push_back({mi, g, k});
    std::size_t total = tune.size() + methods.size() * (c.seeds.size() - n_tune);
    std::vector<OodRun> tune_runs(tune.size());
    parallel_for(tune.size(), options.jobs, [&](std::size_t i) {
        const Task& t = tune[i];
        tune_runs[i] = ood_run(c, datasets[t.seed_index], targets[t.seed_index], methods[t.method], t.grid,
                               c.seeds[t.seed_index]);
        report(options, done, total, run_id(t), tune_runs[i].seconds);
    });

    std::vector<GridPoint> best(methods.size());
    std::vector<std::vector<std::size_t>> chosen_tune(methods.size());
    {
        std::size_t i = 0;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            double best_score = -std::numeric_limits<double>::infinity();
            std::size_t best_start = i;
            for (const auto& g : grid_for(methods[mi])) {
                std::vector<double> accs;
                for (std::size_t k = 0; k < n_tune; ++k) accs.push_back(tune_runs[i + k].val_acc);
                const Moments mo = moments(accs);
                // Diverged seeds count as failures: only fully finite grid points compete.
                const double score = mo.count == static_cast<int>(n_tune) ? mo.mean : -1.0;
                if (score > best_score) {
                    best_score = score;
                    best[mi] = g;
                    best_start = i;
                }
                i += n_tune;
            }
            for (std::size_t k = 0; k < n_tune; ++k) chosen_tune[mi].push_back(best_start + k);
        }
    }

    // Phase 2: remaining seeds at the selected grid point.
    std::vector<Task> rest;
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
        for (std::size_t k = n_tune; k < c.seeds.size(); ++k) rest.push_back({mi, best[mi], k});
    std::vector<OodRun> rest_runs(rest.size());
    parallel_for(rest.size(), options.jobs, [&](std::size_t i) {
        const Task& t = rest[i];
        rest_runs[i] = ood_run(c, datasets[t.seed_index], targets[t.seed_index], methods[t.method], t.grid,
                               c.seeds[t.seed_index]);
        report(options, done, total, run_id(t), rest_runs[i].seconds);
    });

    std::filesystem::create_directories(options.out_dir);
    auto key = [&](const Task& t) {
        const Method& m = methods[t.method];
        return std::vector<std::string>{std::string(optim::to_string(m.kind)), p_text(m.p), csv::number(t.grid.lr),
                                        std::isnan(t.grid.rho) ? "" : csv::number(t.grid.rho),
                                        seed_text(c.seeds[t.seed_index])};
    };

    csv::Table grid_csv({"optimizer", "p", "lr", "rho", "seed", "diverged", "final_train_mse", "id_val_acc"});
    for (std::size_t i = 0; i < tune.size(); ++i) {
        auto fields = key(tune[i]);
        fields.push_back(bool_text(tune_runs[i].result.diverged));
        fields.push_back(csv::number(last_train(tune_runs[i].result)));
        fields.push_back(csv::number(tune_runs[i].val_acc));
        grid_csv.add_row(std::move(fields));
        timings.push_back({run_id(tune[i]), tune_runs[i].seconds});
    }
    for (std::size_t i = 0; i < rest.size(); ++i) timings.push_back({run_id(rest[i]), rest_runs[i].seconds});

    csv::Table runs_csv({"optimizer", "p", "lr", "rho", "seed", "diverged", "final_train_mse", "id_val_acc",
                         "flip_noise_acc", "flip_digit_acc"});
    csv::Table traj({"optimizer", "p", "lr", "rho", "seed", "step", "train_mse"});
    csv::Table summary({"optimizer", "p", "lr", "rho", "n_seeds", "n_diverged", "mean_id_val_acc", "std_id_val_acc",
                        "mean_flip_noise_acc", "std_flip_noise_acc", "mean_flip_digit_acc", "std_flip_digit_acc"});
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<std::pair<const Task*, const OodRun*>> chosen;
        for (std::size_t idx : chosen_tune[mi]) chosen.emplace_back(&tune[idx], &tune_runs[idx]);
        for (std::size_t i = 0; i < rest.size(); ++i) {
            if (rest[i].method == mi) chosen.emplace_back(&rest[i], &rest_runs[i]);
        }
        std::vector<double> val;
        std::vector<double> noise;
        std::vector<double> digit;
        int diverged = 0;
        for (const auto& [task, run] : chosen) {
            auto fields = key(*task);
            fields.push_back(bool_text(run->result.diverged));
            fields.push_back(csv::number(last_train(run->result)));
            fields.push_back(csv::number(run->val_acc));
            fields.push_back(csv::number(run->flip_noise_acc));
            fields.push_back(csv::number(run->flip_digit_acc));
            runs_csv.add_row(std::move(fields));
            for (const auto& row : run->result.trajectory) {
                auto tf = key(*task);
                tf.push_back(std::to_string(row.step));
                tf.push_back(csv::number(row.train_mse));
                traj.add_row(std::move(tf));
            }
            if (run->result.diverged) {
                ++diverged;
                continue;
            }
            val.push_back(run->val_acc);
            noise.push_back(run->flip_noise_acc);
            digit.push_back(run->flip_digit_acc);
        }
        const Method& m = methods[mi];
        const Moments mv = moments(val);
        const Moments mn = moments(noise);
        const Moments md = moments(digit);
        summary.add_row({std::string(optim::to_string(m.kind)), p_text(m.p), csv::number(best[mi].lr),
                         std::isnan(best[mi].rho) ? "" : csv::number(best[mi].rho), std::to_string(chosen.size()),
                         std::to_string(diverged), csv::number(mv.mean), csv::number(mv.std), csv::number(mn.mean),
                         csv::number(mn.std), csv::number(md.mean), csv::number(md.std)});
    }

    ExperimentResult out;
    const auto dir = options.out_dir;
    grid_csv.write(dir / "ood_grid.csv");
    runs_csv.write(dir / "ood_runs.csv");
    traj.write(dir / "ood_traj.csv");
    summary.write(dir / "ood_summary.csv");
    out.files = {dir / "ood_summary.csv", dir / "ood_runs.csv", dir / "ood_grid.csv", dir / "ood_traj.csv",
                 write_timings(timings, dir)};
    out.files.push_back(write_manifest(c, out.files, dir));
    return out;
}

// ---------------------------------------------------------------------------
// verify

ExperimentResult run_verify(const ExperimentConfig& c, const RunOptions& options) {
    const std::vector<verify::CheckReport> reports = verify::run_all(c.verify);
    if (options.progress) {
        for (const auto& r : reports) {
            std::ostringstream line;
            line << (r.passed ? "PASS " : "FAIL ") << r.name << " [" << r.instance << "] deviation "
                 << csv::number(r.deviation) << " tolerance " << csv::number(r.tolerance);
            options.progress(line.str());
        }
    }
    std::filesystem::create_directories(options.out_dir);
    ExperimentResult out;
    const auto path = options.out_dir / "verify_report.csv";
    verify::write_report(reports, path);
    out.files = {path};
    out.files.push_back(write_manifest(c, out.files, options.out_dir));
    out.success = verify::all_passed(reports);
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& options) {
    if (c.experiment == "robustness") return run_robustness(c, options);
    if (c.experiment == "transfer") return run_transfer(c, options);
    if (c.experiment == "ood") return run_ood(c, options);
    if (c.experiment == "verify") return run_verify(c, options);
    throw ConfigError("unknown experiment '" + c.experiment + "'");
}

}  // namespace precondlab::runners
