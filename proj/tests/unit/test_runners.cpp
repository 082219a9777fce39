#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "precondlab/config.hpp"
#include "precondlab/csv.hpp"
#include "precondlab/errors.hpp"
#include "precondlab/experiments.hpp"

using namespace precondlab;
using runners::ExperimentConfig;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("precondlab_runner_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) { return csv::parse(slurp(p)); }

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    FAIL("missing column " << name);
    return 0;
}

ExperimentConfig small_robustness() {
    auto c = config::default_config("robustness");
    c.cases = {"High"};
    c.p_list = {0.0, -1.0};
    c.snr_list = {1.0};
    c.seeds = {0, 1};
    c.steps = 40;
    c.log_every = 20;
    c.d_h = 16;
    c.n_test = 300;
    return c;
}

ExperimentConfig small_ood() {
    auto c = config::default_config("ood");
    c.ood.mnist_images = PRECONDLAB_TEST_MNIST_DIR "/images.idx3-ubyte";
    c.ood.mnist_labels = PRECONDLAB_TEST_MNIST_DIR "/labels.idx1-ubyte";
    c.n_train = 300;
    c.ood.n_val = 400;
    c.ood.n_test = 400;
    c.d_h = 16;
    c.steps = 60;
    c.log_every = 30;
    c.seeds = {0, 1};
    c.ood.tune_seeds = 1;
    c.ood.optimizers = {"gd", "adahessian"};
    c.ood.adahessian_p = {-1.0};
    c.ood.lr_grid = {1e-2, 1e-1};
    return c;
}

}  // namespace

TEST_SUITE("runners") {

TEST_CASE("moments use the sample standard deviation over finite values") {
    const auto m = runners::moments({1.0, 2.0, 3.0, std::nan("")});
    CHECK(m.count == 3);
    CHECK(m.mean == doctest::Approx(2.0));
    CHECK(m.std == doctest::Approx(1.0));
    CHECK(runners::moments({5.0}).std == 0.0);
    CHECK(std::isnan(runners::moments({}).mean));
}

TEST_CASE("label scaler and ridge grid") {
    Eigen::MatrixXd y(1, 4);
    y << 1.0, 3.0, 5.0, 7.0;
    const auto s = runners::LabelScaler::fit(y, true);
    const Eigen::MatrixXd z = s.apply(y);
    CHECK(z.mean() == doctest::Approx(0.0));
    CHECK(z.array().square().mean() == doctest::Approx(1.0));
    const auto off = runners::LabelScaler::fit(y, false);
    CHECK((off.apply(y) - y).norm() == 0.0);

    const auto grid = runners::ridge_grid(config::default_config("transfer"));
    REQUIRE(grid.size() == 9);
    CHECK(grid.front() == doctest::Approx(1e-6));
    CHECK(grid.back() == doctest::Approx(1e2));
}

TEST_CASE("init_sigma sets the mean pre-activation variance") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 40);
    const auto id = spectra::identity_preconditioner(5);
    const double sigma = runners::init_sigma(x, id, 0.3);
    CHECK(sigma * sigma * x.squaredNorm() / 40.0 == doctest::Approx(0.3));
}

TEST_CASE("parallel_for covers every index and rethrows") {
    std::vector<int> hits(50, 0);
    runners::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::count(hits.begin(), hits.end(), 1) == 50);
    CHECK_THROWS_AS(runners::parallel_for(3, 2, [](std::size_t i) {
                        if (i == 1) throw DataError("boom");
                    }),
                    DataError);
}

TEST_CASE("robustness: steps = 0 reports the initial model") {
    auto c = small_robustness();
    c.steps = 0;
    c.preconditioners = {"cov_power"};
    runners::RunOptions o;
    o.out_dir = fresh_dir("steps0");
    runners::run_robustness(c, o);
    const auto traj = read_csv(o.out_dir / "robustness_traj.csv");
    const auto runs = read_csv(o.out_dir / "robustness_runs.csv");
    REQUIRE(traj.size() == 1 + 4);
    REQUIRE(runs.size() == 1 + 4);
    for (std::size_t r = 1; r < runs.size(); ++r) {
        CHECK(traj[r][column(traj[0], "step")] == "0");
        CHECK(runs[r][column(runs[0], "final_test_mse")] == traj[r][column(traj[0], "test_mse")]);
    }
}

TEST_CASE("robustness: with P = I both preconditioners give the same run") {
    auto c = small_robustness();
    c.p_list = {0.0};
    c.adahessian.beta1 = 0.0;
    runners::RunOptions o;
    o.out_dir = fresh_dir("p0");
    runners::run_robustness(c, o);
    const auto s = read_csv(o.out_dir / "robustness_runs.csv");
    const auto col = column(s[0], "final_test_mse");
    REQUIRE(s.size() == 1 + 2 * 2);
    for (std::size_t k = 1; k <= 2; ++k) {
        CHECK(s[k][column(s[0], "preconditioner")] == "cov_power");
        CHECK(s[k + 2][column(s[0], "preconditioner")] == "adahessian");
        CHECK(std::stod(s[k][col]) == doctest::Approx(std::stod(s[k + 2][col])).epsilon(1e-12));
    }
}

TEST_CASE("robustness: outputs are independent of the worker count and the manifest hashes them") {
    const auto c = small_robustness();
    runners::RunOptions a, b;
    a.out_dir = fresh_dir("det_a");
    b.out_dir = fresh_dir("det_b");
    b.jobs = 3;
    const auto ra = runners::run_robustness(c, a);
    runners::run_robustness(c, b);
    for (const char* f : {"robustness_summary.csv", "robustness_runs.csv", "robustness_traj.csv"})
        CHECK(slurp(a.out_dir / f) == slurp(b.out_dir / f));

    REQUIRE(ra.files.back().filename() == "manifest.json");
    const auto m = config::Json::parse(slurp(ra.files.back()));
    std::string listing;
    for (const auto& entry : m["outputs"]) {
        const std::string name = entry["file"];
        CHECK(entry["git_blob_sha1"] == csv::git_blob_sha1(slurp(a.out_dir / name)));
        if (entry["deterministic"].get<bool>()) listing += entry["git_blob_sha1"].get<std::string>() + "  " + name + "\n";
    }
    CHECK(m["content_hash"] == csv::git_blob_sha1(listing));
    CHECK(m["config"] == config::to_json(c));

    // summary means are recomputable from the per-run rows
    const auto runs = read_csv(a.out_dir / "robustness_runs.csv");
    const auto summary = read_csv(a.out_dir / "robustness_summary.csv");
    const double m0 = (std::stod(runs[1][column(runs[0], "final_test_mse")]) +
                       std::stod(runs[2][column(runs[0], "final_test_mse")])) / 2.0;
    CHECK(std::stod(summary[1][column(summary[0], "mean_final_test_mse")]) == doctest::Approx(m0).epsilon(1e-14));
}

TEST_CASE("transfer writes Task-1 and Task-2 metrics per run") {
    auto c = config::default_config("transfer");
    c.preconditioners = {"cov_power"};
    c.p_list = {0.0, -1.0};
    c.seeds = {0};
    c.steps = 30;
    c.log_every = 10;
    c.d_h = 16;
    c.n_test = 200;
    runners::RunOptions o;
    o.out_dir = fresh_dir("transfer");
    runners::run_transfer(c, o);
    const auto runs = read_csv(o.out_dir / "transfer_runs.csv");
    REQUIRE(runs.size() == 1 + 4);
    for (std::size_t r = 1; r < runs.size(); ++r) {
        CHECK(std::isfinite(std::stod(runs[r][column(runs[0], "task2_test_mse")])));
        const double lambda = std::stod(runs[r][column(runs[0], "task2_ridge_lambda")]);
        CHECK(lambda >= 1e-6);
        CHECK(lambda <= 1e2);
    }
    CHECK(std::filesystem::exists(o.out_dir / "transfer_summary.csv"));
}

TEST_CASE("ood: missing MNIST is a data error") {
    auto c = small_ood();
    c.ood.mnist_images = "/nonexistent/images";
    runners::RunOptions o;
    o.out_dir = fresh_dir("ood_missing");
    CHECK_THROWS_AS(runners::run_ood(c, o), DataError);
}

TEST_CASE("ood: grid selection, per-seed rows and sigma_n = 0") {
    auto c = small_ood();
    c.ood.sigma_n = 0.0;
    runners::RunOptions o;
    o.out_dir = fresh_dir("ood_clean");
    runners::run_ood(c, o);
    const auto grid = read_csv(o.out_dir / "ood_grid.csv");
    const auto runs = read_csv(o.out_dir / "ood_runs.csv");
    const auto summary = read_csv(o.out_dir / "ood_summary.csv");
    CHECK(grid.size() == 1 + 2 * 2);      // 2 methods x 2 learning rates x 1 tuning seed
    CHECK(runs.size() == 1 + 2 * 2);      // 2 methods x 2 seeds
    REQUIRE(summary.size() == 1 + 2);
    // noise channel off: flip-noise images are clean digits, so only sampling error separates the two
    for (std::size_t r = 1; r < summary.size(); ++r) {
        const double id = std::stod(summary[r][column(summary[0], "mean_id_val_acc")]);
        const double fn = std::stod(summary[r][column(summary[0], "mean_flip_noise_acc")]);
        CHECK(std::abs(id - fn) < 8.0);
    }
    for (const std::string method : {"gd", "adahessian"}) {
        double best = -1.0;
        std::string best_lr;
        for (std::size_t r = 1; r < grid.size(); ++r) {
            if (grid[r][0] != method) continue;
            const double acc = std::stod(grid[r][column(grid[0], "id_val_acc")]);
            if (acc > best) {
                best = acc;
                best_lr = grid[r][column(grid[0], "lr")];
            }
        }
        for (std::size_t r = 1; r < summary.size(); ++r)
            if (summary[r][0] == method) CHECK(summary[r][column(summary[0], "lr")] == best_lr);
    }
}

}
