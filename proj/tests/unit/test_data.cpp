#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "precondlab/data.hpp"
#include "precondlab/errors.hpp"

using namespace precondlab;
using testutil::gaussian;
using testutil::Matrix;
using testutil::Vector;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("precondlab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Tiny digit-like source: 40 images of 4x4 with label i % 10, class-dependent pixel pattern.
data::ImageSet tiny_source(int n = 40) {
    data::ImageSet s;
    s.rows = 4;
    s.cols = 4;
    s.images = Matrix::Zero(16, n);
    for (int i = 0; i < n; ++i) {
        const int c = i % 10;
        s.labels.push_back(c);
        s.images(c, i) = 1.0;
        s.images(15, i) = 0.01 * i;
    }
    return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("spectra of the two cases at d_x = 10, lambda = 10") {
    const auto high = data::make_spectrum(data::Case::High, 10, 10.0);
    CHECK(high.s_squared(0) == doctest::Approx(10.0));
    for (int i = 1; i < 10; ++i) CHECK(high.s_squared(i) == doctest::Approx(0.1));
    const auto low = data::make_spectrum(data::Case::Low, 10, 10.0);
    for (int i = 0; i < 9; ++i) CHECK(low.s_squared(i) == doctest::Approx(10.0));
    CHECK(low.s_squared(9) == doctest::Approx(0.1));
    CHECK((high.U - Matrix::Identity(10, 10)).norm() == 0.0);

    const auto h1 = data::make_spectrum(data::Case::High, 6, 1.0);
    const auto l1 = data::make_spectrum(data::Case::Low, 6, 1.0);
    CHECK((h1.s_squared - l1.s_squared).norm() == 0.0);
    CHECK((h1.s_squared - Vector::Ones(6)).norm() == 0.0);
}

TEST_CASE("teachers place the signal on e_1 or e_d") {
    const auto high = data::make_teacher(data::Case::High, 10);
    const auto low = data::make_teacher(data::Case::Low, 10);
    CHECK(high.alpha(0) == 1.0);
    CHECK(high.alpha.sum() == 1.0);
    CHECK(low.alpha(9) == 1.0);
    CHECK(low.alpha.sum() == 1.0);
    CHECK(high.steepness == 10.0);
    CHECK((data::make_teacher(data::Case::High, 1).alpha - data::make_teacher(data::Case::Low, 1).alpha).norm() ==
          0.0);
}

TEST_CASE("teacher_label: softplus anchors and direct formula") {
    auto t = data::make_teacher(data::Case::High, 3);
    CHECK(data::teacher_label(Vector::Zero(3), t, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    Vector b = Vector::Zero(3);
    b(0) = 10.0;
    CHECK(data::teacher_label(b, t, 0.0) == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(data::softplus(-800.0) >= 0.0);
    CHECK(std::isfinite(data::softplus(800.0)));
    t.sigma_noise = 0.5;
    const Vector r = gaussian(3, 1, 9) * 0.1;
    CHECK(data::teacher_label(r, t, 1.3) ==
          doctest::Approx(std::log(1.0 + std::exp(10.0 * r(0))) + 0.5 * 1.3).epsilon(1e-14));
}

TEST_CASE("calibrate_sigma") {
    Vector s(4);
    s << -2.0, 2.0, -2.0, 2.0;  // population std 2
    CHECK(data::calibrate_sigma(s, 4.0) == doctest::Approx(1.0));
    CHECK(data::calibrate_sigma(s, 1.0) == doctest::Approx(2.0));
    CHECK(data::calibrate_sigma((s.array() + 7.0).matrix(), 4.0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(data::calibrate_sigma(s, 0.0), ConfigError);
}

TEST_CASE("synth_generate: constant labels, covariance and SNR moments") {
    const auto spec = data::make_spectrum(data::Case::High, 4, 10.0);
    auto zero = data::make_teacher(data::Case::High, 4);
    zero.alpha.setZero();
    const auto flat = data::synth_generate_with_sigma(spec, zero, 20, 0.0, 1);
    CHECK((flat.Y.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);

    const int n = 100000;
    const auto ds = data::synth_generate(spec, data::make_teacher(data::Case::High, 4), n, 2.0, 7);
    const Matrix cov = ds.X * ds.X.transpose() / n;
    const Matrix target = spec.U * spec.s_squared.asDiagonal() * spec.U.transpose();
    CHECK((cov - target).norm() / target.norm() < 0.1);

    // empirical SNR from the stored noise draws
    const Vector noise = ds.meta.sigma_noise * ds.noise_draws;
    const Vector signal = ds.Y.row(0).transpose() - noise;
    const double var_s = (signal.array() - signal.mean()).square().mean();
    const double var_n = (noise.array() - noise.mean()).square().mean();
    CHECK(var_s / var_n == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("transfer setup") {
    const auto t = data::make_transfer_setup(data::Direction::HighToLow, 10, 10.0);
    for (int i = 0; i < 5; ++i) CHECK(t.spectrum.s_squared(i) == doctest::Approx(10.0));
    for (int i = 5; i < 10; ++i) CHECK(t.spectrum.s_squared(i) == doctest::Approx(0.1));
    CHECK(t.task1.alpha(0) == 1.0);
    CHECK(t.task2.alpha(9) == 1.0);
    const auto r = data::make_transfer_setup(data::Direction::LowToHigh, 10, 10.0);
    CHECK(r.task1.alpha(9) == 1.0);
    CHECK(r.task2.alpha(0) == 1.0);
    const auto iso = data::make_transfer_setup(data::Direction::HighToLow, 4, 1.0);
    CHECK((iso.spectrum.s_squared - Vector::Ones(4)).norm() == 0.0);
    CHECK_THROWS_AS(data::make_transfer_setup(data::Direction::HighToLow, 5, 10.0), ConfigError);
    const auto pair = data::make_transfer_pair(data::Direction::HighToLow, 4, 10.0, 50, 1.0, 3);
    CHECK(pair.first.size() == 50);
    CHECK((pair.first.X - pair.second.X).norm() > 0.0);
}

TEST_CASE("IDX round trip, magic numbers, pixel scaling and malformed files") {
    const auto dir = temp_dir("idx");
    std::vector<std::uint8_t> pixels(2 * 3 * 2, 0);
    pixels[0] = 255;
    pixels[7] = 128;
    const std::vector<std::uint8_t> labels{7, 2};
    data::write_mnist_idx(dir / "img", dir / "lab", pixels, labels, 3, 2);

    std::ifstream raw(dir / "img", std::ios::binary);
    unsigned char head[4];
    raw.read(reinterpret_cast<char*>(head), 4);
    CHECK(head[0] == 0x00);
    CHECK(head[1] == 0x00);
    CHECK(head[2] == 0x08);
    CHECK(head[3] == 0x03);

    const auto set = data::load_mnist_idx(dir / "img", dir / "lab");
    CHECK(set.images.rows() == 6);
    CHECK(set.images.cols() == 2);
    CHECK(set.images(0, 0) == 1.0);
    CHECK(set.images(1, 1) == doctest::Approx(128.0 / 255.0));
    CHECK(set.labels == std::vector<int>{7, 2});

    CHECK_THROWS_AS(data::load_mnist_idx(dir / "lab", dir / "lab"), DataError);
    CHECK_THROWS_AS(data::load_mnist_idx(dir / "missing", dir / "lab"), DataError);
    {
        std::ofstream cut(dir / "short", std::ios::binary);
        cut.write("\x00\x00\x08\x03\x00\x00\x00\x05", 8);
    }
    CHECK_THROWS_AS(data::load_mnist_idx(dir / "short", dir / "lab"), DataError);
}

TEST_CASE("build_ood: reconstruction, determinism, flips and sigma_n = 0") {
    const auto src = tiny_source();
    data::OodSizes sizes{10, 5, 10};
    const auto a = data::build_ood(src, 0.1, 4, sizes);
    const auto b = data::build_ood(src, 0.1, 4, sizes);
    CHECK((a.noise_bank - b.noise_bank).norm() == 0.0);
    CHECK(a.train.labels == a.clean_train.labels);

    const Matrix diff = a.train.X - a.clean_train.X;
    for (int i = 0; i < sizes.train; ++i)
        CHECK((diff.col(i) - a.noise_bank.col(a.train.labels[i])).cwiseAbs().maxCoeff() < 1e-12);

    CHECK(data::flip_class(9) == 0);
    CHECK(data::flip_class(3) == 4);

    const auto clean = data::build_ood(src, 0.0, 4, sizes);
    CHECK(clean.noise_bank.norm() == 0.0);
    // flip-noise images are clean digits labeled by digit; flip-digit images are clean digits
    // labeled by the class whose noise they carry, which is their own digit's predecessor
    for (int i = 0; i < sizes.test; ++i) {
        Eigen::Index k;
        clean.test_flip_noise.X.col(i).head(10).maxCoeff(&k);
        CHECK(clean.test_flip_noise.labels[i] == k);
        clean.test_flip_digit.X.col(i).head(10).maxCoeff(&k);
        CHECK(data::flip_class(clean.test_flip_digit.labels[i]) == k);
    }

    CHECK_THROWS_AS(data::build_ood(src, 0.1, 4, data::OodSizes{30, 5, 10}), DataError);
}

TEST_CASE("one_hot") {
    const Matrix y = data::one_hot({2, 0}, 3);
    CHECK(y(2, 0) == 1.0);
    CHECK(y(0, 1) == 1.0);
    CHECK(y.sum() == 2.0);
    CHECK_THROWS_AS(data::one_hot({3}, 3), DataError);
}

TEST_CASE("case and direction names") {
    CHECK(data::case_from_string("High") == data::Case::High);
    CHECK(data::direction_from_string("LowToHigh") == data::Direction::LowToHigh);
    CHECK_THROWS_AS(data::case_from_string("Mid"), ConfigError);
    CHECK(data::to_string(data::Case::Low) == "Low");
}

}
