#include "precondlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "precondlab/errors.hpp"
#include "precondlab/random.hpp"

namespace precondlab::data {

std::string_view to_string(Case c) { return c == Case::High ? "High" : "Low"; }

std::string_view to_string(Direction d) {
    return d == Direction::HighToLow ? "HighToLow" : "LowToHigh";
}

Case case_from_string(std::string_view name) {
    if (name == "High") return Case::High;
    if (name == "Low") return Case::Low;
    throw ConfigError("unknown case '" + std::string(name) + "' (expected High or Low)");
}

Direction direction_from_string(std::string_view name) {
    if (name == "HighToLow") return Direction::HighToLow;
    if (name == "LowToHigh") return Direction::LowToHigh;
    throw ConfigError("unknown transfer direction '" + std::string(name) +
                      "' (expected HighToLow or LowToHigh)");
}

void SpectrumSpec::validate() const {
    if (d_x < 1 || U.rows() != d_x || U.cols() != d_x || s_squared.size() != d_x)
        throw DimensionError("SpectrumSpec: inconsistent dimensions");
    if ((U.transpose() * U - Matrix::Identity(d_x, d_x)).norm() > 1e-10)
        throw ConfigError("SpectrumSpec: U is not orthogonal");
    if (!(s_squared.array() > 0.0).all()) throw ConfigError("SpectrumSpec: s_squared must be positive");
}

SpectrumSpec make_spectrum(Case c, int d_x, double lambda) {
    if (d_x < 2) throw ConfigError("make_spectrum: d_x must be >= 2");
    if (!(lambda > 0.0)) throw ConfigError("make_spectrum: lambda must be > 0");
    SpectrumSpec s;
    s.d_x = d_x;
    s.U = Matrix::Identity(d_x, d_x);
    if (c == Case::High) {
        s.s_squared = Vector::Constant(d_x, 1.0 / lambda);
        s.s_squared(0) = lambda;
    } else {
        s.s_squared = Vector::Constant(d_x, lambda);
        s.s_squared(d_x - 1) = 1.0 / lambda;
    }
    return s;
}

TeacherSpec make_teacher(Case c, int d_x) {
    if (d_x < 1) throw ConfigError("make_teacher: d_x must be >= 1");
    TeacherSpec t;
    t.alpha = Vector::Unit(d_x, c == Case::High ? 0 : d_x - 1);
    t.steepness = 10.0;
    return t;
}

double softplus(double a) {
    if (a > 30.0) return a + std::log1p(std::exp(-a));
    if (a < -30.0) return std::exp(a);
    return std::log1p(std::exp(a));
}

double teacher_label(const Vector& beta, const TeacherSpec& teacher, double noise_draw) {
    if (beta.size() != teacher.alpha.size()) throw DimensionError("teacher_label: beta/alpha size mismatch");
    return softplus(teacher.steepness * teacher.alpha.dot(beta)) + teacher.sigma_noise * noise_draw;
}

double calibrate_sigma(const Vector& signal_values, double target_snr) {
    if (!(target_snr > 0.0)) throw ConfigError("calibrate_sigma: target SNR must be > 0");
    if (signal_values.size() < 2) throw ConfigError("calibrate_sigma: need at least two signal values");
    const double mean = signal_values.mean();
    const double var = (signal_values.array() - mean).square().mean();
    if (!(var > 0.0)) throw NumericError("calibrate_sigma: signal has zero variance");
    return std::sqrt(var) / std::sqrt(target_snr);
}

namespace {

struct Latents {
    Matrix beta;
    Vector noise;
};

Latents draw_latents(int d_x, int n, std::uint64_t seed) {
    Rng rng(seed);
    Latents l;
    l.beta = gaussian_matrix(d_x, n, 1.0, rng);
    l.noise = gaussian_matrix(n, 1, 1.0, rng).col(0);
    return l;
}

Dataset assemble(const SpectrumSpec& spectrum, TeacherSpec teacher, Latents latents, double sigma,
                 std::uint64_t seed) {
    const auto n = latents.beta.cols();
    teacher.sigma_noise = sigma;
    Dataset ds;
    ds.X = spectrum.U * (spectrum.s_squared.cwiseSqrt().asDiagonal() * latents.beta);
    ds.Y.resize(1, n);
    for (Eigen::Index i = 0; i < n; ++i)
        ds.Y(0, i) = teacher_label(latents.beta.col(i), teacher, latents.noise(i));
    ds.beta = std::move(latents.beta);
    ds.noise_draws = std::move(latents.noise);
    ds.meta.sigma_noise = sigma;
    ds.meta.seed = seed;
    return ds;
}

}  // namespace

Dataset synth_generate(const SpectrumSpec& spectrum, const TeacherSpec& teacher, int n,
                       double target_snr, std::uint64_t seed) {
    spectrum.validate();
    if (n < 2) throw ConfigError("synth_generate: need N >= 2");
    if (teacher.alpha.size() != spectrum.d_x) throw DimensionError("synth_generate: teacher/spectrum d_x mismatch");
    Latents latents = draw_latents(spectrum.d_x, n, seed);
    Vector signal(n);
    TeacherSpec clean = teacher;
    clean.sigma_noise = 0.0;
    for (int i = 0; i < n; ++i) signal(i) = teacher_label(latents.beta.col(i), clean, 0.0);
    const double sigma = calibrate_sigma(signal, target_snr);
    Dataset ds = assemble(spectrum, teacher, std::move(latents), sigma, seed);
    ds.meta.target_snr = target_snr;
    return ds;
}

Dataset synth_generate_with_sigma(const SpectrumSpec& spectrum, const TeacherSpec& teacher, int n,
                                  double sigma_noise, std::uint64_t seed) {
    spectrum.validate();
    if (n < 1) throw ConfigError("synth_generate_with_sigma: need N >= 1");
    if (!(sigma_noise >= 0.0)) throw ConfigError("synth_generate_with_sigma: sigma must be >= 0");
    if (teacher.alpha.size() != spectrum.d_x)
        throw DimensionError("synth_generate_with_sigma: teacher/spectrum d_x mismatch");
    return assemble(spectrum, teacher, draw_latents(spectrum.d_x, n, seed), sigma_noise, seed);
}

TransferSetup make_transfer_setup(Direction direction, int d_x, double lambda) {
    if (d_x < 2 || d_x % 2 != 0) throw ConfigError("make_transfer_setup: d_x must be even and >= 2");
    if (!(lambda > 0.0)) throw ConfigError("make_transfer_setup: lambda must be > 0");
    TransferSetup setup;
    setup.spectrum.d_x = d_x;
    setup.spectrum.U = Matrix::Identity(d_x, d_x);
    setup.spectrum.s_squared.resize(d_x);
    setup.spectrum.s_squared.head(d_x / 2).setConstant(lambda);
    setup.spectrum.s_squared.tail(d_x / 2).setConstant(1.0 / lambda);
    const Vector first = Vector::Unit(d_x, 0);
    const Vector last = Vector::Unit(d_x, d_x - 1);
    setup.task1.alpha = direction == Direction::HighToLow ? first : last;
    setup.task2.alpha = direction == Direction::HighToLow ? last : first;
    return setup;
}

std::pair<Dataset, Dataset> make_transfer_pair(Direction direction, int d_x, double lambda, int n,
                                               double target_snr, std::uint64_t seed) {
    const TransferSetup setup = make_transfer_setup(direction, d_x, lambda);
    Dataset t1 = synth_generate(setup.spectrum, setup.task1, n, target_snr, derive_seed(seed, 1));
    Dataset t2 = synth_generate(setup.spectrum, setup.task2, n, target_snr, derive_seed(seed, 2));
    t1.meta.tag = std::string(to_string(direction)) + "/task1";
    t2.meta.tag = std::string(to_string(direction)) + "/task2";
    return {std::move(t1), std::move(t2)};
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.precision(17);
    const auto d = ds.X.rows();
    const auto dy = ds.Y.rows();
    for (Eigen::Index k = 0; k < d; ++k) out << (k ? "," : "") << 'x' << k;
    for (Eigen::Index k = 0; k < dy; ++k) out << ',' << (dy == 1 ? std::string("y") : "y" + std::to_string(k));
    out << "\r\n";
    for (Eigen::Index i = 0; i < ds.X.cols(); ++i) {
        for (Eigen::Index k = 0; k < d; ++k) out << (k ? "," : "") << ds.X(k, i);
        for (Eigen::Index k = 0; k < dy; ++k) out << ',' << ds.Y(k, i);
        out << "\r\n";
    }
}

// ---- MNIST ---------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset) {
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
    out.write(bytes, 4);
}

}  // namespace

ImageSet load_mnist_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
    const auto img = read_all(images_path);
    const auto lab = read_all(labels_path);
    if (img.size() < 16) throw DataError(images_path.string() + ": truncated IDX header");
    if (lab.size() < 8) throw DataError(labels_path.string() + ": truncated IDX header");
    if (const auto magic = read_be32(img, 0); magic != kIdxImageMagic) {
        std::ostringstream msg;
        msg << images_path.string() << ": bad magic 0x" << std::hex << magic << " (expected 0x803)";
        throw DataError(msg.str());
    }
    if (const auto magic = read_be32(lab, 0); magic != kIdxLabelMagic) {
        std::ostringstream msg;
        msg << labels_path.string() << ": bad magic 0x" << std::hex << magic << " (expected 0x801)";
        throw DataError(msg.str());
    }
    const std::uint64_t count = read_be32(img, 4);
    const std::uint64_t rows = read_be32(img, 8);
    const std::uint64_t cols = read_be32(img, 12);
    const std::uint64_t label_count = read_be32(lab, 4);
    if (count != label_count) {
        std::ostringstream msg;
        msg << "IDX count mismatch: " << count << " images vs " << label_count << " labels";
        throw DataError(msg.str());
    }
    const std::uint64_t pixels = rows * cols;
    if (img.size() < 16 + count * pixels) throw DataError(images_path.string() + ": truncated pixel data");
    if (lab.size() < 8 + count) throw DataError(labels_path.string() + ": truncated label data");

    ImageSet out;
    out.rows = static_cast<int>(rows);
    out.cols = static_cast<int>(cols);
    out.images.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
    out.labels.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t base = 16 + i * pixels;
        for (std::uint64_t k = 0; k < pixels; ++k)
            out.images(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = img[base + k] / 255.0;
        out.labels[i] = lab[8 + i];
    }
    return out;
}

void write_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                     const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels,
                     int rows, int cols) {
    const std::size_t per = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (per == 0 || pixels.size() != per * labels.size())
        throw DataError("write_mnist_idx: pixel buffer does not match label count");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw DataError("write_mnist_idx: cannot open output files");
    put_be32(img, kIdxImageMagic);
    put_be32(img, static_cast<std::uint32_t>(labels.size()));
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    put_be32(lab, kIdxLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

int flip_class(int c, int num_classes) { return (c + 1) % num_classes; }

Matrix one_hot(const std::vector<int>& labels, int num_classes) {
    Matrix out = Matrix::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw DataError("one_hot: label out of range");
        out(labels[i], static_cast<Eigen::Index>(i)) = 1.0;
    }
    return out;
}

OodDataset build_ood(const ImageSet& source, double sigma_n, std::uint64_t seed, const OodSizes& sizes) {
    constexpr int kClasses = 10;
    if (!(sigma_n >= 0.0)) throw ConfigError("build_ood: sigma_n must be >= 0");
    if (sizes.train < 1 || sizes.val < 0 || sizes.test < 0) throw ConfigError("build_ood: invalid split sizes");
    const auto n_source = static_cast<std::size_t>(source.images.cols());
    const std::size_t needed = static_cast<std::size_t>(sizes.train) + static_cast<std::size_t>(sizes.val) +
                               2 * static_cast<std::size_t>(sizes.test);
    if (needed > n_source) {
        std::ostringstream msg;
        msg << "build_ood: requested " << needed << " images but the source has " << n_source;
        throw DataError(msg.str());
    }
    for (int label : source.labels)
        if (label < 0 || label >= kClasses) throw DataError("build_ood: labels must lie in [0, 10)");

    const auto d = source.images.rows();
    OodDataset out;
    out.sigma_n = sigma_n;
    out.num_classes = kClasses;
    {
        Rng bank_rng(derive_seed(seed, 0xba4c));
        out.noise_bank = gaussian_matrix(d, kClasses, sigma_n, bank_rng);
    }

    std::vector<std::size_t> order(n_source);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, 0x5f1e));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::size_t cursor = 0;
    // noise_of maps a digit label to the class whose pattern is added; label_of picks the target.
    auto take = [&](int count, auto noise_of, auto label_of, LabeledImages* clean) {
        LabeledImages split;
        split.X.resize(d, count);
        split.labels.resize(static_cast<std::size_t>(count));
        if (clean != nullptr) {
            clean->X.resize(d, count);
            clean->labels.resize(static_cast<std::size_t>(count));
        }
        for (int i = 0; i < count; ++i) {
            const std::size_t src = order[cursor++];
            const int digit = source.labels[src];
            const auto img = source.images.col(static_cast<Eigen::Index>(src));
            split.X.col(i) = (img + out.noise_bank.col(noise_of(digit))).cwiseMax(-0.5).cwiseMin(1.5);
            split.labels[static_cast<std::size_t>(i)] = label_of(digit);
            if (clean != nullptr) {
                clean->X.col(i) = img;
                clean->labels[static_cast<std::size_t>(i)] = digit;
            }
        }
        return split;
    };
    auto same = [](int digit) { return digit; };
    auto flipped = [](int digit) { return flip_class(digit, kClasses); };
    // The image of digit d = pi(c) carries the pattern of class c = pi^{-1}(d) and is labeled c.
    auto unflipped = [](int digit) { return (digit + kClasses - 1) % kClasses; };

    out.train = take(sizes.train, same, same, &out.clean_train);
    out.val = take(sizes.val, same, same, nullptr);
    out.test_flip_noise = take(sizes.test, flipped, same, nullptr);
    out.test_flip_digit = take(sizes.test, unflipped, unflipped, nullptr);
    return out;
}

}  // namespace precondlab::data
