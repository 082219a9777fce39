#pragma once

// Synthetic single-index teacher/student data, transfer task pairs, MNIST IDX
// ingestion and the class-noise correlation-shift dataset.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace precondlab::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Case { High, Low };
enum class Direction { HighToLow, LowToHigh };

std::string_view to_string(Case c);
std::string_view to_string(Direction d);
Case case_from_string(std::string_view name);            // throws ConfigError
Direction direction_from_string(std::string_view name);  // throws ConfigError

/// Input geometry x = U diag(sqrt(s_squared)) beta.
struct SpectrumSpec {
    int d_x = 0;
    Matrix U;
    Vector s_squared;

    void validate() const;
};

struct TeacherSpec {
    Vector alpha;
    double steepness = 10.0;
    double sigma_noise = 0.0;
};

struct DatasetMeta {
    std::string tag;
    double target_snr = 0.0;
    double sigma_noise = 0.0;
    std::uint64_t seed = 0;
};

struct Dataset {
    Matrix X;     // d_x x N
    Matrix Y;     // d_y x N
    Matrix beta;  // d_x x N latent coefficients (synthetic only)
    Vector noise_draws;  // standard normal draws used for the labels (synthetic only)
    DatasetMeta meta;

    Eigen::Index size() const { return X.cols(); }
};

/// High: s^2 = (lambda, 1/lambda, ..., 1/lambda); Low: (lambda, ..., lambda, 1/lambda); U = I.
SpectrumSpec make_spectrum(Case c, int d_x, double lambda);

/// High: alpha = e_1, Low: alpha = e_d; steepness 10, sigma unset.
TeacherSpec make_teacher(Case c, int d_x);

/// Numerically stable log(1 + exp(a)).
double softplus(double a);

/// softplus(steepness * alpha^T beta) + sigma_noise * noise_draw.
double teacher_label(const Vector& beta, const TeacherSpec& teacher, double noise_draw);

/// sigma such that Var(signal) / sigma^2 = target_snr (population variance).
double calibrate_sigma(const Vector& signal_values, double target_snr);

/// Draws beta ~ N(0, I), calibrates sigma on this draw's noiseless labels, then labels with noise.
Dataset synth_generate(const SpectrumSpec& spectrum, const TeacherSpec& teacher, int n,
                       double target_snr, std::uint64_t seed);

/// Same generative law with a fixed noise level (used for held-out splits).
Dataset synth_generate_with_sigma(const SpectrumSpec& spectrum, const TeacherSpec& teacher, int n,
                                  double sigma_noise, std::uint64_t seed);

struct TransferSetup {
    SpectrumSpec spectrum;  // lambda I_{d/2} (+) lambda^{-1} I_{d/2}
    TeacherSpec task1;
    TeacherSpec task2;
};

/// HighToLow: task1 alpha = e_1, task2 alpha = e_d; LowToHigh swaps them. Throws ConfigError for odd d_x.
TransferSetup make_transfer_setup(Direction direction, int d_x, double lambda);

/// Independent fresh draws for the two tasks of a transfer setup.
std::pair<Dataset, Dataset> make_transfer_pair(Direction direction, int d_x, double lambda, int n,
                                               double target_snr, std::uint64_t seed);

/// Writes X and Y as CSV with header x0..x{d-1},y (y0.. when d_y > 1), one sample per row.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

// ---- MNIST ---------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct ImageSet {
    Matrix images;            // (rows*cols) x N, values in [0, 1]
    std::vector<int> labels;  // N
    int rows = 0;
    int cols = 0;
};

/// Reads an IDX image/label pair. Throws DataError on bad magic, truncation or count mismatch.
ImageSet load_mnist_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Writes raw IDX files (pixel bytes and label bytes as given).
void write_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                     const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels,
                     int rows, int cols);

struct OodSizes {
    int train = 2000;
    int val = 500;
    int test = 2000;  // per OOD split
};

struct LabeledImages {
    Matrix X;
    std::vector<int> labels;
};

struct OodDataset {
    LabeledImages train;
    LabeledImages val;
    LabeledImages test_flip_noise;  // digit invariant, noise spurious: label = digit
    LabeledImages test_flip_digit;  // noise invariant, digit spurious: label = noise class
    LabeledImages clean_train;      // train images before noise (for reconstruction checks)
    Matrix noise_bank;              // d_x x 10, column c is the pattern of class c
    double sigma_n = 0.0;
    int num_classes = 10;
};

/// (c + 1) mod num_classes.
int flip_class(int c, int num_classes = 10);

/// Builds the class-noise correlation-shift splits. sigma_n >= 0 (0 gives a clean control).
/// Throws DataError when the requested split sizes exceed the source.
OodDataset build_ood(const ImageSet& source, double sigma_n, std::uint64_t seed, const OodSizes& sizes);

/// One-hot encoding (num_classes x N).
Matrix one_hot(const std::vector<int>& labels, int num_classes);

}  // namespace precondlab::data
