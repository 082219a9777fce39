#include "precondlab/random.hpp"

#include <charconv>
#include <string>

namespace precondlab {

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::initializer_list<std::string_view> parts) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::string_view part : parts) {
        for (unsigned char c : part) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0x1f;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(h);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) {
    return mix_seed(base ^ mix_seed(counter));
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sigma * normal(rng);
    return m;
}

std::string format_real(double value) {
    if (value == 0.0) return "0";  // folds -0
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

}  // namespace precondlab
