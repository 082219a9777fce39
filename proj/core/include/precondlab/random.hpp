#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace precondlab {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby integer seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Stable seed from an ordered list of string parts (FNV-1a 64 then splitmix).
/// Independent of std::hash, so seeds match across compilers.
std::uint64_t derive_seed(std::initializer_list<std::string_view> parts);

/// Combines a base seed with a counter (e.g. the optimizer step).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter);

/// i.i.d. N(0, sigma^2) entries, filled column-major.
Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng);

/// Canonical text for a real number used inside seed keys and run ids ("-0.5", "1", "0.05").
std::string format_real(double value);

}  // namespace precondlab
