#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace dutavc {

using Rng = std::mt19937_64;

/// FNV-1a 64-bit hash.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-(stage, item) seed derived from a root seed:
///   splitmix64(root ^ fnv1a64(stage + "/" + item)).
/// Results therefore never depend on processing order or thread count.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stage,
                                 std::string_view item) {
  std::string key;
  key.reserve(stage.size() + item.size() + 1);
  key.append(stage).append("/").append(item);
  return splitmix64(root ^ fnv1a64(key));
}

/// Fills a matrix with independent standard-normal draws.
inline Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace dutavc
