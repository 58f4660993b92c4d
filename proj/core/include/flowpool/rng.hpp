#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace flowpool::rng {

// Seeded generator with a fixed bit-to-double mapping. std::mt19937_64 output
// is specified by the standard, but the distribution adapters are not, so we
// convert uniforms and normals by hand to keep runs reproducible across
// standard libraries.
class Generator {
 public:
  explicit Generator(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1], never zero (safe under log).
  double uniform_open() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Row-major fill so the (rows, cols, seed) triple pins every entry.
inline Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols,
                                     std::uint64_t seed) {
  Generator gen(seed);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = gen.normal();
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Generator& gen) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[gen.below(i)]);
}

}  // namespace flowpool::rng
