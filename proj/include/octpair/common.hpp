#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace octpair {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Wrap an angle into (-pi, pi].
template <typename Scalar>
inline Scalar wrap_phase(Scalar x) {
  Scalar r = static_cast<Scalar>(std::remainder(static_cast<double>(x), kTwoPi));
  if (r <= static_cast<Scalar>(-kPi)) r += static_cast<Scalar>(kTwoPi);
  return r;
}

// SplitMix64 finalizer. All randomness in the project is counter-based so
// that identical seeds give identical output on every platform, independent
// of evaluation order.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_str(std::string_view s, std::uint64_t seed = 0) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;  // FNV-1a offset basis
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return mix64(h);
}

// Sequential deterministic generator built on SplitMix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return mix64(state_++); }

  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n > 0.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double next_normal() {
    // Box-Muller; one value per call, the twin is discarded.
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Derive an independent child stream; stable w.r.t. call order of siblings.
  Rng child(std::string_view label) const {
    return Rng(hash_combine(state_, hash_str(label)));
  }
  Rng child(std::uint64_t index) const { return Rng(hash_combine(state_, mix64(index))); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Stateless coordinate hash -> uniform in [0, 1). Used for texture fields.
inline double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                        std::uint64_t c) {
  std::uint64_t h = mix64(seed ^ mix64(a ^ mix64(b ^ mix64(c))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Uniform in [-sqrt(3), sqrt(3)): zero mean, unit standard deviation.
inline double hash_unit_sym(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) {
  return (hash_unit(seed, a, b, c) * 2.0 - 1.0) * 1.7320508075688772;
}

enum class Modality : int { intensity = 0, phase = 1 };

inline std::string_view to_string(Modality m) {
  return m == Modality::intensity ? "intensity" : "phase";
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace octpair
