#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Core>

namespace egdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Identifier of the pseudorandom construction, recorded in run metadata and
/// output file headers. Draws are mt19937_64 uniforms mapped to normals via
/// Box-Muller (cosine branch, no spare caching), so every normal consumes
/// exactly two engine outputs and consumption order is well defined.
inline constexpr const char* kRngAlgorithm = "mt19937_64/box-muller/v1";

/// Addresses one independent draw stream: (seed, stream_id, consumption order)
/// reproduces a path bit-for-bit on a given platform.
struct RngSpec {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Stream of standard normal / uniform deviates bound to one RngSpec.
class GaussianStream {
 public:
  explicit GaussianStream(RngSpec spec)
      : engine_(detail::splitmix64(detail::splitmix64(spec.seed) ^
                                   detail::splitmix64(~spec.stream_id))) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  /// Standard normal. Consumes exactly two engine outputs.
  double normal() {
    const double u1 = static_cast<double>((raw() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec normal_vec(Eigen::Index d) {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

 private:
  std::mt19937_64 engine_;
};

/// Stream roles used by the samplers. Initialization, the ancestral step
/// noise, and the time-travel re-noising draw from distinct streams so that
/// toggling time travel does not perturb unrelated draws.
enum class StreamRole : std::uint64_t {
  kInit = 0,
  kAncestral = 1,
  kTravel = 2,
  kForwardNoise = 3,
  kOracle = 4,
};

inline GaussianStream make_stream(std::uint64_t seed, StreamRole role) {
  return GaussianStream(RngSpec{seed, static_cast<std::uint64_t>(role)});
}

/// The per-run bundle of streams owned by one sampling run.
struct RunStreams {
  GaussianStream init;
  GaussianStream ancestral;
  GaussianStream travel;

  explicit RunStreams(std::uint64_t seed)
      : init(make_stream(seed, StreamRole::kInit)),
        ancestral(make_stream(seed, StreamRole::kAncestral)),
        travel(make_stream(seed, StreamRole::kTravel)) {}
};

}  // namespace egdiff
