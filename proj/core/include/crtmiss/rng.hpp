#pragma once

#include <cstdint>
#include <random>

namespace crtmiss::rng {

/// Identifies one random stream within a replication. Every consumer of
/// randomness draws from its own role so that, e.g., adding imputation to a
/// plan never perturbs the generated datasets.
enum class Role : std::uint64_t {
  ClusterCovariate = 1,
  IndividualCovariate = 2,
  ClusterIntercept = 3,
  OutcomeBernoulli = 4,
  Missingness = 5,
  GibbsChain = 6,
  Truth = 7,
  Scratch = 8,
};

/// SplitMix64 finalizer; used to mix (master_seed, replication, role) into a
/// well-dispersed 64-bit stream key.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t master_seed,
                                   std::uint64_t replication,
                                   std::uint64_t role) {
  std::uint64_t k = splitmix64(master_seed);
  k = splitmix64(k ^ (0x9e3779b97f4a7c15ull + replication));
  k = splitmix64(k ^ (0xd1b54a32d192ed03ull + role));
  return k;
}

/// Derives a sub-master seed (e.g. one per design size k in a sweep) so that
/// cells of a plan use disjoint stream families.
constexpr std::uint64_t sub_seed(std::uint64_t master_seed, std::uint64_t tag) {
  return splitmix64(splitmix64(master_seed) ^ splitmix64(tag + 0x632be59bd9b4e019ull));
}

double normal_quantile(double p);

/// One deterministic random stream. The generator sequence is pinned by the
/// C++ standard (mt19937_64) and all variates are derived by inverse-CDF, so
/// identical keys give bit-identical draws on every platform.
class Stream {
 public:
  Stream(std::uint64_t master_seed, std::uint64_t replication, Role role)
      : gen_(stream_key(master_seed, replication, static_cast<std::uint64_t>(role))) {}

  explicit Stream(std::uint64_t raw_key) : gen_(raw_key) {}

  /// Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_quantile(uniform()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// N(mean, 1) conditioned on being positive (if `positive`) or negative.
  double truncated_standard_normal(double mean, bool positive);

  /// Gamma(shape, 1) for shape >= 1 via Marsaglia-Tsang.
  double gamma(double shape);

 private:
  std::mt19937_64 gen_;
};

}  // namespace crtmiss::rng
