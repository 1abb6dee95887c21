#pragma once

#include <cstdint>
#include <random>

namespace cbvi {

/// Independent random stream identified by (seed, stream).
///
/// Streams are keyed by the logical unit of work (a sample index, a row, a
/// purpose tag) rather than by the thread that consumes them, which keeps
/// sampled results identical for any number of workers.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t bits() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Stream tags for the different consumers of one user seed.
namespace streams {
inline constexpr std::uint64_t kSimCovariates = 0x1000'0000ull;
inline constexpr std::uint64_t kSimWeights = 0x2000'0000ull;
inline constexpr std::uint64_t kSimLabels = 0x3000'0000ull;
inline constexpr std::uint64_t kSplit = 0x4000'0000ull;
inline constexpr std::uint64_t kEvidence = 0x5000'0000ull;
inline constexpr std::uint64_t kPredictive = 0x6000'0000ull;
}  // namespace streams

}  // namespace cbvi
