#pragma once

#include <cstdint>
#include <random>

namespace homoscale {

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based seed splitting: the seed of task `index` in stream `stream`
/// depends only on (root, stream, index), never on scheduling order.
[[nodiscard]] constexpr std::uint64_t task_seed(std::uint64_t root, std::uint64_t stream,
                                                std::uint64_t index) noexcept {
    return splitmix64(splitmix64(splitmix64(root) ^ (stream * 0xD1B54A32D192ED03ULL)) ^ index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}
    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace homoscale
