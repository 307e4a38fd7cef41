#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace nws {

// xoshiro256** seeded through splitmix64. Distribution sampling is implemented
// here rather than through <random> distributions so that draws are identical
// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    // Independent stream for a named consumer ("init", "dropout", ...).
    // Derivation only depends on (seed, purpose, index), never on how many
    // numbers have been drawn from *this.
    Rng substream(std::string_view purpose, std::uint64_t index = 0) const;

    std::uint64_t next_u64();
    double uniform();                          // [0, 1)
    double uniform(double lo, double hi);      // [lo, hi)
    std::uint64_t below(std::uint64_t n);      // [0, n), unbiased
    double normal();                           // N(0, 1), Box-Muller
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t position() const { return position_; }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            auto j = below(i);
            using std::swap;
            swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
    std::uint64_t position_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace nws
