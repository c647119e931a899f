#pragma once

// Portable seeded randomness. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; every conversion on top of it (uniform
// reals, normals, bounded integers, shuffles) is done here so results are
// bit-identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace fedcast {

// splitmix64 finaliser, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives a child seed from a parent seed and an ordered list of keys.
template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Keys... keys) noexcept {
    std::uint64_t h = mix64(seed);
    ((h = mix64(h ^ static_cast<std::uint64_t>(keys))), ...);
    return h;
}

// Stream tags keep derived seeds for different purposes apart.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    sampling = 3,
    synth = 4,
    weather = 5,
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, bound), rejection sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    // Box-Muller; draws two uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // `count` distinct indices from [0, population), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t population,
                                                        std::size_t count) {
        std::vector<std::size_t> pool(population);
        for (std::size_t i = 0; i < population; ++i) pool[i] = i;
        if (count > population) count = population;
        for (std::size_t i = 0; i < count; ++i) {
            const auto j = i + static_cast<std::size_t>(below(population - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(count);
        return pool;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedcast
