#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ecgdx {

// splitmix64: the base engine for every random stream in the project.
// All randomized work units (bootstrap iterations, generator blocks, strata)
// derive their own stream seed from (parent seed, unit id), so results do not
// depend on thread count or scheduling.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Order-sensitive seed combiner: mix_seed(a,b) != mix_seed(b,a) in general.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a;
    std::uint64_t h = splitmix64_next(s);
    s ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return splitmix64_next(s);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::string_view tag) {
    // FNV-1a over the tag, folded into the stream seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(a, h);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // Uniform on [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1); safe for logit-type transforms.
    double uniform_open01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), unbiased via rejection. n must be > 0.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace ecgdx
