#pragma once

#include <cstdint>
#include <random>

namespace segunet {

// mt19937_64 with hand-rolled draws so streams do not depend on the standard
// library's unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t n = static_cast<uint64_t>(hi - lo + 1);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = gen_();
        while (r >= limit) r = gen_();
        return lo + static_cast<int64_t>(r % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1))]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace segunet
