#pragma once

#include <cstdint>

namespace testsupport {

/// Deterministic generator for reproducible randomized tests.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [lo, hi], inclusive.
    int next_int(int lo, int hi) {
        return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
    }

    /// Uniform float in [lo, hi).
    float next_float(float lo, float hi) {
        const double unit = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return lo + static_cast<float>(unit * (hi - lo));
    }

    bool next_bool() { return (next() & 1) != 0; }

    bool next_bool(float probability) { return next_float(0.0f, 1.0f) < probability; }

private:
    uint64_t state_;
};

} // namespace testsupport
