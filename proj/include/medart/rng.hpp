#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace medart {

/// 64-bit FNV-1a; used for stream names, prompt hashes and token buckets.
uint64_t fnv1a64(std::string_view s);

/// Seeded generator with platform-independent uniform/normal draws
/// (std distributions are implementation-defined, so they are avoided here).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double normal();
    /// Uniform integer in [lo, hi].
    int64_t uniform_int(int64_t lo, int64_t hi);
    std::vector<double> normal_vec(size_t n, double stddev = 1.0);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// One master seed fanned out into independent named substreams
/// (e.g. "split", "init", "noise", "sampler").
class SeedStreams {
public:
    explicit SeedStreams(uint64_t master) : master_(master) {}
    uint64_t seed_for(std::string_view name) const;
    Rng stream(std::string_view name) const { return Rng(seed_for(name)); }
    uint64_t master() const { return master_; }

private:
    uint64_t master_;
};

}  // namespace medart
