#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "deepgp/common.hpp"

namespace deepgp {

// Seeded random stream with a pinned normal sampler (Box-Muller), so that
// identical seeds give identical draws on every platform. std:: distributions
// are implementation-defined and would break archive determinism.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : base_seed_(seed), gen_(splitmix64(seed)) {}

    // Independent substream; fixed derivation so substreams are reproducible.
    Rng stream(std::uint64_t salt) const {
        return Rng(splitmix64(base_seed_ ^ (0x9e3779b97f4a7c15ULL + salt * 0xbf58476d1ce4e5b9ULL)));
    }

    std::uint64_t seed() const { return base_seed_; }

    double uniform() {  // [0,1) with 53 random bits
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Row-major fill order.
    Matrix normal_matrix(Index rows, Index cols) {
        Matrix out(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) out(i, j) = normal();
        return out;
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = 0;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    // k distinct indices from [0, n), order of first appearance in a
    // Fisher-Yates prefix shuffle.
    std::vector<Index> sample_without_replacement(Index n, Index k) {
        require(k <= n, "sample_without_replacement: k=", k, " exceeds n=", n);
        std::vector<Index> idx(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (Index i = 0; i < k; ++i) {
            const Index j = i + static_cast<Index>(below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(k));
        return idx;
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t base_seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace deepgp
