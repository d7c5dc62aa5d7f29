#ifndef NOF1_RNG_HPP
#define NOF1_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nof1/common.hpp"

namespace nof1 {

/// Seeded random stream with portable variate transforms.
///
/// std::mt19937_64 output is fixed by the standard, but the standard
/// distribution adaptors are implementation-defined, so uniform/normal/
/// Poisson draws are derived here by explicit transforms. Two streams with
/// the same seed produce bitwise-identical sequences on any conforming
/// implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform on [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw UsageError("Rng::below: n must be positive");
        // rejection sampling keeps the draw exactly uniform
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (the cached second variate keeps the
    /// stream deterministic).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Poisson by Knuth's product-of-uniforms; adequate for the small means
    /// used by the synthetic generator.
    int poisson(double mean) {
        if (mean < 0.0) throw UsageError("Rng::poisson: mean must be >= 0");
        if (mean == 0.0) return 0;
        const double limit = std::exp(-mean);
        int k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Derives an independent child seed from a base seed and a stream index
/// (splitmix64 finalizer). Used to give participants, epochs, and Monte
/// Carlo substreams their own reproducible streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace nof1

#endif
