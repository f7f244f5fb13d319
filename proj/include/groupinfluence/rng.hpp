#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace gi {

// Deterministic stream generator. Each stream is named by (purpose, seed) so
// that independent uses of randomness never share state and every run is
// reproducible from its manifest. splitmix64 core; identical output on every
// platform.
class Rng {
  public:
    Rng(std::string_view purpose, std::uint64_t seed) {
        // FNV-1a over the purpose string, folded with the seed.
        std::uint64_t h = 1469598103934665603ull;
        for (char c : purpose) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        state_ = h ^ (seed + 0x9e3779b97f4a7c15ull);
        // burn one step so nearby seeds decorrelate
        next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is negligible for n << 2^64 and keeps the stream simple
        return next_u64() % n;
    }

    // standard normal, Box-Muller with caching
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t state_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gi
