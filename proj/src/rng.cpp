#include "pfdiqa/rng.hpp"

#include <cmath>

namespace pfd {

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform01();
    } while (u1 <= 0.0);
    u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

namespace {
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = kFnvOffset;
    for (int i = 0; i < 8; ++i) {
        h = (h ^ ((seed >> (8 * i)) & 0xff)) * kFnvPrime;
    }
    for (unsigned char c : label) {
        h = (h ^ c) * kFnvPrime;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t h = kFnvOffset;
    for (int i = 0; i < 8; ++i) {
        h = (h ^ ((seed >> (8 * i)) & 0xff)) * kFnvPrime;
    }
    for (int i = 0; i < 8; ++i) {
        h = (h ^ ((index >> (8 * i)) & 0xff)) * kFnvPrime;
    }
    return h;
}

}  // namespace pfd
