#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/rng.hpp"

namespace {

// independent reference for the engine recurrence
struct RefSplitMix {
    std::uint64_t s;
    std::uint64_t next() {
        std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
};

}  // namespace

TEST_CASE("engine matches the published splitmix64 vector") {
    RefSplitMix ref{0};
    CHECK(ref.next() == 0xe220a8397b1dcdafull);
    CHECK(ref.next() == 0x6e789e6aa1b965f4ull);
    CHECK(ref.next() == 0x06c45d188009454full);
}

TEST_CASE("Rng streams the engine with one warm-up draw") {
    pfd::Rng rng(42);
    RefSplitMix ref{42};
    ref.next();  // constructor warm-up
    for (int i = 0; i < 64; ++i) CHECK(rng.next_u64() == ref.next());
}

TEST_CASE("same seed replays, different seeds diverge") {
    pfd::Rng a(7), b(7), c(8);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 256; ++i) {
        const auto x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_diff = any_diff || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform01 range and mean") {
    pfd::Rng rng(123);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform(lo,hi) stays inside the interval") {
    pfd::Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform(-2.5, 3.5);
        REQUIRE(u >= -2.5);
        REQUIRE(u < 3.5);
    }
}

TEST_CASE("normal has unit moments") {
    pfd::Rng rng(99);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s1 += x;
        s2 += x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("uniform_index covers [0,n) roughly evenly") {
    pfd::Rng rng(17);
    const std::uint64_t n = 10;
    std::vector<int> counts(n, 0);
    for (int i = 0; i < 50000; ++i) {
        const auto k = rng.uniform_index(n);
        REQUIRE(k < n);
        counts[k]++;
    }
    for (int c : counts) CHECK(std::abs(c - 5000) < 500);
}

TEST_CASE("shuffle produces a permutation and depends on the seed") {
    std::vector<int> v(100);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    pfd::Rng a(1), b(2);
    a.shuffle(v);
    b.shuffle(w);
    std::set<int> sv(v.begin(), v.end());
    CHECK(sv.size() == 100);
    CHECK(*sv.begin() == 0);
    CHECK(*sv.rbegin() == 99);
    CHECK(v != w);
}

TEST_CASE("derive_seed separates labeled substreams") {
    const auto a = pfd::derive_seed(42, "corpus");
    const auto b = pfd::derive_seed(42, "teacher");
    const auto c = pfd::derive_seed(43, "corpus");
    CHECK(a != b);
    CHECK(a != c);
    CHECK(a == pfd::derive_seed(42, "corpus"));
    CHECK(pfd::derive_seed(42, std::uint64_t{0}) != pfd::derive_seed(42, std::uint64_t{1}));
}

TEST_CASE("fnv-1a matches the published test vectors") {
    pfd::Hasher empty;
    CHECK(empty.digest() == 0xcbf29ce484222325ull);
    pfd::Hasher a;
    a.update("a", 1);
    CHECK(a.digest() == 0xaf63dc4c8601ec8cull);
    pfd::Hasher foobar;
    foobar.update("foobar", 6);
    CHECK(foobar.digest() == 0x85944171f73967e8ull);
}

TEST_CASE("streaming equals one-shot hashing") {
    const std::string s = "perceptual prior discovery";
    pfd::Hasher h1;
    h1.update(s);
    pfd::Hasher h2;
    h2.update(s.substr(0, 10)).update(s.substr(10));
    CHECK(h1.digest() == h2.digest());
    CHECK(h1.digest() == pfd::hash_bytes(s.data(), s.size()));
}

TEST_CASE("update_double hashes the little-endian bit pattern") {
    const double v = 1.5;
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    pfd::Hasher h1, h2;
    h1.update_double(v);
    h2.update(buf, 8);
    CHECK(h1.digest() == h2.digest());
}

TEST_CASE("hex rendering is 16 zero-padded lowercase digits") {
    CHECK(pfd::hash_hex(0) == "0000000000000000");
    CHECK(pfd::hash_hex(0xdeadbeefull) == "00000000deadbeef");
    CHECK(pfd::hash_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
}

TEST_CASE("file hashing matches in-memory hashing and rejects missing files") {
    const std::string path = "rng_hash_tmpfile.bin";
    const std::string payload = "forty-two bytes of stable file payload....";
    {
        std::ofstream out(path, std::ios::binary);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
    CHECK(pfd::file_hash_hex(path) ==
          pfd::hash_hex(pfd::hash_bytes(payload.data(), payload.size())));
    std::remove(path.c_str());
    CHECK_THROWS_AS(pfd::file_hash_hex("definitely_missing_file.bin"), pfd::IoError);
}
