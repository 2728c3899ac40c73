#include "pfdiqa/hash.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "pfdiqa/errors.hpp"

namespace pfd {

namespace {
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;
}

Hasher& Hasher::update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h_ = (h_ ^ p[i]) * kFnvPrime;
    }
    return *this;
}

Hasher& Hasher::update_u64(std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    return update(buf, 8);
}

Hasher& Hasher::update_double(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    return update_u64(bits);
}

std::string Hasher::hex() const { return hash_hex(h_); }

std::uint64_t hash_bytes(const void* data, std::size_t len) {
    Hasher h;
    h.update(data, len);
    return h.digest();
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for hashing: " + path);
    Hasher h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace pfd
