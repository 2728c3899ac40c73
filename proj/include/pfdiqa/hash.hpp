#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace pfd {

// Streaming FNV-1a 64-bit. Used for content fingerprints (manifests,
// checkpoints, prompt banks) where stability matters, not cryptography.
class Hasher {
public:
    Hasher& update(const void* data, std::size_t len);
    Hasher& update(const std::string& s) { return update(s.data(), s.size()); }
    Hasher& update_u64(std::uint64_t v);
    Hasher& update_double(double v);

    std::uint64_t digest() const { return h_; }
    std::string hex() const;

private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

std::uint64_t hash_bytes(const void* data, std::size_t len);
std::string hash_hex(std::uint64_t h);

// Hash of a file's raw bytes. Throws IoError if unreadable.
std::string file_hash_hex(const std::string& path);

}  // namespace pfd
