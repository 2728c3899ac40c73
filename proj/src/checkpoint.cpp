#include "pfdiqa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "pfdiqa/errors.hpp"

namespace pfd {
namespace {

constexpr char kMagic[8] = {'P', 'F', 'D', 'I', 'Q', 'A', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "archive format assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.write(b, 8);
}

std::uint32_t read_u32(std::istream& in) {
    char b[4];
    in.read(b, 4);
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    char b[8];
    in.read(b, 8);
    std::uint64_t v;
    std::memcpy(&v, b, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& store) {
    nlohmann::json header;
    header["kind"] = meta.kind;
    header["config"] = meta.config_canonical;
    header["prompt_bank_hash"] = meta.prompt_bank_hash;
    header["teacher_hash"] = meta.teacher_hash;
    header["train_source_ids"] = meta.train_source_ids;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : store.entries()) {
        tensors.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
    }
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    auto flat = store.flat();
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a checkpoint archive: " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (!in) throw IoError("truncated checkpoint header: " + path);
    if (version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      ": " + path);
    }
    const std::uint64_t json_len = read_u64(in);
    if (!in) throw IoError("truncated checkpoint header: " + path);
    std::string text(json_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(json_len));
    if (!in) throw IoError("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint header in " + path + ": " + e.what());
    }

    LoadedCheckpoint loaded;
    try {
        loaded.meta.kind = header.at("kind").get<std::string>();
        loaded.meta.config_canonical = header.at("config").get<std::string>();
        loaded.meta.prompt_bank_hash = header.at("prompt_bank_hash").get<std::string>();
        loaded.meta.teacher_hash = header.at("teacher_hash").get<std::string>();
        loaded.meta.train_source_ids =
            header.at("train_source_ids").get<std::vector<int>>();
        for (const auto& t : header.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const int rows = t.at("rows").get<int>();
            const int cols = t.at("cols").get<int>();
            if (rows <= 0 || cols <= 0) {
                throw IoError("bad tensor shape for " + name + " in " + path);
            }
            loaded.store.add(name, rows, cols);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint header in " + path + ": " + e.what());
    }

    auto flat = loaded.store.flat();
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != flat.size() * sizeof(double)) {
        throw IoError("truncated tensor data in checkpoint: " + path);
    }
    in.peek();
    if (!in.eof()) throw IoError("trailing bytes after tensor data in checkpoint: " + path);
    return loaded;
}

}  // namespace pfd
