#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pfdiqa/checkpoint.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/rng.hpp"

namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& stem) {
    return fs::temp_directory_path() / ("pfdiqa_ckpt_" + stem + ".bin");
}

pfd::ParamStore sample_store(std::uint64_t seed) {
    pfd::ParamStore store;
    pfd::Rng rng(seed);
    store.init_gaussian(store.add("enc.patch.w", 8, 12), rng, 0.02);
    store.init_gaussian(store.add("enc.patch.b", 1, 8), rng, 0.02);
    store.init_gaussian(store.add("dec.head.w", 1, 8), rng, 0.02);
    store.fill(store.add("enc.ln.g", 1, 8), 1.0);
    return store;
}

pfd::CheckpointMeta sample_meta() {
    pfd::CheckpointMeta meta;
    meta.kind = "teacher";
    meta.config_canonical = "backbone.embed_dim = 8\nrun.seed = 7\n";
    meta.prompt_bank_hash = "00aabbccddeeff11";
    meta.teacher_hash = "";
    meta.train_source_ids = {0, 1, 2, 5, 8};
    return meta;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("checkpoint round-trip restores metadata and tensors bit-exactly") {
    const auto path = temp_path("roundtrip");
    const auto meta = sample_meta();
    const auto store = sample_store(11);
    pfd::save_checkpoint(path.string(), meta, store);

    const auto loaded = pfd::load_checkpoint(path.string());
    CHECK(loaded.meta.kind == meta.kind);
    CHECK(loaded.meta.config_canonical == meta.config_canonical);
    CHECK(loaded.meta.prompt_bank_hash == meta.prompt_bank_hash);
    CHECK(loaded.meta.teacher_hash == meta.teacher_hash);
    CHECK(loaded.meta.train_source_ids == meta.train_source_ids);

    REQUIRE(loaded.store.num_tensors() == store.num_tensors());
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        const auto& a = store.entries()[i];
        const auto& b = loaded.store.entries()[i];
        CHECK(a.name == b.name);
        CHECK(a.rows == b.rows);
        CHECK(a.cols == b.cols);
        CHECK(a.offset == b.offset);
    }
    CHECK(same_bits(store.flat(), loaded.store.flat()));
    CHECK(loaded.store.content_hash() == store.content_hash());
    fs::remove(path);
}

TEST_CASE("special double values survive the archive unchanged") {
    pfd::ParamStore store;
    auto s = store.add("odd.values", 1, 6);
    auto m = store.mat(s);
    m(0, 0) = -0.0;
    m(0, 1) = std::numeric_limits<double>::infinity();
    m(0, 2) = -std::numeric_limits<double>::infinity();
    m(0, 3) = std::numeric_limits<double>::quiet_NaN();
    m(0, 4) = std::numeric_limits<double>::denorm_min();
    m(0, 5) = std::numeric_limits<double>::max();

    const auto path = temp_path("special");
    pfd::save_checkpoint(path.string(), sample_meta(), store);
    const auto loaded = pfd::load_checkpoint(path.string());
    CHECK(same_bits(store.flat(), loaded.store.flat()));
    CHECK(std::signbit(loaded.store.mat(pfd::Slot{0})(0, 0)));
    CHECK(std::isnan(loaded.store.mat(pfd::Slot{0})(0, 3)));
    fs::remove(path);
}

TEST_CASE("archive bytes are identical across save, reload, and re-save") {
    const auto path_a = temp_path("hash_a");
    const auto path_b = temp_path("hash_b");
    const auto path_c = temp_path("hash_c");
    const auto meta = sample_meta();
    const auto store = sample_store(23);

    pfd::save_checkpoint(path_a.string(), meta, store);
    pfd::save_checkpoint(path_b.string(), meta, store);
    const auto hash_a = pfd::file_hash_hex(path_a.string());
    CHECK(hash_a == pfd::file_hash_hex(path_b.string()));

    const auto loaded = pfd::load_checkpoint(path_a.string());
    pfd::save_checkpoint(path_c.string(), loaded.meta, loaded.store);
    CHECK(hash_a == pfd::file_hash_hex(path_c.string()));

    fs::remove(path_a);
    fs::remove(path_b);
    fs::remove(path_c);
}

TEST_CASE("archive hash is sensitive to weights and metadata") {
    const auto path_a = temp_path("sens_a");
    const auto path_b = temp_path("sens_b");
    const auto meta = sample_meta();
    pfd::save_checkpoint(path_a.string(), meta, sample_store(1));
    pfd::save_checkpoint(path_b.string(), meta, sample_store(2));
    CHECK(pfd::file_hash_hex(path_a.string()) != pfd::file_hash_hex(path_b.string()));

    auto meta2 = meta;
    meta2.teacher_hash = "deadbeef";
    pfd::save_checkpoint(path_b.string(), meta2, sample_store(1));
    CHECK(pfd::file_hash_hex(path_a.string()) != pfd::file_hash_hex(path_b.string()));

    fs::remove(path_a);
    fs::remove(path_b);
}

TEST_CASE("student metadata round-trips with lineage fields") {
    pfd::CheckpointMeta meta;
    meta.kind = "student";
    meta.config_canonical = "training.epochs = 3\n";
    meta.prompt_bank_hash = "12ab";
    meta.teacher_hash = "34cd";
    meta.train_source_ids = {};

    const auto path = temp_path("student");
    pfd::save_checkpoint(path.string(), meta, sample_store(3));
    const auto loaded = pfd::load_checkpoint(path.string());
    CHECK(loaded.meta.kind == "student");
    CHECK(loaded.meta.teacher_hash == "34cd");
    CHECK(loaded.meta.train_source_ids.empty());
    fs::remove(path);
}

TEST_CASE("empty store round-trips") {
    pfd::ParamStore store;
    const auto path = temp_path("empty");
    pfd::save_checkpoint(path.string(), sample_meta(), store);
    const auto loaded = pfd::load_checkpoint(path.string());
    CHECK(loaded.store.num_tensors() == 0);
    CHECK(loaded.store.size() == 0);
    fs::remove(path);
}

TEST_CASE("corrupt archives are rejected with IoError") {
    const auto path = temp_path("corrupt_src");
    pfd::save_checkpoint(path.string(), sample_meta(), sample_store(5));
    const std::string good = read_bytes(path);
    const auto bad = temp_path("corrupt_dst");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(pfd::load_checkpoint("/nonexistent/nowhere.ckpt"), pfd::IoError);
    }
    SUBCASE("bad magic") {
        std::string b = good;
        b[0] = 'X';
        write_bytes(bad, b);
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("unsupported version") {
        std::string b = good;
        b[8] = static_cast<char>(99);
        write_bytes(bad, b);
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("truncated header") {
        write_bytes(bad, good.substr(0, 16));
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("truncated json") {
        write_bytes(bad, good.substr(0, 40));
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("malformed json") {
        std::string b = good;
        b[20] = '}';
        write_bytes(bad, b);
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("truncated tensor data") {
        write_bytes(bad, good.substr(0, good.size() - 9));
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    SUBCASE("trailing bytes") {
        write_bytes(bad, good + "zz");
        CHECK_THROWS_AS(pfd::load_checkpoint(bad.string()), pfd::IoError);
    }
    fs::remove(path);
    fs::remove(bad);
}
