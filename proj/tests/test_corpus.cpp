#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pfdiqa/corpus.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/rng.hpp"

namespace fs = std::filesystem;
using pfd::DistortionKind;
using pfd::Image;

namespace {

double laplacian_energy(const Image& img) {
    double e = 0.0;
    for (int y = 1; y < img.h - 1; ++y)
        for (int x = 1; x < img.w - 1; ++x) {
            const double l = 4.0 * img.luma(y, x) - img.luma(y - 1, x) -
                             img.luma(y + 1, x) - img.luma(y, x - 1) -
                             img.luma(y, x + 1);
            e += l * l;
        }
    return e;
}

double max_abs_diff(const Image& a, const Image& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("kind registry: 11 kinds, names round-trip") {
    const auto& kinds = pfd::all_distortion_kinds();
    REQUIRE(kinds.size() == 11);
    std::set<std::string> names;
    for (DistortionKind k : kinds) {
        names.insert(std::string(pfd::kind_name(k)));
        CHECK(pfd::kind_from_name(pfd::kind_name(k)) == k);
    }
    CHECK(names.size() == 11);
    CHECK(names.count("jpeg-blocking") == 1);
    CHECK(names.count("pixelation") == 1);
    CHECK_THROWS_AS(pfd::kind_from_name("sepia"), pfd::ArgumentError);
}

TEST_CASE("severity tables are strictly increasing in magnitude") {
    for (DistortionKind k : pfd::all_distortion_kinds()) {
        double prev = -1.0;
        for (int sev = 1; sev <= 5; ++sev) {
            const auto spec = pfd::make_spec(k, sev);
            const double m = spec.params.at("magnitude");
            CHECK(m > prev);
            prev = m;
        }
    }
    CHECK_THROWS_AS(pfd::make_spec(DistortionKind::GaussianBlur, 0), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::make_spec(DistortionKind::GaussianBlur, 6), pfd::ArgumentError);
}

TEST_CASE("magnitude zero is the identity for every kind") {
    const Image src = pfd::synthesize_source(0, 7, 64);
    for (DistortionKind k : pfd::all_distortion_kinds()) {
        auto spec = pfd::make_spec(k, 1);
        spec.params["magnitude"] = 0.0;
        const Image out = pfd::apply_distortion(src, spec, 99);
        CHECK(max_abs_diff(src, out) < 1e-6);
    }
}

TEST_CASE("white noise at severity 3 matches its stddev on a flat image") {
    Image flat = Image::zero(64, 64);
    for (double& v : flat.data) v = 0.5;
    const auto spec = pfd::make_spec(DistortionKind::WhiteNoise, 3);
    const Image out = pfd::apply_distortion(flat, spec, 1234);
    double s2 = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double d = out.data[i] - flat.data[i];
        s2 += d * d;
    }
    const double stddev = std::sqrt(s2 / static_cast<double>(flat.size()));
    CHECK(stddev == doctest::Approx(spec.params.at("stddev")).epsilon(0.10));
}

TEST_CASE("harder blur removes more high-frequency energy") {
    const Image src = pfd::synthesize_source(3, 11, 64);
    const Image mild =
        pfd::apply_distortion(src, pfd::make_spec(DistortionKind::GaussianBlur, 1), 0);
    const Image heavy =
        pfd::apply_distortion(src, pfd::make_spec(DistortionKind::GaussianBlur, 5), 0);
    const double e_src = laplacian_energy(src);
    const double e_mild = laplacian_energy(mild);
    const double e_heavy = laplacian_energy(heavy);
    CHECK(e_mild < e_src);
    CHECK(e_heavy < e_mild);
}

TEST_CASE("every kind at severity 5 visibly changes a textured source") {
    const Image src = pfd::synthesize_source(5, 3, 64);
    for (DistortionKind k : pfd::all_distortion_kinds()) {
        const Image out = pfd::apply_distortion(src, pfd::make_spec(k, 5), 42);
        CHECK(max_abs_diff(src, out) > 0.02);
    }
}

TEST_CASE("stochastic kinds are seed-deterministic, seed-sensitive") {
    const Image src = pfd::synthesize_source(1, 5, 64);
    for (DistortionKind k : {DistortionKind::WhiteNoise, DistortionKind::ImpulseNoise}) {
        const auto spec = pfd::make_spec(k, 4);
        const Image a = pfd::apply_distortion(src, spec, 7);
        const Image b = pfd::apply_distortion(src, spec, 7);
        const Image c = pfd::apply_distortion(src, spec, 8);
        CHECK(max_abs_diff(a, b) == 0.0);
        CHECK(max_abs_diff(a, c) > 0.0);
    }
}

TEST_CASE("distortion rejects bad specs") {
    const Image src = pfd::synthesize_source(0, 1, 32);
    pfd::DistortionSpec spec;
    spec.kind = DistortionKind::GaussianBlur;
    spec.params.clear();
    CHECK_THROWS_AS(pfd::apply_distortion(src, spec, 0), pfd::ArgumentError);
    spec.params["magnitude"] = -1.0;
    CHECK_THROWS_AS(pfd::apply_distortion(src, spec, 0), pfd::ArgumentError);
}

TEST_CASE("quality buckets partition [0,1] into five levels") {
    CHECK(pfd::quality_bucket(0.0) == 0);
    CHECK(pfd::quality_bucket(0.19) == 0);
    CHECK(pfd::quality_bucket(0.2) == 1);
    CHECK(pfd::quality_bucket(0.59) == 2);
    CHECK(pfd::quality_bucket(0.8) == 4);
    CHECK(pfd::quality_bucket(1.0) == 4);
    CHECK_THROWS_AS(pfd::quality_bucket(1.5), pfd::ArgumentError);
}

TEST_CASE("single source, one kind: five samples with strictly decreasing mos") {
    TmpDir tmp("corpus_tmp_single");
    const auto m = pfd::generate_corpus(1, {DistortionKind::GaussianBlur}, 7,
                                        tmp.path.string());
    REQUIRE(m.records.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(m.records[i].severity == i + 1);
        if (i > 0) CHECK(m.records[i].mos < m.records[i - 1].mos);
    }
}

TEST_CASE("full corpus: 550 unique records with consistent labels") {
    TmpDir tmp("corpus_tmp_full");
    const auto m =
        pfd::generate_corpus(10, pfd::all_distortion_kinds(), 1, tmp.path.string());
    REQUIRE(m.records.size() == 550);
    std::set<std::string> ids;
    for (const auto& r : m.records) {
        ids.insert(r.id);
        CHECK(r.quality_level == pfd::quality_bucket(r.mos));
        CHECK(fs::exists(tmp.path / r.path));
    }
    CHECK(ids.size() == 550);

    // oracle monotonicity within every (source, kind) group
    for (std::size_t i = 0; i + 1 < m.records.size(); ++i) {
        const auto& a = m.records[i];
        const auto& b = m.records[i + 1];
        if (pfd::source_of(a.id) == pfd::source_of(b.id) && a.kind == b.kind)
            CHECK(a.mos > b.mos);
    }
}

TEST_CASE("identical seeds give byte-identical corpora") {
    TmpDir t1("corpus_tmp_rep1"), t2("corpus_tmp_rep2");
    const std::vector<DistortionKind> kinds = {DistortionKind::WhiteNoise,
                                               DistortionKind::JpegBlocking};
    const auto m1 = pfd::generate_corpus(2, kinds, 42, t1.path.string());
    const auto m2 = pfd::generate_corpus(2, kinds, 42, t2.path.string());
    CHECK(m1.source_fingerprint == m2.source_fingerprint);
    CHECK(pfd::file_hash_hex((t1.path / "manifest.csv").string()) ==
          pfd::file_hash_hex((t2.path / "manifest.csv").string()));
    for (const auto& r : m1.records)
        CHECK(pfd::file_hash_hex((t1.path / r.path).string()) ==
              pfd::file_hash_hex((t2.path / r.path).string()));
    const auto m3 = pfd::generate_corpus(2, kinds, 43, t2.path.string());
    CHECK(m3.source_fingerprint != m1.source_fingerprint);
}

TEST_CASE("generate_corpus validates its arguments") {
    CHECK_THROWS_AS(pfd::generate_corpus(0, pfd::all_distortion_kinds(), 1, "x"),
                    pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::generate_corpus(1, {}, 1, "x"), pfd::ArgumentError);
}

TEST_CASE("manifest round trip preserves records and fingerprint") {
    TmpDir tmp("corpus_tmp_manifest");
    const auto m = pfd::generate_corpus(2, {DistortionKind::Pixelation}, 5,
                                        tmp.path.string());
    const auto loaded = pfd::load_manifest((tmp.path / "manifest.csv").string());
    REQUIRE(loaded.records.size() == m.records.size());
    CHECK(loaded.source_fingerprint == m.source_fingerprint);
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        CHECK(loaded.records[i].id == m.records[i].id);
        CHECK(loaded.records[i].mos == m.records[i].mos);  // exact round trip
        CHECK(loaded.records[i].quality_level == m.records[i].quality_level);
    }
    // re-serialization is stable
    pfd::save_manifest(loaded, (tmp.path / "again.csv").string());
    CHECK(pfd::file_hash_hex((tmp.path / "again.csv").string()) ==
          pfd::file_hash_hex((tmp.path / "manifest.csv").string()));

    CHECK_THROWS_AS(pfd::load_manifest("missing.csv"), pfd::IoError);
    std::ofstream bad((tmp.path / "bad.csv").string());
    bad << "wrong,header\n";
    bad.close();
    CHECK_THROWS_AS(pfd::load_manifest((tmp.path / "bad.csv").string()), pfd::IoError);
}

TEST_CASE("split keeps sources disjoint at the requested proportion") {
    TmpDir tmp("corpus_tmp_split");
    const auto m = pfd::generate_corpus(
        10, {DistortionKind::GaussianBlur, DistortionKind::WhiteNoise}, 3,
        tmp.path.string());
    const auto [train, test] = pfd::split_dataset(m, 0.8, 17);
    CHECK(train.records.size() == 80);
    CHECK(test.records.size() == 20);
    std::set<std::string> train_sources, test_sources;
    for (const auto& r : train.records) train_sources.insert(pfd::source_of(r.id));
    for (const auto& r : test.records) test_sources.insert(pfd::source_of(r.id));
    CHECK(train_sources.size() == 8);
    CHECK(test_sources.size() == 2);
    for (const auto& s : test_sources) CHECK(train_sources.count(s) == 0);

    // union preserves every record exactly once
    std::set<std::string> all_ids;
    for (const auto& r : train.records) all_ids.insert(r.id);
    for (const auto& r : test.records) all_ids.insert(r.id);
    CHECK(all_ids.size() == m.records.size());

    const auto [train2, test2] = pfd::split_dataset(m, 0.8, 18);
    CHECK(train2.records.size() == 80);
    CHECK(train2.source_fingerprint != train.source_fingerprint);

    const auto [train3, test3] = pfd::split_dataset(m, 0.8, 17);
    CHECK(train3.source_fingerprint == train.source_fingerprint);

    CHECK_THROWS_AS(pfd::split_dataset(m, 0.0, 1), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::split_dataset(m, 1.0, 1), pfd::ArgumentError);
}

TEST_CASE("splitting a single-source corpus is refused") {
    TmpDir tmp("corpus_tmp_onesrc");
    const auto m = pfd::generate_corpus(1, {DistortionKind::GaussianBlur}, 2,
                                        tmp.path.string());
    CHECK_THROWS_AS(pfd::split_dataset(m, 0.8, 1), pfd::ArgumentError);
}

TEST_CASE("load_samples restores pixels and metadata") {
    TmpDir tmp("corpus_tmp_load");
    const auto m = pfd::generate_corpus(2, {DistortionKind::ContrastDecrease}, 9,
                                        tmp.path.string());
    const auto samples = pfd::load_samples(m, tmp.path.string());
    REQUIRE(samples.size() == 10);
    for (const auto& s : samples) {
        CHECK(s.pixels.h == 64);
        CHECK(s.pixels.w == 64);
        CHECK(s.quality_level == pfd::quality_bucket(s.mos));
        CHECK(s.distortion.params.count("magnitude") == 1);
        for (double v : s.pixels.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("synthesized sources are textured and seed-dependent") {
    const Image a = pfd::synthesize_source(0, 1, 64);
    const Image b = pfd::synthesize_source(0, 1, 64);
    const Image c = pfd::synthesize_source(1, 1, 64);
    const Image d = pfd::synthesize_source(0, 2, 64);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, c) > 0.01);
    CHECK(max_abs_diff(a, d) > 0.01);
    CHECK(laplacian_energy(a) > 1.0);
    for (double v : a.data) {
        REQUIRE(v >= 0.05);
        REQUIRE(v <= 0.95);
    }
}

TEST_CASE("double formatting round-trips exactly") {
    pfd::Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-2.0, 2.0);
        const std::string s = pfd::format_double(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(pfd::format_double(0.5) == "0.5");
}
