#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pfdiqa/image.hpp"

namespace pfd {

enum class DistortionKind {
    JpegBlocking,
    Quantization,
    GaussianBlur,
    MotionBlur,
    WhiteNoise,
    ImpulseNoise,
    ContrastDecrease,
    ColorDesaturation,
    Overexposure,
    Underexposure,
    Pixelation,
};

inline constexpr int kNumDistortionKinds = 11;
inline constexpr int kNumSeverities = 5;
inline constexpr int kNumQualityLevels = 5;

const std::vector<DistortionKind>& all_distortion_kinds();
std::string_view kind_name(DistortionKind kind);
std::vector<std::string> all_kind_names();
DistortionKind kind_from_name(std::string_view name);

struct DistortionSpec {
    DistortionKind kind = DistortionKind::GaussianBlur;
    int severity = 1;
    // always carries "magnitude": the severity-monotone strength scalar
    std::map<std::string, double> params;
};

// Default parameter table; magnitude strictly increases with severity.
DistortionSpec make_spec(DistortionKind kind, int severity);

struct ManifestRecord {
    std::string id;
    std::string path;  // relative to the manifest's directory
    double mos = 0.0;
    std::string kind;
    int severity = 0;
    int quality_level = 0;
};

struct CorpusManifest {
    std::vector<ManifestRecord> records;
    std::uint64_t split_seed = 0;
    std::string source_fingerprint;
};

struct ImageSample {
    Image pixels;
    double mos = 0.0;
    DistortionSpec distortion;
    int quality_level = 0;
    std::string id;
};

// Procedural photographic stand-in: gradients, gratings, soft shapes and
// value-noise texture, with intensity headroom so exposure shifts stay
// informative. Deterministic in (index, seed).
Image synthesize_source(int index, std::uint64_t seed, int size);

// Pure in (pixels, spec, seed); output clipped to [0,1]. magnitude 0 is the
// identity for every kind.
Image apply_distortion(const Image& pixels, const DistortionSpec& spec, std::uint64_t seed);

int quality_bucket(double mos);
std::string source_of(const std::string& id);

// Stable integer for a source tag: the numeric part of "s<digits>" tags,
// otherwise a hash folded to a non-negative int.
int source_index(const std::string& source_tag);

// Writes images/<id>.png, manifest.csv and manifest.json under out_dir.
CorpusManifest generate_corpus(int n_sources, const std::vector<DistortionKind>& kinds,
                               std::uint64_t seed, const std::string& out_dir,
                               int image_size = 64);

std::string serialize_manifest(const CorpusManifest& manifest);
void save_manifest(const CorpusManifest& manifest, const std::string& csv_path);
CorpusManifest load_manifest(const std::string& csv_path);

// Splits by source id so no source leaks across the boundary.
std::pair<CorpusManifest, CorpusManifest> split_dataset(const CorpusManifest& manifest,
                                                        double train_frac, std::uint64_t seed);

std::vector<ImageSample> load_samples(const CorpusManifest& manifest,
                                      const std::string& root_dir);

// shortest round-trip decimal rendering, stable across runs
std::string format_double(double v);

}  // namespace pfd
