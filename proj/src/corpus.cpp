#include "pfdiqa/corpus.hpp"

#include <json.hpp>

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/rng.hpp"

namespace pfd {

namespace {

constexpr double kMosBase = 1.0;
constexpr double kMosStep = 0.18;
constexpr double kMosJitter = 0.03;

struct KindInfo {
    DistortionKind kind;
    const char* name;
    double magnitude[kNumSeverities];
};

const KindInfo kKinds[kNumDistortionKinds] = {
    {DistortionKind::JpegBlocking, "jpeg-blocking", {0.5, 1.0, 2.0, 4.0, 8.0}},
    {DistortionKind::Quantization, "quantization",
     {1.0 / 31.0, 1.0 / 15.0, 1.0 / 7.0, 0.25, 0.5}},
    {DistortionKind::GaussianBlur, "gaussian-blur", {0.6, 1.2, 2.0, 3.2, 5.0}},
    {DistortionKind::MotionBlur, "motion-blur", {1.0, 2.0, 4.0, 6.0, 9.0}},
    {DistortionKind::WhiteNoise, "white-noise", {0.02, 0.05, 0.10, 0.18, 0.30}},
    {DistortionKind::ImpulseNoise, "impulse-noise", {0.01, 0.04, 0.08, 0.13, 0.20}},
    {DistortionKind::ContrastDecrease, "contrast-decrease", {0.2, 0.35, 0.5, 0.65, 0.8}},
    {DistortionKind::ColorDesaturation, "color-desaturation", {0.3, 0.5, 0.7, 0.85, 1.0}},
    {DistortionKind::Overexposure, "overexposure", {0.12, 0.20, 0.30, 0.42, 0.55}},
    {DistortionKind::Underexposure, "underexposure", {0.12, 0.20, 0.30, 0.42, 0.55}},
    {DistortionKind::Pixelation, "pixelation", {2.0, 3.0, 4.0, 6.0, 8.0}},
};

const KindInfo& info_of(DistortionKind kind) {
    for (const KindInfo& k : kKinds)
        if (k.kind == kind) return k;
    throw ArgumentError("unknown distortion kind");
}

double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void clip_image(Image& img) {
    for (double& v : img.data) v = clip01(v);
}

Image blur_separable(const Image& in, const std::vector<double>& kernel, int radius,
                     bool horizontal) {
    Image out = Image::zero(in.h, in.w);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int k = -radius; k <= radius; ++k) {
                int sy = y, sx = x;
                if (horizontal)
                    sx = std::clamp(x + k, 0, in.w - 1);
                else
                    sy = std::clamp(y + k, 0, in.h - 1);
                const double wgt = kernel[k + radius];
                for (int c = 0; c < 3; ++c) acc[c] += wgt * in.at(sy, sx, c);
            }
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = acc[c];
        }
    }
    return out;
}

Image gaussian_blur(const Image& in, double sigma) {
    const int radius = std::min(static_cast<int>(std::ceil(3.0 * sigma)), 31);
    if (radius < 1) return in;
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;
    return blur_separable(blur_separable(in, kernel, radius, true), kernel, radius, false);
}

Image motion_blur(const Image& in, double half_len) {
    const int h = static_cast<int>(std::lround(half_len));
    if (h < 1) return in;
    std::vector<double> kernel(2 * h + 1, 1.0 / (2 * h + 1));
    return blur_separable(in, kernel, h, true);
}

Image white_noise(const Image& in, double stddev, std::uint64_t seed) {
    Image out = in;
    Rng rng(derive_seed(seed, "white-noise"));
    for (double& v : out.data) v += stddev * rng.normal();
    return out;
}

Image impulse_noise(const Image& in, double prob, std::uint64_t seed) {
    Image out = in;
    Rng rng(derive_seed(seed, "impulse-noise"));
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            if (rng.uniform01() >= prob) continue;
            const double v = rng.uniform01() < 0.5 ? 0.0 : 1.0;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
        }
    }
    return out;
}

Image quantize_levels(const Image& in, double step) {
    Image out = in;
    for (double& v : out.data) v = clip01(std::round(v / step) * step);
    return out;
}

// standard luminance quantization table, applied per channel at desk scale
const double kJpegQ[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

Image jpeg_blocking(const Image& in, double qscale) {
    using Mat8 = Eigen::Matrix<double, 8, 8>;
    Mat8 dct;
    for (int k = 0; k < 8; ++k) {
        const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        for (int n = 0; n < 8; ++n)
            dct(k, n) = a * std::cos(M_PI * (2 * n + 1) * k / 16.0);
    }
    Image out = in;
    for (int c = 0; c < 3; ++c) {
        for (int by = 0; by < in.h; by += 8) {
            for (int bx = 0; bx < in.w; bx += 8) {
                Mat8 block;
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x)
                        block(y, x) =
                            in.at(std::min(by + y, in.h - 1), std::min(bx + x, in.w - 1), c) *
                                255.0 -
                            128.0;
                Mat8 coef = dct * block * dct.transpose();
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const double q = kJpegQ[y * 8 + x] * qscale;
                        coef(y, x) = std::round(coef(y, x) / q) * q;
                    }
                Mat8 rec = dct.transpose() * coef * dct;
                for (int y = 0; y < 8 && by + y < in.h; ++y)
                    for (int x = 0; x < 8 && bx + x < in.w; ++x)
                        out.at(by + y, bx + x, c) = clip01((rec(y, x) + 128.0) / 255.0);
            }
        }
    }
    return out;
}

Image pixelate(const Image& in, double block) {
    const int f = static_cast<int>(std::lround(block));
    if (f <= 1) return in;
    Image out = in;
    for (int by = 0; by < in.h; by += f) {
        for (int bx = 0; bx < in.w; bx += f) {
            const int ey = std::min(by + f, in.h), ex = std::min(bx + f, in.w);
            double acc[3] = {0, 0, 0};
            const double inv = 1.0 / ((ey - by) * (ex - bx));
            for (int y = by; y < ey; ++y)
                for (int x = bx; x < ex; ++x)
                    for (int c = 0; c < 3; ++c) acc[c] += in.at(y, x, c);
            for (int y = by; y < ey; ++y)
                for (int x = bx; x < ex; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = acc[c] * inv;
        }
    }
    return out;
}

}  // namespace

const std::vector<DistortionKind>& all_distortion_kinds() {
    static const std::vector<DistortionKind> kinds = [] {
        std::vector<DistortionKind> v;
        for (const KindInfo& k : kKinds) v.push_back(k.kind);
        return v;
    }();
    return kinds;
}

std::string_view kind_name(DistortionKind kind) { return info_of(kind).name; }

std::vector<std::string> all_kind_names() {
    std::vector<std::string> names;
    names.reserve(kNumDistortionKinds);
    for (int k = 0; k < kNumDistortionKinds; ++k)
        names.emplace_back(kind_name(static_cast<DistortionKind>(k)));
    return names;
}

DistortionKind kind_from_name(std::string_view name) {
    for (const KindInfo& k : kKinds)
        if (name == k.name) return k.kind;
    throw ArgumentError("unknown distortion kind name: " + std::string(name));
}

DistortionSpec make_spec(DistortionKind kind, int severity) {
    if (severity < 1 || severity > kNumSeverities)
        throw ArgumentError("severity must be in [1,5]");
    const KindInfo& k = info_of(kind);
    DistortionSpec spec;
    spec.kind = kind;
    spec.severity = severity;
    const double m = k.magnitude[severity - 1];
    spec.params["magnitude"] = m;
    if (kind == DistortionKind::GaussianBlur) spec.params["sigma"] = m;
    if (kind == DistortionKind::WhiteNoise) spec.params["stddev"] = m;
    if (kind == DistortionKind::MotionBlur) spec.params["length"] = 2 * m + 1;
    return spec;
}

Image apply_distortion(const Image& pixels, const DistortionSpec& spec, std::uint64_t seed) {
    auto it = spec.params.find("magnitude");
    if (it == spec.params.end())
        throw ArgumentError("distortion spec lacks a magnitude parameter");
    const double m = it->second;
    if (m < 0.0) throw ArgumentError("distortion magnitude must be nonnegative");
    if (m == 0.0) return pixels;
    Image out;
    switch (spec.kind) {
        case DistortionKind::JpegBlocking: out = jpeg_blocking(pixels, m); break;
        case DistortionKind::Quantization: out = quantize_levels(pixels, m); break;
        case DistortionKind::GaussianBlur: out = gaussian_blur(pixels, m); break;
        case DistortionKind::MotionBlur: out = motion_blur(pixels, m); break;
        case DistortionKind::WhiteNoise: out = white_noise(pixels, m, seed); break;
        case DistortionKind::ImpulseNoise: out = impulse_noise(pixels, m, seed); break;
        case DistortionKind::ContrastDecrease: {
            out = pixels;
            for (double& v : out.data) v = 0.5 + (v - 0.5) * (1.0 - m);
            break;
        }
        case DistortionKind::ColorDesaturation: {
            out = pixels;
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    const double l = pixels.luma(y, x);
                    for (int c = 0; c < 3; ++c)
                        out.at(y, x, c) += m * (l - pixels.at(y, x, c));
                }
            break;
        }
        case DistortionKind::Overexposure: {
            out = pixels;
            for (double& v : out.data) v += m;
            break;
        }
        case DistortionKind::Underexposure: {
            out = pixels;
            for (double& v : out.data) v -= m;
            break;
        }
        case DistortionKind::Pixelation: out = pixelate(pixels, m); break;
        default: throw ArgumentError("unknown distortion kind");
    }
    clip_image(out);
    return out;
}

Image synthesize_source(int index, std::uint64_t seed, int size) {
    if (size < 16) throw ArgumentError("source image size must be at least 16");
    Rng rng(derive_seed(seed, "source/" + std::to_string(index)));
    Image img = Image::zero(size, size);

    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.15, 0.85);
        c1[c] = rng.uniform(0.15, 0.85);
    }
    const double gtheta = rng.uniform(0.0, 2.0 * M_PI);
    const double gx = std::cos(gtheta), gy = std::sin(gtheta);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double t = 0.5 + 0.5 * (gx * (2.0 * x / size - 1.0) + gy * (2.0 * y / size - 1.0));
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] + (c1[c] - c0[c]) * t;
        }

    const int n_gratings = 2 + static_cast<int>(rng.uniform_index(3));
    for (int g = 0; g < n_gratings; ++g) {
        const double freq = rng.uniform(2.0, 14.0);
        const double theta = rng.uniform(0.0, M_PI);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        double amp[3];
        for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(0.03, 0.12);
        const double fx = std::cos(theta), fy = std::sin(theta);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double s =
                    std::sin(2.0 * M_PI * freq * (fx * x + fy * y) / size + phase);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += amp[c] * s;
            }
    }

    const int n_blobs = 3 + static_cast<int>(rng.uniform_index(4));
    for (int b = 0; b < n_blobs; ++b) {
        const double cx = rng.uniform(0.0, size);
        const double cy = rng.uniform(0.0, size);
        const double r = rng.uniform(size / 16.0, size / 4.0);
        double amp[3];
        for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(-0.25, 0.25);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double w = std::exp(-d2 / (2.0 * r * r));
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += amp[c] * w;
            }
    }

    // one octave of bilinear value noise for fine texture
    const int grid = 9;
    std::vector<double> noise(static_cast<std::size_t>(grid) * grid * 3);
    for (double& v : noise) v = rng.uniform(-0.12, 0.12);
    const double cell = static_cast<double>(size) / (grid - 1);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double fy = y / cell, fx = x / cell;
            const int iy = std::min(static_cast<int>(fy), grid - 2);
            const int ix = std::min(static_cast<int>(fx), grid - 2);
            const double ty = fy - iy, tx = fx - ix;
            for (int c = 0; c < 3; ++c) {
                auto n = [&](int yy, int xx) {
                    return noise[(static_cast<std::size_t>(yy) * grid + xx) * 3 + c];
                };
                const double v = (1 - ty) * ((1 - tx) * n(iy, ix) + tx * n(iy, ix + 1)) +
                                 ty * ((1 - tx) * n(iy + 1, ix) + tx * n(iy + 1, ix + 1));
                img.at(y, x, c) += v;
            }
        }

    // squash into [0.06, 0.94] so exposure shifts keep signal
    for (double& v : img.data) v = 0.06 + 0.88 * clip01(v);
    return img;
}

int quality_bucket(double mos) {
    if (mos < 0.0 || mos > 1.0) throw ArgumentError("mos must lie in [0,1]");
    return std::min(kNumQualityLevels - 1, static_cast<int>(mos * kNumQualityLevels));
}

std::string source_of(const std::string& id) {
    const auto pos = id.find('-');
    if (pos == std::string::npos || pos == 0)
        throw ArgumentError("sample id has no source prefix: " + id);
    return id.substr(0, pos);
}

int source_index(const std::string& source_tag) {
    if (source_tag.size() > 1 && source_tag[0] == 's') {
        int v = 0;
        const char* first = source_tag.data() + 1;
        const char* last = source_tag.data() + source_tag.size();
        if (std::from_chars(first, last, v).ptr == last && v >= 0) return v;
    }
    const std::uint64_t h = hash_bytes(source_tag.data(), source_tag.size());
    return static_cast<int>(h & 0x7fffffffu);
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw ArgumentError("cannot format double");
    return std::string(buf, ptr);
}

namespace {

double parse_double(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw IoError("malformed number in manifest: " + std::string(s));
    return v;
}

int parse_int(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw IoError("malformed integer in manifest: " + std::string(s));
    return v;
}

}  // namespace

std::string serialize_manifest(const CorpusManifest& manifest) {
    std::string out = "id,path,mos,kind,severity,quality_level\n";
    for (const ManifestRecord& r : manifest.records) {
        out += r.id;
        out += ',';
        out += r.path;
        out += ',';
        out += format_double(r.mos);
        out += ',';
        out += r.kind;
        out += ',';
        out += std::to_string(r.severity);
        out += ',';
        out += std::to_string(r.quality_level);
        out += '\n';
    }
    return out;
}

void save_manifest(const CorpusManifest& manifest, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + csv_path);
    const std::string body = serialize_manifest(manifest);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("manifest write failed: " + csv_path);
}

CorpusManifest load_manifest(const std::string& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest: " + csv_path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string body = ss.str();

    CorpusManifest m;
    m.source_fingerprint = hash_hex(hash_bytes(body.data(), body.size()));
    std::istringstream lines(body);
    std::string line;
    if (!std::getline(lines, line) || line != "id,path,mos,kind,severity,quality_level")
        throw IoError("manifest header mismatch in " + csv_path);
    std::set<std::string> seen;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                cols.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (cols.size() != 6) throw IoError("manifest row has wrong arity: " + line);
        ManifestRecord r;
        r.id = cols[0];
        r.path = cols[1];
        r.mos = parse_double(cols[2]);
        r.kind = cols[3];
        r.severity = parse_int(cols[4]);
        r.quality_level = parse_int(cols[5]);
        kind_from_name(r.kind);
        if (!seen.insert(r.id).second) throw IoError("duplicate sample id: " + r.id);
        m.records.push_back(std::move(r));
    }
    return m;
}

CorpusManifest generate_corpus(int n_sources, const std::vector<DistortionKind>& kinds,
                               std::uint64_t seed, const std::string& out_dir,
                               int image_size) {
    if (n_sources < 1) throw ArgumentError("n_sources must be at least 1");
    if (kinds.empty()) throw ArgumentError("kind set must be non-empty");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw IoError("cannot create corpus directory: " + out_dir);

    CorpusManifest manifest;
    for (int s = 0; s < n_sources; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof(sid), "s%03d", s);
        const Image source = synthesize_source(s, seed, image_size);
        for (DistortionKind kind : kinds) {
            for (int sev = 1; sev <= kNumSeverities; ++sev) {
                const DistortionSpec spec = make_spec(kind, sev);
                const std::string id =
                    std::string(sid) + "-" + std::string(kind_name(kind)) + "-" +
                    std::to_string(sev);
                const Image distorted =
                    apply_distortion(source, spec, derive_seed(seed, "noise/" + id));
                Rng mos_rng(derive_seed(seed, "mos/" + id));
                const double mos = clip01(kMosBase - kMosStep * sev +
                                          mos_rng.uniform(-kMosJitter, kMosJitter));
                ManifestRecord r;
                r.id = id;
                r.path = "images/" + id + ".png";
                r.mos = mos;
                r.kind = std::string(kind_name(kind));
                r.severity = sev;
                r.quality_level = quality_bucket(mos);
                write_png((fs::path(out_dir) / r.path).string(), distorted);
                manifest.records.push_back(std::move(r));
            }
        }
    }

    const std::string body = serialize_manifest(manifest);
    manifest.source_fingerprint = hash_hex(hash_bytes(body.data(), body.size()));
    save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());

    nlohmann::json meta;
    meta["seed"] = seed;
    meta["n_sources"] = n_sources;
    meta["image_size"] = image_size;
    std::vector<std::string> names;
    for (DistortionKind k : kinds) names.emplace_back(kind_name(k));
    meta["kinds"] = names;
    meta["oracle"] = {{"base", kMosBase},
                      {"step", kMosStep},
                      {"jitter", kMosJitter},
                      {"levels", kNumQualityLevels}};
    meta["source_fingerprint"] = manifest.source_fingerprint;
    std::ofstream mj((fs::path(out_dir) / "manifest.json").string());
    if (!mj) throw IoError("cannot write manifest sidecar");
    mj << meta.dump(2) << "\n";
    return manifest;
}

std::pair<CorpusManifest, CorpusManifest> split_dataset(const CorpusManifest& manifest,
                                                        double train_frac,
                                                        std::uint64_t seed) {
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw ArgumentError("train_frac must lie strictly between 0 and 1");
    std::vector<std::string> sources;
    std::set<std::string> seen;
    for (const ManifestRecord& r : manifest.records) {
        const std::string s = source_of(r.id);
        if (seen.insert(s).second) sources.push_back(s);
    }
    if (sources.size() < 2)
        throw ArgumentError("cannot split a corpus with fewer than two sources");

    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(sources);
    auto n_train = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(sources.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, sources.size() - 1);
    std::set<std::string> train_sources(sources.begin(),
                                        sources.begin() + static_cast<long>(n_train));

    CorpusManifest train, test;
    train.split_seed = seed;
    test.split_seed = seed;
    for (const ManifestRecord& r : manifest.records) {
        (train_sources.count(source_of(r.id)) ? train : test).records.push_back(r);
    }
    const std::string tb = serialize_manifest(train);
    const std::string eb = serialize_manifest(test);
    train.source_fingerprint = hash_hex(hash_bytes(tb.data(), tb.size()));
    test.source_fingerprint = hash_hex(hash_bytes(eb.data(), eb.size()));
    return {std::move(train), std::move(test)};
}

std::vector<ImageSample> load_samples(const CorpusManifest& manifest,
                                      const std::string& root_dir) {
    namespace fs = std::filesystem;
    std::vector<ImageSample> samples;
    samples.reserve(manifest.records.size());
    for (const ManifestRecord& r : manifest.records) {
        ImageSample s;
        s.pixels = read_png((fs::path(root_dir) / r.path).string());
        s.mos = r.mos;
        s.distortion = make_spec(kind_from_name(r.kind), r.severity);
        s.quality_level = r.quality_level;
        s.id = r.id;
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace pfd
