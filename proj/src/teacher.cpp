#include "pfdiqa/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

#include "pfdiqa/checkpoint.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"

namespace pfd {
namespace {

namespace fs = std::filesystem;

int name_index(const std::vector<std::string>& names, const std::string& name,
               const std::string& what) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
        throw ArgumentError("unknown " + what + " label: \"" + name + "\"");
    return static_cast<int>(it - names.begin());
}

Eigen::VectorXd one_hot(int k, int idx) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
    v(idx) = 1.0;
    return v;
}

struct LabelIndices {
    int kind = 0;
    int quality = 0;
};

LabelIndices label_indices(const ImageSample& s, const PromptBank& bank) {
    LabelIndices li;
    li.kind = name_index(bank.distortion_names, std::string(kind_name(s.distortion.kind)),
                         "distortion");
    if (s.quality_level < 0 ||
        s.quality_level >= static_cast<int>(bank.quality_names.size())) {
        throw ArgumentError("quality level out of range for sample " + s.id);
    }
    li.quality = s.quality_level;
    if (!std::isfinite(s.mos)) throw ArgumentError("non-finite mos for sample " + s.id);
    return li;
}

struct Forward {
    FeatureMap feat;
    PdaOutputs pda;
};

Forward teacher_forward(nn::Tape& tape, const ParamStore& store,
                        const ModelConfig& model_cfg, const PromptBank& bank,
                        const Image& img, double tau,
                        const MaskConfig& mask = MaskConfig{0.0, false},
                        std::uint64_t mask_seed = 0) {
    Forward f;
    f.feat = encode(tape, store, model_cfg, img);
    f.pda = run_pda(tape, store, bank, f.feat.tokens, mask, tau, mask_seed);
    return f;
}

constexpr char kCacheMagic[8] = {'P', 'F', 'D', 'I', 'Q', 'A', 'P', 'L'};
constexpr std::uint32_t kCacheVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in) {
    char b[4];
    in.read(b, 4);
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

Eigen::MatrixXd aggregate_rows(const PromptBank& bank, const Eigen::VectorXd& p_d,
                               const Eigen::VectorXd& p_q) {
    Eigen::MatrixXd ctx(2, bank.g_d.cols());
    ctx.row(0) = p_d.transpose() * bank.g_d;
    ctx.row(1) = p_q.transpose() * bank.g_q;
    return ctx;
}

}  // namespace

PromptBank bank_from(const RunConfig& cfg) {
    const std::vector<std::string> kinds =
        cfg.corpus.kinds.empty() ? all_kind_names() : cfg.corpus.kinds;
    return build_prompt_bank(kinds, cfg.pda.quality_names, cfg.backbone.embed_dim,
                             derive_seed(0, "text-encoder"), cfg.pda.template_d,
                             cfg.pda.template_q);
}

Teacher train_teacher(const CorpusManifest& train, const std::string& root_dir,
                      const RunConfig& cfg, std::uint64_t seed,
                      TeacherTrainStats* stats) {
    if (train.records.empty()) throw ArgumentError("teacher train manifest is empty");

    Teacher teacher;
    teacher.run_cfg = cfg;
    teacher.run_cfg.seed = seed;
    teacher.run_cfg.validate();
    teacher.model_cfg = model_config_from(teacher.run_cfg);
    teacher.bank = bank_from(teacher.run_cfg);

    Rng init_rng(derive_seed(seed, "teacher-init"));
    add_encoder_params(teacher.store, teacher.model_cfg, init_rng);
    add_pda_params(teacher.store, teacher.model_cfg.embed_dim, init_rng);
    add_decoder_params(teacher.store, teacher.model_cfg, init_rng);

    const auto samples = load_samples(train, root_dir);
    std::vector<LabelIndices> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(label_indices(s, teacher.bank));

    std::vector<int> sources;
    for (const auto& s : samples) sources.push_back(source_index(source_of(s.id)));
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
    teacher.train_source_ids = std::move(sources);

    const auto& tc = teacher.run_cfg.teacher;
    const int kd = static_cast<int>(teacher.bank.g_d.rows());
    const int kq = static_cast<int>(teacher.bank.g_q.rows());
    const int n = static_cast<int>(samples.size());
    const std::uint64_t order_root = derive_seed(seed, "teacher-order");
    const std::uint64_t mask_root = derive_seed(seed, "teacher-mask");
    const MaskConfig mask{teacher.run_cfg.pda.beta_mask, tc.mask_augment};

    AdamW opt(teacher.store.size());
    std::vector<double> grad(teacher.store.size(), 0.0);
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> ema;
    if (tc.ema_decay > 0.0)
        ema.assign(teacher.store.flat().begin(), teacher.store.flat().end());

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng order_rng(derive_seed(order_root, static_cast<std::uint64_t>(epoch)));
        order_rng.shuffle(order);
        double epoch_sum = 0.0;
        for (int start = 0; start < n; start += tc.batch_size) {
            const int bn = std::min(tc.batch_size, n - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_sum = 0.0;
            for (int b = 0; b < bn; ++b) {
                const int si = order[start + b];
                const auto& s = samples[si];
                const auto& li = labels[si];
                nn::Tape tape;
                const std::uint64_t draw_seed = derive_seed(
                    derive_seed(mask_root, static_cast<std::uint64_t>(epoch)),
                    static_cast<std::uint64_t>(si));
                Image view = s.pixels;
                if (tc.dihedral_augment) {
                    Rng view_rng(derive_seed(draw_seed, "view"));
                    view = dihedral(s.pixels,
                                    static_cast<int>(view_rng.uniform_index(8)));
                }
                auto fwd = teacher_forward(tape, teacher.store, teacher.model_cfg,
                                           teacher.bank, view, tc.ce_temperature,
                                           mask, draw_seed);
                nn::Var ce_d = tape.kl_div(one_hot(kd, li.kind), fwd.pda.probs_d);
                nn::Var ce_q = tape.kl_div(one_hot(kq, li.quality), fwd.pda.probs_q);
                nn::Var score = decode_score(tape, teacher.store, teacher.model_cfg,
                                             fwd.feat);
                nn::Var loss =
                    tape.add(tape.add(ce_d, tape.scale(ce_q, tc.quality_weight)),
                             tape.l1_loss(score, s.mos));
                tape.backward(loss);
                tape.collect_param_grads(grad);
                batch_sum += tape.value(loss)(0, 0);
            }
            if (!std::isfinite(batch_sum)) {
                throw TrainingDivergenceError(
                    "teacher loss non-finite at epoch " + std::to_string(epoch) +
                    ", batch starting " + std::to_string(start));
            }
            for (double& g : grad) g /= bn;
            opt.step(teacher.store.flat(), grad, tc.lr, tc.weight_decay);
            if (tc.ema_decay > 0.0) {
                const auto w = teacher.store.flat();
                for (std::size_t i = 0; i < ema.size(); ++i)
                    ema[i] = tc.ema_decay * ema[i] + (1.0 - tc.ema_decay) * w[i];
            }
            epoch_sum += batch_sum;
        }
        if (stats) stats->epoch_loss.push_back(epoch_sum / n);
    }
    if (tc.ema_decay > 0.0)
        std::copy(ema.begin(), ema.end(), teacher.store.flat().begin());
    return teacher;
}

TeacherOutputs teacher_pseudo_labels(const Teacher& teacher, const Image& img) {
    nn::Tape tape;
    auto fwd = teacher_forward(tape, teacher.store, teacher.model_cfg, teacher.bank,
                               img, teacher.run_cfg.pda.tau);
    TeacherOutputs out;
    out.p_d.probs = tape.value(fwd.pda.probs_d).row(0).transpose();
    out.p_d.branch = PriorBranch::distortion;
    out.p_q.probs = tape.value(fwd.pda.probs_q).row(0).transpose();
    out.p_q.branch = PriorBranch::quality;
    out.p_d.validate();
    out.p_q.validate();
    out.f_tea = tape.value(fwd.feat.tokens);
    out.e_ada_tea = tape.value(fwd.pda.ctx);
    return out;
}

TeacherAccuracy teacher_accuracy(const Teacher& teacher,
                                 const std::vector<ImageSample>& samples) {
    if (samples.empty()) throw ArgumentError("no samples to score");
    int hit_d = 0;
    int hit_q = 0;
    for (const auto& s : samples) {
        const auto li = label_indices(s, teacher.bank);
        const auto out = teacher_pseudo_labels(teacher, s.pixels);
        Eigen::Index am_d = 0, am_q = 0;
        out.p_d.probs.maxCoeff(&am_d);
        out.p_q.probs.maxCoeff(&am_q);
        hit_d += (static_cast<int>(am_d) == li.kind);
        hit_q += (static_cast<int>(am_q) == li.quality);
    }
    TeacherAccuracy acc;
    acc.distortion = static_cast<double>(hit_d) / samples.size();
    acc.quality = static_cast<double>(hit_q) / samples.size();
    return acc;
}

std::string teacher_identity(const Teacher& teacher) {
    Hasher h;
    h.update_u64(teacher.store.content_hash());
    h.update_u64(teacher.bank.content_hash());
    h.update(teacher.run_cfg.fingerprint());
    return h.hex();
}

void save_teacher(Teacher& teacher, const std::string& path) {
    CheckpointMeta meta;
    meta.kind = "teacher";
    meta.config_canonical = teacher.run_cfg.canonical();
    meta.prompt_bank_hash = hash_hex(teacher.bank.content_hash());
    meta.train_source_ids = teacher.train_source_ids;
    save_checkpoint(path, meta, teacher.store);
    teacher.archive_hash = file_hash_hex(path);
}

Teacher load_teacher(const std::string& path) {
    auto loaded = load_checkpoint(path);
    if (loaded.meta.kind != "teacher")
        throw ArgumentError("archive is not a teacher checkpoint: " + path);

    Teacher teacher;
    teacher.run_cfg = parse_config(loaded.meta.config_canonical);
    teacher.run_cfg.validate();
    teacher.model_cfg = model_config_from(teacher.run_cfg);
    teacher.bank = bank_from(teacher.run_cfg);
    if (hash_hex(teacher.bank.content_hash()) != loaded.meta.prompt_bank_hash)
        throw IoError("teacher archive prompt bank does not match its config: " + path);

    ParamStore expected;
    Rng throwaway(0);
    add_encoder_params(expected, teacher.model_cfg, throwaway);
    add_pda_params(expected, teacher.model_cfg.embed_dim, throwaway);
    add_decoder_params(expected, teacher.model_cfg, throwaway);
    if (expected.num_tensors() != loaded.store.num_tensors())
        throw IoError("teacher archive has unexpected tensor set: " + path);
    for (std::size_t i = 0; i < expected.num_tensors(); ++i) {
        const auto& a = expected.entries()[i];
        const auto& b = loaded.store.entries()[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
            throw IoError("teacher archive tensor mismatch at " + a.name + ": " + path);
    }

    teacher.store = std::move(loaded.store);
    teacher.train_source_ids = loaded.meta.train_source_ids;
    teacher.archive_hash = file_hash_hex(path);
    return teacher;
}

PseudoLabelCache::PseudoLabelCache(std::string cache_root, const Teacher& teacher)
    : root(std::move(cache_root)), teacher_key(teacher_identity(teacher)) {}

std::string PseudoLabelCache::record_path(const std::string& image_id) const {
    return (fs::path(root) / teacher_key / (image_id + ".plc")).string();
}

void PseudoLabelCache::store(const std::string& image_id,
                             const TeacherOutputs& out) const {
    const fs::path path = record_path(image_id);
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write pseudo-label record: " + path.string());
    f.write(kCacheMagic, sizeof(kCacheMagic));
    write_u32(f, kCacheVersion);
    write_u32(f, static_cast<std::uint32_t>(out.p_d.probs.size()));
    write_u32(f, static_cast<std::uint32_t>(out.p_q.probs.size()));
    write_u32(f, static_cast<std::uint32_t>(out.f_tea.rows()));
    write_u32(f, static_cast<std::uint32_t>(out.f_tea.cols()));
    f.write(reinterpret_cast<const char*>(out.p_d.probs.data()),
            static_cast<std::streamsize>(out.p_d.probs.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(out.p_q.probs.data()),
            static_cast<std::streamsize>(out.p_q.probs.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(out.f_tea.data()),
            static_cast<std::streamsize>(out.f_tea.size() * sizeof(double)));
    if (!f) throw IoError("failed writing pseudo-label record: " + path.string());
}

bool PseudoLabelCache::load(const std::string& image_id, const Teacher& teacher,
                            TeacherOutputs& out) const {
    const fs::path path = record_path(image_id);
    std::ifstream f(path, std::ios::binary);
    if (!f) return false;

    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCacheMagic, sizeof(kCacheMagic)) != 0)
        throw IoError("corrupt pseudo-label record: " + path.string());
    if (read_u32(f) != kCacheVersion)
        throw IoError("unsupported pseudo-label record version: " + path.string());
    const auto kd = read_u32(f);
    const auto kq = read_u32(f);
    const auto rows = read_u32(f);
    const auto cols = read_u32(f);
    if (!f) throw IoError("corrupt pseudo-label record: " + path.string());
    if (kd != static_cast<std::uint32_t>(teacher.bank.g_d.rows()) ||
        kq != static_cast<std::uint32_t>(teacher.bank.g_q.rows()) ||
        rows != static_cast<std::uint32_t>(teacher.model_cfg.n_tokens()) ||
        cols != static_cast<std::uint32_t>(teacher.model_cfg.embed_dim)) {
        throw IoError("pseudo-label record shape mismatch: " + path.string());
    }

    out.p_d.probs.resize(kd);
    out.p_q.probs.resize(kq);
    out.f_tea.resize(rows, cols);
    f.read(reinterpret_cast<char*>(out.p_d.probs.data()),
           static_cast<std::streamsize>(kd * sizeof(double)));
    f.read(reinterpret_cast<char*>(out.p_q.probs.data()),
           static_cast<std::streamsize>(kq * sizeof(double)));
    f.read(reinterpret_cast<char*>(out.f_tea.data()),
           static_cast<std::streamsize>(out.f_tea.size() * sizeof(double)));
    if (!f) throw IoError("truncated pseudo-label record: " + path.string());
    f.peek();
    if (!f.eof()) throw IoError("trailing bytes in pseudo-label record: " + path.string());

    out.p_d.branch = PriorBranch::distortion;
    out.p_q.branch = PriorBranch::quality;
    out.p_d.validate();
    out.p_q.validate();
    out.e_ada_tea = aggregate_rows(teacher.bank, out.p_d.probs, out.p_q.probs);
    return true;
}

TeacherOutputs cached_pseudo_labels(const Teacher& teacher, const Image& img,
                                    const std::string& image_id,
                                    const PseudoLabelCache* cache) {
    TeacherOutputs out;
    if (cache && cache->load(image_id, teacher, out)) return out;
    out = teacher_pseudo_labels(teacher, img);
    if (cache) cache->store(image_id, out);
    return out;
}

}  // namespace pfd
