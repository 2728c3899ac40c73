#include "pfdiqa/backbone.hpp"

#include <cmath>
#include <set>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/rng.hpp"

namespace pfd {

namespace {

constexpr double kInitStd = 0.02;

using nn::Tape;
using nn::Var;
using Eigen::MatrixXd;

struct LinearSlots {
    Slot w, b;
};

LinearSlots add_linear(ParamStore& store, const std::string& prefix, int out_dim,
                       int in_dim, Rng& rng, bool zero_init = false) {
    LinearSlots s;
    s.w = store.add(prefix + ".w", out_dim, in_dim);
    s.b = store.add(prefix + ".b", 1, out_dim);
    if (!zero_init) store.init_gaussian(s.w, rng, kInitStd);
    return s;
}

void add_layer_norm(ParamStore& store, const std::string& prefix, int dim) {
    Slot g = store.add(prefix + ".g", 1, dim);
    store.add(prefix + ".b", 1, dim);
    store.mat(g).setOnes();
}

void add_attention(ParamStore& store, const std::string& prefix, int dim, Rng& rng) {
    add_linear(store, prefix + ".q", dim, dim, rng);
    add_linear(store, prefix + ".k", dim, dim, rng);
    add_linear(store, prefix + ".v", dim, dim, rng);
    add_linear(store, prefix + ".o", dim, dim, rng);
}

void add_mlp(ParamStore& store, const std::string& prefix, int dim, int hidden,
             Rng& rng) {
    add_linear(store, prefix + ".l1", hidden, dim, rng);
    add_linear(store, prefix + ".l2", dim, hidden, rng);
}

Var linear(Tape& t, const ParamStore& store, const std::string& prefix, Var x) {
    Var w = t.param(store, store.slot(prefix + ".w"));
    Var b = t.param(store, store.slot(prefix + ".b"));
    return t.add_rowvec(t.matmul_nt(x, w), b);
}

Var layer_norm(Tape& t, const ParamStore& store, const std::string& prefix, Var x) {
    Var g = t.param(store, store.slot(prefix + ".g"));
    Var b = t.param(store, store.slot(prefix + ".b"));
    return t.layer_norm_rows(x, g, b);
}

// q_in: M x C queries, kv_in: N x C keys/values; returns M x C.
Var multi_head_attention(Tape& t, const ParamStore& store, const std::string& prefix,
                         Var q_in, Var kv_in, int heads, MatrixXd* probe) {
    const int dim = q_in.cols();
    const int head_dim = dim / heads;
    Var q = linear(t, store, prefix + ".q", q_in);
    Var k = linear(t, store, prefix + ".k", kv_in);
    Var v = linear(t, store, prefix + ".v", kv_in);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> outs;
    outs.reserve(heads);
    if (probe) probe->setZero(q_in.rows(), kv_in.rows());
    for (int h = 0; h < heads; ++h) {
        Var qh = t.slice_cols(q, h * head_dim, head_dim);
        Var kh = t.slice_cols(k, h * head_dim, head_dim);
        Var vh = t.slice_cols(v, h * head_dim, head_dim);
        Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_d);
        Var attn = t.softmax_rows(scores);
        if (probe) *probe += t.value(attn) / static_cast<double>(heads);
        outs.push_back(t.matmul(attn, vh));
    }
    Var merged = heads == 1 ? outs[0] : t.concat_cols(outs);
    return linear(t, store, prefix + ".o", merged);
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ArgumentError("model config: " + msg); };
    if (image_size < 2 || patch_size < 1) fail("sizes must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (grid() < 2) fail("token grid must be at least 2x2");
    if (embed_dim < 1 || heads < 1) fail("embed_dim and heads must be positive");
    if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (depth < 1 || decoder_depth < 1) fail("depths must be >= 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
}

ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig m;
    m.image_size = cfg.corpus.image_size;
    m.patch_size = cfg.backbone.patch_size;
    m.embed_dim = cfg.backbone.embed_dim;
    m.depth = cfg.backbone.depth;
    m.heads = cfg.backbone.heads;
    m.decoder_depth = cfg.backbone.decoder_depth;
    m.mlp_ratio = cfg.backbone.mlp_ratio;
    m.validate();
    return m;
}

std::string render_prompt(const std::string& tmpl, const std::string& placeholder,
                          const std::string& name) {
    const auto pos = tmpl.find(placeholder);
    if (pos == std::string::npos)
        throw ArgumentError("prompt template lacks placeholder " + placeholder + ": " +
                            tmpl);
    std::string out = tmpl;
    return out.replace(pos, placeholder.size(), name);
}

namespace {

MatrixXd embed_prompts(const std::vector<std::string>& names, const std::string& tmpl,
                       const std::string& placeholder, int embed_dim,
                       std::uint64_t seed) {
    if (names.empty()) throw ArgumentError("prompt bank needs at least one class name");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size())
        throw ArgumentError("prompt bank class names must be unique");
    MatrixXd g(static_cast<int>(names.size()), embed_dim);
    for (std::size_t i = 0; i < names.size(); ++i) {
        Rng rng(derive_seed(seed, render_prompt(tmpl, placeholder, names[i])));
        for (int c = 0; c < embed_dim; ++c) g(static_cast<int>(i), c) = rng.normal();
        const double norm = g.row(static_cast<int>(i)).norm();
        if (norm < 1e-12) throw DegenerateInputError("prompt embedding collapsed to zero");
        g.row(static_cast<int>(i)) /= norm;
    }
    return g;
}

}  // namespace

PromptBank build_prompt_bank(const std::vector<std::string>& distortion_names,
                             const std::vector<std::string>& quality_names,
                             int embed_dim, std::uint64_t seed,
                             const std::string& template_d,
                             const std::string& template_q) {
    if (embed_dim < 1) throw ArgumentError("prompt bank embed_dim must be positive");
    PromptBank bank;
    bank.g_d = embed_prompts(distortion_names, template_d, "{d}", embed_dim,
                             derive_seed(seed, "prompt/distortion"));
    bank.g_q = embed_prompts(quality_names, template_q, "{q}", embed_dim,
                             derive_seed(seed, "prompt/quality"));
    bank.distortion_names = distortion_names;
    bank.quality_names = quality_names;
    bank.template_d = template_d;
    bank.template_q = template_q;
    return bank;
}

std::uint64_t PromptBank::content_hash() const {
    Hasher h;
    auto mix_mat = [&h](const MatrixXd& m) {
        h.update_u64(static_cast<std::uint64_t>(m.rows()));
        h.update_u64(static_cast<std::uint64_t>(m.cols()));
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) h.update_double(m(r, c));
    };
    mix_mat(g_d);
    mix_mat(g_q);
    for (const auto& n : distortion_names) h.update(n);
    for (const auto& n : quality_names) h.update(n);
    h.update(template_d);
    h.update(template_q);
    return h.digest();
}

void add_encoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int dim = cfg.embed_dim;
    add_linear(store, "enc.patch", dim, cfg.patch_dim(), rng);
    Slot pos = store.add("enc.pos", cfg.n_tokens(), dim);
    store.init_gaussian(pos, rng, kInitStd);
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string p = "enc.l" + std::to_string(l);
        add_layer_norm(store, p + ".ln1", dim);
        add_attention(store, p + ".attn", dim, rng);
        add_layer_norm(store, p + ".ln2", dim);
        add_mlp(store, p + ".mlp", dim, dim * cfg.mlp_ratio, rng);
    }
}

void add_decoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int dim = cfg.embed_dim;
    Slot query = store.add("dec.query", 1, dim);
    store.init_gaussian(query, rng, kInitStd);
    for (int l = 0; l < cfg.decoder_depth; ++l) {
        const std::string p = "dec.l" + std::to_string(l);
        add_layer_norm(store, p + ".ln_q", dim);
        add_layer_norm(store, p + ".ln_kv", dim);
        add_attention(store, p + ".attn", dim, rng);
        add_layer_norm(store, p + ".ln2", dim);
        add_mlp(store, p + ".mlp", dim, dim * cfg.mlp_ratio, rng);
    }
    add_linear(store, "dec.head", 1, dim, rng, /*zero_init=*/true);
}

Eigen::MatrixXd patchify(const Image& img, int patch_size) {
    if (patch_size < 1 || img.h % patch_size != 0 || img.w % patch_size != 0)
        throw ArgumentError("image size must be a multiple of patch_size");
    const int gh = img.h / patch_size;
    const int gw = img.w / patch_size;
    MatrixXd p(gh * gw, patch_size * patch_size * 3);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            const int row = gy * gw + gx;
            int col = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < 3; ++c)
                        p(row, col++) =
                            img.at(gy * patch_size + py, gx * patch_size + px, c);
        }
    return p;
}

FeatureMap encode(Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                  const Image& img, std::vector<MatrixXd>* attn_probe) {
    cfg.validate();
    if (img.h != cfg.image_size || img.w != cfg.image_size)
        throw ArgumentError("encode: image does not match configured size");
    Var patches = tape.input(patchify(img, cfg.patch_size));
    Var x = linear(tape, store, "enc.patch", patches);
    x = tape.add(x, tape.param(store, store.slot("enc.pos")));
    if (attn_probe) attn_probe->clear();
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string p = "enc.l" + std::to_string(l);
        MatrixXd probe;
        Var normed = layer_norm(tape, store, p + ".ln1", x);
        Var attn = multi_head_attention(tape, store, p + ".attn", normed, normed,
                                        cfg.heads, attn_probe ? &probe : nullptr);
        if (attn_probe) attn_probe->push_back(std::move(probe));
        x = tape.add(x, attn);
        Var normed2 = layer_norm(tape, store, p + ".ln2", x);
        Var hidden = tape.gelu(linear(tape, store, p + ".mlp.l1", normed2));
        x = tape.add(x, linear(tape, store, p + ".mlp.l2", hidden));
    }
    return FeatureMap{x, cfg.grid(), cfg.grid()};
}

Var decode_score(Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                 const FeatureMap& feat, MatrixXd* attn_probe) {
    if (feat.tokens.cols() != cfg.embed_dim)
        throw ArgumentError("decode_score: feature channels do not match decoder dim");
    Var q = tape.param(store, store.slot("dec.query"));
    for (int l = 0; l < cfg.decoder_depth; ++l) {
        const std::string p = "dec.l" + std::to_string(l);
        Var qn = layer_norm(tape, store, p + ".ln_q", q);
        Var kvn = layer_norm(tape, store, p + ".ln_kv", feat.tokens);
        const bool last = l == cfg.decoder_depth - 1;
        Var attn = multi_head_attention(tape, store, p + ".attn", qn, kvn, cfg.heads,
                                        last ? attn_probe : nullptr);
        q = tape.add(q, attn);
        Var qn2 = layer_norm(tape, store, p + ".ln2", q);
        Var hidden = tape.gelu(linear(tape, store, p + ".mlp.l1", qn2));
        q = tape.add(q, linear(tape, store, p + ".mlp.l2", hidden));
    }
    return linear(tape, store, "dec.head", q);
}

Eigen::MatrixXd attention_rollout(const std::vector<MatrixXd>& layer_attn) {
    if (layer_attn.empty()) throw ArgumentError("attention_rollout: no layers given");
    const auto n = layer_attn.front().rows();
    MatrixXd rollout = MatrixXd::Identity(n, n);
    for (const MatrixXd& a : layer_attn) {
        if (a.rows() != n || a.cols() != n)
            throw ArgumentError("attention_rollout: layer shape mismatch");
        MatrixXd mixed = 0.5 * a + 0.5 * MatrixXd::Identity(n, n);
        for (int r = 0; r < mixed.rows(); ++r) mixed.row(r) /= mixed.row(r).sum();
        rollout = mixed * rollout;
    }
    return rollout;
}

}  // namespace pfd
