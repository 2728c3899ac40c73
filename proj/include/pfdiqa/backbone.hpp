#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfdiqa/config.hpp"
#include "pfdiqa/image.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/tensor.hpp"

namespace pfd {

// Shape of the toy patch-transformer backbone.
struct ModelConfig {
    int image_size = 64;
    int patch_size = 8;
    int embed_dim = 64;
    int depth = 4;
    int heads = 4;
    int decoder_depth = 1;
    int mlp_ratio = 4;

    void validate() const;
    int grid() const { return image_size / patch_size; }
    int n_tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

ModelConfig model_config_from(const RunConfig& cfg);

// Token features plus the spatial grid they came from.
struct FeatureMap {
    nn::Var tokens;  // N x C
    int grid_h = 0;
    int grid_w = 0;
};

// Frozen class-embedding table standing in for a text encoder: one seeded
// Gaussian unit vector per rendered prompt.
struct PromptBank {
    Eigen::MatrixXd g_d;  // K_d x C, unit rows
    Eigen::MatrixXd g_q;  // K_q x C, unit rows
    std::vector<std::string> distortion_names;
    std::vector<std::string> quality_names;
    std::string template_d;
    std::string template_q;

    std::uint64_t content_hash() const;
};

std::string render_prompt(const std::string& tmpl, const std::string& placeholder,
                          const std::string& name);

PromptBank build_prompt_bank(const std::vector<std::string>& distortion_names,
                             const std::vector<std::string>& quality_names,
                             int embed_dim, std::uint64_t seed,
                             const std::string& template_d = "a photo of with {d} artifact.",
                             const std::string& template_q = "a photo of with {q} quality.");

// Registers parameters under "enc." / "dec." prefixes and initializes them.
void add_encoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);
void add_decoder_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Rows = patches scanned row-major; columns = (py, px, channel) interleaved.
Eigen::MatrixXd patchify(const Image& img, int patch_size);

// Patch embedding + learned positions + pre-LN self-attention blocks.
// attn_probe, when given, receives one head-averaged N x N attention matrix
// per layer (plain values, untracked).
FeatureMap encode(nn::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                  const Image& img, std::vector<Eigen::MatrixXd>* attn_probe = nullptr);

// Single learnable query attends over the tokens; linear head gives one
// scalar. attn_probe receives the head-averaged 1 x N cross-attention row of
// the final decoder layer.
nn::Var decode_score(nn::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                     const FeatureMap& feat,
                     Eigen::MatrixXd* attn_probe = nullptr);

// Multiplies (0.5*A + 0.5*I) row-normalized across layers; rows sum to one.
Eigen::MatrixXd attention_rollout(const std::vector<Eigen::MatrixXd>& layer_attn);

}  // namespace pfd
