#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pfd {

// Full run configuration. Defaults are the desk-scale reference setup; every
// field is reachable from the config file, PFDIQA_SECTION__KEY environment
// variables, and --set section.key=value overrides (applied in that order).
struct RunConfig {
    struct Corpus {
        int n_sources = 10;
        std::vector<std::string> kinds;  // empty = all 11
        int image_size = 64;
        double train_frac = 0.8;
    } corpus;

    struct Backbone {
        int patch_size = 8;
        int embed_dim = 64;
        int depth = 4;
        int heads = 4;
        int decoder_depth = 1;
        int mlp_ratio = 4;
    } backbone;

    struct Pda {
        double beta_mask = 0.5;
        double tau = 1.0;
        std::string template_d = "a photo of with {d} artifact.";
        std::string template_q = "a photo of with {q} quality.";
        std::vector<std::string> quality_names = {"bad", "poor", "fair", "good",
                                                  "perfect"};
    } pda;

    struct Ppf {
        double norm_eps = 1e-5;
    } ppf;

    struct Diffusion {
        int t_train = 1000;
        double beta_start = 1e-4;
        double beta_end = 0.02;
        int n_steps = 5;
        int t_start = -1;  // -1: largest timestep of the sampling grid
        int bottleneck_ratio = 4;
    } diffusion;

    struct Teacher {
        int epochs = 72;
        double lr = 2e-4;
        int batch_size = 8;
        double weight_decay = 0.01;
        double ce_temperature = 0.1;
        double quality_weight = 1.0;   // scale on the quality-level CE term
        double ema_decay = 0.999;      // 0: off; else Polyak-average the weights
        bool mask_augment = true;      // channel-mask dropout during teacher training
        bool dihedral_augment = true;  // random square-symmetry views per epoch
    } teacher;

    struct Training {
        int epochs = 30;
        double lr = 2e-4;
        int batch_size = 32;
        double weight_decay = 0.01;
        double clip_norm = 5.0;
        double lambda1 = 0.5;
        double lambda2 = 1.0;
        double lambda3 = 0.01;
        bool use_pda = true;
        bool use_pdr = true;
        bool use_ana = true;
        bool use_ppa = true;
        bool stop_grad_sampling = false;
    } training;

    std::uint64_t seed = 1;
    std::string out = "runs";

    // Throws ArgumentError when any cross-field invariant fails.
    void validate() const;

    // Canonical serialization (sorted sections and keys); equal configs give
    // equal strings, so the fingerprint is stable.
    std::string canonical() const;
    std::string fingerprint() const;
};

// Parses the TOML-subset config text (sections, key = value, strings, ints,
// floats, bools, flat lists, # comments). Unknown sections/keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Applies PFDIQA_SECTION__KEY environment overrides onto cfg.
void apply_env_overrides(RunConfig& cfg);

// Applies one "section.key=value" override (CLI --set).
void apply_override(RunConfig& cfg, const std::string& spec);

}  // namespace pfd
