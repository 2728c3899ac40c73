#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfdiqa/backbone.hpp"
#include "pfdiqa/config.hpp"
#include "pfdiqa/corpus.hpp"
#include "pfdiqa/diffusion.hpp"
#include "pfdiqa/teacher.hpp"

namespace pfd {

// Scalar loss components with their weights. total() enforces finiteness.
struct LossBundle {
    double l_kl = 0.0;
    double l_ldm = 0.0;
    double l_fea = 0.0;
    double l_reg = 0.0;
    double lambda1 = 0.5;
    double lambda2 = 1.0;
    double lambda3 = 0.01;

    // lambda1*l_kl + lambda2*l_ldm + lambda3*l_fea + l_reg; throws
    // TrainingDivergenceError when any component is non-finite.
    double total() const;
};

// The trained IQA model: backbone, prior heads, fusion, noise alignment and
// denoiser, plus everything needed to rerun it (config, bank, schedule).
// Module groups present in the store depend on the config toggles: enc/dec
// always, pda when use_pda, den when use_pdr, ppf when use_pda && use_pdr,
// ana when use_pdr && use_ana.
struct Student {
    RunConfig run_cfg;
    ModelConfig model_cfg;
    PromptBank bank;
    ParamStore store;
    NoiseSchedule schedule;
    std::vector<int> train_source_ids;
    std::string teacher_hash;  // identity of the teacher it distilled from
    std::string archive_hash;  // file hash once saved/loaded; empty before
};

// One row per optimizer step, mirrored into the CSV training log.
struct TrainLogRow {
    int epoch = 0;
    int step = 0;
    LossBundle losses;
    double grad_norm = 0.0;
    double lr = 0.0;
};

struct TrainStats {
    std::vector<double> epoch_loss;  // mean total loss per epoch
    std::vector<TrainLogRow> rows;
    bool teacher_frozen_ok = false;  // teacher params unchanged by training
    bool bank_frozen_ok = false;     // prompt bank unchanged by training
};

// Builds an untrained student for cfg with module groups per the toggles.
// `seed` replaces cfg.seed as the effective run seed (like train_teacher).
Student make_student(const RunConfig& cfg, std::uint64_t seed);

// Full distillation training: per-sample KL against teacher distributions,
// denoiser regression on teacher-feature trajectories, feature mimicry after
// sampling, and l1 score regression, under the config's lambda weights and
// toggles. Writes one CSV row per optimizer step when log_csv is non-empty.
// Deterministic in (manifest, teacher, config, seed).
Student train_student(const CorpusManifest& train, const std::string& root_dir,
                      const Teacher& teacher, const RunConfig& cfg,
                      std::uint64_t seed, const std::string& log_csv = "",
                      TrainStats* stats = nullptr,
                      const PseudoLabelCache* cache = nullptr);

// Deterministic single-image score (masking off, seeded alignment noise).
double predict_score(const Student& student, const Image& img,
                     const std::string& image_id);

// Everything the figure emitters need from one evaluation-mode pass: token
// states around the sampler, the walked timestep grid, and decoder attention
// rolled out through the encoder for the pre- and post-sampling features.
// Without the denoising branch the sampler fields collapse to the encoder
// output and both attention maps coincide.
struct PipelineTrace {
    Eigen::MatrixXd f_s;          // encoder tokens
    bool sampled = false;
    Eigen::MatrixXd sampler_in;   // tokens entering the sampler
    Eigen::MatrixXd f0;           // tokens leaving the sampler
    std::vector<Eigen::MatrixXd> states;  // sampler state at init + each update
    std::vector<int> timesteps;           // the walked 0-based grid
    std::vector<double> state_norms;
    double score = 0.0;
    Eigen::MatrixXd attn_before;  // grid x grid, rows of a distribution over patches
    Eigen::MatrixXd attn_after;
};

PipelineTrace trace_pipeline(const Student& student, const Image& img,
                             const std::string& image_id);

struct EvalReport {
    double srcc = 0.0;
    double plcc = 0.0;
    int n = 0;
    double fea_before = 0.0;  // mean feature loss of the sampler input vs teacher
    double fea_after = 0.0;   // mean feature loss of the sampler output vs teacher
    std::string config_fingerprint;
    std::vector<double> preds;
    std::vector<double> targets;
};

// Scores every manifest record and correlates with MOS. Refuses manifests
// whose sources overlap the student's training sources, and teachers other
// than the one the student distilled from. n_steps_override > 0 swaps the
// sampling-step count (Table-5-style sweeps); the config value rules
// otherwise.
EvalReport evaluate(const Student& student, const Teacher& teacher,
                    const CorpusManifest& manifest, const std::string& root_dir,
                    int n_steps_override = -1);

std::string eval_report_json(const EvalReport& report);

// Writes the archive and records its file hash on the student.
void save_student(Student& student, const std::string& path);
Student load_student(const std::string& path);

// One ablation variant: per-seed correlations plus their moments.
struct AblationCell {
    std::string label;
    std::vector<double> srcc_seeds;
    std::vector<double> plcc_seeds;
    double srcc_mean = 0.0;
    double srcc_std = 0.0;
    double plcc_mean = 0.0;
    double plcc_std = 0.0;
    std::vector<double> fea_before_seeds;
    std::vector<double> fea_after_seeds;
};

// module_grid rows: baseline / +prior-discovery / +denoising / full.
// blend_grid rows: the noise-alignment x prompt-conditioning 2x2 over the
// full model. steps_grid rows: sampling-step sweep of the full model.
struct AblationReport {
    std::vector<AblationCell> module_grid;
    std::vector<AblationCell> blend_grid;
    std::vector<AblationCell> steps_grid;
    std::vector<std::uint64_t> seeds;
    std::string config_fingerprint;
};

// Runs every variant for every seed on one shared split (train fraction and
// split seed from base), training one teacher per seed. Writes ablation.json
// and aligned-text tables under out_dir when non-empty.
AblationReport run_ablation(const RunConfig& base, const CorpusManifest& manifest,
                            const std::string& root_dir,
                            const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir);

std::string ablation_json(const AblationReport& report);
std::string ablation_tables_text(const AblationReport& report);

}  // namespace pfd
