#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfdiqa/backbone.hpp"
#include "pfdiqa/config.hpp"
#include "pfdiqa/corpus.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/pda.hpp"

namespace pfd {

// Builds the frozen prompt bank for a run: distortion names from the corpus
// kind list (empty = all kinds), quality names and templates from the config.
// The bank stands in for a frozen text encoder, so each row depends only on
// its rendered prompt text and the embedding width — never on the run seed.
// Teacher and student banks therefore match whenever their configs agree.
PromptBank bank_from(const RunConfig& cfg);

// Pseudo-ground-truth producer: the same toy backbone as the student
// (encoder + prior heads + score decoder), trained with class supervision on
// the labeled corpus and frozen afterwards.
struct Teacher {
    RunConfig run_cfg;
    ModelConfig model_cfg;
    PromptBank bank;
    ParamStore store;
    std::vector<int> train_source_ids;
    std::string archive_hash;  // file hash once saved/loaded; empty before
};

// Everything the student distills from, detached from any tape.
struct TeacherOutputs {
    ClassDistribution p_d;
    ClassDistribution p_q;
    Eigen::MatrixXd f_tea;      // N x C encoder tokens
    Eigen::MatrixXd e_ada_tea;  // 2 x C aggregated prompt rows (distortion, quality)
};

struct TeacherTrainStats {
    std::vector<double> epoch_loss;
};

// Cross-entropy on (kind, quality level) through the prior heads at the
// configured CE temperature, plus l1 regression of the decoded score on MOS.
// Deterministic in (manifest, config, seed); `seed` replaces cfg.seed as the
// effective run seed so the archived config reproduces the bank on reload.
Teacher train_teacher(const CorpusManifest& train, const std::string& root_dir,
                      const RunConfig& cfg, std::uint64_t seed,
                      TeacherTrainStats* stats = nullptr);

// Frozen forward pass at the configured softmax temperature; bit-stable for
// identical (teacher, image).
TeacherOutputs teacher_pseudo_labels(const Teacher& teacher, const Image& img);

struct TeacherAccuracy {
    double distortion = 0.0;
    double quality = 0.0;
};

TeacherAccuracy teacher_accuracy(const Teacher& teacher,
                                 const std::vector<ImageSample>& samples);

// Stable identity for cache keys and student lineage: a hash of
// (params, bank, config), unaffected by saving or loading.
std::string teacher_identity(const Teacher& teacher);

// Writes the archive and records its file hash as the teacher's identity.
void save_teacher(Teacher& teacher, const std::string& path);
Teacher load_teacher(const std::string& path);

// Disk cache holding one record per image id — p_d, p_q and the F_tea blob —
// keyed by (image id, teacher identity). The conditioning rows are
// reaggregated from the cached distributions on load.
struct PseudoLabelCache {
    std::string root;
    std::string teacher_key;

    PseudoLabelCache(std::string cache_root, const Teacher& teacher);
    std::string record_path(const std::string& image_id) const;
    bool load(const std::string& image_id, const Teacher& teacher,
              TeacherOutputs& out) const;
    void store(const std::string& image_id, const TeacherOutputs& out) const;
};

// Cache-through wrapper; a null cache always recomputes.
TeacherOutputs cached_pseudo_labels(const Teacher& teacher, const Image& img,
                                    const std::string& image_id,
                                    const PseudoLabelCache* cache);

}  // namespace pfd
