#pragma once

#include <cstdint>
#include <vector>

#include "pfdiqa/backbone.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/tensor.hpp"

namespace pfd {

enum class PriorBranch { distortion, quality };

// Channel-wise random masking of the aligned features (training only).
struct MaskConfig {
    double beta_mask = 0.5;
    bool enabled = true;
};

// Recorded per-channel uniforms and the surviving channels, for replay tests.
struct MaskDraws {
    std::vector<double> draws;
    std::vector<bool> kept;
};

// A probability vector tagged with the branch it scores.
struct ClassDistribution {
    Eigen::VectorXd probs;
    PriorBranch branch = PriorBranch::distortion;

    void validate() const;  // non-negative, sums to 1 within 1e-6
};

// Registers "pda.*" parameters: the alignment projection plus one
// reconstruction head (l1 -> norm -> relu -> l2) per branch.
void add_pda_params(ParamStore& store, int dim, Rng& rng);

// Draws one uniform per channel; channel c is dropped iff draw < beta_mask.
MaskDraws channel_mask_draws(int channels, double beta_mask, std::uint64_t seed);

// F_m = f_align(feat) ⊙ M_c. Disabled masking returns the aligned features.
nn::Var apply_channel_mask(nn::Tape& tape, const ParamStore& store, nn::Var feat,
                           const MaskConfig& cfg, std::uint64_t seed,
                           MaskDraws* record = nullptr);

// One reconstruction head: l1 -> channel norm (bypassable) -> ReLU -> l2.
nn::Var reconstruct_prior(nn::Tape& tape, const ParamStore& store, nn::Var masked,
                          PriorBranch branch, bool use_norm = true);

// Mean-pools tokens and takes cosine similarity against each bank row.
// Bank rows must be unit-norm; a zero-norm pooled vector is degenerate.
nn::Var prior_logits(nn::Tape& tape, nn::Var prior, nn::Var bank);

// softmax(logits / tau); tau must be positive.
nn::Var prior_probs(nn::Tape& tape, nn::Var logits, double tau);

// ê = Σ_i p_i · G_i (convex combination of bank rows).
nn::Var aggregate_prompt(nn::Tape& tape, nn::Var probs, nn::Var bank);

// KL(teacher ‖ student) with the student clamped at 1e-8.
nn::Var kl_loss(nn::Tape& tape, const ClassDistribution& teacher,
                nn::Var student_probs, PriorBranch student_branch);

// The full prior-discovery pass: mask, reconstruct both branches, score
// against the frozen bank, aggregate prompts, and stack the 2 x C context.
struct PdaOutputs {
    nn::Var masked;
    MaskDraws draws;
    nn::Var prior_d, prior_q;
    nn::Var bank_d, bank_q;  // untracked bank constants (frozenness checks)
    nn::Var logits_d, logits_q;
    nn::Var probs_d, probs_q;
    nn::Var agg_d, agg_q;
    nn::Var ctx;  // vstack(agg_d, agg_q), 2 x C
};

PdaOutputs run_pda(nn::Tape& tape, const ParamStore& store, const PromptBank& bank,
                   nn::Var feat, const MaskConfig& mask_cfg, double tau,
                   std::uint64_t seed);

}  // namespace pfd
