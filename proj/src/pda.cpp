#include "pfdiqa/pda.hpp"

#include <cmath>
#include <string>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/rng.hpp"

namespace pfd {

namespace {

using nn::Tape;
using nn::Var;

const char* branch_prefix(PriorBranch b) {
    return b == PriorBranch::distortion ? "pda.d" : "pda.q";
}

Var linear(Tape& t, const ParamStore& store, const std::string& prefix, Var x) {
    Var w = t.param(store, store.slot(prefix + ".w"));
    Var b = t.param(store, store.slot(prefix + ".b"));
    return t.add_rowvec(t.matmul_nt(x, w), b);
}

void check_unit_rows(Tape& t, Var bank) {
    const nn::Mat& m = t.value(bank);
    for (int r = 0; r < m.rows(); ++r)
        if (std::abs(m.row(r).norm() - 1.0) > 1e-6)
            throw ArgumentError("prompt bank rows must be unit-norm");
}

}  // namespace

void ClassDistribution::validate() const {
    if (probs.size() == 0) throw ArgumentError("class distribution is empty");
    if (probs.minCoeff() < 0.0)
        throw ArgumentError("class distribution has negative entries");
    if (std::abs(probs.sum() - 1.0) > 1e-6)
        throw ArgumentError("class distribution does not sum to 1");
}

void add_pda_params(ParamStore& store, int dim, Rng& rng) {
    if (dim < 1) throw ArgumentError("pda params need a positive dim");
    auto add_linear = [&](const std::string& prefix) {
        Slot w = store.add(prefix + ".w", dim, dim);
        store.add(prefix + ".b", 1, dim);
        store.init_gaussian(w, rng, 0.02);
    };
    add_linear("pda.align");
    for (const char* p : {"pda.d", "pda.q"}) {
        add_linear(std::string(p) + ".l1");
        Slot g = store.add(std::string(p) + ".norm.g", 1, dim);
        store.add(std::string(p) + ".norm.b", 1, dim);
        store.mat(g).setOnes();
        add_linear(std::string(p) + ".l2");
    }
}

MaskDraws channel_mask_draws(int channels, double beta_mask, std::uint64_t seed) {
    if (channels < 1) throw ArgumentError("channel mask needs at least one channel");
    if (beta_mask < 0.0 || beta_mask >= 1.0)
        throw ArgumentError("beta_mask must lie in [0,1)");
    MaskDraws d;
    d.draws.resize(channels);
    d.kept.resize(channels);
    Rng rng(derive_seed(seed, "channel-mask"));
    for (int c = 0; c < channels; ++c) {
        d.draws[c] = rng.uniform01();
        d.kept[c] = d.draws[c] >= beta_mask;
    }
    return d;
}

Var apply_channel_mask(Tape& tape, const ParamStore& store, Var feat,
                       const MaskConfig& cfg, std::uint64_t seed, MaskDraws* record) {
    if (cfg.beta_mask < 0.0 || cfg.beta_mask >= 1.0)
        throw ArgumentError("beta_mask must lie in [0,1)");
    Var aligned = linear(tape, store, "pda.align", feat);
    if (!cfg.enabled) {
        if (record) *record = MaskDraws{};
        return aligned;
    }
    MaskDraws draws = channel_mask_draws(feat.cols(), cfg.beta_mask, seed);
    nn::Mat mask(1, feat.cols());
    for (int c = 0; c < feat.cols(); ++c) mask(0, c) = draws.kept[c] ? 1.0 : 0.0;
    if (record) *record = std::move(draws);
    return tape.mul_rowvec(aligned, tape.input(mask));
}

Var reconstruct_prior(Tape& tape, const ParamStore& store, Var masked,
                      PriorBranch branch, bool use_norm) {
    const std::string p = branch_prefix(branch);
    Var x = linear(tape, store, p + ".l1", masked);
    if (use_norm) {
        Var g = tape.param(store, store.slot(p + ".norm.g"));
        Var b = tape.param(store, store.slot(p + ".norm.b"));
        x = tape.channel_norm(x, g, b);
    }
    x = tape.relu(x);
    return linear(tape, store, p + ".l2", x);
}

Var prior_logits(Tape& tape, Var prior, Var bank) {
    if (prior.cols() != bank.cols())
        throw ArgumentError("prior channels do not match bank embedding dim");
    check_unit_rows(tape, bank);
    Var pooled = tape.mean_over_rows(prior);
    Var unit = tape.l2_normalize_row(pooled);
    return tape.matmul_nt(unit, bank);
}

Var prior_probs(Tape& tape, Var logits, double tau) {
    if (tau <= 0.0) throw ArgumentError("softmax temperature must be positive");
    return tape.softmax_rows(tape.scale(logits, 1.0 / tau));
}

Var aggregate_prompt(Tape& tape, Var probs, Var bank) {
    if (probs.rows() != 1 || probs.cols() != bank.rows())
        throw ArgumentError("probs shape does not match bank rows");
    return tape.matmul(probs, bank);
}

Var kl_loss(Tape& tape, const ClassDistribution& teacher, Var student_probs,
            PriorBranch student_branch) {
    if (teacher.branch != student_branch)
        throw ArgumentError("kl_loss: teacher and student branches differ");
    teacher.validate();
    return tape.kl_div(teacher.probs, student_probs);
}

PdaOutputs run_pda(Tape& tape, const ParamStore& store, const PromptBank& bank,
                   Var feat, const MaskConfig& mask_cfg, double tau,
                   std::uint64_t seed) {
    PdaOutputs out;
    out.masked = apply_channel_mask(tape, store, feat, mask_cfg, seed, &out.draws);
    out.prior_d = reconstruct_prior(tape, store, out.masked, PriorBranch::distortion);
    out.prior_q = reconstruct_prior(tape, store, out.masked, PriorBranch::quality);
    out.bank_d = tape.input(bank.g_d);
    out.bank_q = tape.input(bank.g_q);
    out.logits_d = prior_logits(tape, out.prior_d, out.bank_d);
    out.logits_q = prior_logits(tape, out.prior_q, out.bank_q);
    out.probs_d = prior_probs(tape, out.logits_d, tau);
    out.probs_q = prior_probs(tape, out.logits_q, tau);
    out.agg_d = aggregate_prompt(tape, out.probs_d, out.bank_d);
    out.agg_q = aggregate_prompt(tape, out.probs_q, out.bank_q);
    out.ctx = tape.vstack2(out.agg_d, out.agg_q);
    return out;
}

}  // namespace pfd
