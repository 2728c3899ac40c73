#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pfdiqa/params.hpp"
#include "pfdiqa/rng.hpp"
#include "pfdiqa/tensor.hpp"

namespace pfd {

// Linear-beta DDPM schedule. Arrays are 0-indexed: betas[i] is the variance
// of step t = i+1, alpha_bars[i] = Π_{s<=i} (1 - betas[s]).
struct NoiseSchedule {
    int t_train = 0;
    Eigen::VectorXd betas;
    Eigen::VectorXd alphas;
    Eigen::VectorXd alpha_bars;
    Eigen::VectorXd sigmas;  // ancestral σ_t = sqrt(β_t); unused by DDIM η=0

    double alpha_bar_at(int t) const;  // t is 1-based; t = 0 gives 1
};

NoiseSchedule make_schedule(int t_train, double beta_start, double beta_end);

// F_t = sqrt(ᾱ_t)·f0 + sqrt(1-ᾱ_t)·eps, with 1-based t (t = 0 returns f0).
nn::Var forward_diffuse(nn::Tape& tape, nn::Var f0, int t, const nn::Mat& eps,
                        const NoiseSchedule& sched);

// Registers "den.*": timestep embedding, two residual bottleneck blocks, two
// single-head cross-attentions, and the zero-initialized output projection.
void add_denoiser_params(ParamStore& store, int dim, int bottleneck_ratio, Rng& rng);

// Registers "ana.*": the per-channel noise-level predictor.
void add_ana_params(ParamStore& store, int dim, Rng& rng);

// Sinusoidal timestep features (1 x dim), before the learned projection.
nn::Mat timestep_features(int t, int dim);

// ε̂ = out_proj(xattn2(bottleneck2(xattn1(bottleneck1(ft + time)))));
// queries come from the tokens, keys/values from the 2 x C context.
nn::Var predict_noise(nn::Tape& tape, const ParamStore& store, nn::Var ft,
                      nn::Var ctx, int t, int grid_h, int grid_w);

// Mean-squared losses of Eq. 9 / Eq. 12.
nn::Var ldm_loss(nn::Tape& tape, nn::Var eps_pred, const nn::Mat& eps_true);
nn::Var fea_loss(nn::Tape& tape, nn::Var f0_hat, const nn::Mat& f_tea);

// γ = sigmoid(predictor(mean-pooled fh)) per channel;
// F̂_t = γ ⊙ fh + (1-γ) ⊙ n with n drawn from the seeded stream.
struct AlignResult {
    nn::Var ft;
    nn::Var gamma;  // 1 x C, every entry in (0,1)
};
AlignResult align_noise(nn::Tape& tape, const ParamStore& store, nn::Var fh,
                        std::uint64_t seed);

// Descending 0-based grid: ts[k] = (t_start+1)·k/n - 1 for k = n..1.
std::vector<int> ddim_timesteps(int t_start, int n_steps);

// ε̂ provider: t is the 1-based timestep matching forward_diffuse.
using EpsFn = std::function<nn::Var(nn::Tape&, nn::Var ft, nn::Var ctx, int t)>;

EpsFn make_denoiser_eps_fn(const ParamStore& store, int grid_h, int grid_w);

struct DdimResult {
    nn::Var f0;
    std::vector<int> timesteps;       // the 0-based grid that was walked
    std::vector<nn::Var> states;      // x at init and after every update
    std::vector<double> state_norms;  // Frobenius norm per state
};

// Deterministic DDIM (η = 0) with x̂_0 parameterization. stop_grad detaches
// the state between steps so gradients reach only the final update.
DdimResult ddim_sample(nn::Tape& tape, nn::Var ft_init, nn::Var ctx, int t_start,
                       int n_steps, const NoiseSchedule& sched, const EpsFn& eps_fn,
                       bool stop_grad = false);

}  // namespace pfd
