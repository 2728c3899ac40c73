#pragma once

#include "pfdiqa/params.hpp"
#include "pfdiqa/rng.hpp"
#include "pfdiqa/tensor.hpp"

namespace pfd {

// Registers "ppf.*": per-branch combine projections, layer-norm affine, and
// the zero-initialized scale/shift convolutions (identity fusion at start).
void add_ppf_params(ParamStore& store, int dim, Rng& rng);

// F̂_dq = proj_d(fd) + proj_q(fq).
nn::Var combine_priors(nn::Tape& tape, const ParamStore& store, nn::Var fd,
                       nn::Var fq);

// F̂_h = conv_scale(SiLU(fdq)) ⊙ norm(fs) + conv_shift(SiLU(fdq)) + fs.
nn::Var fuse(nn::Tape& tape, const ParamStore& store, nn::Var fs, nn::Var fdq,
             double norm_eps = 1e-5);

// combine_priors then fuse.
nn::Var run_ppf(nn::Tape& tape, const ParamStore& store, nn::Var fs, nn::Var fd,
                nn::Var fq, double norm_eps = 1e-5);

}  // namespace pfd
