#include "pfdiqa/ppf.hpp"

#include <string>

#include "pfdiqa/errors.hpp"

namespace pfd {

namespace {

using nn::Tape;
using nn::Var;

Var linear(Tape& t, const ParamStore& store, const std::string& prefix, Var x) {
    Var w = t.param(store, store.slot(prefix + ".w"));
    Var b = t.param(store, store.slot(prefix + ".b"));
    return t.add_rowvec(t.matmul_nt(x, w), b);
}

}  // namespace

void add_ppf_params(ParamStore& store, int dim, Rng& rng) {
    if (dim < 1) throw ArgumentError("ppf params need a positive dim");
    for (const char* p : {"ppf.proj_d", "ppf.proj_q"}) {
        Slot w = store.add(std::string(p) + ".w", dim, dim);
        store.add(std::string(p) + ".b", 1, dim);
        store.init_gaussian(w, rng, 0.02);
    }
    Slot g = store.add("ppf.norm.g", 1, dim);
    store.add("ppf.norm.b", 1, dim);
    store.mat(g).setOnes();
    // zero-initialized: fusion starts as the identity on F_s
    store.add("ppf.scale.w", dim, dim);
    store.add("ppf.scale.b", 1, dim);
    store.add("ppf.shift.w", dim, dim);
    store.add("ppf.shift.b", 1, dim);
}

Var combine_priors(Tape& tape, const ParamStore& store, Var fd, Var fq) {
    if (fd.rows() != fq.rows() || fd.cols() != fq.cols())
        throw ArgumentError("combine_priors: branch shapes differ");
    return tape.add(linear(tape, store, "ppf.proj_d", fd),
                    linear(tape, store, "ppf.proj_q", fq));
}

Var fuse(Tape& tape, const ParamStore& store, Var fs, Var fdq, double norm_eps) {
    if (fs.rows() != fdq.rows() || fs.cols() != fdq.cols())
        throw ArgumentError("fuse: feature shapes differ");
    Var g = tape.param(store, store.slot("ppf.norm.g"));
    Var b = tape.param(store, store.slot("ppf.norm.b"));
    Var normed = tape.layer_norm_rows(fs, g, b, norm_eps);
    Var gate = tape.silu(fdq);
    Var scale = linear(tape, store, "ppf.scale", gate);
    Var shift = linear(tape, store, "ppf.shift", gate);
    return tape.add(tape.add(tape.hadamard(scale, normed), shift), fs);
}

Var run_ppf(Tape& tape, const ParamStore& store, Var fs, Var fd, Var fq,
            double norm_eps) {
    return fuse(tape, store, fs, combine_priors(tape, store, fd, fq), norm_eps);
}

}  // namespace pfd
