#include "pfdiqa/diffusion.hpp"

#include <cmath>
#include <string>

#include "pfdiqa/errors.hpp"

namespace pfd {

namespace {

using nn::Mat;
using nn::Tape;
using nn::Var;

Var linear(Tape& t, const ParamStore& store, const std::string& prefix, Var x) {
    Var w = t.param(store, store.slot(prefix + ".w"));
    Var b = t.param(store, store.slot(prefix + ".b"));
    return t.add_rowvec(t.matmul_nt(x, w), b);
}

Var bottleneck(Tape& t, const ParamStore& store, const std::string& p, Var x,
               int grid_h, int grid_w) {
    Var h = t.relu(linear(t, store, p + ".c1", x));
    Var w2 = t.param(store, store.slot(p + ".c2.w"));
    Var b2 = t.param(store, store.slot(p + ".c2.b"));
    h = t.relu(t.conv3x3(h, w2, b2, grid_h, grid_w));
    h = linear(t, store, p + ".c3", h);
    return t.add(x, h);
}

Var cross_attention(Tape& t, const ParamStore& store, const std::string& p, Var x,
                    Var ctx) {
    Var q = linear(t, store, p + ".q", x);
    Var k = linear(t, store, p + ".k", ctx);
    Var v = linear(t, store, p + ".v", ctx);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    Var attn = t.softmax_rows(t.scale(t.matmul_nt(q, k), inv_sqrt_d));
    return linear(t, store, p + ".o", t.matmul(attn, v));
}

}  // namespace

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > t_train)
        throw ArgumentError("timestep out of range: " + std::to_string(t));
    return t == 0 ? 1.0 : alpha_bars[t - 1];
}

NoiseSchedule make_schedule(int t_train, double beta_start, double beta_end) {
    if (t_train < 1) throw ArgumentError("schedule needs t_train >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ArgumentError("schedule needs 0 < beta_start <= beta_end < 1");
    if (t_train > 1 && beta_start == beta_end)
        throw ArgumentError("schedule betas must strictly increase");
    NoiseSchedule s;
    s.t_train = t_train;
    s.betas.resize(t_train);
    s.alphas.resize(t_train);
    s.alpha_bars.resize(t_train);
    s.sigmas.resize(t_train);
    double bar = 1.0;
    for (int i = 0; i < t_train; ++i) {
        const double frac = t_train == 1 ? 0.0 : static_cast<double>(i) / (t_train - 1);
        s.betas[i] = beta_start + (beta_end - beta_start) * frac;
        s.alphas[i] = 1.0 - s.betas[i];
        bar *= s.alphas[i];
        s.alpha_bars[i] = bar;
        s.sigmas[i] = std::sqrt(s.betas[i]);
    }
    return s;
}

Var forward_diffuse(Tape& tape, Var f0, int t, const Mat& eps,
                    const NoiseSchedule& sched) {
    if (eps.rows() != f0.rows() || eps.cols() != f0.cols())
        throw ArgumentError("forward_diffuse: eps shape differs from f0");
    const double abar = sched.alpha_bar_at(t);
    if (t == 0) return f0;
    Var noise = tape.input(std::sqrt(1.0 - abar) * eps);
    return tape.add(tape.scale(f0, std::sqrt(abar)), noise);
}

void add_denoiser_params(ParamStore& store, int dim, int bottleneck_ratio, Rng& rng) {
    if (dim < 1 || bottleneck_ratio < 1 || dim % bottleneck_ratio != 0)
        throw ArgumentError("denoiser dim must be divisible by bottleneck_ratio");
    const int inner = dim / bottleneck_ratio;
    auto add_linear = [&](const std::string& prefix, int out, int in, bool zero) {
        Slot w = store.add(prefix + ".w", out, in);
        store.add(prefix + ".b", 1, out);
        if (!zero) store.init_gaussian(w, rng, 0.02);
    };
    add_linear("den.time", dim, dim, false);
    for (const char* p : {"den.b1", "den.b2"}) {
        add_linear(std::string(p) + ".c1", inner, dim, false);
        add_linear(std::string(p) + ".c2", inner, 9 * inner, false);
        add_linear(std::string(p) + ".c3", dim, inner, false);
    }
    for (const char* p : {"den.x1", "den.x2"}) {
        add_linear(std::string(p) + ".q", dim, dim, false);
        add_linear(std::string(p) + ".k", dim, dim, false);
        add_linear(std::string(p) + ".v", dim, dim, false);
        add_linear(std::string(p) + ".o", dim, dim, false);
    }
    add_linear("den.out", dim, dim, /*zero=*/true);
}

void add_ana_params(ParamStore& store, int dim, Rng& rng) {
    if (dim < 1) throw ArgumentError("ana params need a positive dim");
    Slot w = store.add("ana.w", dim, dim);
    store.add("ana.b", 1, dim);
    store.init_gaussian(w, rng, 0.02);
}

Mat timestep_features(int t, int dim) {
    if (dim < 2) throw ArgumentError("timestep features need dim >= 2");
    Mat f(1, dim);
    const int pairs = dim / 2;
    for (int c = 0; c < dim; ++c) {
        const int pair = c / 2;
        const double omega =
            std::exp(-std::log(10000.0) * static_cast<double>(pair) / pairs);
        const double angle = static_cast<double>(t) * omega;
        f(0, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    return f;
}

Var predict_noise(Tape& tape, const ParamStore& store, Var ft, Var ctx, int t,
                  int grid_h, int grid_w) {
    if (ctx.rows() != 2)
        throw ArgumentError("conditioning context must have exactly 2 rows");
    if (ctx.cols() != ft.cols())
        throw ArgumentError("context channels differ from feature channels");
    if (grid_h * grid_w != ft.rows())
        throw ArgumentError("token grid does not match token count");
    if (t < 0) throw ArgumentError("negative timestep");
    Var time = linear(tape, store, "den.time",
                      tape.input(timestep_features(t, ft.cols())));
    Var x = tape.add_rowvec(ft, time);
    x = bottleneck(tape, store, "den.b1", x, grid_h, grid_w);
    x = tape.add(x, cross_attention(tape, store, "den.x1", x, ctx));
    x = bottleneck(tape, store, "den.b2", x, grid_h, grid_w);
    x = tape.add(x, cross_attention(tape, store, "den.x2", x, ctx));
    return linear(tape, store, "den.out", x);
}

Var ldm_loss(Tape& tape, Var eps_pred, const Mat& eps_true) {
    return tape.mse_loss(eps_pred, eps_true);
}

Var fea_loss(Tape& tape, Var f0_hat, const Mat& f_tea) {
    return tape.mse_loss(f0_hat, f_tea);
}

AlignResult align_noise(Tape& tape, const ParamStore& store, Var fh,
                        std::uint64_t seed) {
    Var pooled = tape.mean_over_rows(fh);
    Var gamma = tape.sigmoid(linear(tape, store, "ana", pooled));
    Rng rng(derive_seed(seed, "ana-noise"));
    Mat noise(fh.rows(), fh.cols());
    for (int j = 0; j < noise.cols(); ++j)
        for (int i = 0; i < noise.rows(); ++i) noise(i, j) = rng.normal();
    Var one_minus = tape.add_scalar(tape.scale(gamma, -1.0), 1.0);
    Var kept = tape.mul_rowvec(fh, gamma);
    Var injected = tape.mul_rowvec(tape.input(noise), one_minus);
    return AlignResult{tape.add(kept, injected), gamma};
}

std::vector<int> ddim_timesteps(int t_start, int n_steps) {
    if (t_start < 0) throw ArgumentError("t_start must be >= 0");
    if (n_steps < 1) throw ArgumentError("n_steps must be >= 1");
    if (n_steps > t_start + 1)
        throw ArgumentError("n_steps exceeds the available timesteps");
    std::vector<int> ts(n_steps);
    const long span = static_cast<long>(t_start) + 1;
    for (int k = n_steps; k >= 1; --k)
        ts[n_steps - k] = static_cast<int>(span * k / n_steps - 1);
    return ts;
}

EpsFn make_denoiser_eps_fn(const ParamStore& store, int grid_h, int grid_w) {
    return [&store, grid_h, grid_w](Tape& tape, Var ft, Var ctx, int t) {
        return predict_noise(tape, store, ft, ctx, t, grid_h, grid_w);
    };
}

DdimResult ddim_sample(Tape& tape, Var ft_init, Var ctx, int t_start, int n_steps,
                       const NoiseSchedule& sched, const EpsFn& eps_fn,
                       bool stop_grad) {
    if (t_start >= sched.t_train)
        throw ArgumentError("t_start exceeds the training schedule");
    DdimResult res;
    res.timesteps = ddim_timesteps(t_start, n_steps);
    Var x = ft_init;
    res.states.push_back(x);
    res.state_norms.push_back(tape.value(x).norm());
    for (int k = 0; k < n_steps; ++k) {
        const int i = res.timesteps[k];
        const int j = k + 1 < n_steps ? res.timesteps[k + 1] : -1;
        if (stop_grad && k > 0) x = tape.detach(x);
        Var eps = eps_fn(tape, x, ctx, i + 1);
        const double a_i = sched.alpha_bars[i];
        const double a_j = j >= 0 ? sched.alpha_bars[j] : 1.0;
        Var x0 = tape.scale(tape.sub(x, tape.scale(eps, std::sqrt(1.0 - a_i))),
                            1.0 / std::sqrt(a_i));
        x = j >= 0 ? tape.add(tape.scale(x0, std::sqrt(a_j)),
                              tape.scale(eps, std::sqrt(1.0 - a_j)))
                   : x0;
        res.states.push_back(x);
        res.state_norms.push_back(tape.value(x).norm());
    }
    res.f0 = x;
    return res;
}

}  // namespace pfd
