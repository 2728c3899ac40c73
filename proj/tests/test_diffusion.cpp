#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "pfdiqa/diffusion.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/rng.hpp"
#include "pfdiqa/tensor.hpp"

using pfd::NoiseSchedule;
using pfd::ParamStore;
using pfd::Rng;
using pfd::nn::Mat;
using pfd::nn::Tape;
using pfd::nn::Var;

namespace {

constexpr int kDim = 16;
constexpr int kGrid = 4;
constexpr int kTokens = kGrid * kGrid;

ParamStore denoiser_store(std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    pfd::add_denoiser_params(store, kDim, 4, rng);
    pfd::add_ana_params(store, kDim, rng);
    return store;
}

Mat random_mat(int r, int c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

double sampled_param_gradcheck(ParamStore& store, const std::string& name,
                               const std::function<Var(Tape&)>& build, int n_samples,
                               std::uint64_t seed) {
    const pfd::Slot s = store.slot(name);
    Tape t;
    Var loss = build(t);
    t.backward(loss);
    std::vector<double> flat(store.size(), 0.0);
    t.collect_param_grads(flat);
    Rng pick(seed);
    double worst = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const int k = static_cast<int>(pick.uniform_index(store.count(s)));
        double* wp = store.mat(s).data() + k;
        const double orig = *wp, h = 1e-5;
        *wp = orig + h;
        Tape tp;
        const double fp = tp.value(build(tp))(0, 0);
        *wp = orig - h;
        Tape tm;
        const double fm = tm.value(build(tm))(0, 0);
        *wp = orig;
        const double gn = (fp - fm) / (2.0 * h);
        const double ga = flat[store.offset(s) + k];
        worst = std::max(worst,
                         std::abs(ga - gn) / std::max({1e-3, std::abs(ga), std::abs(gn)}));
    }
    return worst;
}

}  // namespace

TEST_CASE("make_schedule satisfies the published endpoints and monotonicity") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    REQUIRE(s.betas.size() == 1000);
    CHECK(s.alpha_bars[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
    CHECK(s.alpha_bars[999] < 0.01);
    CHECK(s.betas[0] == doctest::Approx(1e-4));
    CHECK(s.betas[999] == doctest::Approx(0.02));
    for (int i = 0; i < 1000; ++i) {
        CHECK(s.betas[i] > 0.0);
        CHECK(s.betas[i] < 1.0);
        CHECK(s.sigmas[i] == doctest::Approx(std::sqrt(s.betas[i])).epsilon(1e-15));
        if (i) {
            CHECK(s.betas[i] > s.betas[i - 1]);
            CHECK(s.alpha_bars[i] < s.alpha_bars[i - 1]);
        }
    }
    CHECK(s.alpha_bar_at(0) == 1.0);
    CHECK(s.alpha_bar_at(1) == s.alpha_bars[0]);
    CHECK(s.alpha_bar_at(1000) == s.alpha_bars[999]);
    CHECK_THROWS_AS(s.alpha_bar_at(-1), pfd::ArgumentError);
    CHECK_THROWS_AS(s.alpha_bar_at(1001), pfd::ArgumentError);
}

TEST_CASE("alpha_bars match an independent product within 1e-12") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    for (int t : {1, 7, 100, 500, 999, 1000}) {
        long double prod = 1.0L;
        for (int i = 0; i < t; ++i)
            prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
        CHECK(std::abs(s.alpha_bar_at(t) - static_cast<double>(prod)) < 1e-12);
    }
}

TEST_CASE("closed-form marginals equal the iterated one-step recursion") {
    NoiseSchedule s = pfd::make_schedule(200, 1e-3, 0.05);
    double mean_factor = 1.0;  // Π sqrt(1-β_s)
    double var = 0.0;          // var_t = (1-β_t)·var_{t-1} + β_t
    for (int t = 1; t <= 200; ++t) {
        mean_factor *= std::sqrt(s.alphas[t - 1]);
        var = s.alphas[t - 1] * var + s.betas[t - 1];
        CHECK(std::abs(mean_factor - std::sqrt(s.alpha_bar_at(t))) < 1e-10);
        CHECK(std::abs(var - (1.0 - s.alpha_bar_at(t))) < 1e-10);
    }
}

TEST_CASE("make_schedule rejects invalid ranges") {
    CHECK_THROWS_AS(pfd::make_schedule(0, 1e-4, 0.02), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::make_schedule(10, 0.0, 0.02), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::make_schedule(10, 1e-4, 1.0), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::make_schedule(10, 0.02, 1e-4), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::make_schedule(10, 0.02, 0.02), pfd::ArgumentError);
    CHECK_NOTHROW(pfd::make_schedule(1, 0.02, 0.02));  // single step may be flat
}

TEST_CASE("forward_diffuse follows the closed form exactly") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    Mat f0 = random_mat(kTokens, kDim, 1);
    Mat eps = random_mat(kTokens, kDim, 2);
    Tape t;

    // no-noise limit
    Var at0 = pfd::forward_diffuse(t, t.input(f0), 0, eps, s);
    CHECK(t.value(at0) == f0);

    // exact formula at a middle step
    Var at500 = pfd::forward_diffuse(t, t.input(f0), 500, eps, s);
    const double ab = s.alpha_bar_at(500);
    Mat expect = std::sqrt(ab) * f0 + std::sqrt(1.0 - ab) * eps;
    CHECK((t.value(at500) - expect).cwiseAbs().maxCoeff() < 1e-15);

    // full-noise limit: output is nearly the planted noise
    Var atT = pfd::forward_diffuse(t, t.input(f0), 1000, eps, s);
    CHECK((t.value(atT) - eps).cwiseAbs().maxCoeff() < 0.05);

    CHECK_THROWS_AS(pfd::forward_diffuse(t, t.input(f0), -1, eps, s),
                    pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::forward_diffuse(t, t.input(f0), 1001, eps, s),
                    pfd::ArgumentError);
    CHECK_THROWS_AS(
        pfd::forward_diffuse(t, t.input(f0), 5, Mat::Zero(2, 2), s),
        pfd::ArgumentError);
}

TEST_CASE("forward_diffuse variance matches 1 - alpha_bar empirically") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    const int n = 100;  // 10,000 i.i.d. elements
    Mat f0 = Mat::Zero(n, n);
    Mat eps = random_mat(n, n, 3);
    Tape t;
    Var ft = pfd::forward_diffuse(t, t.input(f0), 500, eps, s);
    const double var = t.value(ft).array().square().mean();
    const double expect = 1.0 - s.alpha_bar_at(500);
    CHECK(std::abs(var - expect) / expect < 0.02);
}

TEST_CASE("predict_noise with the zero-initialized head returns zeros") {
    ParamStore store = denoiser_store(5);
    Mat ft = random_mat(kTokens, kDim, 6);
    Mat ctx = random_mat(2, kDim, 7);
    Tape t;
    Var eps = pfd::predict_noise(t, store, t.input(ft), t.input(ctx), 500, kGrid, kGrid);
    REQUIRE(eps.rows() == kTokens);
    REQUIRE(eps.cols() == kDim);
    CHECK(t.value(eps).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("predict_noise responds to the conditioning context") {
    ParamStore store = denoiser_store(5);
    Rng rng(8);
    store.init_gaussian(store.slot("den.out.w"), rng, 0.1);
    Mat ft = random_mat(kTokens, kDim, 9);
    Tape t;
    Var e1 = pfd::predict_noise(t, store, t.input(ft),
                                t.input(random_mat(2, kDim, 10)), 100, kGrid, kGrid);
    Var e2 = pfd::predict_noise(t, store, t.input(ft),
                                t.input(random_mat(2, kDim, 11)), 100, kGrid, kGrid);
    CHECK((t.value(e1) - t.value(e2)).norm() > 0.0);

    // timestep also matters through the embedding
    Var e3 = pfd::predict_noise(t, store, t.input(ft),
                                t.input(random_mat(2, kDim, 10)), 900, kGrid, kGrid);
    CHECK((t.value(e1) - t.value(e3)).norm() > 0.0);

    CHECK_THROWS_AS(pfd::predict_noise(t, store, t.input(ft),
                                       t.input(random_mat(3, kDim, 10)), 100, kGrid,
                                       kGrid),
                    pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::predict_noise(t, store, t.input(ft),
                                       t.input(random_mat(2, kDim + 1, 10)), 100,
                                       kGrid, kGrid),
                    pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::predict_noise(t, store, t.input(ft),
                                       t.input(random_mat(2, kDim, 10)), 100, 3, 4),
                    pfd::ArgumentError);
}

TEST_CASE("denoiser gradients match central differences") {
    ParamStore store = denoiser_store(12);
    Rng rng(13);
    store.init_gaussian(store.slot("den.out.w"), rng, 0.1);
    Mat ft = random_mat(kTokens, kDim, 14);
    Mat ctx = random_mat(2, kDim, 15);
    auto build = [&](Tape& t) -> Var {
        Var e = pfd::predict_noise(t, store, t.input(ft), t.input(ctx), 300, kGrid,
                                   kGrid);
        return t.sum_all(t.hadamard(e, e));  // squared norm of ε̂
    };
    for (const char* name : {"den.x1.q.w", "den.x2.v.w", "den.x1.o.b", "den.b1.c2.w",
                             "den.b2.c1.w", "den.time.w", "den.out.w"}) {
        CAPTURE(name);
        CHECK(sampled_param_gradcheck(store, name, build, 6, 16) < 1e-4);
    }
}

TEST_CASE("ldm_loss matches its closed forms") {
    Tape t;
    Mat eps = random_mat(20, 20, 17);
    CHECK(t.value(pfd::ldm_loss(t, t.input(eps), eps))(0, 0) == 0.0);

    Mat big = random_mat(100, 100, 18);
    const double loss =
        t.value(pfd::ldm_loss(t, t.input(Mat::Zero(100, 100)), big))(0, 0);
    CHECK(std::abs(loss - 1.0) < 0.05);  // mean of squared standard normals

    Mat truth(1, 2);
    truth << 1.0, 2.0;
    CHECK(t.value(pfd::ldm_loss(t, t.input(Mat::Zero(1, 2)), truth))(0, 0) ==
          doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("fea_loss matches a scalar-loop oracle") {
    Tape t;
    Mat a = random_mat(12, 8, 19);
    CHECK(t.value(pfd::fea_loss(t, t.input(a), a))(0, 0) == 0.0);
    Mat b = a.array() + 1.0;
    CHECK(t.value(pfd::fea_loss(t, t.input(b), a))(0, 0) ==
          doctest::Approx(1.0).epsilon(1e-12));

    Mat c = random_mat(12, 8, 20);
    double naive = 0.0;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 8; ++j) naive += (a(i, j) - c(i, j)) * (a(i, j) - c(i, j));
    naive /= 96.0;
    CHECK(std::abs(t.value(pfd::fea_loss(t, t.input(a), c))(0, 0) - naive) < 1e-10);
}

TEST_CASE("align_noise blends toward the feature or the noise as gamma dictates") {
    ParamStore store = denoiser_store(21);
    Mat fh = random_mat(kTokens, kDim, 22);

    // gamma -> 1: keeps the features
    store.mat("ana.w").setZero();
    store.mat("ana.b").setConstant(16.0);  // sigmoid still strictly below 1
    Tape t1;
    pfd::AlignResult keep = pfd::align_noise(t1, store, t1.input(fh), 123);
    CHECK((t1.value(keep.ft) - fh).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(t1.value(keep.gamma).minCoeff() > 0.0);
    CHECK(t1.value(keep.gamma).maxCoeff() < 1.0);

    // gamma -> 0: output is the seeded standard normal stream
    store.mat("ana.b").setConstant(-16.0);
    Mat wide = random_mat(625, kDim, 23);  // 10,000 i.i.d. elements
    Tape t2;
    pfd::AlignResult noise = pfd::align_noise(t2, store, t2.input(wide), 123);
    const double mean = t2.value(noise.ft).mean();
    const double var = (t2.value(noise.ft).array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);

    // determinism in the seed
    Tape t3;
    pfd::AlignResult again = pfd::align_noise(t3, store, t3.input(wide), 123);
    CHECK(t3.value(again.ft) == t2.value(noise.ft));
    Tape t4;
    pfd::AlignResult other = pfd::align_noise(t4, store, t4.input(wide), 124);
    CHECK(t4.value(other.ft) != t2.value(noise.ft));
}

TEST_CASE("align_noise gamma stays in (0,1) and carries gradients") {
    ParamStore store = denoiser_store(24);
    Mat fh = random_mat(kTokens, kDim, 25, 3.0);
    Tape t;
    Var v = t.input_grad(fh);
    pfd::AlignResult r = pfd::align_noise(t, store, v, 9);
    REQUIRE(r.gamma.rows() == 1);
    REQUIRE(r.gamma.cols() == kDim);
    CHECK(t.value(r.gamma).minCoeff() > 0.0);
    CHECK(t.value(r.gamma).maxCoeff() < 1.0);
    t.backward(t.sum_all(r.ft));
    CHECK(t.has_grad(v));
    CHECK(t.grad(v).norm() > 0.0);
}

TEST_CASE("ddim_timesteps produces the documented grids") {
    CHECK(pfd::ddim_timesteps(999, 5) == std::vector<int>({999, 799, 599, 399, 199}));
    CHECK(pfd::ddim_timesteps(999, 1) == std::vector<int>({999}));
    CHECK(pfd::ddim_timesteps(999, 3) == std::vector<int>({999, 665, 332}));
    CHECK(pfd::ddim_timesteps(999, 10) ==
          std::vector<int>({999, 899, 799, 699, 599, 499, 399, 299, 199, 99}));
    CHECK(pfd::ddim_timesteps(4, 5) == std::vector<int>({4, 3, 2, 1, 0}));
    CHECK_THROWS_AS(pfd::ddim_timesteps(3, 5), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::ddim_timesteps(-1, 1), pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::ddim_timesteps(10, 0), pfd::ArgumentError);
}

TEST_CASE("one-step ddim equals the closed-form x0 estimate") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    ParamStore store = denoiser_store(26);
    Rng rng(27);
    store.init_gaussian(store.slot("den.out.w"), rng, 0.1);
    Mat ft = random_mat(kTokens, kDim, 28);
    Mat ctx = random_mat(2, kDim, 29);

    Tape t;
    Var ftv = t.input(ft);
    Var ctxv = t.input(ctx);
    pfd::DdimResult res = pfd::ddim_sample(
        t, ftv, ctxv, 999, 1, s, pfd::make_denoiser_eps_fn(store, kGrid, kGrid));

    Tape ref;
    Var eps = pfd::predict_noise(ref, store, ref.input(ft), ref.input(ctx), 1000,
                                 kGrid, kGrid);
    const double ab = s.alpha_bars[999];
    Mat x0 = (ft - std::sqrt(1.0 - ab) * ref.value(eps)) / std::sqrt(ab);
    CHECK((t.value(res.f0) - x0).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(res.timesteps == std::vector<int>({999}));
    REQUIRE(res.states.size() == 2);
    REQUIRE(res.state_norms.size() == 2);
    CHECK(res.state_norms[0] == doctest::Approx(ft.norm()));
}

TEST_CASE("ddim with a perfect noise oracle recovers the clean features") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    Mat f_tea = random_mat(kTokens, kDim, 30);
    Mat eps = random_mat(kTokens, kDim, 31);
    pfd::EpsFn oracle = [&eps](Tape& t, Var, Var, int) { return t.input(eps); };

    for (int n : {1, 3, 5, 10}) {
        CAPTURE(n);
        Tape t;
        Var ft = pfd::forward_diffuse(t, t.input(f_tea), 1000, eps, s);
        pfd::DdimResult res =
            pfd::ddim_sample(t, ft, t.input(Mat::Zero(2, kDim)), 999, n, s, oracle);
        CHECK((t.value(res.f0) - f_tea).cwiseAbs().maxCoeff() < 1e-5);
        CHECK(static_cast<int>(res.states.size()) == n + 1);
    }
}

TEST_CASE("ddim sampling is deterministic and validates its inputs") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    ParamStore store = denoiser_store(32);
    Rng rng(33);
    store.init_gaussian(store.slot("den.out.w"), rng, 0.1);
    Mat ft = random_mat(kTokens, kDim, 34);
    Mat ctx = random_mat(2, kDim, 35);
    pfd::EpsFn fn = pfd::make_denoiser_eps_fn(store, kGrid, kGrid);

    Tape t1, t2;
    pfd::DdimResult a = pfd::ddim_sample(t1, t1.input(ft), t1.input(ctx), 999, 5, s, fn);
    pfd::DdimResult b = pfd::ddim_sample(t2, t2.input(ft), t2.input(ctx), 999, 5, s, fn);
    CHECK((t1.value(a.f0) - t2.value(b.f0)).cwiseAbs().maxCoeff() < 1e-7);

    Tape t3;
    CHECK_THROWS_AS(
        pfd::ddim_sample(t3, t3.input(ft), t3.input(ctx), 1000, 5, s, fn),
        pfd::ArgumentError);
    CHECK_THROWS_AS(pfd::ddim_sample(t3, t3.input(ft), t3.input(ctx), 2, 5, s, fn),
                    pfd::ArgumentError);
}

TEST_CASE("stop-grad sampling preserves values while truncating the chain") {
    NoiseSchedule s = pfd::make_schedule(1000, 1e-4, 0.02);
    ParamStore store = denoiser_store(36);
    Rng rng(37);
    store.init_gaussian(store.slot("den.out.w"), rng, 0.1);
    Mat ft = random_mat(kTokens, kDim, 38);
    Mat ctx = random_mat(2, kDim, 39);
    pfd::EpsFn fn = pfd::make_denoiser_eps_fn(store, kGrid, kGrid);

    Tape t1, t2;
    pfd::DdimResult full =
        pfd::ddim_sample(t1, t1.input_grad(ft), t1.input(ctx), 999, 3, s, fn, false);
    pfd::DdimResult cut =
        pfd::ddim_sample(t2, t2.input_grad(ft), t2.input(ctx), 999, 3, s, fn, true);
    CHECK(t1.value(full.f0) == t2.value(cut.f0));

    t1.backward(t1.sum_all(full.f0));
    Var src1 = full.states.front();
    CHECK(t1.has_grad(src1));
    CHECK(t1.grad(src1).norm() > 0.0);

    t2.backward(t2.sum_all(cut.f0));
    Var src2 = cut.states.front();
    CHECK_FALSE(t2.has_grad(src2));  // detached between steps
}
