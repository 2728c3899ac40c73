#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/params.hpp"
#include "pfdiqa/ppf.hpp"
#include "pfdiqa/rng.hpp"
#include "pfdiqa/tensor.hpp"

using pfd::ParamStore;
using pfd::Rng;
using pfd::nn::Mat;
using pfd::nn::Tape;
using pfd::nn::Var;

namespace {

constexpr int kDim = 16;
constexpr int kTokens = 9;

ParamStore ppf_store(std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    pfd::add_ppf_params(store, kDim, rng);
    return store;
}

Mat random_mat(int r, int c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

double silu_scalar(double x) { return x / (1.0 + std::exp(-x)); }

// Eq. 7 recomputed with plain scalar loops (independent of the tape and of
// Eigen matrix products).
Mat fuse_oracle(const ParamStore& store, const Mat& fs, const Mat& fdq, double eps) {
    const int n = static_cast<int>(fs.rows());
    const int c = static_cast<int>(fs.cols());
    auto w = [&](const char* name, int i, int j) {
        return const_cast<ParamStore&>(store).mat(name)(i, j);
    };
    Mat out(n, c);
    for (int r = 0; r < n; ++r) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += fs(r, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (fs(r, j) - mean) * (fs(r, j) - mean);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) {
            const double normed =
                (fs(r, j) - mean) * inv * w("ppf.norm.g", 0, j) + w("ppf.norm.b", 0, j);
            double scale = w("ppf.scale.b", 0, j);
            double shift = w("ppf.shift.b", 0, j);
            for (int k = 0; k < c; ++k) {
                const double gate = silu_scalar(fdq(r, k));
                scale += w("ppf.scale.w", j, k) * gate;
                shift += w("ppf.shift.w", j, k) * gate;
            }
            out(r, j) = scale * normed + shift + fs(r, j);
        }
    }
    return out;
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

TEST_CASE("ppf parameters start at identity fusion") {
    ParamStore store = ppf_store(1);
    CHECK(store.mat("ppf.scale.w") == Mat::Zero(kDim, kDim));
    CHECK(store.mat("ppf.scale.b") == Mat::Zero(1, kDim));
    CHECK(store.mat("ppf.shift.w") == Mat::Zero(kDim, kDim));
    CHECK(store.mat("ppf.shift.b") == Mat::Zero(1, kDim));
    CHECK(store.mat("ppf.norm.g") == Mat::Ones(1, kDim));
    // scale and shift are distinct parameter sets
    CHECK(store.offset(store.slot("ppf.scale.w")) !=
          store.offset(store.slot("ppf.shift.w")));
}

TEST_CASE("combine_priors: zero quality branch reduces to the distortion branch") {
    ParamStore store = ppf_store(2);
    store.mat("ppf.proj_q.b").setZero();
    Mat fd = random_mat(kTokens, kDim, 3);
    Tape t;
    Var out = pfd::combine_priors(t, store, t.input(fd),
                                  t.input(Mat::Zero(kTokens, kDim)));
    Mat expect = (fd * store.mat("ppf.proj_d.w").transpose()).rowwise() +
                 Eigen::RowVectorXd(store.mat("ppf.proj_d.b").row(0));
    CHECK((t.value(out) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("combine_priors: identity projections sum the branches") {
    ParamStore store = ppf_store(2);
    store.mat("ppf.proj_d.w") = Mat::Identity(kDim, kDim);
    store.mat("ppf.proj_d.b").setZero();
    store.mat("ppf.proj_q.w") = Mat::Identity(kDim, kDim);
    store.mat("ppf.proj_q.b").setZero();
    Mat fd = random_mat(kTokens, kDim, 4);
    Mat fq = random_mat(kTokens, kDim, 5);
    Tape t;
    Var out = pfd::combine_priors(t, store, t.input(fd), t.input(fq));
    CHECK((t.value(out) - (fd + fq)).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(
        pfd::combine_priors(t, store, t.input(fd), t.input(Mat::Zero(2, kDim))),
        pfd::ArgumentError);
}

TEST_CASE("zero-initialized fuse is exactly the identity on F_s") {
    ParamStore store = ppf_store(6);  // scale/shift already zero
    Mat fs = random_mat(kTokens, kDim, 7);
    Mat fdq = random_mat(kTokens, kDim, 8);
    Tape t;
    Var out = pfd::fuse(t, store, t.input(fs), t.input(fdq));
    CHECK(t.value(out) == fs);  // bitwise: 0*normed + 0 + fs
}

TEST_CASE("shift-only fuse adds a broadcast constant") {
    ParamStore store = ppf_store(6);
    store.mat("ppf.shift.b").setConstant(0.75);
    Mat fs = random_mat(kTokens, kDim, 9);
    Mat fdq = random_mat(kTokens, kDim, 10);
    Tape t;
    Var out = pfd::fuse(t, store, t.input(fs), t.input(fdq));
    CHECK((t.value(out) - (fs.array() + 0.75).matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse with random weights matches the scalar-loop oracle") {
    ParamStore store = ppf_store(11);
    Rng rng(12);
    store.init_gaussian(store.slot("ppf.scale.w"), rng, 0.3);
    store.init_gaussian(store.slot("ppf.scale.b"), rng, 0.3);
    store.init_gaussian(store.slot("ppf.shift.w"), rng, 0.3);
    store.init_gaussian(store.slot("ppf.shift.b"), rng, 0.3);
    store.init_gaussian(store.slot("ppf.norm.g"), rng, 1.0);
    store.init_gaussian(store.slot("ppf.norm.b"), rng, 0.5);

    Mat fs = random_mat(kTokens, kDim, 13);
    Mat fdq = random_mat(kTokens, kDim, 14);
    const double eps = 1e-5;
    Tape t;
    Var out = pfd::fuse(t, store, t.input(fs), t.input(fdq), eps);
    Mat expect = fuse_oracle(store, fs, fdq, eps);
    CHECK((t.value(out) - expect).cwiseAbs().maxCoeff() < 1e-5);

    CHECK_THROWS_AS(pfd::fuse(t, store, t.input(fs), t.input(Mat::Zero(2, kDim))),
                    pfd::ArgumentError);
}

TEST_CASE("run_ppf output keeps the input shape and composes the two steps") {
    ParamStore store = ppf_store(15);
    Mat fs = random_mat(kTokens, kDim, 16);
    Mat fd = random_mat(kTokens, kDim, 17);
    Mat fq = random_mat(kTokens, kDim, 18);
    Tape t;
    Var fused = pfd::run_ppf(t, store, t.input(fs), t.input(fd), t.input(fq));
    REQUIRE(fused.rows() == kTokens);
    REQUIRE(fused.cols() == kDim);
    Var fdq = pfd::combine_priors(t, store, t.input(fd), t.input(fq));
    Var fused2 = pfd::fuse(t, store, t.input(fs), fdq);
    CHECK(t.value(fused) == t.value(fused2));
}

TEST_CASE("fusion gradients match central differences for params and inputs") {
    ParamStore store = ppf_store(19);
    Rng rng(20);
    store.init_gaussian(store.slot("ppf.scale.w"), rng, 0.2);
    store.init_gaussian(store.slot("ppf.shift.w"), rng, 0.2);
    Mat fs = random_mat(6, kDim, 21);
    Mat fd = random_mat(6, kDim, 22);
    Mat fq = random_mat(6, kDim, 23);

    auto build = [&](Tape& t) -> Var {
        return t.sum_all(pfd::run_ppf(t, store, t.input(fs), t.input(fd), t.input(fq)));
    };
    for (const char* name : {"ppf.proj_d.w", "ppf.proj_q.w", "ppf.scale.w",
                             "ppf.shift.b", "ppf.norm.g", "ppf.norm.b"}) {
        CAPTURE(name);
        CHECK(sampled_param_gradcheck(store, name, build, 8, 24) < 1e-4);
    }

    // gradient w.r.t. both feature inputs
    for (int which = 0; which < 2; ++which) {
        Tape t;
        Var vfs = t.input_grad(fs);
        Var vfd = t.input_grad(fd);
        Var loss = t.sum_all(pfd::run_ppf(t, store, vfs, vfd, t.input(fq)));
        t.backward(loss);
        Var target = which == 0 ? vfs : vfd;
        const Mat& base = which == 0 ? fs : fd;
        const Mat ga = t.grad(target);
        Rng pick(25);
        double worst = 0.0;
        for (int trial = 0; trial < 8; ++trial) {
            const int k = static_cast<int>(pick.uniform_index(base.size()));
            Mat bp = base, bm = base;
            bp.data()[k] += 1e-5;
            bm.data()[k] -= 1e-5;
            Tape tp, tm;
            const double fp =
                tp.value(which == 0
                             ? tp.sum_all(pfd::run_ppf(tp, store, tp.input(bp),
                                                       tp.input(fd), tp.input(fq)))
                             : tp.sum_all(pfd::run_ppf(tp, store, tp.input(fs),
                                                       tp.input(bp), tp.input(fq))))(0, 0);
            const double fm =
                tm.value(which == 0
                             ? tm.sum_all(pfd::run_ppf(tm, store, tm.input(bm),
                                                       tm.input(fd), tm.input(fq)))
                             : tm.sum_all(pfd::run_ppf(tm, store, tm.input(fs),
                                                       tm.input(bm), tm.input(fq))))(0, 0);
            const double gn = (fp - fm) / 2e-5;
            const double ga_k = ga.data()[k];
            worst = std::max(
                worst, std::abs(ga_k - gn) / std::max({1e-3, std::abs(ga_k), std::abs(gn)}));
        }
        CAPTURE(which);
        CHECK(worst < 1e-4);
    }
}
