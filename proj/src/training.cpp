#include "pfdiqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pfdiqa/checkpoint.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/metrics.hpp"
#include "pfdiqa/pda.hpp"
#include "pfdiqa/ppf.hpp"

namespace pfd {
namespace {

namespace fs = std::filesystem;

double require_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw TrainingDivergenceError(std::string(what) + " is non-finite");
    return v;
}

nn::Mat gaussian_mat(int rows, int cols, Rng& rng) {
    nn::Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
    return m;
}

int effective_t_start(const RunConfig& cfg) {
    return cfg.diffusion.t_start < 0 ? cfg.diffusion.t_train - 1
                                     : cfg.diffusion.t_start;
}

// Per-sample randomness for one training view.
struct DrawSeeds {
    std::uint64_t mask = 0;
    std::uint64_t ana = 0;
};

struct PipelineOut {
    nn::Var fs;
    bool has_pda = false;
    PdaOutputs pda;
    nn::Var ctx;      // 2 x C conditioning fed to the sampler
    nn::Var dec_in;   // tokens the score decoder reads
    nn::Var score;    // 1 x 1
    bool sampled = false;
    nn::Var sampler_in;  // state entering the sampler
    nn::Var f0;          // state leaving the sampler
};

struct PipeProbes {
    std::vector<Eigen::MatrixXd>* enc_attns = nullptr;
    DdimResult* ddim = nullptr;
};

// The student forward pass shared by training and evaluation. Masking only
// happens when `training` is set; evaluation is deterministic given seeds.
PipelineOut student_pipeline(nn::Tape& tape, const Student& st, const Image& img,
                             bool training, const DrawSeeds& seeds,
                             int n_steps_override = -1,
                             const PipeProbes* probes = nullptr) {
    const auto& tr = st.run_cfg.training;
    const ModelConfig& mc = st.model_cfg;
    PipelineOut out;

    FeatureMap feat =
        encode(tape, st.store, mc, img, probes ? probes->enc_attns : nullptr);
    out.fs = feat.tokens;
    out.dec_in = feat.tokens;

    const int c = mc.embed_dim;
    out.ctx = tape.input(nn::Mat::Zero(2, c));
    if (tr.use_pda) {
        const MaskConfig mask{st.run_cfg.pda.beta_mask, training};
        out.pda = run_pda(tape, st.store, st.bank, feat.tokens, mask,
                          st.run_cfg.pda.tau, seeds.mask);
        out.has_pda = true;
        if (tr.use_ppa) out.ctx = out.pda.ctx;
    }

    if (tr.use_pdr) {
        nn::Var fh = feat.tokens;
        if (tr.use_pda) {
            fh = run_ppf(tape, st.store, feat.tokens, out.pda.prior_d,
                         out.pda.prior_q, st.run_cfg.ppf.norm_eps);
        }
        nn::Var ft = fh;
        if (tr.use_ana) ft = align_noise(tape, st.store, fh, seeds.ana).ft;
        const int n_steps =
            n_steps_override > 0 ? n_steps_override : st.run_cfg.diffusion.n_steps;
        const auto eps_fn = make_denoiser_eps_fn(st.store, mc.grid(), mc.grid());
        DdimResult dd =
            ddim_sample(tape, ft, out.ctx, effective_t_start(st.run_cfg), n_steps,
                        st.schedule, eps_fn, tr.stop_grad_sampling);
        out.sampled = true;
        out.sampler_in = ft;
        out.f0 = dd.f0;
        out.dec_in = dd.f0;
        if (probes && probes->ddim) *probes->ddim = dd;
    }

    out.score = decode_score(tape, st.store, mc,
                             FeatureMap{out.dec_in, mc.grid(), mc.grid()});
    return out;
}

void check_bank_match(const Student& st, const Teacher& teacher) {
    if (st.bank.content_hash() != teacher.bank.content_hash())
        throw ArgumentError("teacher and student prompt banks differ");
}

std::vector<int> manifest_sources(const CorpusManifest& manifest) {
    std::set<int> s;
    for (const auto& r : manifest.records) s.insert(source_index(source_of(r.id)));
    return {s.begin(), s.end()};
}

double moment_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double moment_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = moment_mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

void finish_cell(AblationCell& cell) {
    cell.srcc_mean = moment_mean(cell.srcc_seeds);
    cell.srcc_std = moment_std(cell.srcc_seeds);
    cell.plcc_mean = moment_mean(cell.plcc_seeds);
    cell.plcc_std = moment_std(cell.plcc_seeds);
}

nlohmann::json cell_json(const AblationCell& cell) {
    nlohmann::json j;
    j["label"] = cell.label;
    j["srcc_seeds"] = cell.srcc_seeds;
    j["plcc_seeds"] = cell.plcc_seeds;
    j["srcc_mean"] = cell.srcc_mean;
    j["srcc_std"] = cell.srcc_std;
    j["plcc_mean"] = cell.plcc_mean;
    j["plcc_std"] = cell.plcc_std;
    if (!cell.fea_before_seeds.empty()) {
        j["fea_before_seeds"] = cell.fea_before_seeds;
        j["fea_after_seeds"] = cell.fea_after_seeds;
    }
    return j;
}

void print_grid(std::ostringstream& out, const std::string& title,
                const std::vector<AblationCell>& grid) {
    out << title << "\n";
    std::size_t width = 12;
    for (const auto& c : grid) width = std::max(width, c.label.size() + 2);
    out << std::string(width, ' ') << "  SRCC (mean +/- std)   PLCC (mean +/- std)\n";
    char buf[96];
    for (const auto& c : grid) {
        std::snprintf(buf, sizeof(buf), "%-*s  %7.4f +/- %6.4f   %7.4f +/- %6.4f\n",
                      static_cast<int>(width), c.label.c_str(), c.srcc_mean,
                      c.srcc_std, c.plcc_mean, c.plcc_std);
        out << buf;
    }
    out << "\n";
}

}  // namespace

double LossBundle::total() const {
    require_finite(l_kl, "kl loss");
    require_finite(l_ldm, "denoiser loss");
    require_finite(l_fea, "feature loss");
    require_finite(l_reg, "score regression loss");
    return lambda1 * l_kl + lambda2 * l_ldm + lambda3 * l_fea + l_reg;
}

Student make_student(const RunConfig& cfg, std::uint64_t seed) {
    Student st;
    st.run_cfg = cfg;
    st.run_cfg.seed = seed;
    st.run_cfg.validate();
    st.model_cfg = model_config_from(st.run_cfg);
    st.bank = bank_from(st.run_cfg);
    st.schedule = make_schedule(cfg.diffusion.t_train, cfg.diffusion.beta_start,
                                cfg.diffusion.beta_end);

    const auto& tr = st.run_cfg.training;
    Rng rng(derive_seed(seed, "student-init"));
    add_encoder_params(st.store, st.model_cfg, rng);
    if (tr.use_pda) add_pda_params(st.store, st.model_cfg.embed_dim, rng);
    add_decoder_params(st.store, st.model_cfg, rng);
    if (tr.use_pda && tr.use_pdr) add_ppf_params(st.store, st.model_cfg.embed_dim, rng);
    if (tr.use_pdr) {
        add_denoiser_params(st.store, st.model_cfg.embed_dim,
                            st.run_cfg.diffusion.bottleneck_ratio, rng);
        if (tr.use_ana) add_ana_params(st.store, st.model_cfg.embed_dim, rng);
    }
    return st;
}

Student train_student(const CorpusManifest& train, const std::string& root_dir,
                      const Teacher& teacher, const RunConfig& cfg,
                      std::uint64_t seed, const std::string& log_csv,
                      TrainStats* stats, const PseudoLabelCache* cache) {
    if (train.records.empty()) throw ArgumentError("student train manifest is empty");

    Student st = make_student(cfg, seed);
    check_bank_match(st, teacher);
    st.teacher_hash = teacher_identity(teacher);
    st.train_source_ids = manifest_sources(train);

    const std::uint64_t teacher_params_before = teacher.store.content_hash();
    const std::uint64_t bank_before = st.bank.content_hash();

    const auto samples = load_samples(train, root_dir);
    std::vector<TeacherOutputs> pseudo;
    pseudo.reserve(samples.size());
    for (const auto& s : samples)
        pseudo.push_back(cached_pseudo_labels(teacher, s.pixels, s.id, cache));

    const auto& tr = st.run_cfg.training;
    const ModelConfig& mc = st.model_cfg;
    const int n = static_cast<int>(samples.size());
    const std::uint64_t order_root = derive_seed(seed, "student-order");
    const std::uint64_t mask_root = derive_seed(seed, "student-mask");
    const std::uint64_t ana_root = derive_seed(seed, "student-ana");
    const std::uint64_t traj_root = derive_seed(seed, "student-traj");

    std::ofstream log;
    if (!log_csv.empty()) {
        if (const fs::path dir = fs::path(log_csv).parent_path(); !dir.empty())
            fs::create_directories(dir);
        log.open(log_csv, std::ios::trunc);
        if (!log) throw IoError("cannot open training log: " + log_csv);
        log << "epoch,step,l_kl,l_ldm,l_fea,l_reg,total,grad_norm,lr\n";
    }

    AdamW opt(st.store.size());
    std::vector<double> grad(st.store.size(), 0.0);
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    int global_step = 0;

    for (int epoch = 0; epoch < tr.epochs; ++epoch) {
        double lr = tr.lr;
        if (epoch >= 2 * tr.epochs / 3) lr = tr.lr * 0.01;
        else if (epoch >= tr.epochs / 3) lr = tr.lr * 0.1;

        Rng order_rng(derive_seed(order_root, static_cast<std::uint64_t>(epoch)));
        order_rng.shuffle(order);
        double epoch_sum = 0.0;

        for (int start = 0; start < n; start += tr.batch_size) {
            const int bn = std::min(tr.batch_size, n - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            LossBundle batch{0, 0, 0, 0, tr.lambda1, tr.lambda2, tr.lambda3};

            for (int b = 0; b < bn; ++b) {
                const int si = order[start + b];
                const auto& s = samples[si];
                const TeacherOutputs& tea = pseudo[si];
                const std::uint64_t epoch_si =
                    derive_seed(static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(si));

                nn::Tape tape;
                DrawSeeds seeds;
                seeds.mask = derive_seed(mask_root, epoch_si);
                seeds.ana = derive_seed(ana_root, epoch_si);
                auto pipe = student_pipeline(tape, st, s.pixels, true, seeds);

                nn::Var loss = tape.l1_loss(pipe.score, s.mos);
                const double reg_v = tape.value(loss)(0, 0);
                double kl_v = 0.0, ldm_v = 0.0, fea_v = 0.0;

                if (pipe.has_pda) {
                    nn::Var kl = tape.add(
                        kl_loss(tape, tea.p_d, pipe.pda.probs_d, PriorBranch::distortion),
                        kl_loss(tape, tea.p_q, pipe.pda.probs_q, PriorBranch::quality));
                    kl_v = tape.value(kl)(0, 0);
                    loss = tape.add(loss, tape.scale(kl, tr.lambda1));
                }
                if (pipe.sampled) {
                    Rng traj_rng(derive_seed(traj_root, epoch_si));
                    const int t = 1 + static_cast<int>(traj_rng.uniform_index(
                                          st.run_cfg.diffusion.t_train));
                    const nn::Mat eps =
                        gaussian_mat(mc.n_tokens(), mc.embed_dim, traj_rng);
                    nn::Var xt = forward_diffuse(tape, tape.input(tea.f_tea), t, eps,
                                                 st.schedule);
                    nn::Var tea_ctx = tape.input(
                        (tr.use_pda && tr.use_ppa) ? tea.e_ada_tea
                                                   : nn::Mat::Zero(2, mc.embed_dim));
                    nn::Var eps_hat = predict_noise(tape, st.store, xt, tea_ctx, t,
                                                    mc.grid(), mc.grid());
                    nn::Var ldm = ldm_loss(tape, eps_hat, eps);
                    ldm_v = tape.value(ldm)(0, 0);
                    loss = tape.add(loss, tape.scale(ldm, tr.lambda2));

                    nn::Var fea = fea_loss(tape, pipe.f0, tea.f_tea);
                    fea_v = tape.value(fea)(0, 0);
                    loss = tape.add(loss, tape.scale(fea, tr.lambda3));
                }

                tape.backward(loss);
                tape.collect_param_grads(grad);
                batch.l_kl += kl_v;
                batch.l_ldm += ldm_v;
                batch.l_fea += fea_v;
                batch.l_reg += reg_v;
            }

            batch.l_kl /= bn;
            batch.l_ldm /= bn;
            batch.l_fea /= bn;
            batch.l_reg /= bn;

            double total = 0.0;
            try {
                total = batch.total();
            } catch (const TrainingDivergenceError&) {
                if (!log_csv.empty()) {
                    nlohmann::json snap;
                    snap["epoch"] = epoch;
                    snap["step"] = global_step;
                    snap["l_kl"] = batch.l_kl;
                    snap["l_ldm"] = batch.l_ldm;
                    snap["l_fea"] = batch.l_fea;
                    snap["l_reg"] = batch.l_reg;
                    snap["grad_norm"] = nn::flat_norm(grad);
                    snap["param_norm"] = nn::flat_norm(std::vector<double>(
                        st.store.flat().begin(), st.store.flat().end()));
                    std::ofstream snap_out(log_csv + ".diverged.json");
                    snap_out << snap.dump(2) << "\n";
                }
                throw TrainingDivergenceError(
                    "student loss non-finite at epoch " + std::to_string(epoch) +
                    ", step " + std::to_string(global_step));
            }

            for (double& g : grad) g /= bn;
            const double grad_norm = clip_grad_norm(grad, tr.clip_norm);
            opt.step(st.store.flat(), grad, lr, tr.weight_decay);
            epoch_sum += total * bn;

            if (stats || !log_csv.empty()) {
                TrainLogRow row;
                row.epoch = epoch;
                row.step = global_step;
                row.losses = batch;
                row.grad_norm = grad_norm;
                row.lr = lr;
                if (stats) stats->rows.push_back(row);
                if (!log_csv.empty()) {
                    log << epoch << ',' << global_step << ',' << format_double(batch.l_kl)
                        << ',' << format_double(batch.l_ldm) << ','
                        << format_double(batch.l_fea) << ',' << format_double(batch.l_reg)
                        << ',' << format_double(total) << ',' << format_double(grad_norm)
                        << ',' << format_double(lr) << "\n";
                }
            }
            ++global_step;
        }
        if (stats) stats->epoch_loss.push_back(epoch_sum / n);
    }

    const bool teacher_ok = teacher.store.content_hash() == teacher_params_before;
    const bool bank_ok = st.bank.content_hash() == bank_before;
    if (stats) {
        stats->teacher_frozen_ok = teacher_ok;
        stats->bank_frozen_ok = bank_ok;
    }
    if (!teacher_ok)
        throw TrainingDivergenceError("teacher parameters changed during student training");
    if (!bank_ok)
        throw TrainingDivergenceError("prompt bank changed during student training");
    return st;
}

double predict_score(const Student& student, const Image& img,
                     const std::string& image_id) {
    nn::Tape tape;
    DrawSeeds seeds;
    seeds.mask = 0;
    seeds.ana = derive_seed(derive_seed(student.run_cfg.seed, "eval-ana"),
                            hash_bytes(image_id.data(), image_id.size()));
    const auto pipe = student_pipeline(tape, student, img, false, seeds);
    return tape.value(pipe.score)(0, 0);
}

PipelineTrace trace_pipeline(const Student& student, const Image& img,
                             const std::string& image_id) {
    const ModelConfig& mc = student.model_cfg;
    nn::Tape tape;
    DrawSeeds seeds;
    seeds.mask = 0;
    seeds.ana = derive_seed(derive_seed(student.run_cfg.seed, "eval-ana"),
                            hash_bytes(image_id.data(), image_id.size()));

    std::vector<Eigen::MatrixXd> enc_attns;
    DdimResult dd;
    PipeProbes probes{&enc_attns, &dd};
    const auto pipe = student_pipeline(tape, student, img, false, seeds, -1, &probes);

    PipelineTrace out;
    out.f_s = tape.value(pipe.fs);
    out.sampled = pipe.sampled;
    out.sampler_in = tape.value(pipe.sampled ? pipe.sampler_in : pipe.fs);
    out.f0 = tape.value(pipe.dec_in);
    out.score = tape.value(pipe.score)(0, 0);
    if (pipe.sampled) {
        out.timesteps = dd.timesteps;
        out.state_norms = dd.state_norms;
        out.states.reserve(dd.states.size());
        for (const auto& s : dd.states) out.states.push_back(tape.value(s));
    }

    const Eigen::MatrixXd rollout = attention_rollout(enc_attns);
    const int g = mc.grid();
    auto query_map = [&](const Eigen::MatrixXd& tokens) {
        nn::Tape probe_tape;
        Eigen::MatrixXd row;
        (void)decode_score(probe_tape, student.store, mc,
                           FeatureMap{probe_tape.input(tokens), g, g}, &row);
        const Eigen::RowVectorXd flat = row * rollout;
        Eigen::MatrixXd map(g, g);
        for (int r = 0; r < g; ++r)
            for (int c = 0; c < g; ++c) map(r, c) = flat(r * g + c);
        return map;
    };
    out.attn_before = query_map(out.sampler_in);
    out.attn_after = query_map(out.f0);
    return out;
}

EvalReport evaluate(const Student& student, const Teacher& teacher,
                    const CorpusManifest& manifest, const std::string& root_dir,
                    int n_steps_override) {
    if (manifest.records.empty()) throw ArgumentError("evaluation manifest is empty");
    check_bank_match(student, teacher);
    if (teacher_identity(teacher) != student.teacher_hash)
        throw ArgumentError("student was distilled from a different teacher");
    if (n_steps_override > 0 && n_steps_override > effective_t_start(student.run_cfg) + 1)
        throw ArgumentError("n_steps override exceeds the sampling start timestep");

    std::set<int> train_ids(student.train_source_ids.begin(),
                            student.train_source_ids.end());
    for (const int src : manifest_sources(manifest)) {
        if (train_ids.count(src))
            throw ArgumentError(
                "evaluation manifest shares source " + std::to_string(src) +
                " with the training split");
    }

    const auto samples = load_samples(manifest, root_dir);
    EvalReport report;
    report.n = static_cast<int>(samples.size());
    report.config_fingerprint = student.run_cfg.fingerprint();

    double fea_before_sum = 0.0;
    double fea_after_sum = 0.0;
    int fea_n = 0;
    for (const auto& s : samples) {
        nn::Tape tape;
        DrawSeeds seeds;
        seeds.mask = 0;
        seeds.ana = derive_seed(derive_seed(student.run_cfg.seed, "eval-ana"),
                                hash_bytes(s.id.data(), s.id.size()));
        const auto pipe =
            student_pipeline(tape, student, s.pixels, false, seeds, n_steps_override);
        report.preds.push_back(tape.value(pipe.score)(0, 0));
        report.targets.push_back(s.mos);

        if (pipe.sampled) {
            const auto tea = teacher_pseudo_labels(teacher, s.pixels);
            const auto& before = tape.value(pipe.sampler_in);
            const auto& after = tape.value(pipe.f0);
            fea_before_sum += (before - tea.f_tea).squaredNorm() / before.size();
            fea_after_sum += (after - tea.f_tea).squaredNorm() / after.size();
            ++fea_n;
        }
    }

    report.srcc = pfd::srcc(report.preds, report.targets);
    report.plcc = pfd::plcc(report.preds, report.targets);
    if (fea_n > 0) {
        report.fea_before = fea_before_sum / fea_n;
        report.fea_after = fea_after_sum / fea_n;
    }
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::json j;
    j["srcc"] = report.srcc;
    j["plcc"] = report.plcc;
    j["n"] = report.n;
    j["fea_before"] = report.fea_before;
    j["fea_after"] = report.fea_after;
    j["config_fingerprint"] = report.config_fingerprint;
    j["preds"] = report.preds;
    j["targets"] = report.targets;
    return j.dump(2) + "\n";
}

void save_student(Student& student, const std::string& path) {
    CheckpointMeta meta;
    meta.kind = "student";
    meta.config_canonical = student.run_cfg.canonical();
    meta.prompt_bank_hash = hash_hex(student.bank.content_hash());
    meta.teacher_hash = student.teacher_hash;
    meta.train_source_ids = student.train_source_ids;
    save_checkpoint(path, meta, student.store);
    student.archive_hash = file_hash_hex(path);
}

Student load_student(const std::string& path) {
    auto loaded = load_checkpoint(path);
    if (loaded.meta.kind != "student")
        throw ArgumentError("archive is not a student checkpoint: " + path);

    const RunConfig cfg = parse_config(loaded.meta.config_canonical);
    Student st = make_student(cfg, cfg.seed);
    if (hash_hex(st.bank.content_hash()) != loaded.meta.prompt_bank_hash)
        throw IoError("student archive prompt bank does not match its config: " + path);

    if (st.store.num_tensors() != loaded.store.num_tensors())
        throw IoError("student archive has unexpected tensor set: " + path);
    for (std::size_t i = 0; i < st.store.num_tensors(); ++i) {
        const auto& a = st.store.entries()[i];
        const auto& b = loaded.store.entries()[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
            throw IoError("student archive tensor mismatch at " + a.name + ": " + path);
    }

    st.store = std::move(loaded.store);
    st.teacher_hash = loaded.meta.teacher_hash;
    st.train_source_ids = loaded.meta.train_source_ids;
    st.archive_hash = file_hash_hex(path);
    return st;
}

AblationReport run_ablation(const RunConfig& base, const CorpusManifest& manifest,
                            const std::string& root_dir,
                            const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir) {
    if (seeds.empty()) throw ArgumentError("ablation needs at least one seed");
    base.validate();

    auto [train, test] = split_dataset(manifest, base.corpus.train_frac, base.seed);

    struct Variant {
        std::string label;
        bool pda, pdr, ana, ppa;
    };
    const std::vector<Variant> module_rows = {
        {"baseline", false, false, false, false},
        {"prior-discovery only", true, false, true, true},
        {"denoising only", false, true, true, true},
        {"full", true, true, true, true},
    };
    const std::vector<Variant> blend_rows = {
        {"full", true, true, true, true},
        {"no noise alignment", true, true, false, true},
        {"no prompt conditioning", true, true, true, false},
        {"neither", true, true, false, false},
    };
    const std::vector<int> step_counts = {1, 3, 5, 10};

    AblationReport report;
    report.seeds = seeds;
    report.config_fingerprint = base.fingerprint();
    report.module_grid.resize(module_rows.size());
    report.blend_grid.resize(blend_rows.size());
    report.steps_grid.resize(step_counts.size());
    for (std::size_t i = 0; i < module_rows.size(); ++i)
        report.module_grid[i].label = module_rows[i].label;
    for (std::size_t i = 0; i < blend_rows.size(); ++i)
        report.blend_grid[i].label = blend_rows[i].label;
    for (std::size_t i = 0; i < step_counts.size(); ++i)
        report.steps_grid[i].label = std::to_string(step_counts[i]) + " steps";

    for (const std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.seed = seed;
        const Teacher teacher = train_teacher(train, root_dir, cfg, seed, nullptr);

        auto train_variant = [&](const Variant& v) {
            RunConfig vc = cfg;
            vc.training.use_pda = v.pda;
            vc.training.use_pdr = v.pdr;
            vc.training.use_ana = v.ana;
            vc.training.use_ppa = v.ppa;
            return train_student(train, root_dir, teacher, vc, seed, "", nullptr,
                                 nullptr);
        };

        Student full_student = train_variant(module_rows.back());
        for (std::size_t i = 0; i < module_rows.size(); ++i) {
            Student st = (i + 1 == module_rows.size()) ? full_student
                                                       : train_variant(module_rows[i]);
            const EvalReport r = evaluate(st, teacher, test, root_dir);
            report.module_grid[i].srcc_seeds.push_back(r.srcc);
            report.module_grid[i].plcc_seeds.push_back(r.plcc);
            if (i + 1 == module_rows.size()) {
                report.module_grid[i].fea_before_seeds.push_back(r.fea_before);
                report.module_grid[i].fea_after_seeds.push_back(r.fea_after);
            }
        }
        for (std::size_t i = 0; i < blend_rows.size(); ++i) {
            if (i == 0) {
                report.blend_grid[i].srcc_seeds =
                    report.module_grid.back().srcc_seeds;
                report.blend_grid[i].plcc_seeds =
                    report.module_grid.back().plcc_seeds;
                continue;
            }
            Student st = train_variant(blend_rows[i]);
            const EvalReport r = evaluate(st, teacher, test, root_dir);
            report.blend_grid[i].srcc_seeds.push_back(r.srcc);
            report.blend_grid[i].plcc_seeds.push_back(r.plcc);
        }
        for (std::size_t i = 0; i < step_counts.size(); ++i) {
            const EvalReport r =
                evaluate(full_student, teacher, test, root_dir, step_counts[i]);
            report.steps_grid[i].srcc_seeds.push_back(r.srcc);
            report.steps_grid[i].plcc_seeds.push_back(r.plcc);
        }
    }

    for (auto& c : report.module_grid) finish_cell(c);
    for (auto& c : report.blend_grid) finish_cell(c);
    for (auto& c : report.steps_grid) finish_cell(c);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream j(fs::path(out_dir) / "ablation.json");
        j << ablation_json(report);
        std::ofstream t(fs::path(out_dir) / "ablation_tables.txt");
        t << ablation_tables_text(report);
    }
    return report;
}

std::string ablation_json(const AblationReport& report) {
    nlohmann::json j;
    j["seeds"] = report.seeds;
    j["config_fingerprint"] = report.config_fingerprint;
    j["module_grid"] = nlohmann::json::array();
    for (const auto& c : report.module_grid) j["module_grid"].push_back(cell_json(c));
    j["blend_grid"] = nlohmann::json::array();
    for (const auto& c : report.blend_grid) j["blend_grid"].push_back(cell_json(c));
    j["steps_grid"] = nlohmann::json::array();
    for (const auto& c : report.steps_grid) j["steps_grid"].push_back(cell_json(c));
    return j.dump(2) + "\n";
}

std::string ablation_tables_text(const AblationReport& report) {
    std::ostringstream out;
    print_grid(out, "Module contributions (held-out correlation, mean over seeds)",
               report.module_grid);
    print_grid(out, "Noise alignment x prompt conditioning (full model)",
               report.blend_grid);
    // stability summary: average across-seed std with and without alignment
    double with_ana = 0.0, without_ana = 0.0;
    int nw = 0, nwo = 0;
    for (const auto& c : report.blend_grid) {
        const bool ana = c.label == "full" || c.label == "no prompt conditioning";
        (ana ? with_ana : without_ana) += c.srcc_std;
        (ana ? nw : nwo) += 1;
    }
    if (nw > 0 && nwo > 0) {
        char buf[96];
        std::snprintf(buf, sizeof(buf),
                      "Avg. Std.: with alignment %.4f, without %.4f\n\n",
                      with_ana / nw, without_ana / nwo);
        out << buf;
    }
    print_grid(out, "Sampling steps (full model, evaluation-time sweep)",
               report.steps_grid);
    return out.str();
}

}  // namespace pfd
