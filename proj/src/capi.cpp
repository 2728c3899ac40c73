#include "pfdiqa.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "pfdiqa/config.hpp"
#include "pfdiqa/corpus.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"
#include "pfdiqa/image.hpp"
#include "pfdiqa/plots.hpp"
#include "pfdiqa/teacher.hpp"
#include "pfdiqa/training.hpp"

struct pfd_config {
    pfd::RunConfig cfg;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

pfd_status fail(pfd_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
pfd_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return PFD_OK;
    } catch (const pfd::ArgumentError& e) {
        return fail(PFD_ERR_ARGUMENT, e.what());
    } catch (const pfd::IoError& e) {
        return fail(PFD_ERR_IO, e.what());
    } catch (const pfd::DegenerateInputError& e) {
        return fail(PFD_ERR_NUMERIC, e.what());
    } catch (const pfd::UndefinedCorrelationError& e) {
        return fail(PFD_ERR_NUMERIC, e.what());
    } catch (const pfd::TrainingDivergenceError& e) {
        return fail(PFD_ERR_DIVERGENCE, e.what());
    } catch (const std::exception& e) {
        return fail(PFD_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(PFD_ERR_INTERNAL, "unknown error");
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) throw pfd::ArgumentError(what);
}

std::string emit(char** out, const std::string& value) {
    if (out) {
        *out = dup_string(value);
        if (!*out) throw std::bad_alloc();
    }
    return value;
}

pfd::CorpusManifest manifest_of(const std::string& corpus_dir) {
    return pfd::load_manifest((fs::path(corpus_dir) / "manifest.csv").string());
}

std::vector<pfd::DistortionKind> kinds_of(const pfd::RunConfig& cfg) {
    if (cfg.corpus.kinds.empty()) return pfd::all_distortion_kinds();
    std::vector<pfd::DistortionKind> kinds;
    for (const auto& name : cfg.corpus.kinds) kinds.push_back(pfd::kind_from_name(name));
    return kinds;
}

// The split every command re-derives: same manifest, fraction and seed give
// the same train/test sides, so separately launched stages agree on it.
std::pair<pfd::CorpusManifest, pfd::CorpusManifest> split_of(
    const pfd::CorpusManifest& manifest, const pfd::RunConfig& cfg) {
    return pfd::split_dataset(manifest, cfg.corpus.train_frac, cfg.seed);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw pfd::IoError("failed writing " + path.string());
}

pfd::Image image_by_id(const pfd::CorpusManifest& manifest,
                       const std::string& corpus_dir, const std::string& id) {
    for (const auto& rec : manifest.records)
        if (rec.id == id)
            return pfd::read_png((fs::path(corpus_dir) / rec.path).string());
    throw pfd::ArgumentError("image id not in manifest: " + id);
}

nlohmann::json parse_json_file(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw pfd::IoError("cannot open " + what + ": " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw pfd::ArgumentError("malformed " + what + ": " + path);
    return j;
}

}  // namespace

extern "C" {

const char* pfd_version(void) { return "0.1.0"; }

const char* pfd_last_error(void) { return g_last_error.c_str(); }

void pfd_string_free(char* s) { std::free(s); }

pfd_status pfd_config_create(pfd_config** out) {
    return guarded([&] {
        require(out != nullptr, "out must not be null");
        *out = new pfd_config{};
    });
}

pfd_status pfd_config_load(const char* path, pfd_config** out) {
    return guarded([&] {
        require(path && out, "path and out must not be null");
        auto cfg = pfd::load_config_file(path);
        *out = new pfd_config{std::move(cfg)};
    });
}

pfd_status pfd_config_parse(const char* text, pfd_config** out) {
    return guarded([&] {
        require(text && out, "text and out must not be null");
        auto cfg = pfd::parse_config(text);
        *out = new pfd_config{std::move(cfg)};
    });
}

void pfd_config_free(pfd_config* cfg) { delete cfg; }

pfd_status pfd_config_set(pfd_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require(cfg && key && value, "cfg, key and value must not be null");
        pfd::apply_override(cfg->cfg, std::string(key) + "=" + value);
    });
}

pfd_status pfd_config_apply_env(pfd_config* cfg) {
    return guarded([&] {
        require(cfg != nullptr, "cfg must not be null");
        pfd::apply_env_overrides(cfg->cfg);
    });
}

pfd_status pfd_config_validate(const pfd_config* cfg) {
    return guarded([&] {
        require(cfg != nullptr, "cfg must not be null");
        cfg->cfg.validate();
    });
}

pfd_status pfd_config_canonical(const pfd_config* cfg, char** out_text) {
    return guarded([&] {
        require(cfg && out_text, "cfg and out_text must not be null");
        emit(out_text, cfg->cfg.canonical());
    });
}

pfd_status pfd_config_fingerprint(const pfd_config* cfg, char** out_hex) {
    return guarded([&] {
        require(cfg && out_hex, "cfg and out_hex must not be null");
        emit(out_hex, cfg->cfg.fingerprint());
    });
}

pfd_status pfd_run_dir_create(const pfd_config* cfg, const char* out_root,
                              const char* label, char** out_dir) {
    return guarded([&] {
        require(cfg && out_root && label && out_dir,
                "cfg, out_root, label and out_dir must not be null");
        const std::string name(label);
        require(!name.empty() && name.find('/') == std::string::npos,
                "label must be a non-empty path component");
        cfg->cfg.validate();

        const auto now = std::chrono::system_clock::now();
        const std::time_t tt = std::chrono::system_clock::to_time_t(now);
        std::tm tm{};
        gmtime_r(&tt, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);

        const std::string base =
            std::string(stamp) + "-" + name + "-" + cfg->cfg.fingerprint().substr(0, 12);
        fs::create_directories(out_root);
        fs::path dir;
        for (int counter = 1;; ++counter) {
            dir = fs::path(out_root) /
                  (counter == 1 ? base : base + "-" + std::to_string(counter));
            std::error_code ec;
            if (fs::create_directory(dir, ec)) break;
            if (ec) throw pfd::IoError("cannot create run directory " + dir.string() +
                                       ": " + ec.message());
        }
        write_text(dir / "config.toml", cfg->cfg.canonical());
        emit(out_dir, dir.string());
    });
}

pfd_status pfd_corpus_gen(const pfd_config* cfg, const char* out_dir,
                          char** out_manifest_path) {
    return guarded([&] {
        require(cfg && out_dir, "cfg and out_dir must not be null");
        const auto& rc = cfg->cfg;
        rc.validate();
        pfd::generate_corpus(rc.corpus.n_sources, kinds_of(rc), rc.seed, out_dir,
                             rc.corpus.image_size);
        emit(out_manifest_path, (fs::path(out_dir) / "manifest.csv").string());
    });
}

pfd_status pfd_train_teacher(const pfd_config* cfg, const char* corpus_dir,
                             const char* run_dir, char** out_ckpt_path) {
    return guarded([&] {
        require(cfg && corpus_dir && run_dir,
                "cfg, corpus_dir and run_dir must not be null");
        const auto& rc = cfg->cfg;
        rc.validate();
        const auto [train, test] = split_of(manifest_of(corpus_dir), rc);
        pfd::TeacherTrainStats stats;
        pfd::Teacher teacher =
            pfd::train_teacher(train, corpus_dir, rc, rc.seed, &stats);

        fs::create_directories(run_dir);
        std::ostringstream log;
        log << "epoch,loss\n";
        for (std::size_t e = 0; e < stats.epoch_loss.size(); ++e)
            log << e << ',' << pfd::format_double(stats.epoch_loss[e]) << "\n";
        write_text(fs::path(run_dir) / "teacher_log.csv", log.str());

        const std::string ckpt = (fs::path(run_dir) / "teacher.ckpt").string();
        pfd::save_teacher(teacher, ckpt);
        emit(out_ckpt_path, ckpt);
    });
}

pfd_status pfd_train_student(const pfd_config* cfg, const char* corpus_dir,
                             const char* teacher_ckpt, const char* run_dir,
                             char** out_ckpt_path) {
    return guarded([&] {
        require(cfg && corpus_dir && teacher_ckpt && run_dir,
                "cfg, corpus_dir, teacher_ckpt and run_dir must not be null");
        const auto& rc = cfg->cfg;
        rc.validate();
        const pfd::Teacher teacher = pfd::load_teacher(teacher_ckpt);
        const auto [train, test] = split_of(manifest_of(corpus_dir), rc);

        fs::create_directories(run_dir);
        pfd::TrainStats stats;
        pfd::Student student = pfd::train_student(
            train, corpus_dir, teacher, rc, rc.seed,
            (fs::path(run_dir) / "train_log.csv").string(), &stats);

        nlohmann::json j;
        j["epoch_loss"] = stats.epoch_loss;
        j["teacher_frozen_ok"] = stats.teacher_frozen_ok;
        j["bank_frozen_ok"] = stats.bank_frozen_ok;
        write_text(fs::path(run_dir) / "train_stats.json", j.dump(2) + "\n");

        const std::string ckpt = (fs::path(run_dir) / "student.ckpt").string();
        pfd::save_student(student, ckpt);
        emit(out_ckpt_path, ckpt);
    });
}

pfd_status pfd_eval(const char* student_ckpt, const char* teacher_ckpt,
                    const char* corpus_dir, const char* run_dir,
                    int n_steps_override, double* out_srcc, double* out_plcc) {
    return guarded([&] {
        require(student_ckpt && teacher_ckpt && corpus_dir,
                "student_ckpt, teacher_ckpt and corpus_dir must not be null");
        const pfd::Student student = pfd::load_student(student_ckpt);
        const pfd::Teacher teacher = pfd::load_teacher(teacher_ckpt);
        const auto [train, test] =
            split_of(manifest_of(corpus_dir), student.run_cfg);
        const pfd::EvalReport report =
            pfd::evaluate(student, teacher, test, corpus_dir, n_steps_override);
        if (run_dir && *run_dir) {
            fs::create_directories(run_dir);
            write_text(fs::path(run_dir) / "eval_report.json",
                       pfd::eval_report_json(report));
        }
        if (out_srcc) *out_srcc = report.srcc;
        if (out_plcc) *out_plcc = report.plcc;
    });
}

pfd_status pfd_ablate(const pfd_config* cfg, const char* corpus_dir,
                      const uint64_t* seeds, size_t n_seeds, const char* run_dir) {
    return guarded([&] {
        require(cfg && corpus_dir && run_dir,
                "cfg, corpus_dir and run_dir must not be null");
        require(seeds != nullptr && n_seeds > 0, "seeds must not be empty");
        const std::vector<std::uint64_t> seed_list(seeds, seeds + n_seeds);
        pfd::run_ablation(cfg->cfg, manifest_of(corpus_dir), corpus_dir, seed_list,
                          run_dir);
    });
}

pfd_status pfd_plot_attention(const char* student_ckpt, const char* corpus_dir,
                              const char* image_id, const char* out_png) {
    return guarded([&] {
        require(student_ckpt && corpus_dir && image_id && out_png,
                "student_ckpt, corpus_dir, image_id and out_png must not be null");
        const pfd::Student student = pfd::load_student(student_ckpt);
        const pfd::Image img =
            image_by_id(manifest_of(corpus_dir), corpus_dir, image_id);
        const auto trace = pfd::trace_pipeline(student, img, image_id);
        pfd::write_attention_panels(trace, img, out_png);
    });
}

pfd_status pfd_plot_trajectory(const char* student_ckpt, const char* teacher_ckpt,
                               const char* corpus_dir, const char* image_id,
                               const char* out_csv) {
    return guarded([&] {
        require(student_ckpt && teacher_ckpt && corpus_dir && image_id && out_csv,
                "student_ckpt, teacher_ckpt, corpus_dir, image_id and out_csv "
                "must not be null");
        const pfd::Student student = pfd::load_student(student_ckpt);
        const pfd::Teacher teacher = pfd::load_teacher(teacher_ckpt);
        const pfd::Image img =
            image_by_id(manifest_of(corpus_dir), corpus_dir, image_id);
        pfd::write_trajectory_csv(student, teacher, img, image_id, out_csv);
    });
}

pfd_status pfd_plot_scatter(const char* eval_report_json, const char* out_svg) {
    return guarded([&] {
        require(eval_report_json && out_svg,
                "eval_report_json and out_svg must not be null");
        const auto j = parse_json_file(eval_report_json, "eval report");
        pfd::EvalReport report;
        try {
            report.srcc = j.at("srcc").get<double>();
            report.plcc = j.at("plcc").get<double>();
            report.n = j.at("n").get<int>();
            report.preds = j.at("preds").get<std::vector<double>>();
            report.targets = j.at("targets").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw pfd::ArgumentError(std::string("malformed eval report: ") + e.what());
        }
        pfd::write_score_scatter_svg(report, out_svg);
    });
}

pfd_status pfd_plot_steps(const char* ablation_json, const char* out_svg) {
    return guarded([&] {
        require(ablation_json && out_svg, "ablation_json and out_svg must not be null");
        const auto j = parse_json_file(ablation_json, "ablation report");
        std::vector<pfd::AblationCell> cells;
        try {
            for (const auto& cj : j.at("steps_grid")) {
                pfd::AblationCell cell;
                cell.label = cj.at("label").get<std::string>();
                cell.srcc_mean = cj.at("srcc_mean").get<double>();
                cell.srcc_std = cj.at("srcc_std").get<double>();
                cells.push_back(std::move(cell));
            }
        } catch (const nlohmann::json::exception& e) {
            throw pfd::ArgumentError(std::string("malformed ablation report: ") +
                                     e.what());
        }
        pfd::write_steps_chart_svg(cells, out_svg);
    });
}

pfd_status pfd_file_hash(const char* path, char** out_hex) {
    return guarded([&] {
        require(path && out_hex, "path and out_hex must not be null");
        emit(out_hex, pfd::file_hash_hex(path));
    });
}

}  // extern "C"
