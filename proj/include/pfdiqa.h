#ifndef PFDIQA_H
#define PFDIQA_H

/* C interface to the blind image-quality-assessment pipeline: corpus
 * generation, teacher and student training, evaluation, ablation and figure
 * emission. All functions return a status code; on failure the thread-local
 * message from pfd_last_error() names the cause. Strings returned through
 * char** out-parameters are heap copies owned by the caller; release them
 * with pfd_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PFD_API __declspec(dllexport)
#else
#define PFD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pfd_status {
    PFD_OK = 0,
    PFD_ERR_ARGUMENT = 1,   /* invalid value, key, or precondition */
    PFD_ERR_IO = 2,         /* missing, unreadable or unwritable file */
    PFD_ERR_NUMERIC = 3,    /* degenerate input; undefined correlation */
    PFD_ERR_DIVERGENCE = 4, /* non-finite loss during training */
    PFD_ERR_INTERNAL = 5
} pfd_status;

/* Opaque run configuration (all pipeline parameters plus seed and output
 * root). Create/load one, adjust keys, pass it to the pipeline calls. */
typedef struct pfd_config pfd_config;

PFD_API const char* pfd_version(void);

/* Message of the most recent failing call on this thread; empty string when
 * the last call succeeded. The pointer stays valid until the next call. */
PFD_API const char* pfd_last_error(void);

PFD_API void pfd_string_free(char* s);

/* ---- configuration ---- */

PFD_API pfd_status pfd_config_create(pfd_config** out);
PFD_API pfd_status pfd_config_load(const char* path, pfd_config** out);
PFD_API pfd_status pfd_config_parse(const char* text, pfd_config** out);
PFD_API void pfd_config_free(pfd_config* cfg);

/* Sets one key addressed as "section.key" (e.g. "run.seed", "teacher.epochs",
 * "corpus.kinds"). Lists are comma-separated. Unknown keys are rejected. */
PFD_API pfd_status pfd_config_set(pfd_config* cfg, const char* key, const char* value);

/* Applies PFDIQA_SECTION__KEY environment overrides. */
PFD_API pfd_status pfd_config_apply_env(pfd_config* cfg);

PFD_API pfd_status pfd_config_validate(const pfd_config* cfg);
PFD_API pfd_status pfd_config_canonical(const pfd_config* cfg, char** out_text);
PFD_API pfd_status pfd_config_fingerprint(const pfd_config* cfg, char** out_hex);

/* ---- run directories ---- */

/* Creates <out_root>/<UTC stamp>-<label>-<fingerprint prefix>, suffixing a
 * counter instead of ever reusing an existing directory, and writes the
 * canonical config inside as config.toml. */
PFD_API pfd_status pfd_run_dir_create(const pfd_config* cfg, const char* out_root,
                                      const char* label, char** out_dir);

/* ---- pipeline ---- */

/* Renders the distortion corpus under out_dir (images/, manifest.csv,
 * manifest.json) and returns the manifest path. */
PFD_API pfd_status pfd_corpus_gen(const pfd_config* cfg, const char* out_dir,
                                  char** out_manifest_path);

/* Trains the pseudo-label teacher on the train side of the configured split
 * of <corpus_dir>/manifest.csv. Writes teacher.ckpt and teacher_log.csv under
 * run_dir and returns the checkpoint path. */
PFD_API pfd_status pfd_train_teacher(const pfd_config* cfg, const char* corpus_dir,
                                     const char* run_dir, char** out_ckpt_path);

/* Distills a student from a saved teacher on the same kind of split. Writes
 * student.ckpt, train_log.csv and train_stats.json under run_dir and returns
 * the checkpoint path. */
PFD_API pfd_status pfd_train_student(const pfd_config* cfg, const char* corpus_dir,
                                     const char* teacher_ckpt, const char* run_dir,
                                     char** out_ckpt_path);

/* Scores the held-out side of the split recorded in the student checkpoint
 * and correlates with oracle MOS. n_steps_override > 0 swaps the
 * sampling-step count. Writes eval_report.json under run_dir when run_dir is
 * non-empty. out_srcc/out_plcc may be NULL. */
PFD_API pfd_status pfd_eval(const char* student_ckpt, const char* teacher_ckpt,
                            const char* corpus_dir, const char* run_dir,
                            int n_steps_override, double* out_srcc, double* out_plcc);

/* Trains and evaluates the module/blend/steps ablation grids across seeds,
 * writing ablation.json and ablation_tables.txt under run_dir. */
PFD_API pfd_status pfd_ablate(const pfd_config* cfg, const char* corpus_dir,
                              const uint64_t* seeds, size_t n_seeds,
                              const char* run_dir);

/* ---- figures ---- */

/* Three-panel heatmap for one corpus image: input, decoder attention before
 * denoising, decoder attention after. */
PFD_API pfd_status pfd_plot_attention(const char* student_ckpt, const char* corpus_dir,
                                      const char* image_id, const char* out_png);

/* Per-step CSV of sampler state norms and teacher-feature distance. */
PFD_API pfd_status pfd_plot_trajectory(const char* student_ckpt, const char* teacher_ckpt,
                                       const char* corpus_dir, const char* image_id,
                                       const char* out_csv);

/* Predicted-score scatter from a saved eval_report.json. */
PFD_API pfd_status pfd_plot_scatter(const char* eval_report_json, const char* out_svg);

/* Sampling-steps line chart from a saved ablation.json. */
PFD_API pfd_status pfd_plot_steps(const char* ablation_json, const char* out_svg);

/* ---- utilities ---- */

PFD_API pfd_status pfd_file_hash(const char* path, char** out_hex);

#ifdef __cplusplus
}
#endif

#endif /* PFDIQA_H */
