/* otml — optimal-transport self-supervised pretraining, C API.
 *
 * Every entry point returns an otml_status; OTML_OK is 0. On failure,
 * otml_last_error() returns a thread-local message describing what went
 * wrong. Handles are opaque and freed with their _destroy function.
 */
#ifndef OTML_H
#define OTML_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum otml_status {
  OTML_OK = 0,
  OTML_ERR_INVALID_ARGUMENT = 1, /* bad shapes, handles, preconditions */
  OTML_ERR_CONFIG = 2,           /* unknown keys, unparsable values */
  OTML_ERR_IO = 3,               /* filesystem failures */
  OTML_ERR_FORMAT = 4,           /* malformed PGM / checkpoint / problem file */
  OTML_ERR_NUMERIC = 5,          /* NaN/Inf, domain violations */
  OTML_ERR_CONVERGENCE = 6,      /* solver hit its iteration budget */
  OTML_ERR_UNKNOWN = 7
} otml_status;

const char* otml_status_name(otml_status status);
const char* otml_last_error(void);
const char* otml_version(void);

/* ---- configuration ----------------------------------------------------- */

typedef struct otml_config otml_config;

otml_status otml_config_create(otml_config** out);
otml_status otml_config_load(otml_config* cfg, const char* path);
otml_status otml_config_set(otml_config* cfg, const char* key,
                            const char* value);
/* Copies the value into buf (NUL terminated). */
otml_status otml_config_get(const otml_config* cfg, const char* key, char* buf,
                            size_t cap);
/* Canonical rendering; *needed receives the full length including the NUL. */
otml_status otml_config_render(const otml_config* cfg, char* buf, size_t cap,
                               size_t* needed);
void otml_config_destroy(otml_config* cfg);

/* Registry of documented keys, for --help and drift tests. */
size_t otml_config_key_count(void);
otml_status otml_config_key_info(size_t index, const char** key,
                                 const char** default_value, const char** doc);

/* ---- synthetic data ------------------------------------------------------ */

/* Writes n PGM images plus labels.csv into out_dir. */
otml_status otml_gen_dataset(const char* out_dir, uint64_t n, uint32_t classes,
                             uint32_t size, uint64_t seed);

/* ---- pretraining --------------------------------------------------------- */

/* Runs the SSL loop on the train part of data_dir; writes the metrics CSV
 * (train.metrics) and the checkpoint. */
otml_status otml_pretrain(const otml_config* cfg, const char* data_dir,
                          const char* ckpt_out);

/* ---- evaluation ----------------------------------------------------------- */

#define OTML_MAX_CLASSES 16

typedef struct otml_probe_result {
  double accuracy;
  double mean_auc;
  double per_class_auc[OTML_MAX_CLASSES];
  uint32_t num_classes;
} otml_probe_result;

/* protocol: 0 frozen, 1 finetune. fraction in (0, 1]. */
otml_status otml_probe(const otml_config* cfg, const char* ckpt,
                       const char* data_dir, int protocol, double fraction,
                       otml_probe_result* out);

/* ---- transport solver ----------------------------------------------------- */

typedef struct otml_ot_plan otml_ot_plan;

/* cost is row-major d*d; mu and nu are positive and sum to 1.
 * use_oracle nonzero selects the exact simplex solver (epsilon ignored). */
otml_status otml_ot_solve(uint32_t d, const double* cost, const double* mu,
                          const double* nu, double epsilon, uint64_t max_iters,
                          double tol, int use_oracle, otml_ot_plan** out);

/* Problem file: line 1 d, then d rows of the cost matrix, then mu, then nu,
 * then epsilon. epsilon_override > 0 replaces the file value. */
otml_status otml_ot_solve_file(const char* path, double epsilon_override,
                               int use_oracle, otml_ot_plan** out);

uint32_t otml_ot_plan_dim(const otml_ot_plan* plan);
double otml_ot_plan_cost(const otml_ot_plan* plan);
uint64_t otml_ot_plan_iterations(const otml_ot_plan* plan);
double otml_ot_plan_marginal_error(const otml_ot_plan* plan);
/* Copies the d*d coupling into out. */
otml_status otml_ot_plan_matrix(const otml_ot_plan* plan, double* out);
void otml_ot_plan_destroy(otml_ot_plan* plan);

/* ---- gradient verification ------------------------------------------------ */

/* Runs the finite-difference suite. *passed receives 1/0; the per-op report
 * is copied into report (truncated to cap, always NUL terminated).
 * corrupt_op may name an op whose adjoint is deliberately perturbed, as a
 * negative control; pass NULL for the real check. */
otml_status otml_gradcheck(uint64_t seed, const char* corrupt_op, char* report,
                           size_t report_cap, int* passed);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* OTML_H */
