#ifndef EVIDENT_EVIDENT_H
#define EVIDENT_EVIDENT_H

/* C interface to the evident pipeline. All strings are UTF-8 and
 * NUL-terminated. Functions return an evd_status; on failure
 * evd_last_error() describes the most recent error on the calling thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define EVD_API __attribute__((visibility("default")))
#else
#define EVD_API
#endif

typedef enum evd_status {
  EVD_OK = 0,
  EVD_ERR_DOMAIN = 1,   /* input outside the domain of an operation */
  EVD_ERR_CONTRACT = 2, /* shapes, schemas or pipeline preconditions */
  EVD_ERR_IO = 3,
  EVD_ERR_CONFIG = 4,
  EVD_ERR_NUMERIC = 5,  /* non-finite loss or divergence */
  EVD_ERR_INTERNAL = 6,
  EVD_ERR_ARGUMENT = 7  /* null handle or pointer */
} evd_status;

typedef struct evd_experiment evd_experiment;

typedef void (*evd_log_fn)(const char* message, void* user);

EVD_API const char* evd_version(void);
EVD_API const char* evd_status_name(evd_status s);
EVD_API const char* evd_last_error(void);

/* Default configuration as JSON. The string lives until the next call on
 * this thread. */
EVD_API const char* evd_default_config(void);

/* Open from a JSON config file or text. A NULL or empty workdir falls back
 * to $EVIDENT_WORKDIR, then the current directory. */
EVD_API evd_status evd_experiment_open(const char* config_path, const char* workdir, evd_experiment** out);
EVD_API evd_status evd_experiment_open_json(const char* config_json, const char* workdir, evd_experiment** out);
EVD_API void evd_experiment_close(evd_experiment* e);

/* Replace the master seed. */
EVD_API evd_status evd_experiment_set_seed(evd_experiment* e, uint64_t seed);

/* Override one config value by dotted key, e.g. "classifier.epochs" = "5".
 * The value is parsed as JSON, falling back to a plain string. */
EVD_API evd_status evd_experiment_set_option(evd_experiment* e, const char* key, const char* value);

EVD_API evd_status evd_experiment_set_logger(evd_experiment* e, evd_log_fn fn, void* user);

/* Run a subcommand: synth-data, translate-train, convert, classify-train,
 * filter-retrain, evaluate, sweep-threshold. */
EVD_API evd_status evd_experiment_run(evd_experiment* e, const char* command);

/* JSON summary of the last successful run; valid until the next run or close. */
EVD_API const char* evd_experiment_summary(const evd_experiment* e);

/* Effective configuration as JSON; valid until the next call on the handle. */
EVD_API const char* evd_experiment_config(evd_experiment* e);

/* Subjective-logic opinion from k evidence values: belief[k] and the
 * uncertainty mass u = k / S. */
EVD_API evd_status evd_opinion(const double* evidence, size_t k, double* belief, double* uncertainty);

#ifdef __cplusplus
}
#endif

#endif
