/*
 * C interface to the ditf library.
 *
 * Every function returns a ditf_status. On failure the thread-local message
 * from ditf_last_error() describes the cause. Objects are opaque handles
 * released with their *_free function; strings returned through char** are
 * heap allocated and released with ditf_string_free.
 */
#ifndef DITF_DITF_H
#define DITF_DITF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DITF_BUILDING)
#    define DITF_API __declspec(dllexport)
#  else
#    define DITF_API __declspec(dllimport)
#  endif
#else
#  define DITF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ditf_status {
  DITF_OK = 0,
  DITF_E_INVALID_ARGUMENT = 1,
  DITF_E_IO = 2,
  DITF_E_BAD_MAGIC = 3,
  DITF_E_UNSUPPORTED_VERSION = 4,
  DITF_E_UNSUPPORTED_DTYPE = 5,
  DITF_E_TRUNCATED = 6,
  DITF_E_NON_FINITE = 7,
  DITF_E_DUPLICATE_NAME = 8,
  DITF_E_MALFORMED = 9,
  DITF_E_SHAPE_MISMATCH = 10,
  DITF_E_DEGENERATE_MEDIAN = 11,
  DITF_E_DEGENERATE_COVARIANCE = 12,
  DITF_E_NOT_FOUND = 13,
  DITF_E_STAGE_MISMATCH = 14,
  DITF_E_INTERNAL = 15
} ditf_status;

typedef struct ditf_container ditf_container;
typedef struct ditf_feature ditf_feature;
typedef struct ditf_params ditf_params;
typedef struct ditf_config ditf_config;

DITF_API const char* ditf_version(void);
DITF_API const char* ditf_status_name(ditf_status status);
DITF_API const char* ditf_last_error(void);
DITF_API void ditf_string_free(char* text);

/* --- containers --------------------------------------------------------- */

DITF_API ditf_status ditf_container_create(ditf_container** out);
DITF_API ditf_status ditf_container_read(const char* path, ditf_container** out);
DITF_API ditf_status ditf_container_write(const ditf_container* container, const char* path);
DITF_API void ditf_container_free(ditf_container* container);

DITF_API ditf_status ditf_container_add_tensor(ditf_container* container, const char* name, const float* data,
                                               size_t ndim, const uint64_t* shape);
DITF_API ditf_status ditf_container_entry_count(const ditf_container* container, size_t* count);
/* Pointers stay valid until the container is modified or freed. */
DITF_API ditf_status ditf_container_entry_name(const ditf_container* container, size_t index, const char** name);
DITF_API ditf_status ditf_container_entry_shape(const ditf_container* container, const char* name, size_t* ndim,
                                                const uint64_t** shape);
DITF_API ditf_status ditf_container_entry_data(const ditf_container* container, const char* name,
                                               const float** data, size_t* count);
DITF_API ditf_status ditf_container_set_meta(ditf_container* container, const char* key, const char* value);
DITF_API ditf_status ditf_container_get_meta(const ditf_container* container, const char* key, const char** value);

/* --- feature maps ------------------------------------------------------- */

DITF_API ditf_status ditf_feature_create(const float* data, size_t tokens, size_t channels, size_t grid_h,
                                         size_t grid_w, size_t image_h, size_t image_w, ditf_feature** out);
DITF_API ditf_status ditf_feature_from_container(const ditf_container* container, const char* entry,
                                                 ditf_feature** out);
DITF_API ditf_status ditf_feature_load(const char* path, const char* entry, ditf_feature** out);
DITF_API ditf_status ditf_feature_to_container(const ditf_feature* feature, ditf_container* container,
                                               const char* entry);
DITF_API ditf_status ditf_feature_shape(const ditf_feature* feature, size_t* tokens, size_t* channels);
DITF_API ditf_status ditf_feature_data(const ditf_feature* feature, const float** data);
/* Stage tag: "original", "pre_adaln", "post_adaln" or "" when unset. */
DITF_API ditf_status ditf_feature_stage(const ditf_feature* feature, const char** stage);
DITF_API ditf_status ditf_feature_set_stage(ditf_feature* feature, const char* stage);
DITF_API void ditf_feature_free(ditf_feature* feature);

/* --- modulation parameters and extraction config ------------------------ */

DITF_API ditf_status ditf_params_from_container(const ditf_container* container, ditf_params** out);
DITF_API ditf_status ditf_params_load(const char* path, ditf_params** out);
/* *data is NULL when the params carry no alpha. */
DITF_API ditf_status ditf_params_alpha(const ditf_params* params, const float** data, size_t* count);
DITF_API void ditf_params_free(ditf_params* params);

DITF_API ditf_status ditf_config_create(ditf_config** out);
/* JSON file with exactly: eps, discard_mode, discard_dims, tau, coverage_threshold. */
DITF_API ditf_status ditf_config_load(const char* path, ditf_config** out);
DITF_API ditf_status ditf_config_set_eps(ditf_config* config, double eps);
/* "none", "explicit_dims" or "auto". */
DITF_API ditf_status ditf_config_set_discard_mode(ditf_config* config, const char* mode);
DITF_API ditf_status ditf_config_set_discard_dims(ditf_config* config, const size_t* dims, size_t count);
DITF_API ditf_status ditf_config_set_tau(ditf_config* config, double tau);
DITF_API ditf_status ditf_config_set_coverage(ditf_config* config, double coverage);
DITF_API ditf_status ditf_config_to_json(const ditf_config* config, char** json);
DITF_API void ditf_config_free(ditf_config* config);

/* --- analysis ----------------------------------------------------------- */

DITF_API ditf_status ditf_analyze(const ditf_feature* feature, double ratio_threshold, double coverage_threshold,
                                  int mean_abs_fallback, char** report_json, char** dims_csv);
DITF_API ditf_status ditf_stats(const ditf_feature* feature, char** stats_json, char** dims_csv);
DITF_API ditf_status ditf_align(const ditf_feature* feature, const float* alpha, size_t alpha_len, size_t m,
                                char** alignment_json);

/* --- extraction --------------------------------------------------------- */

DITF_API ditf_status ditf_layer_norm(const ditf_feature* feature, double eps, ditf_feature** out);
DITF_API ditf_status ditf_discard_channels(const ditf_feature* feature, const size_t* dims, size_t count,
                                           ditf_feature** out);
DITF_API ditf_status ditf_extract(const ditf_feature* raw, const ditf_params* params, const ditf_config* config,
                                  ditf_feature** out, char** report_json);

/* --- correspondence ----------------------------------------------------- */

DITF_API ditf_status ditf_resample(const ditf_feature* feature, size_t grid_h, size_t grid_w, ditf_feature** out);
/* aux may be NULL (returns a copy of main). */
DITF_API ditf_status ditf_fuse_concat(const ditf_feature* main_feature, const ditf_feature* aux, int normalize,
                                      ditf_feature** out);
DITF_API ditf_status ditf_pair_pca(const ditf_feature* source, const ditf_feature* target, size_t out_dim,
                                   ditf_feature** source_out, ditf_feature** target_out);
/* mode: "nearest" or "bilinear". keypoints_json follows the keypoint fixture schema. */
DITF_API ditf_status ditf_match(const ditf_feature* source, const ditf_feature* target, const char* keypoints_json,
                                const char* mode, char** match_json);
/* matches_json / ground_truth_json: one object, or arrays with one entry per image.
   norm: "bbox_max_side" or "img_max_side". */
DITF_API ditf_status ditf_pck(const char* matches_json, const char* ground_truth_json, const double* alphas,
                              size_t alpha_count, const char* norm, char** report_json);

/* --- fixtures ----------------------------------------------------------- */

typedef struct ditf_synth_options {
  uint64_t seed;
  size_t tokens;
  size_t channels;
  const size_t* planted_dims;
  size_t planted_count;
  float scale;
  size_t grid_h; /* 0 with grid_w 0: most square factorization */
  size_t grid_w;
  float gamma_planted; /* gamma on planted dims; 0 elsewhere */
  float alpha_peak;    /* alpha on planted dims; 1 elsewhere */
} ditf_synth_options;

DITF_API void ditf_synth_options_default(ditf_synth_options* options);
/* Container with "feature" (stage original) plus "gamma", "beta", "alpha". */
DITF_API ditf_status ditf_synth_massive(const ditf_synth_options* options, ditf_container** out);

typedef struct ditf_permutation_options {
  uint64_t seed;
  size_t grid_h;
  size_t grid_w;
  size_t channels;
  int inject_massive;
  size_t massive_dim;
  double massive_ratio;
  double massive_jitter;
} ditf_permutation_options;

DITF_API void ditf_permutation_options_default(ditf_permutation_options* options);
/* Source/target containers each hold "feature" plus identity "gamma"/"beta". */
DITF_API ditf_status ditf_synth_permutation(const ditf_permutation_options* options, ditf_container** source,
                                            ditf_container** target, char** source_keypoints_json,
                                            char** target_keypoints_json);

typedef struct ditf_toyblock_options {
  uint64_t seed;
  size_t channels;
  size_t tokens;
  size_t heads;
  size_t hidden_mult;
  size_t cond_dim;
  int zero_init;
  const char* mode; /* "eqs4_7" or "eq2" */
  int timestep;
  uint64_t input_seed; /* input z and condition c draws */
  const size_t* alpha_peak_dims;
  size_t alpha_peak_count;
  float alpha_peak_value;
} ditf_toyblock_options;

DITF_API void ditf_toyblock_options_default(ditf_toyblock_options* options);
/* Trace container: "input", "pre_adaln_1", "post_adaln_1", "pre_adaln_2",
   "post_adaln_2", "feature" (block output) and the six modulation vectors
   "gamma1" ... "alpha2" plus "alpha" (= alpha2). weights may be NULL. */
DITF_API ditf_status ditf_toyblock_run(const ditf_toyblock_options* options, ditf_container** trace,
                                       ditf_container** weights);

#ifdef __cplusplus
}
#endif

#endif /* DITF_DITF_H */
