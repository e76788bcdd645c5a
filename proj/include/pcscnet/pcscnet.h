/* C API for the point-cloud segmentation engine. All functions return a
 * status code; pcsc_last_error() describes the most recent failure on the
 * calling thread. Handles are opaque and freed with their destroy function.
 */
#ifndef PCSCNET_H
#define PCSCNET_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pcsc_status {
    PCSC_OK = 0,
    PCSC_ERROR_INVALID_ARGUMENT = 1,
    PCSC_ERROR_CONFIG = 2,
    PCSC_ERROR_IO = 3,
    PCSC_ERROR_NUMERIC = 4,
    PCSC_ERROR_INTERNAL = 5
} pcsc_status;

typedef struct pcsc_config pcsc_config;
typedef struct pcsc_model pcsc_model;

const char* pcsc_version(void);
const char* pcsc_status_name(pcsc_status status);
/* Thread-local message for the last failing call; empty string if none. */
const char* pcsc_last_error(void);

/* Configuration: flat key=value store with typed validation. Unknown keys
 * are PCSC_ERROR_CONFIG. */
pcsc_status pcsc_config_create(pcsc_config** out);
void pcsc_config_destroy(pcsc_config* cfg);
pcsc_status pcsc_config_load_file(pcsc_config* cfg, const char* path);
pcsc_status pcsc_config_set(pcsc_config* cfg, const char* key, const char* value);
pcsc_status pcsc_config_get(const pcsc_config* cfg, const char* key, char* buf, size_t cap);

/* Commands. Each reads everything it needs from the config, prints a human
 * readable summary to stdout and writes any report files the config names. */
pcsc_status pcsc_run_make_synth(const pcsc_config* cfg);
pcsc_status pcsc_run_train(const pcsc_config* cfg);
pcsc_status pcsc_run_eval(const pcsc_config* cfg);
pcsc_status pcsc_run_infer(const pcsc_config* cfg);
pcsc_status pcsc_run_ablate_voxel(const pcsc_config* cfg);
pcsc_status pcsc_run_ablate_loss(const pcsc_config* cfg);
pcsc_status pcsc_run_bench(const pcsc_config* cfg);
/* Returns PCSC_ERROR_NUMERIC when any component fails the gradient check. */
pcsc_status pcsc_run_gradcheck(const pcsc_config* cfg);

/* Direct inference on raw point arrays. xyz is n*3 doubles (row major);
 * intensity may be NULL; labels_out receives n ints. */
pcsc_status pcsc_model_load(const char* checkpoint_path, const pcsc_config* cfg, pcsc_model** out);
void pcsc_model_destroy(pcsc_model* model);
pcsc_status pcsc_model_num_classes(const pcsc_model* model, int* out);
pcsc_status pcsc_model_infer(const pcsc_model* model, const double* xyz, const double* intensity, size_t n_points,
                             int* labels_out);

#ifdef __cplusplus
}
#endif

#endif /* PCSCNET_H */
