#ifndef EMA_H
#define EMA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum EmaStatus {
  EmaStatusOk = 0,
  EmaStatusInput = 1,
  EmaStatusNotFound = 2,
  EmaStatusStore = 3,
  EmaStatusProtocol = 4,
  EmaStatusIo = 5,
  EmaStatusFit = 6,
  EmaStatusConfig = 7,
  EmaStatusNullArgument = 8,
  EmaStatusUtf8 = 9,
} EmaStatus;

/**
 * Opaque RPC client.
 */
typedef struct EmaClient EmaClient;

/**
 * Opaque running service.
 */
typedef struct EmaService EmaService;

/**
 * Opaque repository handle.
 */
typedef struct EmaStore EmaStore;

/**
 * Opaque fitted transform: regime-aware projection plus the decoders that
 * carry inputs into the matched source's space.
 */
typedef struct EmaTransform EmaTransform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *ema_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by this library and not freed before.
 */
void ema_string_free(char *s);

/**
 * Release a byte buffer returned by this library.
 *
 * # Safety
 * `(ptr, len)` must be a pair returned by this library and not freed
 * before.
 */
void ema_bytes_free(uint8_t *ptr, uintptr_t len);

/**
 * DKW subset size for a CDF deviation bound `epsilon` at confidence
 * `delta`.
 */
enum EmaStatus ema_dkw_sample_size(double epsilon, double delta, uintptr_t *out_size);

/**
 * MMD between two sample sets given as CSV text, under a shared Gaussian
 * bandwidth.
 */
enum EmaStatus ema_mmd(const char *csv_a, const char *csv_b, double bandwidth, double *out_mmd);

/**
 * Open or create a state repository rooted at `root`.
 */
enum EmaStatus ema_store_open(const char *root,
                              uintptr_t capacity,
                              double noise_sigma,
                              double noise_clamp,
                              struct EmaStore **out_store);

/**
 * Close a store handle.
 *
 * # Safety
 * `store` must have come from [`ema_store_open`] and not be used after.
 */
void ema_store_close(struct EmaStore *store);

/**
 * Number of entries currently held (0 for a null handle).
 */
uintptr_t ema_store_len(const struct EmaStore *store);

/**
 * Register an environment state snapshot; returns the entry key.
 */
enum EmaStatus ema_store_register(struct EmaStore *store,
                                  const char *env_id,
                                  const char *org_tag,
                                  const char *samples_csv,
                                  double bandwidth,
                                  const uint8_t *model_blob,
                                  uintptr_t model_blob_len,
                                  double accuracy,
                                  double now_days,
                                  char **out_key);

/**
 * Match `samples_csv` against the visible store entries and fit a
 * regime-aware transform onto the best source. Outputs the transform
 * handle, the matched entry key, and the measured MMD.
 */
enum EmaStatus ema_transform_fit(const struct EmaStore *store,
                                 const char *org_tag,
                                 const char *samples_csv,
                                 double bandwidth,
                                 uintptr_t regimes,
                                 uintptr_t latent_dims,
                                 struct EmaTransform **out_transform,
                                 char **out_matched_key,
                                 double *out_mmd);

/**
 * Apply a fitted transform: carry `samples_csv` into the matched source's
 * input space. Returns CSV text.
 */
enum EmaStatus ema_transform_apply(const struct EmaTransform *transform,
                                   const char *samples_csv,
                                   double bandwidth,
                                   char **out_csv);

/**
 * Serialize a transform to its versioned binary form.
 */
enum EmaStatus ema_transform_encode(const struct EmaTransform *transform,
                                    uint8_t **out_bytes,
                                    uintptr_t *out_len);

/**
 * Decode a transform from its versioned binary form.
 */
enum EmaStatus ema_transform_decode(const uint8_t *bytes,
                                    uintptr_t len,
                                    struct EmaTransform **out_transform);

/**
 * Release a transform handle.
 *
 * # Safety
 * `transform` must have come from this library and not be used after.
 */
void ema_transform_free(struct EmaTransform *transform);

/**
 * Start the repository service. `listen` may use port 0 to pick a free
 * port; read the bound address back with [`ema_service_addr`].
 */
enum EmaStatus ema_service_start(const char *listen,
                                 const char *store_root,
                                 struct EmaService **out_service);

/**
 * The service's bound address as `host:port`.
 */
enum EmaStatus ema_service_addr(const struct EmaService *service, char **out_addr);

/**
 * Stop the service, draining in-flight requests, and release the handle.
 *
 * # Safety
 * `service` must have come from [`ema_service_start`] and not be used
 * after.
 */
void ema_service_stop(struct EmaService *service);

/**
 * Connect to a running service.
 */
enum EmaStatus ema_client_connect(const char *addr, struct EmaClient **out_client);

/**
 * Register this agent under a bearer org tag.
 */
enum EmaStatus ema_client_create_agent(struct EmaClient *client,
                                       const char *agent_id,
                                       const char *org_tag);

/**
 * Register a model and state snapshot through the service; returns the
 * entry key.
 */
enum EmaStatus ema_client_register(struct EmaClient *client,
                                   const char *agent_id,
                                   const char *env_id,
                                   const char *samples_csv,
                                   double bandwidth,
                                   const uint8_t *model_blob,
                                   uintptr_t model_blob_len,
                                   double accuracy,
                                   char **out_key);

/**
 * Ask the service to match and transform a state. On success fills the
 * matched key, the measured MMD, the transform blob (decode with
 * [`ema_transform_decode`]), the matched model blob, and the transformed
 * samples as CSV.
 */
enum EmaStatus ema_client_transform_state(struct EmaClient *client,
                                          const char *agent_id,
                                          const char *samples_csv,
                                          double bandwidth,
                                          char **out_matched_key,
                                          double *out_mmd,
                                          uint8_t **out_transform_blob,
                                          uintptr_t *out_transform_len,
                                          uint8_t **out_model_blob,
                                          uintptr_t *out_model_len,
                                          char **out_transformed_csv);

/**
 * Close a client connection.
 *
 * # Safety
 * `client` must have come from [`ema_client_connect`] and not be used
 * after.
 */
void ema_client_close(struct EmaClient *client);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMA_H */
