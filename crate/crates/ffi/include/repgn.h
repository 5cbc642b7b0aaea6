#ifndef REPGN_H
#define REPGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RepgnStatus {
  REPGN_STATUS_OK = 0,
  REPGN_STATUS_INVALID_INPUT = 1,
  REPGN_STATUS_NUMERICAL = 2,
  REPGN_STATUS_NULL_POINTER = 3,
  REPGN_STATUS_BUFFER_TOO_SMALL = 4,
  REPGN_STATUS_PANIC = 5,
} RepgnStatus;

/**
 * Opaque proposal graph.
 */
typedef struct RepgnGraph RepgnGraph;

/**
 * Pipeline settings; obtain defaults from `repgn_config_default`.
 */
typedef struct RepgnConfig {
  double iou_thr;
  size_t min_size;
  double stop_ncut;
  size_t min_part;
  double lambda;
  double epsilon;
  size_t head_count;
  size_t layers;
  /**
   * 0 = moment matching, 1 = literal.
   */
  uint32_t norm_mode;
  /**
   * 0 = global statistics, 1 = per channel.
   */
  uint32_t norm_stats;
  bool dense_attention;
  bool iou_bias;
  uint64_t seed;
  double eigen_tol;
  size_t eigen_max_sweeps;
} RepgnConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *repgn_last_error(void);

/**
 * Fills `out` with the default configuration.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `RepgnConfig`.
 */
enum RepgnStatus repgn_config_default(struct RepgnConfig *out);

/**
 * IoU of two normalized boxes given as `[x1, y1, x2, y2]`.
 *
 * # Safety
 * `a` and `b` must point to four doubles each; `out` to one writable double.
 */
enum RepgnStatus repgn_iou(const double *a, const double *b, double *out);

/**
 * Builds the IoU graph of `count` normalized boxes (`count × 4` doubles) with
 * `count × dim` row-major features. `features` may be null when `dim` is 0.
 *
 * # Safety
 * Pointers must reference the stated number of values; `out` must be
 * writable. The returned handle must be released with `repgn_graph_free`.
 */
enum RepgnStatus repgn_graph_build(const double *boxes,
                                   size_t count,
                                   const double *features,
                                   size_t dim,
                                   double iou_thr,
                                   struct RepgnGraph **out);

/**
 * Releases a graph handle. Null is ignored.
 *
 * # Safety
 * `graph` must come from `repgn_graph_build` and not be used afterwards.
 */
void repgn_graph_free(struct RepgnGraph *graph);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t repgn_graph_node_count(const struct RepgnGraph *graph);

/**
 * Number of edges, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t repgn_graph_edge_count(const struct RepgnGraph *graph);

/**
 * Copies the sorted edge list into three arrays of length `capacity`.
 *
 * # Safety
 * `graph` must be a live handle; the arrays must hold `capacity` entries.
 */
enum RepgnStatus repgn_graph_edges(const struct RepgnGraph *graph,
                                   size_t *src,
                                   size_t *dst,
                                   double *weight,
                                   size_t capacity);

/**
 * Graph-cut pooling. Writes one part label per node into `labels`
 * (`-1` for filtered nodes) and the part count into `part_count`.
 *
 * # Safety
 * `graph` must be a live handle; `labels` must hold one entry per node.
 */
enum RepgnStatus repgn_gcpool(const struct RepgnGraph *graph,
                              size_t min_size,
                              double stop_ncut,
                              size_t min_part,
                              int64_t *labels,
                              size_t *part_count);

/**
 * Full refinement with the seeded default attention stack. `out` receives
 * `count × dim` refined features.
 *
 * # Safety
 * `boxes` must hold `count × 4` doubles, `features` and `out` `count × dim`;
 * `config` must be null (defaults) or point to a valid `RepgnConfig`.
 */
enum RepgnStatus repgn_forward(const double *boxes,
                               size_t count,
                               const double *features,
                               size_t dim,
                               const struct RepgnConfig *config,
                               bool use_gcpool,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPGN_H */
