#ifndef ZTREE_H
#define ZTREE_H

/* Generated by cbindgen from ztree-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define ZTREE_OK 0

#define ZTREE_ERR_NULL_ARGUMENT -1

#define ZTREE_ERR_UTF8 -2

#define ZTREE_ERR_FORMAT -3

#define ZTREE_ERR_PREDICT -4

#define ZTREE_ERR_BAD_STYLE -5

/*
 Rendering styles accepted by `ztree_tree_render`.
 */
typedef enum ZtreeRenderStyle {
  ZtreeRenderText = 0,
  ZtreeRenderDot = 1,
} ZtreeRenderStyle;

/*
 Opaque decision tree handle.
 */
typedef struct ZtreeTree ZtreeTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the calling thread's most recent error. The pointer stays
 valid until the next failing call on this thread. NULL when no error
 has occurred.
 */
const char *ztree_last_error(void);

/*
 Library version as a static string; do not free.
 */
const char *ztree_version(void);

/*
 Parses canonical tree JSON into a new handle stored in `out`.

 # Safety
 `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int ztree_tree_parse(const char *json, struct ZtreeTree **out);

/*
 Releases a handle returned by `ztree_tree_parse`. NULL is a no-op.

 # Safety
 `tree` must be NULL or a pointer returned by `ztree_tree_parse` that
 has not been freed.
 */
void ztree_tree_free(struct ZtreeTree *tree);

/*
 Depth of the tree, or a negative error code.

 # Safety
 `tree` must be a live handle.
 */
int ztree_tree_depth(const struct ZtreeTree *tree);

/*
 Canonical JSON of the tree; caller frees with `ztree_string_free`.
 NULL on error.

 # Safety
 `tree` must be a live handle.
 */
char *ztree_tree_to_json(const struct ZtreeTree *tree);

/*
 Text or DOT rendering; caller frees with `ztree_string_free`. NULL on
 error.

 # Safety
 `tree` must be a live handle.
 */
char *ztree_tree_render(const struct ZtreeTree *tree, int style);

/*
 Routes a JSON row object (`{"feature": value, ...}`) through the tree.
 Returns a JSON object `{"label", "probs", "path"}` that the caller
 frees with `ztree_string_free`; NULL on error. `missing_policy` 0
 errors on missing values, 1 follows the more confident child.

 # Safety
 `tree` must be a live handle and `row_json` a valid NUL-terminated
 string.
 */
char *ztree_tree_predict_json(const struct ZtreeTree *tree,
                              const char *row_json,
                              int missing_policy);

/*
 Frees a string returned by this library. NULL is a no-op.

 # Safety
 `s` must be NULL or a pointer returned by a `ztree_*` function that
 has not been freed.
 */
void ztree_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZTREE_H */
