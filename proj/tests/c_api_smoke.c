/* Compiled as C so the public header stays valid C. */
#include "attnlab/attnlab.h"

int attnlab_c_smoke(void) {
  double iou = 0.0;
  if (attnlab_span_iou(0, 3, 2, 5, &iou) != ATTNLAB_OK) return 1;
  if (iou < 0.333 || iou > 0.334) return 2;
  attnlab_config* config = NULL;
  if (attnlab_config_new("gen-data", &config) != ATTNLAB_OK) return 3;
  attnlab_config_free(config);
  return 0;
}
