#include <math.h>
#include <stdio.h>
#include <string.h>

#include "dkps.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *msg = dkps_last_error_message();                         \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, msg ? msg : ""); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  double square[16] = {0, 1, 1.4142135623730951, 1,
                       1, 0, 1, 1.4142135623730951,
                       1.4142135623730951, 1, 0, 1,
                       1, 1.4142135623730951, 1, 0};
  double coords[8];
  size_t clamped = 99;
  CHECK(dkps_classical_mds(square, 4, 2, coords, NULL, &clamped) == DKPS_STATUS_OK);
  CHECK(clamped == 0);
  double dx = coords[0] - coords[4], dy = coords[1] - coords[5];
  CHECK(fabs(sqrt(dx * dx + dy * dy) - 1.4142135623730951) < 1e-9);

  DkpsDataset *ds = NULL;
  const char *spec = "schema_version = 1\n[population]\nn_models = 20\nn_queries = 6\nn_families = 4\n";
  CHECK(dkps_synth_generate(spec, &ds) == DKPS_STATUS_OK);
  DkpsShape shape;
  CHECK(dkps_dataset_shape(ds, &shape) == DKPS_STATUS_OK);
  CHECK(shape.num_models == 20 && shape.num_queries == 6 && shape.num_families == 4);

  char *target = NULL;
  CHECK(dkps_dataset_model_id(ds, 3, &target) == DKPS_STATUS_OK);
  const char *queries[6] = {"q0000", "q0001", "q0002", "q0003", "q0004", "q0005"};
  double predicted = -1, truth = -2;
  CHECK(dkps_predict(ds, target, queries, 6, "sample_score", NULL, &predicted) == DKPS_STATUS_OK);
  CHECK(dkps_dataset_benchmark_score(ds, 3, &truth) == DKPS_STATUS_OK);
  CHECK(fabs(predicted - truth) < 1e-12);
  dkps_string_free(target);

  CHECK(dkps_predict(ds, "nobody", queries, 6, "sample_score", NULL, &predicted) == DKPS_STATUS_UNKNOWN_ID);
  CHECK(strstr(dkps_last_error_message(), "nobody") != NULL);
  CHECK(dkps_dataset_shape(NULL, &shape) == DKPS_STATUS_NULL_POINTER);

  dkps_dataset_free(ds);
  printf("ok %s\n", dkps_version());
  return 0;
}
