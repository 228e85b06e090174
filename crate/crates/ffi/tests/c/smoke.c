#include <math.h>
#include <stdio.h>
#include <string.h>

#include "geodyn.h"

#define CHECK(cond)                                              \
  do {                                                           \
    if (!(cond)) {                                               \
      char msg[256];                                             \
      geodyn_last_error_message(msg, sizeof msg);                \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,    \
              #cond, msg);                                       \
      return 1;                                                  \
    }                                                            \
  } while (0)

int main(int argc, char **argv) {
  CHECK(argc == 2);
  CHECK(strlen(geodyn_version()) > 0);

  GeodynTraceWriter *w = NULL;
  CHECK(geodyn_trace_writer_create(argv[1], 2, &w) == GEODYN_STATUS_OK);
  GeodynMonitor *m = NULL;
  CHECK(geodyn_monitor_create(0.05, 0.5, 8, 0, &m) == GEODYN_STATUS_OK);
  double d = 0.0;
  bool has_d = false;
  for (int i = 0; i < 400; i++) {
    float row[2] = {cosf(0.1f * i), sinf(0.1f * i)};
    CHECK(geodyn_trace_writer_push(w, row, 2) == GEODYN_STATUS_OK);
    CHECK(geodyn_monitor_push(m, row, 2, &d, &has_d) == GEODYN_STATUS_OK);
  }
  uint64_t count = 0;
  CHECK(geodyn_trace_writer_finish(w, &count) == GEODYN_STATUS_OK);
  CHECK(count == 400);
  geodyn_trace_writer_free(w);
  CHECK(has_d);
  geodyn_monitor_free(m);

  GeodynTraceReader *r = NULL;
  CHECK(geodyn_trace_reader_open(argv[1], &r) == GEODYN_STATUS_OK);
  uint32_t dim = 0;
  CHECK(geodyn_trace_reader_header(r, &dim, &count) == GEODYN_STATUS_OK);
  CHECK(dim == 2 && count == 400);
  float buf[2];
  uint64_t seen = 0;
  while (geodyn_trace_reader_next(r, buf, 2) == GEODYN_STATUS_OK) seen++;
  CHECK(seen == 400);
  geodyn_trace_reader_free(r);

  double logits[3] = {2.0, 1.0, 0.0};
  double t = 0.0;
  CHECK(geodyn_solve_entropy_temperature(logits, 3, 0.9, 1e-9, &t) ==
        GEODYN_STATUS_OK);
  CHECK(geodyn_solve_entropy_temperature(logits, 3, 5.0, 1e-9, &t) ==
        GEODYN_STATUS_ENTROPY_CLAMP);

  GeodynRegulatorParams p = geodyn_regulator_defaults();
  CHECK(p.interval == 10);
  GeodynRegulator *reg = NULL;
  CHECK(geodyn_regulator_create(3, &p, 0, 0, &reg) == GEODYN_STATUS_OK);
  for (int i = 0; i < 64; i++) {
    double row[3] = {sin(0.01 * i), cos(0.3 * i), (double)(i % 5)};
    CHECK(geodyn_regulator_observe(reg, row, 3, NULL, NULL, 0, NULL) ==
          GEODYN_STATUS_OK);
  }
  size_t len = 0;
  CHECK(geodyn_regulator_cache_len(reg, &len) == GEODYN_STATUS_OK && len == 64);
  geodyn_regulator_free(reg);

  CHECK(geodyn_monitor_push(NULL, buf, 2, NULL, NULL) ==
        GEODYN_STATUS_NULL_POINTER);
  puts("ok");
  return 0;
}
