#include <math.h>
#include <stdio.h>
#include "skelgrid.h"

#define CHECK(c) do { if (!(c)) { char m[256]; sg_last_error(m, sizeof m); \
    fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #c, m); return 1; } } while (0)

int main(void) {
    SgMap *u = NULL;
    CHECK(sg_map_skeleton(2, &u) == SG_STATUS_OK);
    double x[2] = {3.75, -1.5}, y[2];
    CHECK(sg_map_eval(u, x, 2, y, 2) == SG_STATUS_OK);
    CHECK(y[0] == 4.0 && y[1] == -1.5);
    double sing[2] = {0.5, 0.5};
    CHECK(sg_map_eval(u, sing, 2, y, 2) == SG_STATUS_MAP_ERROR);
    sg_map_free(u);

    SgFlow *f = NULL;
    CHECK(sg_transport_exact(2, 1, 2, 0.5, 6, &f) == SG_STATUS_OK);
    double cost;
    bool valid, certified;
    CHECK(sg_flow_summary(f, &cost, &valid, &certified) == SG_STATUS_OK);
    CHECK(valid && certified && fabs(cost - sqrt(2.0)) < 1e-12);
    sg_flow_free(f);

    CHECK(sg_map_skeleton(2, NULL) == SG_STATUS_NULL_POINTER);
    printf("ok %s\n", sg_version());
    return 0;
}
