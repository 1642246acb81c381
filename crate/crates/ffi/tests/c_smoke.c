#include <stdio.h>
#include <string.h>
#include "pilotwave.h"

static const char *CONFIG =
    "[physics]\nc = 10.0\n"
    "[grid]\npoints = 12\nextent = 4.0\nboundary = \"periodic\"\n"
    "[initial]\nposition = [1.0, 2.0, 3.0]\nmodes = [{ n = [1, 0, 0], re = 1.0 }]\n"
    "[run]\nt_end = 1.0\ndt = 0.01\n";

int main(void) {
    PwSimulation *sim = NULL;
    if (pw_simulation_new(CONFIG, PW_KIND_BOHMIAN, &sim) != PW_STATUS_OK) {
        fprintf(stderr, "new: %s\n", pw_last_error());
        return 1;
    }
    if (pw_simulation_step(sim, 10) != PW_STATUS_OK) return 2;
    double t, q[3];
    pw_simulation_particle(sim, &t, q, NULL);
    printf("%.6f %.6f %.6f %.6f\n", t, q[0], q[1], q[2]);
    if (pw_simulation_new("[physics]\n", PW_KIND_BOHMIAN, &sim) != PW_STATUS_INVALID_CONFIG) return 3;
    if (strstr(pw_last_error(), "c") == NULL) return 4;
    pw_simulation_free(sim);
    return 0;
}
