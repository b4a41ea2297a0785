#include <math.h>
#include <stdio.h>
#include "sitealloc.h"

int main(void) {
    SaSynthParams params = {12, 6, 0.8, 3};
    SaInstance *inst = NULL;
    if (sa_instance_synth(&params, &inst) != SA_STATUS_OK) {
        fprintf(stderr, "synth: %s\n", sa_last_error());
        return 1;
    }
    size_t chosen[4];
    size_t count = 0;
    SaScores best;
    if (sa_optimize(inst, "k = 2\nexact = true", chosen, 4, &count, &best) != SA_STATUS_OK) {
        fprintf(stderr, "optimize: %s\n", sa_last_error());
        return 1;
    }
    SaScores again;
    if (sa_score(inst, "k = 2", chosen, count, &again) != SA_STATUS_OK || again.combined != best.combined) {
        fprintf(stderr, "score mismatch\n");
        return 1;
    }
    size_t bogus[1] = {99};
    if (sa_score(inst, NULL, bogus, 1, &again) != SA_STATUS_UNKNOWN_SITE) {
        return 1;
    }
    printf("%zu %zu %zu %.17g %d\n", sa_instance_num_sites(inst), count, best.coverage, best.combined, isnan(best.d_optimality));
    sa_instance_free(inst);
    return 0;
}
