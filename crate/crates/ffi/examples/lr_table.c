/* Prints the one-cycle schedule and the metrics of a toy prediction. */
#include <stdio.h>

#include "htds.h"

int main(void) {
    printf("htds %s\n", htds_version());
    for (size_t step = 0; step <= 100; step += 25) {
        double lr = 0.0;
        if (htds_onecycle_lr(100, 5e-5, step, &lr) != HTDS_STATUS_OK) {
            fprintf(stderr, "error: %s\n", htds_last_error());
            return 1;
        }
        printf("step %3zu lr %.6e\n", step, lr);
    }
    /* two stays, six labels, row-major */
    const double probs[] = {0.9, 0.2, 0.7, 0.1, 0.8, 0.3, 0.1, 0.8, 0.2, 0.9, 0.3, 0.6};
    const uint8_t gold[] = {1, 0, 1, 0, 1, 1, 0, 1, 0, 1, 0, 0};
    HtdsMetrics m;
    if (htds_metrics(probs, gold, 2, 6, 0.5, &m) != HTDS_STATUS_OK) {
        fprintf(stderr, "error: %s\n", htds_last_error());
        return 1;
    }
    printf("micro_f1 %.4f p_at_5 %.4f\n", m.micro_f1, m.p_at_5);
    return 0;
}
