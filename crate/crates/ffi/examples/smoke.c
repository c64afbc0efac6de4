/* Generates a small butterfly dataset, fits it, and prints the Hamming distance. */
#include <stdio.h>
#include "gpmnet.h"

int main(void) {
    GpmDataset *data = NULL;
    GpmGraph *truth = NULL;
    if (gpm_generate("butterfly-c", 4, 300, 3, &data, &truth) != GPM_STATUS_OK) {
        return 1;
    }
    GpmFitOptions opts;
    gpm_fit_options_default(&opts);
    opts.max_iters = 300;
    GpmFit *fit = NULL;
    if (gpm_fit(data, &opts, &fit) != GPM_STATUS_OK) {
        char msg[256];
        gpm_last_error_message(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    GpmGraph *est = NULL;
    gpm_fit_graph(fit, &est);
    size_t h = 0;
    gpm_graph_hamming(est, truth, &h);
    GpmDataset *bad = NULL;
    int status = gpm_dataset_load("/nonexistent/file.csv", &bad);
    printf("version %s rows %zu hamming %zu load-status %d error-len %zu\n", gpm_version(), gpm_dataset_rows(data), h,
           status, gpm_last_error_length());
    gpm_graph_free(est);
    gpm_graph_free(truth);
    gpm_fit_free(fit);
    gpm_dataset_free(data);
    return 0;
}
