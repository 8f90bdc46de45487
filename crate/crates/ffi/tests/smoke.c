#include <stdio.h>
#include "drawdim.h"

int main(void) {
    uint64_t n = 0;
    if (dd_param_count(2, 3, 128, &n) != DD_STATUS_OK) return 1;

    DdRecord *rec = NULL;
    if (dd_record_synthetic(DD_LABEL_HC, 1, &rec) != DD_STATUS_OK) return 2;
    DdTensor *t = NULL;
    if (dd_encode(rec, 3, 0x03, 32, &t) != DD_STATUS_CONFIG) return 3;

    printf("ok %llu %s\n", (unsigned long long)n, dd_last_error_class());
    dd_record_free(rec);
    return 0;
}
