/* Token ring over the C API: 16 ranks in-process, each hop increments the
 * token, rank 0 ends up with 15.
 *
 * Build (from the workspace root, after `cargo build -p mpignite-ffi --release`):
 *   cc -std=c11 -I crates/ffi/include crates/ffi/examples/ring.c \
 *      -L target/release -lmpignite_ffi -o ring
 */
#include <stdio.h>
#include <stdlib.h>

#include "mpignite.h"

static MpigValue *ring(MpigComm *comm, void *user_data) {
    (void)user_data;
    uint32_t rank, size;
    if (mpig_comm_rank(comm, &rank) != MPIG_STATUS_OK) return NULL;
    if (mpig_comm_size(comm, &size) != MPIG_STATUS_OK) return NULL;
    uint32_t next = (rank + 1) % size;

    int32_t token = 0;
    if (rank == 0) {
        MpigValue *zero = mpig_value_i32(0);
        MpigStatus sent = mpig_comm_send(comm, next, 0, zero);
        mpig_value_free(zero);
        if (sent != MPIG_STATUS_OK) return NULL;

        MpigValue *got = NULL;
        if (mpig_comm_receive(comm, size - 1, 0, MPIG_KIND_I32, &got) != MPIG_STATUS_OK)
            return NULL;
        mpig_value_get_i32(got, &token);
        mpig_value_free(got);
    } else {
        MpigValue *got = NULL;
        if (mpig_comm_receive(comm, rank - 1, 0, MPIG_KIND_I32, &got) != MPIG_STATUS_OK)
            return NULL;
        mpig_value_get_i32(got, &token);
        mpig_value_free(got);

        token += 1;
        MpigValue *fwd = mpig_value_i32(token);
        MpigStatus sent = mpig_comm_send(comm, next, 0, fwd);
        mpig_value_free(fwd);
        if (sent != MPIG_STATUS_OK) return NULL;
    }
    return mpig_value_i32(token);
}

int main(void) {
    MpigResults *results = NULL;
    MpigStatus status = mpig_run_local(ring, NULL, 16, &results);
    if (status != MPIG_STATUS_OK) {
        char *message = mpig_last_error_message();
        fprintf(stderr, "job failed (%d): %s\n", (int)status,
                message ? message : "unknown");
        mpig_string_free(message);
        return 1;
    }

    size_t len = 0;
    mpig_results_len(results, &len);
    printf("tokens:");
    for (size_t rank = 0; rank < len; rank++) {
        const MpigValue *value = NULL;
        int32_t token = -1;
        mpig_results_get(results, rank, &value);
        mpig_value_get_i32(value, &token);
        printf(" %d", token);
    }
    printf("\n");
    mpig_results_free(results);
    return 0;
}
