#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "chainbench.h"

#define CHECK(cond)                                                        \
    do {                                                                   \
        if (!(cond)) {                                                     \
            fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__,         \
                    __LINE__, #cond);                                      \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    CbStore *store = NULL;
    CHECK(cb_store_new(16, &store) == CB_STATUS_OK);
    uint8_t empty[32], root[32];
    CHECK(cb_store_root(store, empty) == CB_STATUS_OK);

    uint64_t version = 0;
    CHECK(cb_store_put(store, (const uint8_t *)"alice", 5,
                       (const uint8_t *)"100", 3, 1, &version) == CB_STATUS_OK);
    CHECK(version == 1);
    CHECK(cb_store_root(store, root) == CB_STATUS_OK);
    CHECK(memcmp(root, empty, 32) != 0);

    char buf[8];
    size_t len = 0;
    CHECK(cb_store_get(store, (const uint8_t *)"alice", 5, (uint8_t *)buf,
                       sizeof buf, &len) == CB_STATUS_OK);
    CHECK(len == 3 && memcmp(buf, "100", 3) == 0);
    CHECK(cb_store_get(store, (const uint8_t *)"bob", 3, (uint8_t *)buf,
                       sizeof buf, &len) == CB_STATUS_NOT_FOUND);
    char *err = cb_last_error();
    CHECK(err != NULL && strstr(err, "bob") != NULL);
    cb_string_free(err);
    cb_store_free(store);

    CbExperiment *exp = NULL;
    CHECK(cb_experiment_from_toml("[topology]\nnodez = 4\n", &exp) ==
          CB_STATUS_CONFIG_ERROR);
    err = cb_last_error();
    CHECK(err != NULL && strstr(err, "nodez") != NULL);
    cb_string_free(err);

    const char *toml =
        "duration_s = 5\n"
        "[topology]\nnodes = 4\n"
        "[workload]\nkind = \"donothing\"\nclients = 1\nrequest_rate = 50\n";
    CHECK(cb_experiment_from_toml(toml, &exp) == CB_STATUS_OK);
    CbRun *run = NULL;
    CHECK(cb_experiment_run(exp, &run) == CB_STATUS_OK);
    double tps = 0;
    CHECK(cb_run_throughput(run, &tps) == CB_STATUS_OK);
    CHECK(tps > 0);
    char *json = NULL;
    CHECK(cb_run_summary_json(run, &json) == CB_STATUS_OK);
    CHECK(strstr(json, "\"throughput\"") != NULL);
    cb_string_free(json);
    cb_run_free(run);
    cb_experiment_free(exp);

    printf("c smoke ok (%s)\n", cb_version());
    return 0;
}
