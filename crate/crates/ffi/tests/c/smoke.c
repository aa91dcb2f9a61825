#include <stdio.h>
#include <string.h>
#include "espsim.h"

int main(void) {
    EspSim *sim = NULL;
    if (espsim_new(NULL, 7, &sim) != ESPSIM_OK) {
        fprintf(stderr, "new: %s\n", espsim_last_error());
        return 10;
    }
    if (espsim_load_trace(sim, "core 0: ST 0x40 7\ncore 0: AMOADD 0x40 1\n") != ESPSIM_OK) {
        fprintf(stderr, "load: %s\n", espsim_last_error());
        return 11;
    }
    uint64_t cycles = 0;
    if (espsim_run(sim, 1000000, &cycles) != ESPSIM_OK || cycles == 0) {
        return 12;
    }
    uint64_t value = 0;
    espsim_read_word(sim, 0x40, &value);
    char *json = espsim_stats_json(sim);
    if (json == NULL || strstr(json, "\"cycles\"") == NULL) {
        return 13;
    }
    espsim_string_free(json);
    if (espsim_load_trace(sim, "core 0: BOGUS\n") != ESPSIM_ERR_PARSE || espsim_last_error() == NULL) {
        return 14;
    }
    espsim_free(sim);
    printf("%llu\n", (unsigned long long)value);
    return 0;
}
