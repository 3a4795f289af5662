/* Links against the static library through the generated header. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "mien_asr.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,   \
                    #cond, mien_last_error());                        \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    MienInventory *inv = NULL;
    char *text = NULL;
    CHECK(mien_inventory_builtin(&inv) == MIEN_STATUS_OK);
    CHECK(mien_parse_word(inv, "baengh", &text) == MIEN_STATUS_OK);
    CHECK(strcmp(text, "b,-,ae,ng,h") == 0);
    mien_string_free(text);
    CHECK(mien_parse_word(inv, "qqq", &text) == MIEN_STATUS_INVALID_ARGUMENT);
    CHECK(strlen(mien_last_error()) > 0);
    mien_inventory_free(inv);

    /* Two frames, blank plus one label, uniform rows: P("1") = 3/4. */
    double lp[4] = {log(0.5), log(0.5), log(0.5), log(0.5)};
    uint32_t label = 1;
    double loss = 0.0;
    CHECK(mien_ctc_loss(lp, 2, 2, &label, 1, &loss) == MIEN_STATUS_OK);
    CHECK(fabs(exp(-loss) - 0.75) < 1e-12);

    MienScore score;
    CHECK(mien_error_rate("a b c", "a c", &score) == MIEN_STATUS_OK);
    CHECK(score.deletions == 1 && score.reference_length == 3);

    MienDecodeParams params = mien_decode_params_default();
    CHECK(params.beam_size > 0);
    puts("ok");
    return 0;
}
