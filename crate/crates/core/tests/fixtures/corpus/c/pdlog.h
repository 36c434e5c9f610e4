#ifndef PDLOG_H
#define PDLOG_H

#include <stdarg.h>

typedef enum {
    PD_ERROR = 0,
    PD_WARNING,
    PD_EVENT,
    PD_DEBUG
} pd_level;

void pdLog(pd_level level, const char *func, const char *fmt, ...);

#define PD_LOG(level, ...) pdLog(level, __func__, __VA_ARGS__)
#define PD_CHECK(cond, rc, label) \
    do {                          \
        if (!(cond)) {            \
            goto label;           \
        }                         \
    } while (0)

#endif
