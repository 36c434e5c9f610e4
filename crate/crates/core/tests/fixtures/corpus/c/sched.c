#include <stdio.h>
#include <stdlib.h>
#include "pdlog.h"

#if defined(__linux__)
#  define HAVE_AFFINITY 1
#else
#  define HAVE_AFFINITY 0
#endif

#define MAX_TASKS 32

typedef void (*task_fn)(void *);

struct task {
    task_fn fn;
    void *arg;
    int priority;
    int done;
};

static struct task queue[MAX_TASKS];
static int queued;

int sched_submit(task_fn fn, void *arg, int priority)
{
    if (queued >= MAX_TASKS) {
        pdLog(PD_WARNING, __func__, "queue full, dropping task with priority %d", priority);
        return -1;
    }
    queue[queued].fn = fn;
    queue[queued].arg = arg;
    queue[queued].priority = priority;
    queue[queued].done = 0;
    queued++;
    return 0;
}

static int pick_next(void)
{
    int best = -1;
    int i;
    for (i = 0; i < queued; i++) {
        if (queue[i].done) {
            continue;
        }
        if (best < 0 || queue[i].priority > queue[best].priority) {
            best = i;
        }
    }
    return best;
}

int sched_run(void)
{
    int ran = 0;
    int next;
    while ((next = pick_next()) >= 0) {
        struct task *t = &queue[next];
        t->fn(t->arg);
        t->done = 1;
        ran++;
#if HAVE_AFFINITY
        if (ran % 8 == 0) {
            PD_LOG(PD_DEBUG, "ran %d tasks so far", ran);
        }
#endif
    }
    queued = 0;
    return ran;
}
