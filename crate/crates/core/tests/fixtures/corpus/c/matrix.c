#include <math.h>
#include <stdlib.h>

typedef struct {
    int rows;
    int cols;
    double *v;
} matrix;

#define AT(m, r, c) ((m)->v[(r) * (m)->cols + (c)])

matrix *matrix_new(int rows, int cols)
{
    matrix *m = malloc(sizeof(matrix));
    if (m == NULL) {
        return NULL;
    }
    m->rows = rows;
    m->cols = cols;
    m->v = calloc((size_t)rows * cols, sizeof(double));
    return m;
}

int matrix_mul(const matrix *a, const matrix *b, matrix *out)
{
    int i, j, k;
    if (a->cols != b->rows || out->rows != a->rows || out->cols != b->cols) {
        return -1;
    }
    for (i = 0; i < a->rows; i++) {
        for (j = 0; j < b->cols; j++) {
            double acc = 0.0;
            for (k = 0; k < a->cols; k++) {
                acc += AT(a, i, k) * AT(b, k, j);
            }
            AT(out, i, j) = acc;
        }
    }
    return 0;
}

double matrix_frobenius(const matrix *m)
{
    double s = 0.0;
    int i;
    for (i = 0; i < m->rows * m->cols; i++) {
        s += m->v[i] * m->v[i];
    }
    return sqrt(s);
}

int matrix_lu(matrix *m, int *perm)
{
    int n = m->rows, i, j, k;
    for (i = 0; i < n; i++) {
        perm[i] = i;
    }
    for (k = 0; k < n; k++) {
        int p = k;
        double maxv = fabs(AT(m, k, k));
        for (i = k + 1; i < n; i++) {
            if (fabs(AT(m, i, k)) > maxv) {
                maxv = fabs(AT(m, i, k));
                p = i;
            }
        }
        if (maxv == 0.0) {
            return -1;
        }
        if (p != k) {
            int t = perm[k];
            perm[k] = perm[p];
            perm[p] = t;
            for (j = 0; j < n; j++) {
                double tmp = AT(m, k, j);
                AT(m, k, j) = AT(m, p, j);
                AT(m, p, j) = tmp;
            }
        }
        for (i = k + 1; i < n; i++) {
            AT(m, i, k) /= AT(m, k, k);
            for (j = k + 1; j < n; j++) {
                AT(m, i, j) -= AT(m, i, k) * AT(m, k, j);
            }
        }
    }
    return 0;
}
