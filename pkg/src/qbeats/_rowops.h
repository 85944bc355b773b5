/* (dr + i di) += (cr + i ci) * (sr + i si), elementwise over one matrix row. */
#ifndef QBEATS_ROWOPS_H
#define QBEATS_ROWOPS_H

static inline void row_caxpy(double *restrict dr, double *restrict di,
                             const double *restrict sr, const double *restrict si,
                             double cr, double ci, int n)
{
    for (int j = 0; j < n; ++j) {
        dr[j] += cr * sr[j] - ci * si[j];
        di[j] += cr * si[j] + ci * sr[j];
    }
}

#endif
