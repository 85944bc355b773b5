# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Lindblad right-hand side and fixed-step RK4 on a stack of matrices.

Operators arrive in CSR (effective Hamiltonian) and COO (jump operators) form.
The right-hand side is

    drho = -i (K rho - rho K^H) + sum_c J_c rho J_c^H,   K = K0 + g * Kg

and never forms the vectorised superoperator.  Internally each matrix is held
as separate real and imaginary planes so the row updates vectorise.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

ctypedef double complex cplx


cdef struct Csr:
    const int* ptr
    const int* idx
    const double* re
    const double* im


cdef struct Jumps:
    int nchan
    const int* off
    const int* row
    const int* col
    const double* re
    const double* im


cdef extern from "_rowops.h" nogil:
    void row_caxpy(double* dr, double* di, const double* sr, const double* si,
                   double cr, double ci, int n)


cdef inline void _accum_left(const Csr* k, double scale, const double* rr, const double* ri,
                             double* ar, double* ai, int d) noexcept nogil:
    # a += -i * scale * K @ rho
    cdef int i, j, p
    cdef double cr, ci
    cdef const double* sr
    cdef const double* si
    cdef double* dr
    cdef double* di
    for i in range(d):
        dr = ar + i * d
        di = ai + i * d
        for p in range(k.ptr[i], k.ptr[i + 1]):
            cr = scale * k.im[p]
            ci = -scale * k.re[p]
            row_caxpy(dr, di, rr + k.idx[p] * d, ri + k.idx[p] * d, cr, ci, d)


cdef inline void _accum_right(const Csr* k, double scale, const double* rr, const double* ri,
                              double* ar, double* ai, int d) noexcept nogil:
    # a += i * scale * rho @ K^H
    cdef int i, j, p, kk
    cdef double cr, ci
    for j in range(d):
        for p in range(k.ptr[j], k.ptr[j + 1]):
            kk = k.idx[p]
            cr = scale * k.im[p]
            ci = scale * k.re[p]
            for i in range(d):
                ar[i * d + j] += cr * rr[i * d + kk] - ci * ri[i * d + kk]
                ai[i * d + j] += cr * ri[i * d + kk] + ci * rr[i * d + kk]


cdef void _rhs(const double* rr, const double* ri, double* outr, double* outi, int d,
               const Csr* k0, const Csr* kg, double g, const Jumps* jm,
               bint hermitian) noexcept nogil:
    cdef int i, j, c, p, q, a, b, n = d * d
    cdef double vr, vi, wr, wi, x, y
    for i in range(n):
        outr[i] = 0.0
        outi[i] = 0.0
    _accum_left(k0, 1.0, rr, ri, outr, outi, d)
    if g != 0.0:
        _accum_left(kg, g, rr, ri, outr, outi, d)
    if hermitian:
        for i in range(d):
            outr[i * d + i] = 2.0 * outr[i * d + i]
            outi[i * d + i] = 0.0
            for j in range(i + 1, d):
                x = outr[i * d + j] + outr[j * d + i]
                y = outi[i * d + j] - outi[j * d + i]
                outr[i * d + j] = x
                outi[i * d + j] = y
                outr[j * d + i] = x
                outi[j * d + i] = -y
    else:
        _accum_right(k0, 1.0, rr, ri, outr, outi, d)
        if g != 0.0:
            _accum_right(kg, g, rr, ri, outr, outi, d)
    for c in range(jm.nchan):
        for p in range(jm.off[c], jm.off[c + 1]):
            vr = jm.re[p]
            vi = jm.im[p]
            a = jm.row[p] * d
            b = jm.col[p] * d
            for q in range(jm.off[c], jm.off[c + 1]):
                # w = v_p * conj(v_q)
                wr = vr * jm.re[q] + vi * jm.im[q]
                wi = vi * jm.re[q] - vr * jm.im[q]
                i = a + jm.row[q]
                j = b + jm.col[q]
                outr[i] += wr * rr[j] - wi * ri[j]
                outi[i] += wr * ri[j] + wi * rr[j]


cdef class _Model:
    cdef Csr k0, kg
    cdef Jumps jm
    cdef object keep

    def __init__(self, kp, ki, kv, gp, gi, gv, jrow, jcol, jval, joff):
        arrs = [np.ascontiguousarray(kp, dtype=np.int32), np.ascontiguousarray(ki, dtype=np.int32),
                np.ascontiguousarray(np.real(kv), dtype=np.float64),
                np.ascontiguousarray(np.imag(kv), dtype=np.float64),
                np.ascontiguousarray(gp, dtype=np.int32), np.ascontiguousarray(gi, dtype=np.int32),
                np.ascontiguousarray(np.real(gv), dtype=np.float64),
                np.ascontiguousarray(np.imag(gv), dtype=np.float64),
                np.ascontiguousarray(joff, dtype=np.int32), np.ascontiguousarray(jrow, dtype=np.int32),
                np.ascontiguousarray(jcol, dtype=np.int32),
                np.ascontiguousarray(np.real(jval), dtype=np.float64),
                np.ascontiguousarray(np.imag(jval), dtype=np.float64)]
        # pad so that zero-length arrays still have a valid data pointer
        arrs = [np.concatenate([x, np.zeros(1, dtype=x.dtype)]) for x in arrs]
        self.keep = arrs
        self.k0.ptr = <const int*> (<cnp.ndarray> arrs[0]).data
        self.k0.idx = <const int*> (<cnp.ndarray> arrs[1]).data
        self.k0.re = <const double*> (<cnp.ndarray> arrs[2]).data
        self.k0.im = <const double*> (<cnp.ndarray> arrs[3]).data
        self.kg.ptr = <const int*> (<cnp.ndarray> arrs[4]).data
        self.kg.idx = <const int*> (<cnp.ndarray> arrs[5]).data
        self.kg.re = <const double*> (<cnp.ndarray> arrs[6]).data
        self.kg.im = <const double*> (<cnp.ndarray> arrs[7]).data
        self.jm.nchan = len(joff) - 1
        self.jm.off = <const int*> (<cnp.ndarray> arrs[8]).data
        self.jm.row = <const int*> (<cnp.ndarray> arrs[9]).data
        self.jm.col = <const int*> (<cnp.ndarray> arrs[10]).data
        self.jm.re = <const double*> (<cnp.ndarray> arrs[11]).data
        self.jm.im = <const double*> (<cnp.ndarray> arrs[12]).data


def lindblad_rhs(rho, out, kp, ki, kv, gp, gi, gv, double g, jrow, jcol, jval, joff,
                 bint hermitian=False):
    cdef _Model m = _Model(kp, ki, kv, gp, gi, gv, jrow, jcol, jval, joff)
    cdef cnp.ndarray[double, ndim=2, mode="c"] rr = np.ascontiguousarray(np.real(rho), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] ri = np.ascontiguousarray(np.imag(rho), dtype=np.float64)
    cdef int d = rr.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] orr = np.empty((d, d))
    cdef cnp.ndarray[double, ndim=2, mode="c"] ori = np.empty((d, d))
    with nogil:
        _rhs(&rr[0, 0], &ri[0, 0], &orr[0, 0], &ori[0, 0], d, &m.k0, &m.kg, g, &m.jm, hermitian)
    out[...] = orr + 1j * ori


def rk4_run(cplx[:, :, ::1] stack, double h, double[:, ::1] gvals,
            kp, ki, kv, gp, gi, gv, jrow, jcol, jval, joff,
            double[:, ::1] obs, double[:, :, ::1] readout, bint hermitian=True):
    """Advance every matrix in ``stack`` by ``gvals.shape[0]`` RK4 steps in place.

    ``gvals[s]`` holds the coupling at the start, midpoint and end of step s.
    ``readout[b, s, o]`` receives sum_i obs[o, i] * Re stack[b, i, i] before step s
    and after the last step (s = n_steps).
    """
    cdef _Model m = _Model(kp, ki, kv, gp, gi, gv, jrow, jcol, jval, joff)
    cdef int nb = stack.shape[0], d = stack.shape[1], nsteps = gvals.shape[0]
    cdef int nobs = obs.shape[0]
    cdef int b, s, i, o, n = d * d
    cdef double acc
    cdef double h2 = 0.5 * h, h6 = h / 6.0, h3 = h / 3.0
    cdef double* buf
    cdef double *rr, *ri, *kr, *ki_, *tr, *ti, *ar, *ai
    cdef cplx* z
    if readout.shape[0] < nb or readout.shape[1] < nsteps + 1 or readout.shape[2] < nobs:
        raise ValueError("readout buffer too small")
    if obs.shape[1] != d:
        raise ValueError("observable length does not match state dimension")
    buf = <double*> malloc(8 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    rr = buf
    ri = buf + n
    kr = buf + 2 * n
    ki_ = buf + 3 * n
    tr = buf + 4 * n
    ti = buf + 5 * n
    ar = buf + 6 * n
    ai = buf + 7 * n
    try:
        with nogil:
            for b in range(nb):
                z = &stack[b, 0, 0]
                for i in range(n):
                    rr[i] = z[i].real
                    ri[i] = z[i].imag
                for s in range(nsteps + 1):
                    for o in range(nobs):
                        acc = 0.0
                        for i in range(d):
                            acc = acc + obs[o, i] * rr[i * d + i]
                        readout[b, s, o] = acc
                    if s == nsteps:
                        break
                    _rhs(rr, ri, kr, ki_, d, &m.k0, &m.kg, gvals[s, 0], &m.jm, hermitian)
                    for i in range(n):
                        ar[i] = rr[i] + h6 * kr[i]
                        ai[i] = ri[i] + h6 * ki_[i]
                        tr[i] = rr[i] + h2 * kr[i]
                        ti[i] = ri[i] + h2 * ki_[i]
                    _rhs(tr, ti, kr, ki_, d, &m.k0, &m.kg, gvals[s, 1], &m.jm, hermitian)
                    for i in range(n):
                        ar[i] += h3 * kr[i]
                        ai[i] += h3 * ki_[i]
                        tr[i] = rr[i] + h2 * kr[i]
                        ti[i] = ri[i] + h2 * ki_[i]
                    _rhs(tr, ti, kr, ki_, d, &m.k0, &m.kg, gvals[s, 1], &m.jm, hermitian)
                    for i in range(n):
                        ar[i] += h3 * kr[i]
                        ai[i] += h3 * ki_[i]
                        tr[i] = rr[i] + h * kr[i]
                        ti[i] = ri[i] + h * ki_[i]
                    _rhs(tr, ti, kr, ki_, d, &m.k0, &m.kg, gvals[s, 2], &m.jm, hermitian)
                    for i in range(n):
                        rr[i] = ar[i] + h6 * kr[i]
                        ri[i] = ai[i] + h6 * ki_[i]
                for i in range(n):
                    z[i] = rr[i] + 1j * ri[i]
    finally:
        free(buf)
