"""Pure-numpy twin of the compiled kernels; same signatures, same arithmetic."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _dense_csr(indptr, indices, data, d):
    return sp.csr_matrix((np.asarray(data), np.asarray(indices), np.asarray(indptr)),
                         shape=(d, d)).toarray()


def _dense_jumps(jrow, jcol, jval, joff, d):
    mats = []
    for c in range(len(joff) - 1):
        lo, hi = joff[c], joff[c + 1]
        m = np.zeros((d, d), dtype=complex)
        np.add.at(m, (np.asarray(jrow[lo:hi]), np.asarray(jcol[lo:hi])), np.asarray(jval[lo:hi]))
        mats.append(m)
    return mats


def _rhs(rho, K0, Kg, g, jumps, hermitian):
    K = K0 + g * Kg if g != 0.0 else K0
    a = -1j * (K @ rho)
    if hermitian:
        out = a + np.conj(np.swapaxes(a, -1, -2))
    else:
        out = a + 1j * (rho @ K.conj().T)
    for J in jumps:
        out += J @ rho @ J.conj().T
    return out


def lindblad_rhs(rho, out, kp, ki, kv, gp, gi, gv, g, jrow, jcol, jval, joff, hermitian=False):
    d = rho.shape[0]
    K0 = _dense_csr(kp, ki, kv, d)
    Kg = _dense_csr(gp, gi, gv, d)
    out[...] = _rhs(np.asarray(rho), K0, Kg, g, _dense_jumps(jrow, jcol, jval, joff, d), hermitian)


def rk4_run(stack, h, gvals, kp, ki, kv, gp, gi, gv, jrow, jcol, jval, joff,
            obs, readout, hermitian=True):
    stack = np.asarray(stack)
    nb, d = stack.shape[0], stack.shape[1]
    gvals = np.asarray(gvals)
    obs = np.asarray(obs)
    K0 = _dense_csr(kp, ki, kv, d)
    Kg = _dense_csr(gp, gi, gv, d)
    jumps = _dense_jumps(jrow, jcol, jval, joff, d)
    if nb == 0:
        return
    nsteps = gvals.shape[0]
    readout = np.asarray(readout)
    rho = stack.copy()
    for s in range(nsteps + 1):
        diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
        readout[:nb, s, :obs.shape[0]] = diag @ obs.T
        if s == nsteps:
            break
        ga, gb, gc = gvals[s]
        k = _rhs(rho, K0, Kg, ga, jumps, hermitian)
        acc = rho + (h / 6.0) * k
        k = _rhs(rho + (0.5 * h) * k, K0, Kg, gb, jumps, hermitian)
        acc += (h / 3.0) * k
        k = _rhs(rho + (0.5 * h) * k, K0, Kg, gb, jumps, hermitian)
        acc += (h / 3.0) * k
        k = _rhs(rho + h * k, K0, Kg, gc, jumps, hermitian)
        rho = acc + (h / 6.0) * k
    stack[...] = rho
