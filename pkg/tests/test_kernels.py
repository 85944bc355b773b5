import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_density
from qbeats import _kernels_py, kernels
from qbeats.hilbert import build_basis, photon_numbers
from qbeats.liouville import SystemParams, make_generator

compiled = pytest.importorskip("qbeats._kernels")


def _model(params=SystemParams(drive=0.2, xi_b=0.05), basis=None):
    basis = basis or build_basis(n1_max=2, n2_max=1)
    gen = make_generator(params, basis)
    return gen, gen.kernel_model()


@pytest.mark.parametrize("hermitian", [False, True])
def test_rhs_parity(hermitian, rng):
    gen, m = _model()
    d = gen.basis.dim
    rho = random_density(d, rng)
    if not hermitian:
        rho = rho + 0.3j * rng.normal(size=(d, d))
    outs = []
    for impl in (compiled, _kernels_py):
        out = np.empty_like(rho)
        impl.lindblad_rhs(rho, out, *m.static, *m.coupling, 0.37, m.jrow, m.jcol, m.jval, m.joff,
                          hermitian)
        outs.append(out)
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-13


def test_rk4_parity_with_time_dependent_coupling(rng):
    gen, m = _model()
    d = gen.basis.dim
    stack = np.stack([random_density(d, rng) for _ in range(3)])
    n = 40
    h = 0.05
    t = h * np.arange(n)
    gvals = np.stack([0.25 * np.sin(t) ** 2, 0.25 * np.sin(t + h / 2) ** 2, 0.25 * np.sin(t + h) ** 2], 1)
    obs = np.vstack([photon_numbers(gen.basis, "undriven"), np.ones(d)])
    results = []
    for impl in (compiled, _kernels_py):
        s = stack.copy()
        read = np.zeros((3, n + 1, 2))
        impl.rk4_run(s, h, np.ascontiguousarray(gvals), *m.static, *m.coupling,
                     m.jrow, m.jcol, m.jval, m.joff, obs, read, True)
        results.append((s, read))
    assert np.max(np.abs(results[0][0] - results[1][0])) < 1e-12
    assert np.max(np.abs(results[0][1] - results[1][1])) < 1e-12
    # the readout of the trace observable is conserved
    assert np.allclose(results[0][1][:, :, 1], 1.0, atol=1e-12)


def test_backend_selection_env_var():
    code = "import qbeats.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, QBEATS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env.pop("QBEATS_PURE_PYTHON")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "compiled"


def test_default_backend_is_compiled():
    if os.environ.get("QBEATS_PURE_PYTHON", "") in ("", "0"):
        assert kernels.BACKEND == "compiled"
