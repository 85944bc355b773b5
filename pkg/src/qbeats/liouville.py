"""Hamiltonian, Lindblad generator, propagation and steady state.

Rates are in units of the spontaneous decay rate (gamma = 1 internally).
The dissipator convention is L[o] = 2 o rho o^+ - o^+ o rho - rho o^+ o with
the channel rates kappa, kappa, gamma/2, gamma/2, gamma/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .hilbert import (CORE_LEVELS, AtomicLevel, CompositeBasis, Operator,
                      mode_annihilator, photon_numbers, sigma)

L = AtomicLevel


@dataclass(frozen=True)
class SystemParams:
    g: float = 0.25
    kappa: float = 0.5
    gamma: float = 1.0
    delta: float = 0.5
    delta_prime: float | None = None
    drive: float = 1.0 / 64.0
    xi_b: float = 0.0
    c0: float = math.sqrt(4 / 7)
    c0p: float = math.sqrt(15 / 28)
    c1: float = -math.sqrt(3 / 14)
    c1p: float = -math.sqrt(5 / 14)
    gamma_hz: float | None = None  # physical value of gamma, metadata only

    def __post_init__(self):
        if self.delta_prime is None:
            object.__setattr__(self, "delta_prime", self.delta)
        for name in ("g", "kappa", "gamma", "drive", "xi_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("g", "kappa", "gamma", "delta", "delta_prime", "drive", "xi_b",
                     "c0", "c0p", "c1", "c1p"):
            if not math.isfinite(float(getattr(self, name))):
                raise ValueError(f"{name} must be finite")

    def replace(self, **changes) -> SystemParams:
        return replace(self, **changes)

    def scaled(self, factor: float) -> SystemParams:
        """All rates multiplied by ``factor`` (dimensionless coefficients untouched)."""
        return replace(self, g=self.g * factor, kappa=self.kappa * factor,
                       gamma=self.gamma * factor, delta=self.delta * factor,
                       delta_prime=self.delta_prime * factor, drive=self.drive * factor,
                       xi_b=self.xi_b * factor)

    def max_rate(self) -> float:
        return max(self.kappa, self.gamma, self.g, abs(self.delta), abs(self.delta_prime),
                   self.drive, self.xi_b)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    basis: CompositeBasis

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError("density matrix does not match basis dimension")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def pure(cls, basis: CompositeBasis, psi: np.ndarray) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), basis)

    @classmethod
    def basis_state(cls, basis: CompositeBasis, level, n1: int = 0, n2: int = 0) -> DensityMatrix:
        return cls(basis.projector(level, n1, n2), basis)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def population(self, level) -> float:
        a = self.basis.atomic_marginal(self.matrix)
        i = self.basis.level_index(level)
        return float(a[i, i].real)

    def normalized(self) -> DensityMatrix:
        tr = np.trace(self.matrix).real
        if tr <= 0:
            raise ValueError("cannot normalise a state with nonpositive trace")
        return DensityMatrix(self.matrix / tr, self.basis)

    def check(self, herm_tol: float = 1e-12, trace_tol: float = 1e-10,
              pos_tol: float = 1e-8) -> list[str]:
        """Return the list of violated invariants (empty when physical)."""
        problems = []
        if (e := self.hermiticity_error()) > herm_tol:
            problems.append(f"hermiticity error {e:.3e}")
        if abs(self.trace - 1.0) > trace_tol:
            problems.append(f"trace {self.trace:.15g}")
        if (m := self.min_eigenvalue()) < -pos_tol:
            problems.append(f"negative eigenvalue {m:.3e}")
        return problems


def trace_distance(a, b) -> float:
    a = a.matrix if isinstance(a, DensityMatrix) else np.asarray(a)
    b = b.matrix if isinstance(b, DensityMatrix) else np.asarray(b)
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


# -- Hamiltonian -------------------------------------------------------------------------

def _require_core(basis: CompositeBasis) -> None:
    missing = [lv.value for lv in CORE_LEVELS if lv not in basis.levels]
    if missing:
        raise ValueError(f"basis lacks core levels {missing}")


def _free_hamiltonian(p: SystemParams, basis: CompositeBasis) -> np.ndarray:
    s = lambda i, j: sigma(basis, i, j).matrix
    return (p.delta_prime * (s(L.E_M1, L.E_M1) - s(L.E_P1, L.E_P1))
            + p.delta * (s(L.B_M1, L.B_M1) - s(L.B_P1, L.B_P1)))


def _interaction_per_g(p: SystemParams, basis: CompositeBasis) -> np.ndarray:
    """Atom-field coupling divided by g (so that H_I = g * this)."""
    s = lambda i, j: sigma(basis, i, j).matrix
    a1 = mode_annihilator(basis, "driven").matrix
    a2 = mode_annihilator(basis, "undriven").matrix
    v = (p.c0 * s(L.E_0, L.B_0) @ a1
         + p.c0p * (s(L.E_P1, L.B_P1) + s(L.E_M1, L.B_M1)) @ a1
         + p.c1 * (s(L.E_0, L.B_P1) + s(L.E_0, L.B_M1)) @ a2
         + p.c1p * (s(L.E_M1, L.B_0) + s(L.E_P1, L.B_0)) @ a2)
    return -(v + v.conj().T)


def _drive_per_e(basis: CompositeBasis) -> np.ndarray:
    a1 = mode_annihilator(basis, "driven").matrix
    return 1j * (a1.conj().T - a1)


def _birefringence_per_xi(basis: CompositeBasis) -> np.ndarray:
    a1 = mode_annihilator(basis, "driven").matrix
    a2 = mode_annihilator(basis, "undriven").matrix
    return 1j * (a1.conj().T @ a2 - a2.conj().T @ a1)


def build_hamiltonian(params: SystemParams, basis: CompositeBasis) -> Operator:
    _require_core(basis)
    h = (_free_hamiltonian(params, basis) + params.g * _interaction_per_g(params, basis)
         + params.drive * _drive_per_e(basis) + params.xi_b * _birefringence_per_xi(basis))
    return Operator(h, basis, "H")


def build_collapse_ops(params: SystemParams, basis: CompositeBasis) -> list[tuple[float, Operator]]:
    _require_core(basis)
    s = lambda i, j: sigma(basis, i, j).matrix
    p = params
    half = 0.5 * p.gamma
    pi = p.c0 * s(L.B_0, L.E_0) + p.c0p * (s(L.B_P1, L.E_P1) + s(L.B_M1, L.E_M1))
    sig_a = p.c1 * s(L.B_0, L.E_M1) + p.c1p * s(L.B_P1, L.E_0)
    sig_b = p.c1p * s(L.B_M1, L.E_0) + p.c1 * s(L.B_0, L.E_P1)
    return [
        (p.kappa, mode_annihilator(basis, "driven")),
        (p.kappa, mode_annihilator(basis, "undriven")),
        (half, Operator(pi, basis, "pi decay")),
        (half, Operator(sig_a, basis, "sigma decay a")),
        (half, Operator(sig_b, basis, "sigma decay b")),
    ]


# -- Generator ---------------------------------------------------------------------------

def _csr(m: np.ndarray):
    c = sp.csr_matrix(np.where(np.abs(m) > 0, m, 0))
    c.eliminate_zeros()
    return (c.indptr.astype(np.int32), c.indices.astype(np.int32),
            c.data.astype(np.complex128))


@dataclass(frozen=True)
class KernelModel:
    """Sparse arrays consumed by the compiled/numpy kernels."""
    static: tuple
    coupling: tuple
    jrow: np.ndarray
    jcol: np.ndarray
    jval: np.ndarray
    joff: np.ndarray


@dataclass(frozen=True, eq=False)
class Generator:
    """Lindblad generator split as H = H_rest + E*H_drive + g*H_coupling.

    The split lets drive switching and a time-dependent coupling reuse one
    compiled set of operators.
    """
    basis: CompositeBasis
    params: SystemParams
    h_rest: np.ndarray
    h_drive: np.ndarray
    h_coupling: np.ndarray
    collapse: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def hamiltonian(self) -> Operator:
        p = self.params
        return Operator(self.h_rest + p.drive * self.h_drive + p.g * self.h_coupling,
                        self.basis, "H")

    @property
    def collapse_ops(self) -> list[tuple[float, Operator]]:
        return list(self.collapse)

    def with_drive(self, drive: float) -> Generator:
        return replace(self, params=self.params.replace(drive=drive), _cache={})

    def with_coupling(self, g: float) -> Generator:
        return replace(self, params=self.params.replace(g=g), _cache={})

    def action(self, rho) -> np.ndarray:
        return lindblad_apply(self, rho)

    def __call__(self, rho) -> np.ndarray:
        return lindblad_apply(self, rho)

    def damping(self) -> np.ndarray:
        d = np.zeros_like(self.h_rest)
        for rate, op in self.collapse:
            d += rate * (op.matrix.conj().T @ op.matrix)
        return d

    def kernel_model(self) -> KernelModel:
        """Static part carries drive and damping; coupling part is per unit g."""
        if "model" not in self._cache:
            p = self.params
            k_static = self.h_rest + p.drive * self.h_drive - 1j * self.damping()
            rows, cols, vals, off = [], [], [], [0]
            for rate, op in self.collapse:
                j = math.sqrt(2.0 * rate) * op.matrix
                r, c = np.nonzero(j)
                rows.append(r)
                cols.append(c)
                vals.append(j[r, c])
                off.append(off[-1] + len(r))
            self._cache["model"] = KernelModel(
                _csr(k_static), _csr(self.h_coupling),
                np.concatenate(rows).astype(np.int32), np.concatenate(cols).astype(np.int32),
                np.concatenate(vals).astype(np.complex128), np.asarray(off, dtype=np.int32))
        return self._cache["model"]

    def sparse_superoperator(self, g: float | None = None) -> sp.csr_matrix:
        """Row-major vectorised generator, vec(drho) = S @ vec(rho), as a sparse matrix."""
        g = self.params.g if g is None else g
        p = self.params
        d = self.basis.dim
        eye = sp.identity(d, format="csr", dtype=complex)
        h = sp.csr_matrix(self.h_rest + p.drive * self.h_drive + g * self.h_coupling)
        k = h - 1j * sp.csr_matrix(self.damping())
        s = -1j * sp.kron(k, eye) + 1j * sp.kron(eye, k.conj())
        for rate, op in self.collapse:
            o = sp.csr_matrix(op.matrix)
            s = s + 2.0 * rate * sp.kron(o, o.conj())
        return sp.csr_matrix(s)


def make_generator(params: SystemParams, basis: CompositeBasis) -> Generator:
    _require_core(basis)
    h_rest = _free_hamiltonian(params, basis) + params.xi_b * _birefringence_per_xi(basis)
    collapse = tuple(build_collapse_ops(params, basis))
    return Generator(basis, params, h_rest.astype(complex), _drive_per_e(basis),
                     _interaction_per_g(params, basis).astype(complex), collapse)


def _as_matrix(rho, basis: CompositeBasis) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        if rho.basis != basis:
            raise ValueError("state and generator live on different bases")
        return rho.matrix
    m = np.asarray(rho, dtype=complex)
    if m.shape != (basis.dim, basis.dim):
        raise ValueError("state and generator live on different bases")
    return m


def lindblad_apply(gen: Generator, rho, g: float | None = None) -> np.ndarray:
    """drho/dt for the given state; matrix-free."""
    m = np.ascontiguousarray(_as_matrix(rho, gen.basis))
    model = gen.kernel_model()
    out = np.empty_like(m)
    kernels.lindblad_rhs(m, out, *model.static, *model.coupling,
                         gen.params.g if g is None else float(g),
                         model.jrow, model.jcol, model.jval, model.joff, False)
    return out


# -- Propagation -------------------------------------------------------------------------

STEP_FACTOR = 10.0
"""Correlation pipelines use h <= 1 / (STEP_FACTOR * fastest rate)."""
PROPAGATE_STEP_FACTOR = 40.0
"""``propagate`` returns states for general use and takes a finer step (RK4 error ~ h^4)."""


def step_size_limit(params: SystemParams, g_max: float | None = None,
                    factor: float = STEP_FACTOR) -> float:
    rate = params.max_rate() if g_max is None else max(params.max_rate(), g_max)
    return 1.0 / (factor * rate)


def substeps(dt: float, h_max: float) -> int:
    return max(1, int(math.ceil(dt / h_max - 1e-9)))


Coupling = Callable[[np.ndarray], np.ndarray]


def run_segment(gen: Generator, stack: np.ndarray, t0: float, h: float, n_steps: int,
                coupling: Coupling | None = None, obs: np.ndarray | None = None,
                hermitian: bool = True) -> np.ndarray:
    """In-place RK4 over ``n_steps`` steps of size h starting at absolute time t0.

    ``coupling`` maps an array of absolute times to g(t); None means the static g.
    Returns readout[b, s, o] = sum_i obs[o, i] Re stack[b, i, i] at steps 0..n_steps.
    """
    model = gen.kernel_model()
    steps = t0 + h * np.arange(n_steps)
    if coupling is None:
        gvals = np.full((n_steps, 3), gen.params.g)
    else:
        gvals = np.ascontiguousarray(np.stack(
            [coupling(steps), coupling(steps + 0.5 * h), coupling(steps + h)], axis=1),
            dtype=float)
    if obs is None:
        obs = np.ones((1, gen.basis.dim))
    obs = np.ascontiguousarray(np.atleast_2d(obs), dtype=float)
    readout = np.zeros((stack.shape[0], n_steps + 1, obs.shape[0]))
    if stack.shape[0]:
        kernels.rk4_run(stack, float(h), gvals, *model.static, *model.coupling,
                        model.jrow, model.jcol, model.jval, model.joff, obs, readout, hermitian)
    return readout


@dataclass
class PropagationResult:
    times: np.ndarray
    states: list[DensityMatrix]
    flags: list[str]

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[DensityMatrix]:
        return iter(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def ok(self) -> bool:
        return not self.flags


@dataclass(frozen=True)
class DriveSwitch:
    """Piecewise-constant drive: E = values[k] for t >= times[k]."""
    times: tuple
    values: tuple

    def at(self, t: float, default: float) -> float:
        e = default
        for tk, v in zip(self.times, self.values):
            if t >= tk - 1e-12:
                e = v
        return e


def evolve(gen: Generator, rho0, t_grid: Sequence[float], coupling: Coupling | None = None,
           obs: np.ndarray | None = None, hermitian: bool = True,
           h_max: float | None = None) -> Iterator[tuple[float, np.ndarray, np.ndarray]]:
    """Yield (t, state, readout-at-t) at each grid time; the state buffer is reused."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ValueError("t_grid must be a nonempty 1-D sequence")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if h_max is None:
        h_max = step_size_limit(gen.params)
    rho = np.array(_as_matrix(rho0, gen.basis), dtype=complex)[None].copy()
    if obs is None:
        obs = np.ones((1, gen.basis.dim))
    obs = np.atleast_2d(obs)
    yield t_grid[0], rho[0], np.real(np.diagonal(rho[0])) @ obs.T
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        n = substeps(t1 - t0, h_max)
        read = run_segment(gen, rho, t0, (t1 - t0) / n, n, coupling, obs, hermitian)
        yield t1, rho[0], read[0, -1]


def propagate(gen: Generator, rho0, t_grid: Sequence[float], coupling: Coupling | None = None,
              positivity: bool = True, h_max: float | None = None) -> PropagationResult:
    """Fixed-step RK4 propagation, states stored at every grid time.

    Trace drift beyond 1e-8 per unit time, Hermiticity loss or negative
    eigenvalues are reported in ``flags``; the states are never renormalised.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if abs(t_grid[0]) > 1e-15:
        raise ValueError("t_grid must start at 0")
    start = _as_matrix(rho0, gen.basis)
    tr0 = float(np.real(np.trace(start)))
    scale = max(abs(tr0), 1e-300)
    states, flags = [], []
    if h_max is None:
        h_max = step_size_limit(gen.params, factor=PROPAGATE_STEP_FACTOR)
    for t, m, _ in evolve(gen, start, t_grid, coupling, h_max=h_max):
        dm = DensityMatrix(m, gen.basis)
        states.append(dm)
        flags.extend(f"t={t:.6g}: {msg}" for msg in
                     state_diagnostics(dm.matrix, tr0, t, positivity=positivity, scale=scale))
    return PropagationResult(t_grid, states, flags)


def state_diagnostics(m: np.ndarray, tr0: float, t: float, positivity: bool = True,
                      scale: float = 1.0) -> list[str]:
    out = []
    tr = float(np.real(np.trace(m)))
    if abs(tr - tr0) / scale > 1e-8 * max(t, 1.0):
        out.append(f"trace drift {tr - tr0:.3e}")
    herm = float(np.max(np.abs(m - m.conj().T))) / scale
    if herm > 1e-10:
        out.append(f"hermiticity error {herm:.3e}")
    if positivity:
        lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] / scale
        if lam < -1e-8:
            out.append(f"negative eigenvalue {lam:.3e}")
    return out


# -- Steady state ------------------------------------------------------------------------

class DegenerateSteadyState(RuntimeError):
    """The generator has more than one stationary state."""


def cavity_steady_state(params: SystemParams, basis: CompositeBasis,
                        level=L.B_0) -> DensityMatrix:
    """Driven empty cavity (no atom coupling) times an atom parked in ``level``.

    The undriven mode stays in vacuum (xi_b couples it to the driven mode and is
    included).
    """
    d1, d2 = basis.n1_dim, basis.n2_dim
    # one atomic level's photon block is closed when g = 0; the atomic energy is a constant there
    ia = basis.level_index(level)
    block = slice(ia * d1 * d2, (ia + 1) * d1 * d2)
    h = (params.drive * _drive_per_e(basis) + params.xi_b * _birefringence_per_xi(basis))[block, block]
    a1 = mode_annihilator(basis, "driven").matrix[block, block]
    a2 = mode_annihilator(basis, "undriven").matrix[block, block]
    small = _vectorised(h, [(params.kappa, a1), (params.kappa, a2)])
    rho_c = _solve_stationary(small, d1 * d2)
    full = np.zeros((basis.dim, basis.dim), dtype=complex)
    full[block, block] = rho_c
    return DensityMatrix(full, basis)


def _vectorised(h: np.ndarray, ops) -> sp.csr_matrix:
    d = h.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    k = sp.csr_matrix(h, dtype=complex)
    for rate, o in ops:
        k = k - 1j * rate * sp.csr_matrix(o.conj().T @ o)
    s = -1j * sp.kron(k, eye) + 1j * sp.kron(eye, k.conj())
    for rate, o in ops:
        oc = sp.csr_matrix(o)
        s = s + 2.0 * rate * sp.kron(oc, oc.conj())
    return sp.csr_matrix(s)


def _solve_stationary(s: sp.csr_matrix, d: int, pivot_tol: float = 1e-9) -> np.ndarray:
    """Solve S vec(rho) = 0 with one row replaced by the trace condition."""
    s = sp.lil_matrix(s)
    trace_row = np.zeros(d * d, dtype=complex)
    trace_row[np.arange(d) * (d + 1)] = 1.0
    s[0, :] = trace_row
    s = sp.csc_matrix(s)
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    try:
        lu = spla.splu(s, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise DegenerateSteadyState(f"singular stationary system: {exc}") from None
    u = np.abs(lu.U.diagonal())
    if u.min() <= pivot_tol * u.max():
        raise DegenerateSteadyState(
            f"stationary system is rank deficient (pivot ratio {u.min() / u.max():.2e})")
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise DegenerateSteadyState("stationary solve produced non-finite values")
    rho = x.reshape(d, d)
    return 0.5 * (rho + rho.conj().T)


# Liouville-space size above which sparse LU fill-in makes the direct solve impractical
DIRECT_SOLVE_LIMIT = 6_000


def _solve_stationary_krylov(gen: Generator, tol: float) -> np.ndarray:
    """Matrix-free GMRES on L(x) + tr(x) R = R, whose unique solution is the stationary state.

    The rank-one trace term removes the null direction of L. The preconditioner
    inverts the coherent part x -> -i(K x - x K^+) in the eigenbasis of the
    effective non-Hermitian Hamiltonian K, shifted by ``shift`` to stay regular.
    A second solve with a different rank-one direction detects a degenerate null space.
    """
    d = gen.basis.dim
    p = gen.params
    k = gen.h_rest + p.drive * gen.h_drive + p.g * gen.h_coupling - 1j * gen.damping()
    lam, v = np.linalg.eig(k)
    v_inv = np.linalg.inv(v)
    shift = 0.05
    denom = -1j * (lam[:, None] - lam.conj()[None, :]) - shift

    def solve(r):
        def apply(x):
            m = x.reshape(d, d)
            return (lindblad_apply(gen, m) + np.trace(m) * r).reshape(-1)

        def precondition(y):
            t = v_inv @ y.reshape(d, d) @ v_inv.conj().T
            return (v @ (t / denom) @ v.conj().T).reshape(-1)

        n = d * d
        op = spla.LinearOperator((n, n), apply, dtype=complex)
        pre = spla.LinearOperator((n, n), precondition, dtype=complex)
        x, info = spla.gmres(op, r.reshape(-1), M=pre, rtol=1e-3 * tol, atol=0.0,
                             restart=200, maxiter=50)
        if info != 0 or not np.all(np.isfinite(x)):
            raise DegenerateSteadyState("iterative stationary solve did not converge")
        rho = x.reshape(d, d)
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real

    rho = solve(np.eye(d, dtype=complex) / d)
    # a unique stationary state does not depend on the rank-one direction
    other = solve(np.diag(np.linspace(1.0, 2.0, d) / (1.5 * d)).astype(complex))
    if np.max(np.abs(rho - other)) > 1e-6:
        raise DegenerateSteadyState("stationary state is not unique")
    return rho / np.trace(rho).real


def steady_state(gen: Generator, tol: float = 1e-10) -> DensityMatrix:
    """Unique stationary state by a sparse direct solve with a trace row.

    Refuses (DegenerateSteadyState) when no drive pumps the atom, since every
    ground level times the vacuum is then stationary.
    """
    if gen.params.drive <= 0.0:
        raise DegenerateSteadyState(
            "drive E = 0: every ground level times the vacuum is stationary")
    extra = [lv for lv in gen.basis.levels if lv not in CORE_LEVELS]
    if extra:
        # shelf and ion levels are uncoupled, so any population there is stationary;
        # the relevant state is the one with those levels empty
        core = CompositeBasis(tuple(lv for lv in gen.basis.levels if lv in CORE_LEVELS),
                              gen.basis.n1_max, gen.basis.n2_max)
        inner = steady_state(make_generator(gen.params, core), tol)
        return embed_state(inner, gen.basis)
    if gen.basis.dim ** 2 <= DIRECT_SOLVE_LIMIT:
        rho = _solve_stationary(gen.sparse_superoperator(), gen.basis.dim)
        rho = rho / np.trace(rho).real
        res = float(np.max(np.abs(lindblad_apply(gen, rho))))
        if res > tol:
            # one round of iterative refinement on the residual
            rho = _refine(gen, rho)
            res = float(np.max(np.abs(lindblad_apply(gen, rho))))
    else:
        rho = _solve_stationary_krylov(gen, tol)
        res = float(np.max(np.abs(lindblad_apply(gen, rho))))
    if res > tol:
        raise DegenerateSteadyState(f"stationary residual {res:.2e} exceeds {tol:.0e}")
    # a degenerate null space can slip past the solver; its arbitrary member is rarely a state
    low = float(np.linalg.eigvalsh(rho)[0])
    if low < -1e-8:
        raise DegenerateSteadyState(f"stationary solution is not positive (eigenvalue {low:.2e})")
    return DensityMatrix(rho, gen.basis)


def embed_state(rho: DensityMatrix, basis: CompositeBasis) -> DensityMatrix:
    """Place a state of a sub-basis (same truncations, fewer levels) into ``basis``."""
    src = rho.basis
    if (src.n1_max, src.n2_max) != (basis.n1_max, basis.n2_max):
        raise ValueError("bases differ in photon truncation")
    f = src.n1_dim * src.n2_dim
    idx = np.concatenate([basis.level_index(lv) * f + np.arange(f) for lv in src.levels])
    full = np.zeros((basis.dim, basis.dim), dtype=complex)
    full[np.ix_(idx, idx)] = rho.matrix
    return DensityMatrix(full, basis)


def _refine(gen: Generator, rho: np.ndarray) -> np.ndarray:
    d = gen.basis.dim
    s = sp.lil_matrix(gen.sparse_superoperator())
    r = -lindblad_apply(gen, rho).reshape(-1)
    row = np.zeros(d * d, dtype=complex)
    row[np.arange(d) * (d + 1)] = 1.0
    s[0, :] = row
    r[0] = 0.0
    dx = spla.spsolve(sp.csc_matrix(s), r).reshape(d, d)
    rho = rho + 0.5 * (dx + dx.conj().T)
    return rho / np.trace(rho).real


def pumping_rate_estimate(params: SystemParams) -> float:
    """Weak-drive optical pumping rate between ground sublevels.

    Cavity field E/kappa drives b0 -> e0 with Rabi frequency 2 g c0 E/kappa;
    the excitation rate Omega^2/Gamma uses the e0 decay rate in this dissipator
    convention, gamma (c0^2 + 2 c1'^2).
    """
    omega = 2.0 * params.g * abs(params.c0) * params.drive / params.kappa
    gamma_e0 = params.gamma * (params.c0 ** 2 + 2 * params.c1p ** 2)
    return omega ** 2 / gamma_e0
