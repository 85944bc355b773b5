"""Undriven-mode photon correlations and fringe analysis.

g2(tau) is computed with the quantum regression theorem: the conditioned
matrix a2 rho a2^+ is propagated with the same integrator as any other state
and the undriven-mode intensity is read off along the way.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .hilbert import AtomicLevel, CompositeBasis, mode_annihilator, photon_numbers
from .liouville import (DensityMatrix, Generator, SystemParams, _as_matrix, cavity_steady_state,
                        evolve, make_generator, state_diagnostics, steady_state)

NORMALIZATIONS = ("normalized-g2", "conditional-intensity", "unnormalized-G2")


class NormalizationError(ValueError):
    """The undriven mode carries no light, so g2 cannot be normalised."""


@dataclass
class CorrelationTrace:
    tau: np.ndarray
    values: np.ndarray
    normalization: str = "normalized-g2"
    metadata: dict = field(default_factory=dict)
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.tau.shape != self.values.shape or self.tau.ndim != 1:
            raise ValueError("tau and values must be 1-D arrays of equal length")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if len(self.tau) > 1:
            steps = np.diff(self.tau)
            if np.any(steps <= 0):
                raise ValueError("tau grid must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-12 * max(1.0, abs(self.tau[-1])):
                raise ValueError("tau grid must be uniform")
        scale = max(1.0, float(np.max(np.abs(self.values))) if len(self.values) else 1.0)
        if len(self.values) and float(np.min(self.values)) < -1e-10 * scale:
            raise ValueError(f"negative intensity {float(np.min(self.values)):.3e} in trace")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
            if self.stderr.shape != self.values.shape:
                raise ValueError("stderr must match values")

    @property
    def dtau(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def at(self, tau: float) -> float:
        return float(np.interp(tau, self.tau, self.values))

    def to_csv(self, path=None, stderr: bool | None = None, comments: dict | None = None) -> str:
        """Write ``tau,gvalue[,stderr]`` rows with 17 significant digits."""
        stderr = self.stderr is not None if stderr is None else stderr
        if stderr and self.stderr is None:
            raise ValueError("trace has no stderr column")
        buf = io.StringIO()
        for key, val in (comments or {}).items():
            buf.write(f"# {key}={val}\n")
        buf.write("tau,gvalue,stderr\n" if stderr else "tau,gvalue\n")
        for i, (t, v) in enumerate(zip(self.tau, self.values)):
            row = f"{t:.17g},{v:.17g}"
            if stderr:
                row += f",{self.stderr[i]:.17g}"
            buf.write(row + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, normalization: str = "normalized-g2") -> CorrelationTrace:
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], rows[1:]
        if header[:2] != ["tau", "gvalue"]:
            raise ValueError(f"unexpected CSV header {header}")
        data = np.array([[float(x) for x in r] for r in body])
        err = data[:, 2] if "stderr" in header else None
        return cls(data[:, 0], data[:, 1], normalization, {}, err)


@dataclass
class FringeMetrics:
    visibility: float
    predictability: float
    beat_frequency: float
    minima_positions: list
    maxima_positions: list = field(default_factory=list)
    flat: bool = False
    window: tuple = (0.0, math.inf)

    @property
    def complementarity(self) -> float:
        return self.predictability ** 2 + self.visibility ** 2


# -- states and intensities ----------------------------------------------------------------

def mean_photon(rho, which: str = "undriven", basis: CompositeBasis | None = None) -> float:
    basis = rho.basis if isinstance(rho, DensityMatrix) else basis
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    n = photon_numbers(basis, which)
    return float(np.real(np.diagonal(m)) @ n)


def click(rho, basis: CompositeBasis) -> np.ndarray:
    """Unnormalised a2 rho a2^+."""
    a2 = mode_annihilator(basis, "undriven").matrix
    return a2 @ _as_matrix(rho, basis) @ a2.conj().T


def conditional_state_after_click(rho: DensityMatrix) -> DensityMatrix:
    x = click(rho, rho.basis)
    p = float(np.real(np.trace(x)))
    if p <= 0.0:
        raise NormalizationError("no undriven photon: the click probability is zero")
    return DensityMatrix(x / p, rho.basis)


def qubit_block(rho) -> np.ndarray:
    """Atomic 2x2 block on (b-1, b+1), traced over both modes."""
    m = rho.basis.atomic_marginal(rho.matrix)
    idx = [rho.basis.level_index(AtomicLevel.B_M1), rho.basis.level_index(AtomicLevel.B_P1)]
    return m[np.ix_(idx, idx)]


def predictability_of(rho) -> float:
    """| P(b-1) - P(b+1) | / (P(b-1) + P(b+1)) for the atomic marginal."""
    q = np.real(np.diagonal(qubit_block(rho)))
    total = q.sum()
    return float(abs(q[0] - q[1]) / total) if total > 0 else float("nan")


def quasi_steady_state(gen: Generator, wait: float | None = None) -> DensityMatrix:
    """Atom in b0 with the cavity field relaxed to its quasi-steady state.

    Starts from the driven empty-cavity state with the atom in b0 and
    propagates for ``wait`` (default 10 cavity lifetimes), far shorter than the
    optical pumping time.  This is the pre-click state in which a first
    undriven photon heralds the b-1/b+1 superposition.
    """
    p = gen.params
    if wait is None:
        wait = 10.0 / max(p.kappa, 1e-12) if p.kappa > 0 else 20.0
    rho0 = cavity_steady_state(p, gen.basis, AtomicLevel.B_0)
    *_, (_, m, _) = evolve(gen, rho0.matrix, [0.0, wait])
    return DensityMatrix(m.copy(), gen.basis)


def pre_click_state(gen: Generator, kind: str = "steady", wait: float | None = None) -> DensityMatrix:
    if kind == "steady":
        return steady_state(gen)
    if kind == "pumped":
        return quasi_steady_state(gen, wait)
    raise ValueError(f"pre-click state must be 'steady' or 'pumped', got {kind!r}")


def conditional_intensity(gen: Generator, rho_c, tau_grid, coupling=None, t0: float = 0.0,
                          checkpoints: bool = True) -> tuple[np.ndarray, list[str]]:
    """Tr[a2^+ a2 rho_c(tau)] on the grid, plus invariant diagnostics of the propagation."""
    basis = gen.basis
    n2 = photon_numbers(basis, "undriven")
    m0 = np.array(_as_matrix(rho_c, basis))
    tr0 = float(np.real(np.trace(m0)))
    scale = max(abs(tr0), 1e-300)
    tau_grid = np.asarray(tau_grid, dtype=float)
    shifted = None if coupling is None else (lambda t: coupling(t + t0))
    out = np.empty(len(tau_grid))
    flags: list[str] = []
    obs = np.vstack([n2, np.ones(basis.dim)])
    stride = max(1, len(tau_grid) // 64)
    for k, (t, m, r) in enumerate(evolve(gen, m0, tau_grid - tau_grid[0], shifted, obs)):
        out[k] = r[0]
        if checkpoints:
            # trace of the conditioned matrix is not conserved-in-value only under
            # loss-free dynamics; Lindblad keeps it, so drift is an error
            flags.extend(f"tau={tau_grid[k]:.6g}: {msg}" for msg in state_diagnostics(
                m, tr0, t, positivity=(k % stride == 0 or k == len(tau_grid) - 1), scale=scale))
    return out, flags


def g2_undriven(rho_ss, gen: Generator, tau_grid, reference_intensity: float | None = None,
                strict: bool = False) -> CorrelationTrace:
    """Normalised second-order correlation of the undriven mode.

    G2(tau) = Tr[a2^+ a2 e^{L tau}(a2 rho a2^+)], divided by <n2>_rho times
    ``reference_intensity`` (default <n2>_rho, i.e. the usual <n2>^2 when rho is
    the steady state).
    """
    basis = gen.basis
    tau_grid = np.asarray(tau_grid, dtype=float)
    n_pre = mean_photon(DensityMatrix(_as_matrix(rho_ss, basis), basis))
    if n_pre <= 0.0:
        raise NormalizationError("undriven mode intensity is zero; g2 is undefined")
    ref = n_pre if reference_intensity is None else float(reference_intensity)
    if ref <= 0.0:
        raise NormalizationError("reference intensity must be positive")
    x = click(rho_ss, basis)
    vals, flags = conditional_intensity(gen, x, tau_grid)
    if strict and flags:
        raise RuntimeError("; ".join(flags[:5]))
    xs = DensityMatrix(x / np.trace(x).real, basis)
    meta = {
        "params": gen.params,
        "n2_pre": n_pre,
        "n2_reference": ref,
        "qubit_populations": tuple(np.real(np.diagonal(qubit_block(xs)))),
        "predictability": predictability_of(xs),
        "flags": flags,
    }
    return CorrelationTrace(tau_grid, vals / (n_pre * ref), "normalized-g2", meta)


def g2_fixed_coupling(params: SystemParams, basis: CompositeBasis, tau_grid,
                      pre_click: str = "steady") -> CorrelationTrace:
    gen = make_generator(params, basis)
    rho = pre_click_state(gen, pre_click)
    ref = None if pre_click == "steady" else mean_photon(steady_state(gen))
    return g2_undriven(rho, gen, tau_grid, reference_intensity=ref)


def default_tau_grid(tau_max: float = 40.0, points: int = 4096) -> np.ndarray:
    return np.linspace(0.0, tau_max, points)


def truncation_convergence(params: SystemParams, tau_grid, n1_max: int = 3, n2_max: int = 2,
                           window: tuple | None = None, pre_click: str = "steady",
                           doubled: bool = False) -> float:
    """Largest relative change of g2 on ``window`` when both truncations grow.

    They grow by one photon each, or are doubled when ``doubled`` is set.
    """
    from .hilbert import build_basis
    m1, m2 = (2 * n1_max, 2 * n2_max) if doubled else (n1_max + 1, n2_max + 1)
    a = g2_fixed_coupling(params, build_basis(None, n1_max, n2_max), tau_grid, pre_click)
    b = g2_fixed_coupling(params, build_basis(None, m1, m2), tau_grid, pre_click)
    lo, hi = window or (a.tau[0], a.tau[-1])
    sel = (a.tau >= lo) & (a.tau <= hi)
    return float(np.max(np.abs(a.values[sel] - b.values[sel]) / np.abs(b.values[sel])))


# -- fringe analysis ----------------------------------------------------------------------

def _refine(tau: np.ndarray, y: np.ndarray, i: int) -> tuple[float, float]:
    if i <= 0 or i >= len(y) - 1:
        return float(tau[i]), float(y[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom == 0:
        return float(tau[i]), float(y1)
    off = 0.5 * (y0 - y2) / denom
    off = max(-0.5, min(0.5, off))
    dt = tau[1] - tau[0]
    return float(tau[i] + off * dt), float(y1 - 0.25 * (y0 - y2) * off)


def extrema(trace: CorrelationTrace, window: tuple | None = None,
            prominence: float = 0.05) -> tuple[list, list]:
    """Prominent local maxima and minima, each as (tau, value) with parabolic refinement.

    ``prominence`` is a fraction of the trace's value range inside the window.
    """
    tau, y = trace.tau, trace.values
    lo, hi = window or (tau[0], tau[-1])
    sel = np.nonzero((tau >= lo) & (tau <= hi))[0]
    if len(sel) < 3:
        return [], []
    ys = y[sel]
    span = float(ys.max() - ys.min())
    if span <= 0:
        return [], []
    kw = dict(prominence=prominence * span)
    imax, _ = find_peaks(ys, **kw)
    imin, _ = find_peaks(-ys, **kw)
    maxima = [_refine(tau, y, sel[i]) for i in imax]
    minima = [_refine(tau, y, sel[i]) for i in imin]
    return maxima, minima


def antibunching_end(trace: CorrelationTrace, prominence: float = 0.05) -> float:
    """Time of the first prominent maximum: the end of the tau ~ 0 suppression."""
    maxima, _ = extrema(trace, prominence=prominence)
    return maxima[0][0] if maxima else float(trace.tau[0])


def fringe_metrics(trace: CorrelationTrace, window: tuple | None = None,
                   predictability: float | None = None, prominence: float = 0.05) -> FringeMetrics:
    """Visibility, beat frequency and minima of a beat trace.

    Default window: from the end of the antibunching dip over two beat periods.
    The visibility uses the first maximum/minimum pair in the window.  A trace
    without at least two minima is reported flat with V = 0.
    """
    if predictability is None:
        predictability = trace.metadata.get("predictability", float("nan"))
    all_max, all_min = extrema(trace, prominence=prominence)
    if window is None:
        lo = all_max[0][0] if all_max else float(trace.tau[0])
        later = [t for t, _ in all_min if t > lo]
        period = (later[1] - later[0]) if len(later) >= 2 else None
        hi = lo + 2 * period + 0.5 * trace.dtau if period else float(trace.tau[-1])
        window = (lo - 3 * trace.dtau, hi)
    maxima, minima = extrema(trace, window, prominence) if window else (all_max, all_min)
    # extrema near the window edge count only if they were prominent in the whole trace
    keep_max = {round(t, 9) for t, _ in all_max}
    keep_min = {round(t, 9) for t, _ in all_min}
    maxima = [m for m in maxima if round(m[0], 9) in keep_max]
    minima = [m for m in minima if round(m[0], 9) in keep_min]
    minima_all = [t for t, _ in all_min if t >= window[0]]
    if len(minima_all) < 2 or not maxima or not minima:
        return FringeMetrics(0.0, predictability, 0.0, minima_all, [t for t, _ in maxima],
                             flat=True, window=window)
    tmax, vmax = maxima[0]
    after = [m for m in minima if m[0] > tmax]
    tmin, vmin = after[0] if after else minima[0]
    vis = (vmax - vmin) / (vmax + vmin) if vmax + vmin > 0 else 0.0
    spacing = float(np.mean(np.diff(minima_all)))
    return FringeMetrics(float(min(max(vis, 0.0), 1.0)), predictability, 2 * math.pi / spacing,
                         minima_all, [t for t, _ in maxima], flat=False, window=window)


def spectral_peak(trace: CorrelationTrace, window: tuple | None = None,
                  trend_period: float | None = None) -> float:
    """Angular frequency of the dominant oscillation.

    The trend is removed by subtracting a running mean over ``trend_period``
    (default one Larmor period 2 pi / delta from the trace metadata), then the
    magnitude of the plain DFT is searched for its largest bin and refined with a
    three-point parabola.
    """
    tau, y = trace.tau, trace.values
    lo, hi = window or (tau[0], tau[-1])
    sel = (tau >= lo) & (tau <= hi)
    t, v = tau[sel], y[sel]
    dt = float(t[1] - t[0])
    if trend_period is None:
        params = trace.metadata.get("params")
        trend_period = 2 * math.pi / abs(params.delta) if params is not None and params.delta else None
    if trend_period:
        w = max(1, int(round(trend_period / dt)))
        if w < len(v):
            kernel = np.ones(w) / w
            trend = np.convolve(v, kernel, mode="same")
            half = w // 2
            # only points with a full averaging window are kept
            v = (v - trend)[half:len(v) - half]
    v = v - v.mean()
    spec = np.abs(np.fft.rfft(v))
    freqs = 2 * math.pi * np.fft.rfftfreq(len(v), dt)
    k = int(np.argmax(spec[1:]) + 1)
    if 1 <= k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        off = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        off = 0.0
    return float(freqs[k] + off * (freqs[1] - freqs[0]))
