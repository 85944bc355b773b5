"""Atoms from a slow atomic beam crossing the cavity mode.

Each atom follows a straight line through the standing-wave Gaussian mode,
so its coupling g_j(t) varies during the transit.  The per-atom two-time
correlation is averaged over start times inside the transit and over an
ensemble of sampled trajectories.  Lengths are in metres and speeds in m/s;
model times are in units of 1/gamma, converted with the physical gamma.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .beats import CorrelationTrace, NormalizationError
from .hilbert import AtomicLevel, CompositeBasis, build_basis, mode_annihilator, photon_numbers
from .liouville import (SystemParams, _as_matrix, cavity_steady_state,
                        make_generator, run_segment, state_diagnostics, step_size_limit)

GAMMA_HZ_DEFAULT = 6.0e6  # gamma / 2 pi for the Rb D2 line

BEAM_PARAMS = SystemParams(drive=1.0 / 16.0, gamma_hz=GAMMA_HZ_DEFAULT)


def beam_basis() -> CompositeBasis:
    """Smallest truncation that holds two undriven photons: n1 <= 2, n2 <= 1."""
    return build_basis(n1_max=2, n2_max=1)


@dataclass(frozen=True)
class ModeGeometry:
    waist: float = 56e-6
    wavelength: float = 780e-9
    g0: float = 0.25

    def __post_init__(self):
        if not (self.waist > 0 and self.wavelength > 0):
            raise ValueError("waist and wavelength must be positive")
        if self.g0 < 0:
            raise ValueError("g0 must be nonnegative")


@dataclass(frozen=True)
class BeamConfig:
    v_mean: float = 15.0
    v_sigma: float = 1.1
    theta_p: float = 1.0 / 40.0
    theta_t: float = 1.0 / 80.0
    n_bar: float = 0.1
    seed: int = 0
    y_box: float = 1.5       # entry offsets sampled in [-y_box w, +y_box w]
    threshold: float = 0.01  # coupling envelope fraction of g0 that defines entry and exit

    def __post_init__(self):
        if not self.v_mean > 0:
            raise ValueError("mean speed must be positive")
        if self.v_sigma < 0 or self.theta_p < 0 or self.theta_t < 0:
            raise ValueError("spreads must be nonnegative")
        if not 0 < self.n_bar < 1:
            raise ValueError("mean atom number must lie in (0, 1)")
        if self.n_bar > 0.2:
            warnings.warn(f"n_bar = {self.n_bar} is not small; the one-atom-at-a-time "
                          "picture behind the ensemble average degrades", stacklevel=2)
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def time_unit(params: SystemParams) -> float:
    """Seconds per model time unit (1/gamma)."""
    hz = params.gamma_hz if params.gamma_hz else GAMMA_HZ_DEFAULT
    return params.gamma / (2 * math.pi * hz)


@dataclass(frozen=True)
class Trajectory:
    """Straight-line transit; model time 0 is the entry threshold crossing.

    Positions in metres: x along the beam, y transverse, z along the cavity axis.
    """
    speed: float
    theta_p: float
    theta_t: float
    y0: float
    z0: float
    x_entry: float
    transit_time: float  # model units
    seconds_per_unit: float
    geometry: ModeGeometry = field(default_factory=ModeGeometry)
    exits: bool = True

    @property
    def velocity(self) -> np.ndarray:
        vz = self.speed * math.sin(self.theta_p)
        vy = self.speed * math.sin(self.theta_t)
        vx = math.sqrt(max(self.speed ** 2 - vz ** 2 - vy ** 2, 0.0))
        return np.array([vx, vy, vz])

    def position(self, t) -> np.ndarray:
        s = np.asarray(t, dtype=float) * self.seconds_per_unit
        v = self.velocity
        return np.stack([self.x_entry + v[0] * s, self.y0 + v[1] * s, self.z0 + v[2] * s])

    def coupling(self, t) -> np.ndarray:
        """g_j(t); zero before entry and after exit."""
        t = np.asarray(t, dtype=float)
        g = coupling_profile(self, self.geometry, t)
        return np.where((t >= 0) & (t <= self.transit_time), g, 0.0)


@dataclass(frozen=True)
class StaticTransit:
    """Constant coupling that never switches off; a test fixture for the transit machinery."""
    g: float
    transit_time: float
    exits: bool = False

    def coupling(self, t) -> np.ndarray:
        return np.full(np.shape(t), float(self.g))


def coupling_profile(traj: Trajectory, geom: ModeGeometry, t) -> np.ndarray:
    """g0 |cos(2 pi z / lambda)| exp(-(x^2 + y^2) / w^2) along the straight path."""
    x, y, z = traj.position(t)
    return geom.g0 * np.abs(np.cos(2 * math.pi * z / geom.wavelength)) * \
        np.exp(-(x ** 2 + y ** 2) / geom.waist ** 2)


def _triangular(rng: np.random.Generator, half_width: float) -> float:
    if half_width == 0:
        return 0.0
    return float(rng.triangular(-half_width, 0.0, half_width))


def _crossings(x0: float, y0: float, vx: float, vy: float, r2: float):
    """Times (s) where (x0 + vx s)^2 + (y0 + vy s)^2 = r2, or None."""
    a = vx * vx + vy * vy
    b = 2 * (x0 * vx + y0 * vy)
    c = x0 * x0 + y0 * y0 - r2
    disc = b * b - 4 * a * c
    if a == 0 or disc <= 0:
        return None
    root = math.sqrt(disc)
    return (-b - root) / (2 * a), (-b + root) / (2 * a)


def sample_trajectory(cfg: BeamConfig, geom: ModeGeometry, rng: np.random.Generator,
                      params: SystemParams = BEAM_PARAMS, max_redraws: int = 1000) -> Trajectory:
    """Gaussian speed, triangular angles, uniform entry offsets; redraws nonphysical samples."""
    r2 = geom.waist ** 2 * math.log(1.0 / cfg.threshold)
    unit = time_unit(params)
    for _ in range(max_redraws):
        speed = float(rng.normal(cfg.v_mean, cfg.v_sigma))
        th_p = _triangular(rng, cfg.theta_p)
        th_t = _triangular(rng, cfg.theta_t)
        z0 = float(rng.uniform(0.0, geom.wavelength / 2))
        y0 = float(rng.uniform(-cfg.y_box * geom.waist, cfg.y_box * geom.waist))
        if speed <= 0:
            continue
        probe = Trajectory(speed, th_p, th_t, y0, z0, 0.0, 1.0, unit, geom)
        vx, vy, _ = probe.velocity
        # start the line well upstream, then move the origin to the entry crossing
        x_start = -10 * geom.waist
        hit = _crossings(x_start, y0, vx, vy, r2)
        if hit is None:
            continue
        s_in, s_out = hit
        v = probe.velocity
        x_in = x_start + v[0] * s_in
        y_in = y0 + v[1] * s_in
        z_in = z0 + v[2] * s_in
        return Trajectory(speed, th_p, th_t, y_in, z_in, x_in, (s_out - s_in) / unit, unit, geom)
    raise RuntimeError("could not draw a trajectory crossing the mode")


def on_axis_trajectory(cfg: BeamConfig, geom: ModeGeometry, params: SystemParams = BEAM_PARAMS,
                       z0: float = 0.0, y0: float = 0.0) -> Trajectory:
    """Deterministic transit at the mean speed with no tilt."""
    unit = time_unit(params)
    r2 = geom.waist ** 2 * math.log(1.0 / cfg.threshold)
    half = math.sqrt(max(r2 - y0 ** 2, 0.0))
    if half == 0:
        raise ValueError("offset misses the interaction volume")
    return Trajectory(cfg.v_mean, 0.0, 0.0, y0, z0, -half, 2 * half / cfg.v_mean / unit, unit, geom)


# -- per-trajectory correlations ------------------------------------------------------------

@dataclass
class TransitResult:
    mean_intensity: float  # (1/t_j) int <n2(t)> dt
    g2_unnormalized: np.ndarray  # (1/t_j) int G2(t, tau) dt on the tau grid
    transit_time: float
    flags: list = field(default_factory=list)


def _start_nodes(t_j: float, h: float, count: int) -> np.ndarray:
    """Start-time step indices, uniform over [0, t_j] and snapped to the step grid."""
    idx = np.rint(np.linspace(0.0, t_j, count) / h).astype(np.int64)
    if np.any(np.diff(idx) <= 0):
        raise ValueError("transit too short for the requested number of start times")
    return idx


def transit_correlation(traj, params: SystemParams, basis: CompositeBasis, tau_grid,
                        t_grid_size: int = 32, initial=None, step_refine: int = 1) -> TransitResult:
    """Start-time averaged intensity and unnormalised G2 for one transit.

    All conditioned copies a2 rho(t_k) a2^+ are propagated together in absolute
    time under g = g_j(t).  Once the atom has left (g = 0, no birefringence),
    <n2> decays exactly as exp(-2 kappa s), which replaces further integration.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid[0] != 0:
        raise ValueError("tau grid must start at 0")
    dtau = float(tau_grid[1] - tau_grid[0]) if len(tau_grid) > 1 else 1.0
    if len(tau_grid) > 1 and np.max(np.abs(np.diff(tau_grid) - dtau)) > 1e-9 * max(dtau, 1):
        raise ValueError("tau grid must be uniform")
    g_peak = traj.g if isinstance(traj, StaticTransit) else traj.geometry.g0
    h_max = step_size_limit(params, g_peak) / step_refine
    m = max(1, math.ceil(dtau / h_max - 1e-9))
    h = dtau / m
    t_j = float(traj.transit_time)
    nodes = _start_nodes(t_j, h, t_grid_size)
    t_nodes = nodes * h
    weights = np.zeros(len(nodes))
    dt = np.diff(t_nodes)
    weights[:-1] += dt / 2
    weights[1:] += dt / 2
    weights /= t_j

    gen = make_generator(params, basis)
    a2 = mode_annihilator(basis, "undriven").matrix
    n2 = photon_numbers(basis, "undriven")
    obs = n2[None, :]
    if initial is None:
        rho0 = cavity_steady_state(params, basis, AtomicLevel.B_0).matrix
    else:
        rho0 = _as_matrix(initial, basis)
    tail = traj.exits and params.xi_b == 0
    n_tau = len(tau_grid)
    last_step = int(nodes[-1])
    horizon = nodes + (n_tau - 1) * m  # last step each copy must reach
    end_step = last_step if tail else int(horizon.max())

    intensity_at_nodes = np.zeros(len(nodes))
    g2 = np.zeros((len(nodes), n_tau))
    stack = np.ascontiguousarray(np.array(rho0, dtype=complex)[None])
    members: list[int] = []  # node index of each conditioned copy (stack rows 1..)
    spawn_trace = np.zeros(len(nodes))
    flags: list[str] = []
    coupling = traj.coupling
    step = 0
    k_next = 0
    # segment boundaries: start nodes and the end of propagation
    bounds = sorted(set(int(s) for s in nodes) | {end_step})
    for b_step in bounds:
        if b_step > step:
            n = b_step - step
            read = run_segment(gen, stack, step * h, h, n, coupling, obs)
            for row, k in enumerate(members, start=1):
                s = np.arange(step, b_step + 1)
                rel = s - nodes[k]
                sel = (rel >= 0) & (rel % m == 0) & (rel // m < n_tau)
                g2[k, rel[sel] // m] = read[row, sel, 0]
            step = b_step
            # retire copies whose tau range is complete, checking each one on the way out
            keep = [0] + [row for row, k in enumerate(members, start=1) if horizon[k] > step]
            for row, k in enumerate(members, start=1):
                if row not in keep:
                    flags.extend(_diagnose(stack[row], spawn_trace[k], step * h, f"copy {k}"))
            if len(keep) < stack.shape[0]:
                members = [members[row - 1] for row in keep[1:]]
                stack = np.ascontiguousarray(stack[keep])
        while k_next < len(nodes) and nodes[k_next] == step:
            rho = stack[0]
            flags.extend(_diagnose(rho, 1.0, step * h, "state"))
            intensity_at_nodes[k_next] = float(np.real(np.diagonal(rho)) @ n2)
            x = a2 @ rho @ a2.conj().T
            g2[k_next, 0] = float(np.real(np.diagonal(x)) @ n2)
            spawn_trace[k_next] = float(np.real(np.trace(x)))
            if n_tau > 1:
                stack = np.ascontiguousarray(np.concatenate([stack, x[None]]))
                members.append(k_next)
            k_next += 1
    for row, k in enumerate(members, start=1):
        flags.extend(_diagnose(stack[row], spawn_trace[k], step * h, f"copy {k}"))
    if tail:
        decay = math.exp(-2 * params.kappa * h * m)
        for row, k in enumerate(members, start=1):
            done = (step - nodes[k]) // m  # last tau index reached by integration
            if done + 1 < n_tau:
                value = float(np.real(np.diagonal(stack[row])) @ n2)
                # advance from step to the next tau point, then whole tau steps
                off = (nodes[k] + (done + 1) * m - step) * h
                first = value * math.exp(-2 * params.kappa * off)
                g2[k, done + 1:] = first * decay ** np.arange(n_tau - done - 1)
    return TransitResult(float(weights @ intensity_at_nodes), weights @ g2, t_j, flags)


def _diagnose(m: np.ndarray, tr0: float, t: float, what: str) -> list[str]:
    """Trace conservation relative to the copy's own trace; Hermiticity and positivity
    on the scale of the unit-trace state it was cut from."""
    msgs = state_diagnostics(m, tr0, t, positivity=False, scale=tr0) if tr0 > 0 else []
    msgs = [x for x in msgs if x.startswith("trace")]
    msgs += [x for x in state_diagnostics(m, float(np.real(np.trace(m))), t) if not x.startswith("trace")]
    return [f"{what} t={t:.6g}: {msg}" for msg in msgs]


# -- ensemble ----------------------------------------------------------------------------------

def _one(args):
    j, cfg, geom, params, basis, tau_grid, t_grid_size, step_refine = args
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(j,)))
    traj = sample_trajectory(cfg, geom, rng, params)
    res = transit_correlation(traj, params, basis, tau_grid, t_grid_size, step_refine=step_refine)
    return j, res


def default_workers() -> int:
    env = os.environ.get("QBEATS_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _canonical_sum(a: np.ndarray) -> np.ndarray:
    """Column sums that do not depend on row order: rows are sorted per column first."""
    return np.sum(np.sort(a, axis=0), axis=0)


def reduce_ensemble(n_j: np.ndarray, g_j: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalised trace 1 + mean(G) / mean(N)^2 and its delta-method standard error.

    Rows are trajectories.  Every sum is order independent, so any permutation
    of the rows gives a bitwise identical result.
    """
    n_traj = len(n_j)
    n_mean = float(_canonical_sum(np.asarray(n_j)[:, None])[0]) / n_traj
    if n_mean <= 0:
        raise NormalizationError("ensemble mean intensity is zero")
    g_mean = _canonical_sum(g_j) / n_traj
    values = 1.0 + g_mean / n_mean ** 2
    z = g_j / n_mean ** 2 - 2.0 * np.outer(n_j - n_mean, g_mean) / n_mean ** 3
    if n_traj > 1:
        dev = z - _canonical_sum(z) / n_traj
        stderr = np.sqrt(_canonical_sum(dev ** 2) / (n_traj - 1) / n_traj)
    else:
        stderr = np.zeros_like(values)
    return values, stderr, n_mean


@dataclass
class EnsembleResult:
    trace: CorrelationTrace
    mean_intensity: float
    transit_times: np.ndarray
    per_trajectory_intensity: np.ndarray
    per_trajectory_g2: np.ndarray


def ensemble_g2(cfg: BeamConfig, geom: ModeGeometry, params: SystemParams, n_traj: int, tau_grid,
                seed: int | None = None, basis: CompositeBasis | None = None,
                t_grid_size: int = 32, workers: int | None = None,
                step_refine: int = 1) -> EnsembleResult:
    """1 + mean G2 / (mean intensity)^2 with N-bar/t_j weighted time averages per atom.

    Trajectory j draws from the j-th child of SeedSequence(seed), and the
    reduction sorts each column before summing, so the result is bitwise
    identical for any worker count or completion order.  ``workers`` defaults
    to the QBEATS_WORKERS environment variable, else the number of cores.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if seed is not None:
        cfg = BeamConfig(**{**cfg.__dict__, "seed": int(seed)})
    basis = basis or beam_basis()
    tau_grid = np.asarray(tau_grid, dtype=float)
    if workers is None:
        workers = default_workers()
    jobs = [(j, cfg, geom, params, basis, tau_grid, t_grid_size, step_refine) for j in range(n_traj)]
    if workers > 1 and n_traj > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_one, jobs))
    else:
        results = dict(map(_one, jobs))
    ordered = [results[j] for j in range(n_traj)]
    t_j = np.array([r.transit_time for r in ordered])
    # the (N/t_j) int dt weighting of the ensemble formulas; the 1/t_j is already applied
    n_j = cfg.n_bar * np.array([r.mean_intensity for r in ordered])
    g_j = cfg.n_bar * np.stack([r.g2_unnormalized for r in ordered])
    values, stderr, n_mean = reduce_ensemble(n_j, g_j)
    meta = {"params": params, "n_traj": n_traj, "seed": cfg.seed, "n_bar": cfg.n_bar,
            "mean_intensity": n_mean, "mean_transit_time": float(np.mean(t_j)),
            "flags": [f"trajectory {j}: {msg}" for j, r in enumerate(ordered) for msg in r.flags]}
    trace = CorrelationTrace(tau_grid, values, "normalized-g2", meta, stderr)
    return EnsembleResult(trace, n_mean, t_j, n_j, g_j)
