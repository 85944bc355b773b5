"""Feedback (shelving) and probabilistic error correction.

Two layers: an exact qubit engine for the measure-swap-measure-swap protocol,
and scheduled instantaneous events (drive switching, atomic unitaries, weak
ionisation) applied during the conditional evolution of the full cavity model.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .beats import (CorrelationTrace, click, mean_photon, pre_click_state, predictability_of,
                    qubit_block)
from .hilbert import AtomicLevel, CompositeBasis, build_basis, default_levels, photon_numbers
from .liouville import (DensityMatrix, Generator, SystemParams, _as_matrix, make_generator,
                        run_segment, state_diagnostics, step_size_limit, steady_state, substeps)

L = AtomicLevel


# -- qubit engine ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QubitState:
    """alpha0 |0> + alpha1 |1>, with |0> = b-1 and |1> = b+1."""
    alpha0: complex
    alpha1: complex

    def __post_init__(self):
        norm = abs(self.alpha0) ** 2 + abs(self.alpha1) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"qubit state is not normalised (|a0|^2+|a1|^2 = {norm!r})")

    @classmethod
    def normalized(cls, alpha0: complex, alpha1: complex) -> QubitState:
        n = math.sqrt(abs(alpha0) ** 2 + abs(alpha1) ** 2)
        if n == 0:
            raise ValueError("zero vector")
        return cls(complex(alpha0) / n, complex(alpha1) / n)

    @classmethod
    def from_population(cls, p0: float, phase: float = 0.0) -> QubitState:
        """Amplitudes sqrt(p0) and sqrt(1 - p0) e^{i phase}."""
        return cls.normalized(math.sqrt(p0), math.sqrt(1 - p0) * cmath.exp(1j * phase))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha0, self.alpha1], dtype=complex)

    def fidelity(self, other: QubitState) -> float:
        return float(abs(np.vdot(self.vector, other.vector)) ** 2)

    @property
    def predictability(self) -> float:
        return abs(abs(self.alpha0) ** 2 - abs(self.alpha1) ** 2)


@dataclass(frozen=True)
class MeasurementOps:
    p: float
    M_a: np.ndarray
    M_b: np.ndarray

    def completeness_error(self) -> float:
        s = self.M_a.conj().T @ self.M_a + self.M_b.conj().T @ self.M_b
        return float(np.max(np.abs(s - np.eye(2))))


def measurement_ops(p: float) -> MeasurementOps:
    """Weak detection of |1> with strength p: M_a = sqrt(p)|1><1|, M_b = 1 - (1 - sqrt(1-p))|1><1|."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"detection strength must lie in [0, 1], got {p}")
    proj1 = np.diag([0.0, 1.0]).astype(complex)
    return MeasurementOps(p, math.sqrt(p) * proj1, np.eye(2) - (1 - math.sqrt(1 - p)) * proj1)


class PartialResult(NamedTuple):
    p_yes: float
    p_no: float
    post_no: QubitState | None  # None when the null outcome is impossible


def partial_measure(state: QubitState, p: float) -> PartialResult:
    ops = measurement_ops(p)
    p_yes = p * abs(state.alpha1) ** 2
    v = ops.M_b @ state.vector
    p_no = float(np.vdot(v, v).real)
    if p_no == 0.0:
        return PartialResult(p_yes, 0.0, None)
    v = v / math.sqrt(p_no)
    return PartialResult(p_yes, p_no, QubitState.normalized(v[0], v[1]))


def _swap(state: QubitState) -> QubitState:
    return QubitState(state.alpha1, state.alpha0)


@dataclass
class Branch:
    record: tuple
    probability: float
    state: object  # QubitState for the qubit engine, DensityMatrix when embedded


@dataclass
class ProtocolOutcome:
    branches: list
    averaged: np.ndarray
    extras: dict = field(default_factory=dict)

    def branch(self, record: tuple) -> Branch:
        for b in self.branches:
            if b.record == tuple(record):
                return b
        raise KeyError(record)

    @property
    def total_probability(self) -> float:
        return float(sum(b.probability for b in self.branches))


def qec_protocol(state: QubitState, p: float, outcomes_known: bool = True) -> ProtocolOutcome:
    """Measure, swap, measure, swap.

    A detection is terminal: the detected qubit stays in |1> and is not acted on
    by later pulses (the ionised atom of the cavity implementation).  With
    ``outcomes_known`` False only the outcome-averaged qubit+detector state is
    meaningful; the branch list is the same either way.
    ``averaged`` is the 4x4 qubit (x) detector matrix, detector basis (no, yes).
    """
    one = QubitState(0j, 1 + 0j)
    first = partial_measure(state, p)
    branches = []
    if first.p_yes > 0:
        branches.append(Branch(("yes",), first.p_yes, one))
    intermediate = float("nan")
    if first.post_no is not None:
        second = partial_measure(_swap(first.post_no), p)
        intermediate = second.p_no
        if second.p_yes > 0:
            branches.append(Branch(("no", "yes"), first.p_no * second.p_yes, one))
        if second.post_no is not None:
            branches.append(Branch(("no", "no"), first.p_no * second.p_no, _swap(second.post_no)))
    no = np.array([1.0, 0.0])
    yes = np.array([0.0, 1.0])
    avg = np.zeros((4, 4), dtype=complex)
    for br in branches:
        det = yes if "yes" in br.record else no
        v = np.kron(br.state.vector, det)
        avg += br.probability * np.outer(v, v.conj())
    recovered = next((b for b in branches if b.record == ("no", "no")), None)
    extras = {
        "p_first_no": first.p_no,
        "p_second_no_given_first_no": intermediate,
        "recovery_probability": recovered.probability if recovered else 0.0,
        "recovered_fidelity": state.fidelity(recovered.state) if recovered else float("nan"),
        "outcomes_known": outcomes_known,
    }
    return ProtocolOutcome(branches, avg, extras)


def qubit_marginal(averaged: np.ndarray) -> np.ndarray:
    """Trace the detector out of a 4x4 qubit (x) detector matrix."""
    return np.einsum("aibi->ab", averaged.reshape(2, 2, 2, 2))


# -- atomic pulses ---------------------------------------------------------------------------

def _atomic_permutation(basis: CompositeBasis, pairs) -> np.ndarray:
    m = np.eye(len(basis.levels), dtype=complex)
    for a, b in pairs:
        i, j = basis.level_index(a), basis.level_index(b)
        m[[i, j]] = m[[j, i]]
    return m


def swap_pulse(basis: CompositeBasis) -> np.ndarray:
    """b-1 <-> b+1, phase preserving, identity elsewhere (full-space matrix)."""
    return basis.embed_atomic(_atomic_permutation(basis, [(L.B_M1, L.B_P1)]))


def shelve_pulse(basis: CompositeBasis) -> np.ndarray:
    """b-1 <-> s-1 and b+1 <-> s+1; its own inverse."""
    return basis.embed_atomic(_atomic_permutation(basis, [(L.B_M1, L.S_M1), (L.B_P1, L.S_P1)]))


def ionization_kraus(basis: CompositeBasis, p: float) -> tuple[np.ndarray, np.ndarray]:
    """K_yes = sqrt(p)|ion><b+1|, K_no = 1 - (1 - sqrt(1-p))|b+1><b+1| (identity on modes)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"ionisation probability must lie in [0, 1], got {p}")
    n = len(basis.levels)
    ion, bp = basis.level_index(L.ION), basis.level_index(L.B_P1)
    yes = np.zeros((n, n), dtype=complex)
    yes[ion, bp] = math.sqrt(p)
    no = np.eye(n, dtype=complex)
    no[bp, bp] = math.sqrt(1 - p)
    return basis.embed_atomic(yes), basis.embed_atomic(no)


def qubit_frame_phase(rho) -> float:
    """Relative phase of b+1 against b-1 in the heralded superposition."""
    q = qubit_block(rho)
    c = q[1, 0]
    return float(cmath.phase(c)) if abs(c) > 0 else 0.0


def superposition_unitary(basis: CompositeBasis, target: QubitState, frame_phase: float = 0.0) -> np.ndarray:
    """Unitary on span{b-1, b+1} sending the equal superposition to ``target``.

    Both are expressed in the heralded frame |b-1>, e^{i frame_phase}|b+1>, so
    the equal-superposition target gives the identity.
    """
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    v_perp = np.array([-1.0, 1.0]) / math.sqrt(2)
    t = target.vector
    t_perp = np.array([-np.conj(t[1]), np.conj(t[0])])
    u_frame = np.outer(t, v.conj()) + np.outer(t_perp, v_perp.conj())
    f = np.diag([1.0, cmath.exp(1j * frame_phase)])
    u2 = f @ u_frame @ f.conj().T
    atomic = np.eye(len(basis.levels), dtype=complex)
    idx = [basis.level_index(L.B_M1), basis.level_index(L.B_P1)]
    atomic[np.ix_(idx, idx)] = u2
    return basis.embed_atomic(atomic)


def prepare_superposition(rho_clicked: DensityMatrix, target: QubitState) -> DensityMatrix:
    if not isinstance(target, QubitState):
        raise TypeError("target must be a QubitState")
    u = superposition_unitary(rho_clicked.basis, target, qubit_frame_phase(rho_clicked))
    return DensityMatrix(u @ rho_clicked.matrix @ u.conj().T, rho_clicked.basis)


# -- schedules -------------------------------------------------------------------------------

EVENT_KINDS = ("click_condition", "drive_set", "unitary_pulse", "weak_ionization")
PULSES = ("swap", "shelve", "unshelve", "prepare")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    payload: object = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class Schedule:
    events: tuple

    def __init__(self, events: Sequence[Event]):
        object.__setattr__(self, "events", tuple(events))
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be nondecreasing")
        clicks = [e for e in self.events if e.kind == "click_condition"]
        if len(clicks) > 1 or any(e.time != 0 for e in clicks):
            raise ValueError("at most one click_condition, and only at time 0")

    def validate(self, basis: CompositeBasis) -> None:
        for e in self.events:
            if e.kind == "unitary_pulse":
                name = e.payload if isinstance(e.payload, str) else None
                if name in ("shelve", "unshelve") and not (basis.has(L.S_M1) and basis.has(L.S_P1)):
                    raise ValueError(f"pulse {name!r} at t={e.time} needs shelf levels in the basis")
                if name is not None and name not in PULSES:
                    raise ValueError(f"unknown pulse {name!r}")
                if name is None and np.shape(e.payload) not in ((2, 2), (len(basis.levels),) * 2):
                    raise ValueError("explicit pulses must be 2x2 (qubit) or |levels| square")
            elif e.kind == "weak_ionization":
                if not basis.has(L.ION):
                    raise ValueError(f"weak ionisation at t={e.time} needs the ion level in the basis")
                if not 0.0 <= float(e.payload) <= 1.0:
                    raise ValueError("ionisation probability must lie in [0, 1]")
            elif e.kind == "drive_set":
                if float(e.payload) < 0:
                    raise ValueError("drive must be nonnegative")

    @property
    def n_measurements(self) -> int:
        return sum(e.kind == "weak_ionization" for e in self.events)


def shelving_schedule(t1: float, t2: float, drive: float) -> Schedule:
    return Schedule([Event(t1, "unitary_pulse", "shelve"), Event(t1, "drive_set", 0.0),
                     Event(t2, "unitary_pulse", "unshelve"), Event(t2, "drive_set", drive)])


def qec_schedule(t: float, p: float) -> Schedule:
    return Schedule([Event(t, "weak_ionization", p), Event(t, "unitary_pulse", "swap"),
                     Event(t, "weak_ionization", p), Event(t, "unitary_pulse", "swap")])


def _pulse_matrix(basis: CompositeBasis, payload, state: np.ndarray | None = None) -> np.ndarray:
    if isinstance(payload, str):
        if payload == "swap":
            return swap_pulse(basis)
        if payload in ("shelve", "unshelve"):
            return shelve_pulse(basis)
        raise ValueError(f"pulse {payload!r} needs explicit arguments")
    if isinstance(payload, QubitState):
        rho = DensityMatrix(state, basis) if state is not None else None
        phase = qubit_frame_phase(rho) if rho is not None else 0.0
        return superposition_unitary(basis, payload, phase)
    u = np.asarray(payload, dtype=complex)
    if u.shape == (2, 2):
        atomic = np.eye(len(basis.levels), dtype=complex)
        idx = [basis.level_index(L.B_M1), basis.level_index(L.B_P1)]
        atomic[np.ix_(idx, idx)] = u
        u = atomic
    if np.max(np.abs(u @ u.conj().T - np.eye(len(u)))) > 1e-10:
        raise ValueError("pulse is not unitary")
    return basis.embed_atomic(u)


@dataclass
class ScheduleResult:
    trace: CorrelationTrace
    branches: list
    averaged: DensityMatrix
    flags: list
    branch_traces: dict = field(default_factory=dict)

    @property
    def surviving_weight(self) -> float:
        """Probability that no ionisation occurred (the all-'no' branch)."""
        return float(sum(b.probability for b in self.branches if "yes" not in b.record))

    @property
    def ion_population(self) -> float:
        return self.averaged.population(L.ION) if self.averaged.basis.has(L.ION) else 0.0


def run_conditional_schedule(params: SystemParams, basis: CompositeBasis, schedule: Schedule,
                             tau_grid, outcomes_known: bool = False, pre_click: str = "pumped",
                             initial: DensityMatrix | None = None,
                             prepare: QubitState | None = None) -> ScheduleResult:
    """Conditional undriven intensity under a schedule of instantaneous events.

    The click (a2 rho a2^+, normalised) is taken at tau = 0 from the pre-click
    state ('pumped': atom in b0 with the cavity field relaxed; 'steady': the
    full steady state), optionally followed by ``prepare``.  Values are
    Tr[a2^+ a2 rho_c(tau)] divided by the steady-state undriven intensity.
    With ``outcomes_known`` each weak ionisation splits every branch in two;
    otherwise the Kraus channel is applied as an average.  The returned trace
    is always the outcome average; a readout at an event time sees the state
    after the event.
    """
    schedule.validate(basis)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid[0] != 0.0 or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau grid must start at 0 and increase strictly")
    gen = make_generator(params, basis)
    ref = mean_photon(steady_state(gen))
    if initial is None:
        x = click(pre_click_state(gen, pre_click), basis)
        rho_c = x / np.trace(x).real
    else:
        rho_c = np.array(_as_matrix(initial, basis))
    if prepare is not None:
        u = _pulse_matrix(basis, prepare, rho_c)
        rho_c = u @ rho_c @ u.conj().T
    n2 = photon_numbers(basis, "undriven")
    obs = n2[None, :]
    h_max = step_size_limit(params)

    stops = {float(e.time) for e in schedule.events
             if e.kind != "click_condition" and e.time <= tau_grid[-1]}
    times = np.unique(np.concatenate([tau_grid, sorted(stops)]))
    grid_index = {float(t): i for i, t in enumerate(tau_grid)}

    stack = np.ascontiguousarray(rho_c[None].astype(complex))
    recs: list[tuple] = [()]
    weight0 = [1.0]
    readout = {(): np.zeros(len(tau_grid))}
    total = np.zeros(len(tau_grid))
    flags: list[str] = []
    current = gen

    def store(t: float) -> None:
        i = grid_index.get(float(t))
        if i is None:
            return
        vals = np.real(np.diagonal(stack, axis1=1, axis2=2)) @ n2
        total[i] = vals.sum()
        for rec, v in zip(recs, vals):
            readout[rec][i] = v

    for k, t in enumerate(times):
        if k > 0:
            t0 = times[k - 1]
            n = substeps(t - t0, h_max)
            run_segment(current, stack, t0, (t - t0) / n, n, None, obs)
            for b, rec in enumerate(recs):
                w = weight0[b]
                flags.extend(f"{rec} tau={t:.6g}: {msg}" for msg in state_diagnostics(
                    stack[b], w, t, positivity=False, scale=max(w, 1e-300)))
        for e in schedule.events:
            if e.kind == "click_condition" or abs(e.time - t) > 1e-12:
                continue
            if e.kind == "drive_set":
                current = current.with_drive(float(e.payload))
            elif e.kind == "unitary_pulse":
                u = _pulse_matrix(basis, e.payload, stack[0])
                stack = np.ascontiguousarray(u @ stack @ u.conj().T)
            else:
                k_yes, k_no = ionization_kraus(basis, float(e.payload))
                yes = k_yes @ stack @ k_yes.conj().T
                no = k_no @ stack @ k_no.conj().T
                if outcomes_known:
                    mats, new_recs = [], []
                    for b, rec in enumerate(recs):
                        for tag, part in (("no", no), ("yes", yes)):
                            mats.append(part[b])
                            new_recs.append(rec + (tag,))
                            readout[rec + (tag,)] = readout[rec].copy()
                    stack = np.ascontiguousarray(np.stack(mats))
                    recs = new_recs
                else:
                    stack = np.ascontiguousarray(yes + no)
                weight0 = [float(np.real(np.trace(m))) for m in stack]
        store(t)

    trace = CorrelationTrace(tau_grid, np.clip(total, 0, None) / ref, "conditional-intensity",
                             {"params": params, "reference_intensity": ref,
                              "predictability": predictability_of(DensityMatrix(rho_c, basis)),
                              "flags": flags})
    averaged = DensityMatrix(np.sum(stack, axis=0), basis)
    if outcomes_known:
        branches = [Branch(rec, float(np.real(np.trace(m))), DensityMatrix(m, basis))
                    for rec, m in zip(recs, stack)]
        per_branch = {rec: CorrelationTrace(tau_grid, np.clip(readout[rec], 0, None) / ref,
                                            "conditional-intensity") for rec in recs}
    else:
        ion = averaged.population(L.ION) if basis.has(L.ION) else 0.0
        branches = [Branch(("no",) * schedule.n_measurements, 1.0 - ion, averaged)]
        if schedule.n_measurements:
            branches.append(Branch(("yes",), ion, averaged))
        per_branch = {}
    return ScheduleResult(trace, branches, averaged, flags, per_branch)


def control_basis(n1_max: int = 3, n2_max: int = 2) -> CompositeBasis:
    return build_basis(default_levels(control=True), n1_max, n2_max)
