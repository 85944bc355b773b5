"""Composite Hilbert space: one multilevel atom and two truncated cavity modes.

States are indexed with the atomic level slowest, the driven-mode photon
number in the middle and the undriven-mode photon number fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np


class AtomicLevel(Enum):
    B_M1 = "b-1"
    B_0 = "b0"
    B_P1 = "b+1"
    E_M1 = "e-1"
    E_0 = "e0"
    E_P1 = "e+1"
    S_M1 = "s-1"
    S_P1 = "s+1"
    ION = "ion"

    @property
    def kind(self) -> str:
        return {"b": "ground", "e": "excited", "s": "shelf", "i": "ionized"}[self.value[0]]

    @classmethod
    def parse(cls, label: str | AtomicLevel) -> AtomicLevel:
        if isinstance(label, cls):
            return label
        text = str(label).strip()
        if text in ("b1", "e1", "s1"):
            text = text[0] + "+1"
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown atomic level {label!r}") from None


CORE_LEVELS = (
    AtomicLevel.B_M1,
    AtomicLevel.B_0,
    AtomicLevel.B_P1,
    AtomicLevel.E_M1,
    AtomicLevel.E_0,
    AtomicLevel.E_P1,
)
SHELF_LEVELS = (AtomicLevel.S_M1, AtomicLevel.S_P1)
CONTROL_LEVELS = CORE_LEVELS + SHELF_LEVELS + (AtomicLevel.ION,)


def default_levels(control: bool = False) -> tuple[AtomicLevel, ...]:
    return CONTROL_LEVELS if control else CORE_LEVELS


@dataclass(frozen=True)
class CompositeBasis:
    levels: tuple[AtomicLevel, ...]
    n1_max: int
    n2_max: int

    @property
    def n1_dim(self) -> int:
        return self.n1_max + 1

    @property
    def n2_dim(self) -> int:
        return self.n2_max + 1

    @property
    def dim(self) -> int:
        return len(self.levels) * self.n1_dim * self.n2_dim

    def has(self, level: AtomicLevel | str) -> bool:
        return AtomicLevel.parse(level) in self.levels

    def level_index(self, level: AtomicLevel | str) -> int:
        level = AtomicLevel.parse(level)
        try:
            return self.levels.index(level)
        except ValueError:
            raise KeyError(f"level {level.value} is not in this basis") from None

    def index(self, level: AtomicLevel | str, n1: int, n2: int) -> int:
        if not (0 <= n1 <= self.n1_max and 0 <= n2 <= self.n2_max):
            raise IndexError(f"photon numbers ({n1}, {n2}) outside truncation")
        return (self.level_index(level) * self.n1_dim + n1) * self.n2_dim + n2

    def label(self, index: int) -> tuple[AtomicLevel, int, int]:
        if not 0 <= index < self.dim:
            raise IndexError(index)
        a, rest = divmod(index, self.n1_dim * self.n2_dim)
        n1, n2 = divmod(rest, self.n2_dim)
        return self.levels[a], n1, n2

    def ket(self, level: AtomicLevel | str, n1: int = 0, n2: int = 0) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(level, n1, n2)] = 1.0
        return v

    def projector(self, level: AtomicLevel | str, n1: int = 0, n2: int = 0) -> np.ndarray:
        v = self.ket(level, n1, n2)
        return np.outer(v, v.conj())

    def atom_identity(self) -> np.ndarray:
        return np.eye(len(self.levels))

    def embed_atomic(self, atomic: np.ndarray) -> np.ndarray:
        """Lift a |levels|x|levels| matrix to the full space (identity on both modes)."""
        atomic = np.asarray(atomic, dtype=complex)
        if atomic.shape != (len(self.levels),) * 2:
            raise ValueError("atomic operator has the wrong shape")
        return np.kron(atomic, np.eye(self.n1_dim * self.n2_dim))

    def atomic_marginal(self, rho: np.ndarray) -> np.ndarray:
        """Partial trace over both cavity modes."""
        m = len(self.levels)
        f = self.n1_dim * self.n2_dim
        return np.einsum("aibi->ab", np.asarray(rho).reshape(m, f, m, f))


def build_basis(levels: Iterable[AtomicLevel | str] | None = None,
                n1_max: int = 3, n2_max: int = 2) -> CompositeBasis:
    levels = CORE_LEVELS if levels is None else tuple(AtomicLevel.parse(x) for x in levels)
    if not levels:
        raise ValueError("at least one atomic level is required")
    seen = set()
    for lv in levels:
        if lv in seen:
            raise ValueError(f"duplicate atomic level {lv.value}")
        seen.add(lv)
    if int(n1_max) != n1_max or int(n2_max) != n2_max:
        raise ValueError("photon truncations must be integers")
    if n1_max < 1 or n2_max < 1:
        raise ValueError("photon truncations must be at least 1")
    return CompositeBasis(levels, int(n1_max), int(n2_max))


@dataclass(frozen=True, eq=False)
class Operator:
    matrix: np.ndarray
    basis: CompositeBasis
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"operator shape {m.shape} does not match basis dim {self.basis.dim}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def _check(self, other: Operator) -> None:
        if other.basis != self.basis:
            raise ValueError("operators live on different bases")

    def dag(self) -> Operator:
        return Operator(self.matrix.conj().T, self.basis, f"({self.label})†")

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.matrix @ other.matrix, self.basis, f"{self.label}·{other.label}")
        return self.matrix @ other

    def __add__(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.matrix + other.matrix, self.basis, f"{self.label}+{other.label}")

    def __sub__(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.matrix - other.matrix, self.basis, f"{self.label}-{other.label}")

    def __mul__(self, scalar) -> Operator:
        return Operator(scalar * self.matrix, self.basis, f"{scalar}·{self.label}")

    __rmul__ = __mul__


def sigma(basis: CompositeBasis, i: AtomicLevel | str, j: AtomicLevel | str) -> Operator:
    """|i><j| on the atom, identity on both modes."""
    ii, jj = basis.level_index(i), basis.level_index(j)
    atomic = np.zeros((len(basis.levels),) * 2)
    atomic[ii, jj] = 1.0
    li, lj = basis.levels[ii].value, basis.levels[jj].value
    return Operator(basis.embed_atomic(atomic), basis, f"σ[{li},{lj}]")


def _lowering(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), k=1)


def mode_annihilator(basis: CompositeBasis, which: str) -> Operator:
    """Truncated lowering operator of the driven (a1) or undriven (a2) mode."""
    atom = np.eye(len(basis.levels))
    if which in ("driven", "a1", 1):
        mat = np.kron(atom, np.kron(_lowering(basis.n1_max), np.eye(basis.n2_dim)))
        label = "a1"
    elif which in ("undriven", "a2", 2):
        mat = np.kron(atom, np.kron(np.eye(basis.n1_dim), _lowering(basis.n2_max)))
        label = "a2"
    else:
        raise ValueError(f"mode must be 'driven' or 'undriven', got {which!r}")
    return Operator(mat, basis, label)


def number_operator(basis: CompositeBasis, which: str) -> Operator:
    a = mode_annihilator(basis, which)
    return Operator(a.matrix.conj().T @ a.matrix, basis, f"n[{a.label}]")


def photon_numbers(basis: CompositeBasis, which: str) -> np.ndarray:
    """Diagonal of the photon-number operator, as a float vector."""
    idx = np.arange(basis.dim)
    if which in ("driven", "a1", 1):
        return ((idx // basis.n2_dim) % basis.n1_dim).astype(float)
    if which in ("undriven", "a2", 2):
        return (idx % basis.n2_dim).astype(float)
    raise ValueError(f"mode must be 'driven' or 'undriven', got {which!r}")
