"""Physical objects: qudit level structures, ladder operators, the coupled
static Hamiltonian, drive Hamiltonians, per-step loss factors, and padded
CNOT targets.

Units: energies are angular frequencies in units of the first qudit's
Larmor frequency (hbar = 1) and internal time is measured in inverse
Larmor-frequency units, so the simple-qubit reference CNOT time is
T0 = pi/(4g) internally.  Display conventions elsewhere in the literature
use the unit 2*pi over the Larmor frequency for time; see
:func:`internal_to_display_time`.

Composite basis ordering: the pair (j1, j2) maps to index j1*N2 + j2, i.e.
qudit 2 varies fastest.

Anharmonicities and loss rates are housed *by state index* (state 2 is the
second excited state).  Figure captions in the source literature label the
same quantities inconsistently (e.g. calling the state-2 anharmonicity
"eta_3", or naming loss-rate pairs by different subscripts per figure);
any such pair label should be read as (second-highest kept state, highest
kept state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def reference_gate_time(g: float) -> float:
    """Minimum CNOT time pi/(4g) for two simple qubits, internal units."""
    return np.pi / (4.0 * g)


def internal_to_display_time(t: float) -> float:
    """Convert internal time (unit 1/omega1) to display time (unit 2*pi/omega1)."""
    return t / (2.0 * np.pi)


@dataclass
class QuditSpec:
    """Level structure of one weakly anharmonic qudit.

    ``anharmonicities[j]`` is the deviation of level j from the harmonic
    value j*omega1, for j = 2 .. n_levels-1 (states 0 and 1 have zero
    anharmonicity by definition).
    """

    n_levels: int
    omega1: float
    anharmonicities: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be >= 2, got {self.n_levels}")
        for j in self.anharmonicities:
            if not 2 <= j < self.n_levels:
                raise ValueError(
                    f"anharmonicity index {j} outside 2..{self.n_levels - 1}"
                )


def qudit_energies(spec: QuditSpec) -> np.ndarray:
    """Level energies w_j = j*omega1 + eta_j, with w_0 = 0."""
    return np.array(
        [j * spec.omega1 + spec.anharmonicities.get(j, 0.0) for j in range(spec.n_levels)]
    )


def build_ladder(n_levels: int) -> np.ndarray:
    """Truncated annihilation operator with <j-1|a|j> = sqrt(j)."""
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    a = np.zeros((n_levels, n_levels))
    for j in range(1, n_levels):
        a[j - 1, j] = np.sqrt(j)
    return a


@dataclass
class CoupledSystem:
    """Two qudits with a fixed transverse coupling of strength g."""

    qudit1: QuditSpec
    qudit2: QuditSpec
    g: float

    @property
    def dim(self) -> int:
        return self.qudit1.n_levels * self.qudit2.n_levels

    def index(self, j1: int, j2: int) -> int:
        """Composite index of the bare product state (j1, j2)."""
        n2 = self.qudit2.n_levels
        if not (0 <= j1 < self.qudit1.n_levels and 0 <= j2 < n2):
            raise IndexError(f"state ({j1}, {j2}) outside the level range")
        return j1 * n2 + j2

    def labels(self) -> list[tuple[int, int]]:
        """Bare labels (j1, j2) in composite-index order."""
        return [
            (j1, j2)
            for j1 in range(self.qudit1.n_levels)
            for j2 in range(self.qudit2.n_levels)
        ]

    def qubit_indices(self) -> list[int]:
        """Composite indices of the four computational states 00,01,10,11."""
        return [self.index(0, 0), self.index(0, 1), self.index(1, 0), self.index(1, 1)]

    @property
    def t0(self) -> float:
        return reference_gate_time(self.g)


def build_static_hamiltonian(sys: CoupledSystem) -> np.ndarray:
    """H0 = sum_k sum_j w_j^(k) Pi_j^(k) + g (a1 + a1^T) x (a2 + a2^T)."""
    n1, n2 = sys.qudit1.n_levels, sys.qudit2.n_levels
    a1 = build_ladder(n1)
    a2 = build_ladder(n2)
    h0 = np.kron(np.diag(qudit_energies(sys.qudit1)), np.eye(n2))
    h0 += np.kron(np.eye(n1), np.diag(qudit_energies(sys.qudit2)))
    h0 += sys.g * np.kron(a1 + a1.T, a2 + a2.T)
    return h0


def build_control_hamiltonians(sys: CoupledSystem) -> tuple[np.ndarray, np.ndarray]:
    """Drive operators H1 = (a1 + a1^T) x I and H2 = I x (a2 + a2^T)."""
    n1, n2 = sys.qudit1.n_levels, sys.qudit2.n_levels
    a1 = build_ladder(n1)
    a2 = build_ladder(n2)
    return (
        np.kron(a1 + a1.T, np.eye(n2)),
        np.kron(np.eye(n1), a2 + a2.T),
    )


@dataclass
class LossSpec:
    """Per-qudit, per-state loss rates (state index -> rate, units of omega1).

    Rates must be non-negative; in the validated regime the qubit states
    (0 and 1) carry zero rate.  Composite rates are additive across qudits:
    gamma(j1, j2) = gamma1[j1] + gamma2[j2].
    """

    gamma1: dict[int, float] = field(default_factory=dict)
    gamma2: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for gam in (self.gamma1, self.gamma2):
            for j, rate in gam.items():
                if rate < 0:
                    raise ValueError(f"loss rate for state {j} is negative: {rate}")

    def composite_rates(self, sys: CoupledSystem) -> np.ndarray:
        """gamma(j1, j2) over the composite basis, in index order."""
        out = np.zeros(sys.dim)
        for j1, j2 in sys.labels():
            out[sys.index(j1, j2)] = self.gamma1.get(j1, 0.0) + self.gamma2.get(j2, 0.0)
        return out

    def is_trivial(self) -> bool:
        return all(r == 0 for r in self.gamma1.values()) and all(
            r == 0 for r in self.gamma2.values()
        )


def build_loss_factor(loss: LossSpec, sys: CoupledSystem, dt: float) -> np.ndarray:
    """Diagonal of the per-step decay factor L = exp(-Gamma*dt).

    Entries are exp(-gamma(j1,j2)*dt), all in (0, 1].  Returned as a 1-D
    array of the diagonal; the loss factor commutes with any diagonal
    matrix.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return np.exp(-loss.composite_rates(sys) * dt)


@dataclass
class GateTarget:
    """Padded (generally non-unitary) target: the desired gate on the qubit
    subspace and exact zeros everywhere else."""

    matrix: np.ndarray
    qubit_dim: int = 4


_U_CNOT = np.array(
    [
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, 0, 1],
        [0, 0, 1, 0],
    ],
    dtype=complex,
)


def cnot_matrix() -> np.ndarray:
    """The 4x4 CNOT in the basis {00, 01, 10, 11} (first index = control)."""
    return _U_CNOT.copy()


def embed_cnot_target(sys: CoupledSystem) -> GateTarget:
    """CNOT on the qubit subspace, zero on the complement."""
    d = sys.dim
    G = np.zeros((d, d), dtype=complex)
    q = sys.qubit_indices()
    for r in range(4):
        for c in range(4):
            G[q[r], q[c]] = _U_CNOT[r, c]
    return GateTarget(matrix=G)
