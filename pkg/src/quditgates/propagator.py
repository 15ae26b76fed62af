"""Piecewise-constant time evolution with an optional per-step loss factor.

The lossy final-time propagator is the ordered product
M(T) = L U_N ... L U_2 L U_1, where U_j = exp(-i dt (H0 + sum_k u_k(j) Hk))
and L is the diagonal decay factor from :func:`model.build_loss_factor`.
The loss factor is applied after every step, including the last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import batch_propagators, propagator_exp

# Step-count schedule, keyed by pulse time in display units (2*pi/omega1):
# 1e3 steps up to 50, 1e4 up to 400, 2e4 beyond.
_STEP_RULE = ((50.0, 1000), (400.0, 10000), (np.inf, 20000))

#: Desk-scale sampling interval (internal units); equals the coarsest
#: resolution the full-scale schedule produces (1e3 steps at display time 50).
DESK_DT = np.pi / 10.0


def default_step_count(total_time: float) -> int:
    """Full-scale step count for a pulse of the given internal duration."""
    display = total_time / (2.0 * np.pi)
    for bound, n in _STEP_RULE:
        if display <= bound:
            return n
    raise AssertionError("unreachable")


def desk_step_count(total_time: float, dt_target: float = DESK_DT) -> int:
    """Reduced step count: N scaled with T at a fixed sampling interval."""
    return max(2, int(round(total_time / dt_target)))


@dataclass
class PulseSet:
    """Piecewise-constant control amplitudes u_k(j) on m channels, N steps."""

    dt: float
    amplitudes: np.ndarray  # shape (m, N)

    def __post_init__(self):
        self.amplitudes = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("pulse amplitudes must be finite")

    @property
    def n_channels(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_steps(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        """Midpoint time of each step."""
        return (np.arange(self.n_steps) + 0.5) * self.dt


def step_unitary(
    h0: np.ndarray, controls: list[np.ndarray], u: np.ndarray, dt: float
) -> np.ndarray:
    """U = exp(-i dt (H0 + sum_k u_k Hk)) for one step."""
    u = np.asarray(u, dtype=float)
    if u.shape != (len(controls),):
        raise ValueError(f"expected {len(controls)} amplitudes, got shape {u.shape}")
    H = h0 + sum(uk * hk for uk, hk in zip(u, controls))
    return propagator_exp(H, dt)


def step_unitaries(
    h0: np.ndarray, controls: list[np.ndarray], pulses: PulseSet
) -> np.ndarray:
    """All step propagators as a stack (N, d, d)."""
    H = h0[None, :, :] + np.tensordot(
        pulses.amplitudes.T, np.asarray(controls), axes=(1, 0)
    )
    return batch_propagators(H, pulses.dt)


def accumulate_forward(U: np.ndarray, loss_diag: np.ndarray | None) -> np.ndarray:
    """X_j = L U_j ... L U_2 L U_1 for every j, as a stack (N, d, d)."""
    N, d, _ = U.shape
    X = np.empty_like(U)
    cur = np.eye(d, dtype=complex)
    for j in range(N):
        cur = U[j] @ cur
        if loss_diag is not None:
            cur = loss_diag[:, None] * cur
        X[j] = cur
    return X


def accumulate_backward(
    U: np.ndarray, loss_diag: np.ndarray | None, target: np.ndarray
) -> np.ndarray:
    """P_j for every j, with P_N = target and P_j = U_{j+1}^dag L P_{j+1}.

    Written out, P_j = U_{j+1}^dag L ... U_N^dag L U_target, so that
    Tr{P_j^dag X_j} equals Tr{target^dag X_N} for every j.
    """
    N, d, _ = U.shape
    P = np.empty((N, d, d), dtype=complex)
    cur = np.asarray(target, dtype=complex)
    P[N - 1] = cur
    for j in range(N - 2, -1, -1):
        nxt = loss_diag[:, None] * cur if loss_diag is not None else cur
        cur = U[j + 1].conj().T @ nxt
        P[j] = cur
    return P


def final_operator(U: np.ndarray, loss_diag: np.ndarray | None) -> np.ndarray:
    """The lossy final-time propagator M(T) without storing the whole chain."""
    d = U.shape[1]
    cur = np.eye(d, dtype=complex)
    for j in range(U.shape[0]):
        cur = U[j] @ cur
        if loss_diag is not None:
            cur = loss_diag[:, None] * cur
    return cur


def forward_chain(
    h0: np.ndarray,
    controls: list[np.ndarray],
    pulses: PulseSet,
    loss_diag: np.ndarray | None = None,
) -> np.ndarray:
    """Forward operator chain X_1 .. X_N for the given pulse set."""
    return accumulate_forward(step_unitaries(h0, controls, pulses), loss_diag)


def backward_chain(
    h0: np.ndarray,
    controls: list[np.ndarray],
    pulses: PulseSet,
    target: np.ndarray,
    loss_diag: np.ndarray | None = None,
) -> np.ndarray:
    """Backward operator chain P_1 .. P_N against the given target."""
    return accumulate_backward(step_unitaries(h0, controls, pulses), loss_diag, target)


@dataclass
class Trajectory:
    """State history under piecewise-constant evolution.

    ``states[0]`` is the initial state; ``states[j]`` is X_j applied to it.
    Norms are non-increasing when loss is active and conserved without it.
    """

    times: np.ndarray
    states: np.ndarray  # shape (N+1, d)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def evolve_state(
    psi0: np.ndarray,
    h0: np.ndarray,
    controls: list[np.ndarray],
    pulses: PulseSet,
    loss_diag: np.ndarray | None = None,
) -> Trajectory:
    """Propagate a normalized state through the lossy step chain."""
    psi0 = np.asarray(psi0, dtype=complex)
    if not np.isclose(np.linalg.norm(psi0), 1.0, atol=1e-9):
        raise ValueError("initial state must be normalized")
    U = step_unitaries(h0, controls, pulses)
    N, d, _ = U.shape
    states = np.empty((N + 1, d), dtype=complex)
    states[0] = psi0
    cur = psi0
    for j in range(N):
        cur = U[j] @ cur
        if loss_diag is not None:
            cur = loss_diag * cur
        states[j + 1] = cur
    times = np.concatenate([[0.0], (np.arange(N) + 1) * pulses.dt])
    return Trajectory(times=times, states=states)


def subspace_populations(
    traj: Trajectory, n1: int, n2: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classify probability into three level classes at every time.

    (a) qubit space: both qudits in {0, 1};
    (b) at least one qudit in state 2, none in state 3 or higher;
    (c) at least one qudit in state 3 or higher.
    The three series sum to the squared state norm at each step.
    """
    if traj.states.shape[1] != n1 * n2:
        raise ValueError("trajectory dimension does not match n1*n2")
    probs = np.abs(traj.states) ** 2
    cls = np.empty(n1 * n2, dtype=int)
    for j1 in range(n1):
        for j2 in range(n2):
            if j1 >= 3 or j2 >= 3:
                c = 2
            elif j1 == 2 or j2 == 2:
                c = 1
            else:
                c = 0
            cls[j1 * n2 + j2] = c
    qubit = probs[:, cls == 0].sum(axis=1)
    level2 = probs[:, cls == 1].sum(axis=1)
    level3plus = probs[:, cls == 2].sum(axis=1)
    return qubit, level2, level3plus
