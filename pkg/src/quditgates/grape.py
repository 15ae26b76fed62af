"""Loss-modified GRAPE: trace-overlap fidelity against padded targets,
analytic gradients, monotone gradient ascent, random pulse initialization,
and gate-time sweeps.

The fidelity is F = |Tr{G^dag M(T)} / 4|^2 with the denominator fixed at 4
(the qubit-subspace dimension) regardless of how many qudit levels are
kept, so a perfect gate scores F = 1 for any padding.  M(T) is the lossy
chain L U_N ... L U_1.

Two gradient modes are provided.  The default first-order mode uses

    dF/du_k(j) = -(1/8) Re[ i dt Tr{P_j^dag Hk X_j} Tr{X_j^dag P_j} ],

which is first order in the step duration; the "exact" mode differentiates
each step propagator exactly through its eigendecomposition and is
accurate to machine precision at any step size.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import CoupledSystem, GateTarget, LossSpec, build_control_hamiltonians, \
    build_loss_factor, build_static_hamiltonian
from .propagator import PulseSet, accumulate_backward, accumulate_forward, \
    default_step_count, desk_step_count, final_operator

QUBIT_SPACE_DIM = 4.0

#: The four initial-pulse distributions: uniform with width 1 or 10,
#: support either centered on zero or starting at zero.
DISTRIBUTIONS = {
    "width1_centered": (1.0, True),
    "width1_from0": (1.0, False),
    "width10_centered": (10.0, True),
    "width10_from0": (10.0, False),
}


class NumericalAbort(RuntimeError):
    """Raised when the optimizer encounters a non-finite fidelity."""


def fidelity(final_op: np.ndarray, target: GateTarget | np.ndarray) -> float:
    """Trace-overlap fidelity |Tr{target^dag final_op}/4|^2."""
    G = target.matrix if isinstance(target, GateTarget) else target
    return float(np.abs(np.trace(G.conj().T @ final_op) / QUBIT_SPACE_DIM) ** 2)


def init_pulses(
    distribution: str, n_steps: int, dt: float, seed=0, n_channels: int = 2
) -> PulseSet:
    """Random piecewise-constant pulses from one of the four distributions."""
    try:
        width, centered = DISTRIBUTIONS[distribution]
    except KeyError:
        raise ValueError(
            f"unknown distribution {distribution!r}; choose from {sorted(DISTRIBUTIONS)}"
        ) from None
    rng = np.random.default_rng(seed)
    lo = -width / 2.0 if centered else 0.0
    return PulseSet(dt=dt, amplitudes=rng.uniform(lo, lo + width, size=(n_channels, n_steps)))


def _nonzero_triplets(Hk: np.ndarray):
    rows, cols = np.nonzero(Hk)
    return rows, cols, Hk[rows, cols]


def _batch_eig(h0, controls, pulses):
    H = h0[None, :, :] + np.tensordot(
        pulses.amplitudes.T, np.asarray(controls), axes=(1, 0)
    )
    w, V = np.linalg.eigh(H)
    return w, V


def _unitaries_from_eig(w, V, dt):
    Vt = V.transpose(0, 2, 1)
    C = np.matmul(V * np.cos(dt * w)[:, None, :], Vt)
    S = np.matmul(V * np.sin(dt * w)[:, None, :], Vt)
    return C - 1j * S


def _grad_first_order(X, P, controls_nz, dt, tau):
    """First-order gradient; Tr{X_j^dag P_j} = conj(tau) for every j."""
    N = X.shape[0]
    out = np.empty((len(controls_nz), N))
    for k, (rows, cols, vals) in enumerate(controls_nz):
        tr = np.zeros(N, dtype=complex)
        for b, c, v in zip(rows, cols, vals):
            tr += v * np.sum(X[:, c, :] * P[:, b, :].conj(), axis=1)
        out[k] = -0.125 * np.real(1j * dt * tr * np.conj(tau))
    return out


def _grad_exact(w, V, controls, dt, X, P, loss_diag, tau):
    """Exact gradient via the spectral divided-difference derivative of
    each step propagator (loss factor kept in its chain position)."""
    N, d = w.shape
    f = np.exp(-1j * dt * w)
    dl = w[:, :, None] - w[:, None, :]
    small = np.abs(dl) < 1e-12
    Phi = (f[:, :, None] - f[:, None, :]) / np.where(small, 1.0, dl)
    fp = -1j * dt * f
    Phi = np.where(small, 0.5 * (fp[:, :, None] + fp[:, None, :]), Phi)
    Vt = V.transpose(0, 2, 1)
    Xprev = np.concatenate([np.eye(d, dtype=complex)[None], X[:-1]], axis=0)
    PdL = P.conj().transpose(0, 2, 1)
    if loss_diag is not None:
        PdL = PdL * loss_diag[None, None, :]
    out = np.empty((len(controls), N))
    for k, hk in enumerate(controls):
        W = np.matmul(Vt, np.matmul(hk[None], V))
        dU = np.matmul(V.astype(complex), np.matmul(W * Phi, Vt.astype(complex)))
        dtau = np.einsum("jab,jba->j", np.matmul(PdL, dU), Xprev)
        out[k] = 0.125 * np.real(np.conj(tau) * dtau)
    return out


def gradient(
    h0: np.ndarray,
    controls: list[np.ndarray],
    pulses: PulseSet,
    target: GateTarget | np.ndarray,
    loss_diag: np.ndarray | None = None,
    mode: str = "paper",
) -> np.ndarray:
    """dF/du_k(j) as an (m, N) array.

    ``mode="paper"`` is the first-order formula evaluated with the
    loss-modified chains; ``mode="exact"`` is exact at any step size.
    """
    G = target.matrix if isinstance(target, GateTarget) else target
    w, V = _batch_eig(h0, controls, pulses)
    U = _unitaries_from_eig(w, V, pulses.dt)
    X = accumulate_forward(U, loss_diag)
    P = accumulate_backward(U, loss_diag, G)
    tau = np.trace(G.conj().T @ X[-1])
    if mode == "paper":
        nz = [_nonzero_triplets(hk) for hk in controls]
        return _grad_first_order(X, P, nz, pulses.dt, tau)
    if mode == "exact":
        return _grad_exact(w, V, controls, pulses.dt, X, P, loss_diag, tau)
    raise ValueError(f"unknown gradient mode {mode!r}")


@dataclass
class OptimizerConfig:
    """Knobs for one optimization run.

    ``step_rule`` is (initial step, backtracking factor, growth factor) for
    the line search along the gradient.  With ``bb_seed`` the trial step of
    each iteration starts from the two-point Barzilai-Borwein estimate
    instead of the grown previous step, which converges far faster at the
    same per-iteration cost; backtracking still guarantees a monotone
    fidelity history either way.  ``line_search="maximize"`` replaces the
    first-improvement rule with a bracketed golden-section maximization
    along the gradient direction.
    """

    iterations: int = 10_000
    step_rule: tuple[float, float, float] = (1e-2, 0.5, 1.5)
    seed: int = 0
    init_distribution: str = "width1_centered"
    record_every: int = 1
    gradient_mode: str = "paper"
    line_search: str = "backtracking"
    bb_seed: bool = True
    stop_fidelity: float | None = None
    n_steps: int | None = None
    dt_target: float | None = None
    n_channels: int = 2

    def resolve_steps(self, total_time: float) -> int:
        if self.n_steps is not None:
            return self.n_steps
        if self.dt_target is not None:
            return desk_step_count(total_time, self.dt_target)
        return default_step_count(total_time)


@dataclass
class OptimizationResult:
    best_fidelity: float
    best_pulses: PulseSet
    fidelity_history: np.ndarray
    iterations_used: int


def _line_maximize(eval_F, step, F0, shrink, max_expand=40):
    """Golden-section maximization of F(alpha) along the gradient.

    Brackets by doubling from ``step`` while F keeps rising, then refines.
    Returns (alpha, F) with F >= F0; alpha = 0 if no improvement found.
    """
    alpha = step
    F_a = eval_F(alpha)
    while F_a <= F0 and alpha > 1e-16:
        alpha *= shrink
        F_a = eval_F(alpha)
    if F_a <= F0:
        return 0.0, F0
    lo, hi = 0.0, alpha
    F_hi = F_a
    for _ in range(max_expand):
        trial = hi * 2.0
        F_t = eval_F(trial)
        if F_t <= F_hi:
            lo, hi = hi / 2.0, trial
            break
        hi, F_hi = trial, F_t
    gr = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = lo, hi
    c, d = b - gr * (b - a), a + gr * (b - a)
    F_c, F_d = eval_F(c), eval_F(d)
    for _ in range(30):
        if F_c > F_d:
            b, d, F_d = d, c, F_c
            c = b - gr * (b - a)
            F_c = eval_F(c)
        else:
            a, c, F_c = c, d, F_d
            d = a + gr * (b - a)
            F_d = eval_F(d)
    alpha = c if F_c > F_d else d
    F_best = max(F_c, F_d)
    if F_best <= F0:
        return 0.0, F0
    return alpha, F_best


def optimize(
    sys: CoupledSystem,
    loss: LossSpec | None,
    target: GateTarget,
    total_time: float,
    config: OptimizerConfig,
) -> OptimizationResult:
    """Maximize the padded-target fidelity over piecewise-constant pulses.

    Monotone ascent along the analytic gradient with a backtracking line
    search; stops at the iteration budget, at ``stop_fidelity``, or when no
    improving step remains.  Raises :class:`NumericalAbort` on non-finite
    fidelity.
    """
    if total_time < 0:
        raise ValueError("total_time must be >= 0")
    h0 = build_static_hamiltonian(sys)
    controls = list(build_control_hamiltonians(sys))
    G = target.matrix

    if total_time == 0.0:
        M = np.eye(sys.dim, dtype=complex)
        F = fidelity(M, G)
        return OptimizationResult(
            best_fidelity=F,
            best_pulses=PulseSet(dt=0.0, amplitudes=np.zeros((config.n_channels, 0))),
            fidelity_history=np.array([F]),
            iterations_used=0,
        )

    N = config.resolve_steps(total_time)
    dt = total_time / N
    loss_diag = None
    if loss is not None and not loss.is_trivial():
        loss_diag = build_loss_factor(loss, sys, dt)

    pulses = init_pulses(config.init_distribution, N, dt, seed=config.seed,
                         n_channels=config.n_channels)
    nz = [_nonzero_triplets(hk) for hk in controls]

    def evaluate(u):
        p = PulseSet(dt=dt, amplitudes=u)
        w, V = _batch_eig(h0, controls, p)
        U = _unitaries_from_eig(w, V, dt)
        M = final_operator(U, loss_diag)
        return fidelity(M, G), (w, V, U)

    u = pulses.amplitudes
    F, (w, V, U) = evaluate(u)
    if not np.isfinite(F):
        raise NumericalAbort("initial fidelity is not finite")

    step0, shrink, grow = config.step_rule
    step = step0
    history = [F]
    u_prev = grad_prev = None
    best_u, best_F = u.copy(), F
    iterations_used = 0

    for it in range(config.iterations):
        X = accumulate_forward(U, loss_diag)
        P = accumulate_backward(U, loss_diag, G)
        tau = np.trace(G.conj().T @ X[-1])
        if config.gradient_mode == "paper":
            grad = _grad_first_order(X, P, nz, dt, tau)
        elif config.gradient_mode == "exact":
            grad = _grad_exact(w, V, controls, dt, X, P, loss_diag, tau)
        else:
            raise ValueError(f"unknown gradient mode {config.gradient_mode!r}")

        gn2 = float(np.vdot(grad, grad).real)
        if gn2 < 1e-28:
            iterations_used = it + 1
            break

        if config.bb_seed and u_prev is not None:
            du = (u - u_prev).ravel()
            dg = (grad - grad_prev).ravel()
            sy = abs(float(du @ dg))
            if sy > 1e-300:
                step = float(np.clip((du @ du) / sy, 1e-12, 1e10))
        u_prev, grad_prev = u.copy(), grad

        improved = False
        if config.line_search == "maximize":
            alpha, F_t = _line_maximize(
                lambda a: evaluate(u + a * grad)[0], step, F, shrink
            )
            if alpha > 0.0:
                u = u + alpha * grad
                F, (w, V, U) = evaluate(u)
                step = alpha
                improved = True
        else:
            while step > 1e-16:
                u_t = u + step * grad
                F_t, cache = evaluate(u_t)
                if not np.isfinite(F_t):
                    raise NumericalAbort(f"fidelity became non-finite at iteration {it}")
                if F_t > F:
                    u, F = u_t, F_t
                    w, V, U = cache
                    if not config.bb_seed:
                        step *= grow
                    improved = True
                    break
                step *= shrink

        iterations_used = it + 1
        if F > best_F:
            best_F, best_u = F, u.copy()
        if (it + 1) % config.record_every == 0:
            history.append(F)
        if not improved:
            break
        if config.stop_fidelity is not None and F >= config.stop_fidelity:
            break

    return OptimizationResult(
        best_fidelity=best_F,
        best_pulses=PulseSet(dt=dt, amplitudes=best_u),
        fidelity_history=np.asarray(history),
        iterations_used=iterations_used,
    )


def optimize_lbfgs(
    sys: CoupledSystem,
    loss: LossSpec | None,
    target: GateTarget,
    total_time: float,
    config: OptimizerConfig,
) -> OptimizationResult:
    """Quasi-Newton (L-BFGS-B) variant of :func:`optimize`.

    Useful when a tight iteration budget must reach high fidelity on
    larger systems; the scipy line search enforces monotone improvement,
    so the recorded history is still non-decreasing.
    """
    from scipy.optimize import minimize

    if total_time <= 0:
        return optimize(sys, loss, target, total_time, config)
    h0 = build_static_hamiltonian(sys)
    controls = list(build_control_hamiltonians(sys))
    G = target.matrix
    N = config.resolve_steps(total_time)
    dt = total_time / N
    loss_diag = None
    if loss is not None and not loss.is_trivial():
        loss_diag = build_loss_factor(loss, sys, dt)
    pulses0 = init_pulses(config.init_distribution, N, dt, seed=config.seed,
                          n_channels=config.n_channels)
    nz = [_nonzero_triplets(hk) for hk in controls]
    m = config.n_channels

    state = {"best_F": -1.0, "best_u": pulses0.amplitudes.copy(), "history": []}

    def fun(uflat):
        p = PulseSet(dt=dt, amplitudes=uflat.reshape(m, N))
        w, V = _batch_eig(h0, controls, p)
        U = _unitaries_from_eig(w, V, dt)
        X = accumulate_forward(U, loss_diag)
        P = accumulate_backward(U, loss_diag, G)
        tau = np.trace(G.conj().T @ X[-1])
        F = float(np.abs(tau / QUBIT_SPACE_DIM) ** 2)
        if not np.isfinite(F):
            raise NumericalAbort("fidelity became non-finite")
        if F > state["best_F"]:
            state["best_F"] = F
            state["best_u"] = p.amplitudes.copy()
        if config.gradient_mode == "exact":
            gr = _grad_exact(w, V, controls, dt, X, P, loss_diag, tau)
        else:
            gr = _grad_first_order(X, P, nz, dt, tau)
        return -F, -gr.ravel()

    def record(_xk):
        state["history"].append(state["best_F"])
        if config.stop_fidelity is not None and state["best_F"] >= config.stop_fidelity:
            raise StopIteration

    try:
        minimize(
            fun,
            pulses0.amplitudes.ravel(),
            jac=True,
            method="L-BFGS-B",
            callback=record,
            options=dict(
                maxiter=config.iterations,
                maxfun=3 * config.iterations + 50,
                ftol=1e-16,
                gtol=1e-14,
            ),
        )
    except StopIteration:
        pass

    history = np.array(state["history"] if state["history"] else [state["best_F"]])
    return OptimizationResult(
        best_fidelity=state["best_F"],
        best_pulses=PulseSet(dt=dt, amplitudes=state["best_u"]),
        fidelity_history=history,
        iterations_used=len(history),
    )


@dataclass
class SweepPoint:
    total_time: float
    t_over_t0: float
    restart_id: int
    distribution: str
    seed: int
    fidelity: float
    iterations_used: int
    pulses: PulseSet | None = None


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)

    def best_per_time(self) -> dict[float, SweepPoint]:
        best: dict[float, SweepPoint] = {}
        for p in self.points:
            cur = best.get(p.total_time)
            if cur is None or p.fidelity > cur.fidelity:
                best[p.total_time] = p
        return best


def _run_single(args):
    sys, loss, target, T, cfg, method, ti, ri, dist, keep = args
    run_cfg = replace(cfg, init_distribution=dist,
                      seed=int(np.random.SeedSequence((cfg.seed, ti, ri)).generate_state(1)[0]))
    opt = optimize_lbfgs if method == "lbfgs" else optimize
    res = opt(sys, loss, target, T, run_cfg)
    return SweepPoint(
        total_time=T,
        t_over_t0=T / sys.t0,
        restart_id=ri,
        distribution=dist,
        seed=run_cfg.seed,
        fidelity=res.best_fidelity,
        iterations_used=res.iterations_used,
        pulses=res.best_pulses if keep else None,
    )


def sweep_gate_time(
    sys: CoupledSystem,
    loss: LossSpec | None,
    target: GateTarget,
    times: list[float],
    config: OptimizerConfig,
    restarts: int = 4,
    method: str = "ascent",
    workers: int = 1,
    keep_pulses: bool = False,
) -> SweepResult:
    """Independent optimizations for every (time, restart) pair.

    Restarts cycle through the four initial-pulse distributions.  Results
    are deterministic per (config.seed, times, restarts) regardless of the
    worker count; rows come back ordered by (time index, restart index).
    """
    names = list(DISTRIBUTIONS)
    tasks = [
        (sys, loss, target, T, config, method, ti, ri, names[ri % len(names)], keep_pulses)
        for ti, T in enumerate(times)
        for ri in range(restarts)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_run_single, tasks))
    else:
        points = [_run_single(t) for t in tasks]
    return SweepResult(points=points)
