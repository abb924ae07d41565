"""Backward-Euler time stepping with an exact-Newton nonlinear solve.

Each step solves one block row of the space-time system for u = (a, i).
The Newton linear systems are bordered: a tridiagonal field Jacobian with
one coupling column/row for the circuit unknown, eliminated by a scalar
Schur complement after a banded LU factorization of the field block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dgtsv

from .operators import AssembledOperators, State
from .problem import CableProblem

__all__ = [
    "NewtonConfig",
    "NewtonInfo",
    "BorderedSystem",
    "solve_bordered",
    "BackwardEulerRows",
    "step",
    "time_stepping",
    "NewtonConvergenceError",
    "SingularJacobianError",
    "ZeroSchurComplementError",
    "TimeStepError",
]


class SingularJacobianError(RuntimeError):
    """The tridiagonal field block has a singular LU factor."""


class ZeroSchurComplementError(RuntimeError):
    """The scalar Schur complement of the circuit unknown vanishes."""


class NewtonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual_norm: float):
        super().__init__(
            f"Newton did not converge in {iterations} iterations "
            f"(final residual norm {residual_norm:.3e})")
        self.iterations = iterations
        self.residual_norm = residual_norm


class TimeStepError(RuntimeError):
    def __init__(self, index: int, time: float, cause: Exception):
        super().__init__(f"time step {index} (t={time:.6g}) failed: {cause}")
        self.index = index
        self.time = time


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rules for the per-step Newton iteration.

    ``atol`` acts on the residual 2-norm scaled by sqrt(number of rows);
    ``rtol`` is relative to the step's initial residual norm.  ``step_tol``
    accepts the attainable roundoff floor: once an update moves the iterate
    by less than step_tol * (1 + |u|) the equation is satisfied to working
    precision even if the residual tolerances are below that floor.
    """

    atol: float = 1.0e-12
    rtol: float = 1.0e-10
    max_iter: int = 100
    damping: float = 1.0
    step_tol: float = 1.0e-12

    def __post_init__(self):
        if not (self.atol > 0.0 and self.rtol > 0.0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping factor must lie in (0, 1]")
        if not self.step_tol >= 0.0:
            raise ValueError("step_tol must be non-negative")


@dataclass
class NewtonInfo:
    iterations: int
    residual_norms: list
    converged: bool


@dataclass
class BorderedSystem:
    """(n+1) x (n+1) system [[J, col], [row^T, 0]] [da, di] = [rhs, rhs_circuit]."""

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    col: np.ndarray
    row: np.ndarray
    rhs_field: np.ndarray
    rhs_circuit: float


def solve_bordered(sys: BorderedSystem):
    """Solve the bordered system exactly; returns (da, di).

    The tridiagonal block is factored by LAPACK (gtsv, partial pivoting)
    for the field rhs and the coupling column at once; the circuit unknown
    is then eliminated through the scalar Schur complement row @ J^-1 col.
    Raises SingularJacobianError if the factorization breaks down and
    ZeroSchurComplementError if the circuit unknown cannot be eliminated.
    """
    rhs = np.stack([sys.rhs_field, sys.col], axis=1)
    sol, info = dgtsv(sys.lower, sys.diag, sys.upper, rhs,
                      overwrite_b=True)[3:]
    if info != 0:
        raise SingularJacobianError(f"tridiagonal factor breakdown (info={info})")
    if not np.all(np.isfinite(sol)):
        raise SingularJacobianError("non-finite tridiagonal solve")
    y, zc = sol[:, 0], sol[:, 1]
    schur = float(sys.row @ zc)
    if schur == 0.0 or not math.isfinite(schur):
        raise ZeroSchurComplementError("circuit row is not coupled to the field block")
    di = (float(sys.row @ y) - sys.rhs_circuit) / schur
    return y - zc * di, di


@dataclass(frozen=True)
class BackwardEulerRows:
    """Backward-Euler block-row model on one time level (fixed dt).

    ``solve_row`` performs the Newton solve of Phi(u) - Gamma(u_prev) = g,
    starting from the previous point's value; ``apply_row(s)`` evaluate the
    source-free action Phi(u_j) - Gamma(u_{j-1}).
    """

    ops: AssembledOperators
    dt: float
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("time step must be positive")

    def apply_row(self, u: np.ndarray, u_prev: np.ndarray, index=None) -> np.ndarray:
        return self.ops.phi_rows(u, self.dt) - self.ops.gamma_rows(u_prev, self.dt)

    def apply_rows(self, u_block: np.ndarray, u_prev_block: np.ndarray,
                   indices=None) -> np.ndarray:
        return self.ops.phi_rows(u_block, self.dt) - self.ops.gamma_rows(u_prev_block, self.dt)

    def injection_weight(self, fine_ops) -> float:
        # rows scale like 1/dt; convert injected residuals to this level's units
        return fine_ops.dt / self.dt

    def solve_row_info(self, u_prev: np.ndarray, g_row: np.ndarray,
                       u_start: np.ndarray | None = None):
        ops, dt, cfg = self.ops, self.dt, self.newton
        gamma = ops.gamma_rows(u_prev, dt)
        xfree = ops.coupling[:-1]
        scale = math.sqrt(ops.n_rows)

        def residual(vec):
            return ops.phi_rows(vec, dt) - gamma - g_row

        u = (u_start if u_start is not None else u_prev).copy()
        res = residual(u)
        norm = float(np.linalg.norm(res))
        norms = [norm]
        norm0 = norm
        for k in range(cfg.max_iter + 1):
            if norm / scale <= cfg.atol or norm <= cfg.rtol * norm0:
                return u, NewtonInfo(k, norms, True)
            if k == cfg.max_iter:
                break
            diag, off = ops.newton_jacobian_parts(u, dt)
            sys = BorderedSystem(diag, off, off, -xfree, xfree / dt,
                                 -res[:-1], -res[-1])
            da, di = solve_bordered(sys)
            full_step = cfg.damping * math.hypot(float(np.linalg.norm(da)), di)
            if full_step <= cfg.step_tol * (1.0 + float(np.linalg.norm(u))):
                # update no longer moves the iterate in double precision
                u[:-1] += cfg.damping * da
                u[-1] += cfg.damping * di
                norms.append(float(np.linalg.norm(residual(u))))
                return u, NewtonInfo(k + 1, norms, True)
            # backtracking keeps the saturating nu(B) rows from
            # overshooting; full steps are accepted near the solution
            lam = cfg.damping
            while True:
                u_try = u.copy()
                u_try[:-1] += lam * da
                u_try[-1] += lam * di
                res_try = residual(u_try)
                norm_try = float(np.linalg.norm(res_try))
                if norm_try <= (1.0 - 1.0e-4 * lam) * norm:
                    break
                # quadratic model of 0.5|F|^2 along the direction; the
                # Newton direction gives slope -|F|^2 at lam = 0
                denom = norm_try**2 - norm**2 * (1.0 - 2.0 * lam)
                lam_new = norm**2 * lam**2 / denom if denom > 0.0 else 0.5 * lam
                lam = min(max(lam_new, 0.1 * lam), 0.5 * lam)
                if lam < cfg.damping * 2.0**-24:
                    raise NewtonConvergenceError(k + 1, norm_try)
            u, res, norm = u_try, res_try, norm_try
            norms.append(norm)
        raise NewtonConvergenceError(cfg.max_iter, norm)

    def solve_row(self, u_prev: np.ndarray, g_row: np.ndarray,
                  index=None) -> np.ndarray:
        try:
            return self.solve_row_info(u_prev, g_row)[0]
        except NewtonConvergenceError:
            return self._solve_row_continuation(u_prev, g_row)

    def _solve_row_continuation(self, u_prev: np.ndarray, g_row: np.ndarray) -> np.ndarray:
        """Load-stepping fallback for rows far across the saturation knee.

        The rhs is moved from the trivially-solved g0 (whose solution is
        u_prev) towards g_row in adaptive increments, each solved by the
        plain Newton iteration warm-started from the previous increment.
        """
        base = self.apply_row(u_prev, u_prev)
        u = u_prev.copy()
        theta = 0.0
        increment = 0.5
        while theta < 1.0:
            target = min(1.0, theta + increment)
            try:
                u = self.solve_row_info(u_prev, base + target * (g_row - base),
                                        u_start=u)[0]
            except NewtonConvergenceError:
                increment *= 0.5
                if increment < 1.0e-3:
                    raise
                continue
            theta = target
            increment = min(2.0 * increment, 1.0)
        return u


def step(problem: CableProblem, u_prev: State, t_prev: float, t_next: float,
         newton: NewtonConfig | None = None) -> State:
    """One backward-Euler step of the cable model from t_prev to t_next."""
    if not t_next > t_prev:
        raise ValueError("t_next must exceed t_prev")
    rows = BackwardEulerRows(problem.ops, t_next - t_prev, newton or NewtonConfig())
    g = np.zeros(problem.n_rows)
    g[-1] = problem.source.voltage(t_next)
    return State.from_vector(rows.solve_row(u_prev.as_vector(), g))


def time_stepping(problem: CableProblem, u0: State, times,
                  newton: NewtonConfig | None = None) -> list[State]:
    """Sequential forward sweep over consecutive time pairs.

    The reference sequential solver; also used on the coarsest MGRIT level.
    Step failures are re-raised as TimeStepError with the failing index.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or not np.all(np.diff(times) > 0):
        raise ValueError("times must be an increasing sequence with >= 2 entries")
    states = [u0]
    for j in range(1, times.size):
        try:
            states.append(step(problem, states[-1], times[j - 1], times[j], newton))
        except (NewtonConvergenceError, SingularJacobianError,
                ZeroSchurComplementError) as exc:
            raise TimeStepError(j, float(times[j]), exc) from exc
    return states
