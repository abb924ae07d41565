"""Multigrid reduction in time (MGRIT) over the backward-Euler block rows.

The space-time system A(u) = g has one block row per time point: row 0
pins the initial condition, row j >= 1 is the backward-Euler step from
point j-1 to j with the source voltage kept on the right-hand side g.
Every m-th point of a level is a C-point and defines the next coarser
level; relaxation alternates F-sweeps (propagation from each C-point
across the following F-points) and C-sweeps (one step into each C-point).
Coarse levels are rediscretized backward Euler with the full approximation
scheme (FAS) right-hand side

    g_coarse = A_coarse(R u) + R(g - A_fine(u)),

restriction R is injection at C-points, and the coarse correction is
injected at C-points followed by an F-sweep (ideal interpolation).
V- and F-cycles recurse on the coarse problem; the coarsest level is
solved by sequential time stepping.

All sweeps are written against ``LevelView`` objects (a contiguous owned
index range plus neighbor-exchange hooks), so the serial driver and the
thread-parallel executor in ``runtime`` run the same numeric code: a
serial run is one view spanning the whole level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import State
from .problem import CableProblem
from .stepper import BackwardEulerRows, NewtonConfig

__all__ = [
    "TimeLevel",
    "Hierarchy",
    "SpaceTimeFunction",
    "MgritResult",
    "RowModel",
    "build_hierarchy",
    "build_space_time_rhs",
    "apply_A",
    "f_relax",
    "c_relax",
    "fcf_relax",
    "restrict_injection",
    "fas_coarse_rhs",
    "coarse_solve",
    "correct_ideal",
    "v_cycle",
    "f_cycle",
    "residual_norm",
    "solve",
]


# --------------------------------------------------------------------------
# temporal hierarchy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeLevel:
    """One temporal grid: uniform points, step size, coarsening factor.

    ``m`` is the factor to the next coarser level (1 on the coarsest).
    Points of the next level are exactly this level's C-points; coarse
    times are produced by slicing, never by re-accumulation.
    """

    index: int
    times: np.ndarray
    dt: float
    m: int

    @property
    def n_points(self) -> int:
        return self.times.size

    def c_points(self) -> np.ndarray:
        return np.arange(0, self.n_points, self.m)


class RowModel:
    """Interface of one level's block-row operator.

    ``solve_row`` solves row ``index`` for u_j given u_{j-1} and the row
    rhs; ``apply_row`` evaluates the source-free action of that row.  The
    backward-Euler rows ignore ``index`` (the source sits in g), but row
    models built from step compositions need it.  Subclasses may override
    ``apply_rows`` with a vectorized version.

    ``injection_weight`` converts residuals of a finer level's rows into
    this level's row units.  Backward-Euler rows scale like 1/dt, so the
    weight is dt_fine/dt_coarse: without it, injected mass- and
    flux-balance residuals are over-corrected by the coarsening factor and
    the cycle amplifies instead of contracting.
    """

    def solve_row(self, u_prev, g_row, index=None):  # pragma: no cover
        raise NotImplementedError

    def apply_row(self, u, u_prev, index=None):  # pragma: no cover
        raise NotImplementedError

    def apply_rows(self, u_block, u_prev_block, indices=None):
        if indices is None:
            indices = [None] * len(u_block)
        return np.stack([self.apply_row(u, p, j)
                         for u, p, j in zip(u_block, u_prev_block, indices)])

    def injection_weight(self, fine_ops) -> float:
        return 1.0


@dataclass(frozen=True)
class Hierarchy:
    """Temporal levels (finest first) plus the per-level row models."""

    problem: CableProblem
    levels: list
    level_ops: list
    newton: NewtonConfig

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> TimeLevel:
        return self.levels[0]

    def with_level_ops(self, index: int, ops) -> "Hierarchy":
        new_ops = list(self.level_ops)
        new_ops[index] = ops
        return replace(self, level_ops=new_ops)


def build_hierarchy(problem: CableProblem, nt: int, m, levels: int,
                    t_start: float = 0.0, t_end: float = 0.04,
                    newton: NewtonConfig | None = None) -> Hierarchy:
    """Uniform temporal hierarchy with ``levels`` grids coarsened by ``m``.

    ``m`` may be one factor for all levels or a sequence of per-level
    factors (length levels-1).  The interval count of every level must be
    divisible by its factor.
    """
    newton = newton or NewtonConfig()
    if levels < 1:
        raise ValueError("need at least one level")
    if nt < 1:
        raise ValueError("need at least one time interval")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    factors = [int(m)] * (levels - 1) if np.isscalar(m) else [int(f) for f in m]
    if len(factors) != levels - 1:
        raise ValueError(f"need {levels - 1} coarsening factors, got {len(factors)}")
    if any(f < 2 for f in factors):
        raise ValueError("coarsening factors must be at least 2")

    fine_times = np.linspace(t_start, t_end, nt + 1)
    tiers = []
    ops = []
    stride = 1
    n_int = nt
    for l in range(levels):
        dt = (t_end - t_start) / n_int
        f = factors[l] if l < levels - 1 else 1
        tiers.append(TimeLevel(l, fine_times[::stride], dt, f))
        ops.append(BackwardEulerRows(problem.ops, dt, newton))
        if l < levels - 1:
            if n_int % f != 0:
                raise ValueError(
                    f"level {l} has {n_int} intervals, not divisible by m={f}")
            stride *= f
            n_int //= f
    return Hierarchy(problem, tiers, ops, newton)


# --------------------------------------------------------------------------
# space-time functions and owned views
# --------------------------------------------------------------------------

@dataclass
class SpaceTimeFunction:
    """Per-point iterate U[j] and right-hand side G[j] of one level.

    Row 0 of G carries the initial condition; rows j >= 1 carry the source
    voltage (finest level) or the FAS shift (coarse levels).
    """

    level: int
    U: np.ndarray
    G: np.ndarray

    @property
    def n_points(self) -> int:
        return self.U.shape[0]

    def state_at(self, j: int) -> State:
        return State.from_vector(self.U[j])

    def copy(self) -> "SpaceTimeFunction":
        return SpaceTimeFunction(self.level, self.U.copy(), self.G.copy())


class NullLink:
    """Neighbor link of a full-range view; must never be exercised."""

    def send_right(self, vec):  # pragma: no cover - guarded by range checks
        raise AssertionError("full-range view has no successor")

    def recv_left(self):  # pragma: no cover - guarded by range checks
        raise AssertionError("full-range view has no predecessor")


class SerialRuntime:
    """Single-worker collective operations."""

    rank = 0
    size = 1

    def allgather(self, obj):
        return [obj]


@dataclass
class LevelView:
    """Contiguous owned slice [lo, hi) of one level's U/G plus exchange hooks."""

    ops: RowModel
    m: int
    n_points: int
    lo: int
    hi: int
    U: np.ndarray
    G: np.ndarray
    link: object = field(default_factory=NullLink)


def _full_views(hier: Hierarchy, stf: SpaceTimeFunction) -> list:
    """Serial views: the given function at its level, fresh arrays below."""
    views = []
    n_rows = hier.problem.n_rows
    for l in range(stf.level, hier.n_levels):
        lev = hier.levels[l]
        if l == stf.level:
            u_arr, g_arr = stf.U, stf.G
        else:
            u_arr = np.zeros((lev.n_points, n_rows))
            g_arr = np.zeros((lev.n_points, n_rows))
        views.append(LevelView(hier.level_ops[l], lev.m, lev.n_points,
                               0, lev.n_points, u_arr, g_arr))
    return views


# --------------------------------------------------------------------------
# sweeps over views (shared serial / parallel kernels)
# --------------------------------------------------------------------------

def _f_sweep(view: LevelView) -> None:
    """Propagate from each C-point across the F-points up to the next C-point.

    The successor needs this worker's last owned value: it is sent up front
    when that point is a C-point (stable during the sweep) and right after
    its update otherwise.
    """
    m, n, lo, hi = view.m, view.n_points, view.lo, view.hi
    last = hi - 1
    if hi < n and last % m == 0:
        view.link.send_right(view.U[last - lo].copy())
    halo = view.link.recv_left() if lo > 0 else None
    U, G, ops = view.U, view.G, view.ops
    for j in range(max(lo, 1), hi):
        if j % m == 0:
            continue
        prev = U[j - 1 - lo] if j - 1 >= lo else halo
        U[j - lo] = ops.solve_row(prev, G[j - lo], j)
        if j == last and hi < n:
            view.link.send_right(U[j - lo].copy())


def _c_sweep(view: LevelView) -> None:
    """Update each C-point c > 0 by one step from its preceding F-point."""
    m, n, lo, hi = view.m, view.n_points, view.lo, view.hi
    if hi < n:
        view.link.send_right(view.U[hi - 1 - lo].copy())
    halo = view.link.recv_left() if lo > 0 else None
    U, G, ops = view.U, view.G, view.ops
    for j in range(max(lo, 1), hi):
        if j % m != 0:
            continue
        prev = U[j - 1 - lo] if j - 1 >= lo else halo
        U[j - lo] = ops.solve_row(prev, G[j - lo], j)


def _fcf_sweep(view: LevelView) -> None:
    _f_sweep(view)
    _c_sweep(view)
    _f_sweep(view)


def _halo_exchange(view: LevelView):
    """Plain boundary copy: send the last owned value, receive U[lo-1]."""
    if view.hi < view.n_points:
        view.link.send_right(view.U[view.hi - 1 - view.lo].copy())
    return view.link.recv_left() if view.lo > 0 else None


def _shifted_prev(view: LevelView, j0: int, halo):
    """Rows U[j0-1 .. hi-2] with the halo prepended when j0-1 is unowned."""
    lo, hi = view.lo, view.hi
    if j0 - 1 >= lo:
        return view.U[j0 - 1 - lo: hi - 1 - lo]
    return np.concatenate([halo[None, :], view.U[: hi - 1 - lo]], axis=0)


def _residual_sq_owned(view: LevelView, halo) -> np.ndarray:
    """Squared residual row norms for owned rows j >= 1 (index order)."""
    lo, hi = view.lo, view.hi
    j0 = max(lo, 1)
    if j0 >= hi:
        return np.zeros(0)
    cur = view.U[j0 - lo: hi - lo]
    prev = _shifted_prev(view, j0, halo)
    r = view.G[j0 - lo: hi - lo] - view.ops.apply_rows(cur, prev,
                                                       np.arange(j0, hi))
    return np.einsum("ij,ij->i", r, r)


def _residual_norm(view: LevelView, rt) -> float:
    """Deterministic space-time residual 2-norm over block rows j >= 1.

    Per-point squared norms are gathered in rank order (= index order) and
    summed once, so the result is bitwise independent of the worker count.
    """
    halo = _halo_exchange(view)
    pieces = rt.allgather(_residual_sq_owned(view, halo))
    return float(np.sqrt(np.sum(np.concatenate(pieces))))


def _build_coarse(fine: LevelView, coarse: LevelView) -> None:
    """Inject the iterate and assemble the FAS right-hand side on the coarse view."""
    m = fine.m
    ks = np.arange(coarse.lo, coarse.hi)
    coarse.U[:] = fine.U[ks * m - fine.lo]
    fine_halo = _halo_exchange(fine)
    coarse_halo = _halo_exchange(coarse)
    weight = coarse.ops.injection_weight(fine.ops)
    k0 = max(coarse.lo, 1)
    if k0 < coarse.hi:
        cur_c = coarse.U[k0 - coarse.lo:]
        prev_c = _shifted_prev(coarse, k0, coarse_halo)
        jf = ks[k0 - coarse.lo:] * m
        cur_f = fine.U[jf - fine.lo]
        idx_prev = jf - 1 - fine.lo
        if idx_prev[0] < 0:
            prev_f = np.concatenate([fine_halo[None, :],
                                     fine.U[idx_prev[1:]]], axis=0)
        else:
            prev_f = fine.U[idx_prev]
        r_fine = fine.G[jf - fine.lo] - fine.ops.apply_rows(cur_f, prev_f, jf)
        coarse.G[k0 - coarse.lo:] = (coarse.ops.apply_rows(cur_c, prev_c, ks[k0 - coarse.lo:])
                                     + weight * r_fine)
    if coarse.lo == 0:
        # the initial-condition row is in state units on every level
        coarse.G[0] = coarse.U[0] + (fine.G[0] - fine.U[0])


def _apply_correction(fine: LevelView, coarse: LevelView, error: np.ndarray) -> None:
    ks = np.arange(coarse.lo, coarse.hi)
    fine.U[ks * fine.m - fine.lo] += error


def _coarse_solve(view: LevelView, rt) -> None:
    """Sequential forward solve of the level, done once and broadcast.

    The worker owning point 0 gathers the level, solves each block row with
    the FAS-shifted rhs, and every worker copies back its owned slice.
    """
    pieces = rt.allgather((view.lo, view.U, view.G))
    full = None
    if rt.rank == 0:
        u_all = np.concatenate([p[1] for p in pieces], axis=0)
        g_all = np.concatenate([p[2] for p in pieces], axis=0)
        u_all[0] = g_all[0]
        for j in range(1, u_all.shape[0]):
            u_all[j] = view.ops.solve_row(u_all[j - 1], g_all[j], j)
        full = u_all
    full = rt.allgather(full)[0]
    view.U[:] = full[view.lo: view.hi]


def _v_cycle(views: list, l: int, rt) -> None:
    view = views[l]
    if l == len(views) - 1:
        _coarse_solve(view, rt)
        return
    _fcf_sweep(view)
    _build_coarse(view, views[l + 1])
    u_save = views[l + 1].U.copy()
    _v_cycle(views, l + 1, rt)
    _apply_correction(view, views[l + 1], views[l + 1].U - u_save)
    _f_sweep(view)


def _f_cycle(views: list, l: int, rt) -> None:
    view = views[l]
    if l == len(views) - 1:
        _coarse_solve(view, rt)
        return
    _fcf_sweep(view)
    _build_coarse(view, views[l + 1])
    u_save = views[l + 1].U.copy()
    _f_cycle(views, l + 1, rt)
    _apply_correction(view, views[l + 1], views[l + 1].U - u_save)
    _f_sweep(view)
    _v_cycle(views, l, rt)


def _iterate(views: list, rt, cycle: str, tol: float, max_iter: int):
    """Cycle until the finest residual norm drops below tol.

    Returns (converged, initial_residual, per-cycle residuals, per-cycle
    wall seconds); identical across workers by construction.
    """
    if cycle not in ("V", "F"):
        raise ValueError("cycle must be 'V' or 'F'")
    kernel = _v_cycle if cycle == "V" else _f_cycle
    initial = _residual_norm(views[0], rt)
    history: list[float] = []
    seconds: list[float] = []
    if initial < tol:
        return True, initial, history, seconds
    converged = False
    for _ in range(max_iter):
        t0 = time.perf_counter()
        kernel(views, 0, rt)
        res = _residual_norm(views[0], rt)
        seconds.append(time.perf_counter() - t0)
        history.append(res)
        if res < tol:
            converged = True
            break
    return converged, initial, history, seconds


# --------------------------------------------------------------------------
# public serial operations
# --------------------------------------------------------------------------

def build_space_time_rhs(hier: Hierarchy, u0: State | None = None) -> SpaceTimeFunction:
    """Finest-level function: U constant-in-time u0, G = [u0; source rows]."""
    level = hier.finest
    u0 = u0 if u0 is not None else hier.problem.zero_state()
    vec = u0.as_vector()
    n = hier.problem.n_rows
    U = np.tile(vec, (level.n_points, 1))
    G = np.zeros((level.n_points, n))
    G[0] = vec
    # scalar evaluation keeps these rows bitwise identical to what the
    # sequential stepper sees (vectorized transcendentals may differ by ulps)
    source = hier.problem.source
    G[1:, -1] = [source.voltage(float(t)) for t in level.times[1:]]
    return SpaceTimeFunction(0, U, G)


def _one_level_view(hier: Hierarchy, stf: SpaceTimeFunction) -> LevelView:
    lev = hier.levels[stf.level]
    return LevelView(hier.level_ops[stf.level], lev.m, lev.n_points,
                     0, lev.n_points, stf.U, stf.G)


def apply_A(hier: Hierarchy, stf: SpaceTimeFunction) -> np.ndarray:
    """Space-time action: row 0 is u_0, row j is Phi_j(u_j) - Gamma(u_{j-1})."""
    ops = hier.level_ops[stf.level]
    out = np.empty_like(stf.U)
    out[0] = stf.U[0]
    out[1:] = ops.apply_rows(stf.U[1:], stf.U[:-1],
                             np.arange(1, stf.n_points))
    return out


def residual_norm(hier: Hierarchy, stf: SpaceTimeFunction) -> float:
    return _residual_norm(_one_level_view(hier, stf), SerialRuntime())


def f_relax(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """F-relaxation in place (C-point values are untouched)."""
    _f_sweep(_one_level_view(hier, stf))
    return stf


def c_relax(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """C-relaxation in place (index 0 and F-points untouched)."""
    _c_sweep(_one_level_view(hier, stf))
    return stf


def fcf_relax(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    _fcf_sweep(_one_level_view(hier, stf))
    return stf


def restrict_injection(values: np.ndarray, m: int) -> np.ndarray:
    """Copy every m-th entry (C-points) to the coarse level."""
    if (values.shape[0] - 1) % m != 0:
        raise ValueError("level size is incompatible with the coarsening factor")
    return values[::m].copy()


def fas_coarse_rhs(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """Coarse initial iterate R_I u and FAS rhs A_c(R_I u) + R_I(g - A u)."""
    l = stf.level
    if l >= hier.n_levels - 1:
        raise ValueError("already on the coarsest level")
    fine = _one_level_view(hier, stf)
    lev_c = hier.levels[l + 1]
    n = hier.problem.n_rows
    coarse = LevelView(hier.level_ops[l + 1], lev_c.m, lev_c.n_points,
                       0, lev_c.n_points,
                       np.zeros((lev_c.n_points, n)), np.zeros((lev_c.n_points, n)))
    _build_coarse(fine, coarse)
    return SpaceTimeFunction(l + 1, coarse.U, coarse.G)


def coarse_solve(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """Sequential forward solve of all block rows of stf's level, in place."""
    _coarse_solve(_one_level_view(hier, stf), SerialRuntime())
    return stf


def correct_ideal(hier: Hierarchy, stf: SpaceTimeFunction,
                  error: np.ndarray) -> SpaceTimeFunction:
    """Add the coarse error at C-points, then F-relax (ideal interpolation)."""
    lev = hier.levels[stf.level]
    stf.U[lev.c_points()] += error
    return f_relax(hier, stf)


def v_cycle(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """One V-cycle starting at stf's level, in place."""
    _v_cycle(_full_views(hier, stf), 0, SerialRuntime())
    return stf


def f_cycle(hier: Hierarchy, stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """One F-cycle starting at stf's level, in place."""
    _f_cycle(_full_views(hier, stf), 0, SerialRuntime())
    return stf


@dataclass
class MgritResult:
    converged: bool
    iterations: int
    residual_history: list
    initial_residual: float
    function: SpaceTimeFunction
    cycle_seconds: list
    monotone: bool

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else self.initial_residual


def solve(hier: Hierarchy, g: SpaceTimeFunction, cycle: str = "V",
          tol: float = 1.0e-6, max_iter: int = 100) -> MgritResult:
    """Iterate V- or F-cycles until the space-time residual norm < tol.

    The input function is not modified; non-convergence is reported through
    the result, not raised.
    """
    if not tol > 0.0:
        raise ValueError("tolerance must be positive")
    stf = g.copy()
    views = _full_views(hier, stf)
    converged, initial, history, seconds = _iterate(views, SerialRuntime(),
                                                    cycle, tol, max_iter)
    monotone = all(b < a for a, b in zip([initial] + history[:-1], history))
    return MgritResult(converged, len(history), history, initial, stf,
                       seconds, monotone)
