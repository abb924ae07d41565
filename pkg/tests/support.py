"""Shared test helpers: alternate sources, oracle row models, dense probes."""

from __future__ import annotations

import numpy as np

from coaxmgrit.mgrit import RowModel


class ConstantSource:
    """Source with a fixed voltage for every t > 0 (0 at t = 0)."""

    def __init__(self, value: float):
        self.value = value

    def voltage(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t > 0.0, self.value, 0.0)
        return float(out) if out.ndim == 0 else out


class IdealCoarseRows(RowModel):
    """Ideal (multigrid-reduction) coarse rows in fine-row units.

    Row k is the fine block row at C-point k*m whose predecessor value is
    obtained by chaining the m-1 fine row solves across coarse interval k
    (with the fine level's right-hand sides).  After an F-relaxation this
    row's action reproduces the fine residual at the C rows exactly, so
    injected residuals carry weight 1 and the two-level FAS cycle is a
    direct method.
    """

    def __init__(self, fine_ops, fine_g: np.ndarray, m: int):
        self.fine_ops = fine_ops
        self.fine_g = fine_g
        self.m = m

    def _chain_to_predecessor(self, u_prev, k: int):
        u = u_prev
        for j in range((k - 1) * self.m + 1, k * self.m):
            u = self.fine_ops.solve_row(u, self.fine_g[j], j)
        return u

    def solve_row(self, u_prev, g_row, index=None):
        w = self._chain_to_predecessor(u_prev, int(index))
        return self.fine_ops.solve_row(w, g_row, int(index) * self.m)

    def apply_row(self, u, u_prev, index=None):
        w = self._chain_to_predecessor(u_prev, int(index))
        return self.fine_ops.apply_row(u, w, int(index) * self.m)

    def injection_weight(self, fine_ops) -> float:
        return 1.0


class CountingRows(RowModel):
    """Delegating row model that counts solve_row calls and level visits."""

    def __init__(self, inner):
        self.inner = inner
        self.solves = 0
        self.visits = 0
        self._in_visit = False

    def solve_row(self, u_prev, g_row, index=None):
        self.solves += 1
        if not self._in_visit:
            self.visits += 1
        return self.inner.solve_row(u_prev, g_row, index)

    def begin_visit(self):
        self.visits += 1

    def apply_row(self, u, u_prev, index=None):
        return self.inner.apply_row(u, u_prev, index)

    def apply_rows(self, u_block, u_prev_block, indices=None):
        return self.inner.apply_rows(u_block, u_prev_block, indices)

    def injection_weight(self, fine_ops) -> float:
        return self.inner.injection_weight(fine_ops)


def trajectory_matrix(problem, times, newton=None) -> np.ndarray:
    """Sequential solution as a (n_points, n_rows) array."""
    from coaxmgrit.stepper import time_stepping

    states = time_stepping(problem, problem.zero_state(), times, newton)
    return np.stack([s.as_vector() for s in states])


def dense_row_operators(ops_model, n: int):
    """Probe the (linear) row action into dense matrices (P_phi, P_gamma).

    apply_row(u, u_prev) == P_phi @ u - P_gamma @ u_prev for linear models.
    """
    zero = np.zeros(n)
    base = ops_model.apply_row(zero, zero, 1)
    p_phi = np.empty((n, n))
    p_gamma = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        p_phi[:, k] = ops_model.apply_row(e, zero, 1) - base
        p_gamma[:, k] = -(ops_model.apply_row(zero, e, 1) - base)
    return p_phi, p_gamma


def dense_mass(ops) -> np.ndarray:
    n = ops.n_nodes
    m = np.diag(ops.mass_diag)
    m += np.diag(ops.mass_off, 1) + np.diag(ops.mass_off, -1)
    return m


def dense_stiffness_jacobian(ops, a_full) -> np.ndarray:
    _, diag, off = ops.stiffness_and_jacobian(a_full)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def reduced_linear_ode(problem):
    """Reduce the constant-nu DAE to an explicit ODE dw/dt = G w + c*v.

    Unknowns w = (a_C, i) with C the mass-carrying free nodes.  The
    massless rows K_aa a_A + K_ac a_C - X_A i = 0 are eliminated through
    a_A = -T_ac a_C + T_x i with T_ac = K_aa^-1 K_ac, T_x = K_aa^-1 X_A.
    Used as the analytic-solution oracle for the backward-Euler order test.
    """
    ops = problem.ops
    nf = ops.n_free
    mass = dense_mass(ops)[:nf, :nf]
    stiff = dense_stiffness_jacobian(ops, np.zeros(ops.n_nodes))[:nf, :nf]
    x = ops.coupling[:nf]
    cond = np.abs(np.diag(mass)) > 0.0
    alg = ~cond
    k_aa = stiff[np.ix_(alg, alg)]
    k_ac = stiff[np.ix_(alg, cond)]
    k_ca = stiff[np.ix_(cond, alg)]
    k_cc = stiff[np.ix_(cond, cond)]
    x_a, x_c = x[alg], x[cond]
    t_ac = np.linalg.solve(k_aa, k_ac)
    t_x = np.linalg.solve(k_aa, x_a)
    nc = int(cond.sum())
    e_mat = np.zeros((nc + 1, nc + 1))
    e_mat[:nc, :nc] = mass[np.ix_(cond, cond)]
    e_mat[nc, :nc] = x_c - t_ac.T @ x_a
    e_mat[nc, nc] = x_a @ t_x
    a_mat = np.zeros((nc + 1, nc + 1))
    a_mat[:nc, :nc] = -(k_cc - k_ca @ t_ac)
    a_mat[:nc, nc] = x_c - k_ca @ t_x
    b_vec = np.zeros(nc + 1)
    b_vec[nc] = 1.0
    g_mat = np.linalg.solve(e_mat, a_mat)
    c_vec = np.linalg.solve(e_mat, b_vec)
    return g_mat, c_vec, cond, alg, t_ac, t_x


def exact_linear_state(problem, voltage: float, t: float):
    """Analytic solution (a_free, i) at time t for a constant-voltage linear run."""
    import scipy.linalg

    g_mat, c_vec, cond, alg, t_ac, t_x = reduced_linear_ode(problem)
    k = g_mat.shape[0]
    aug = np.zeros((k + 1, k + 1))
    aug[:k, :k] = g_mat * t
    aug[:k, k] = c_vec * voltage * t
    w = scipy.linalg.expm(aug)[:k, k]
    a_c, i = w[:-1], w[-1]
    a_alg = -t_ac @ a_c + t_x * i
    nf = problem.ops.n_free
    a_free = np.zeros(nf)
    a_free[cond] = a_c
    a_free[alg] = a_alg
    return a_free, float(i)
