import numpy as np
import pytest
import scipy.optimize

from coaxmgrit import (NewtonConfig, build_problem, dae_residual)
from coaxmgrit import mgrit
from coaxmgrit.mgrit import (SpaceTimeFunction, apply_A, build_hierarchy,
                             build_space_time_rhs, c_relax, coarse_solve,
                             correct_ideal, f_cycle, f_relax, fas_coarse_rhs,
                             fcf_relax, residual_norm, restrict_injection,
                             solve, v_cycle)
from support import (ConstantSource, CountingRows, IdealCoarseRows,
                     dense_row_operators, trajectory_matrix)


@pytest.fixture(scope="module")
def hier16(small_problem):
    return build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.004)


@pytest.fixture(scope="module")
def traj16(small_problem, hier16):
    return trajectory_matrix(small_problem, hier16.finest.times)


def seeded(hier, values) -> SpaceTimeFunction:
    stf = build_space_time_rhs(hier)
    stf.U[:] = values
    return stf


# --------------------------------------------------------------------------
# hierarchy construction
# --------------------------------------------------------------------------

def test_paper_scale_point_counts(small_problem):
    hier = build_hierarchy(small_problem, nt=2**14, m=64, levels=3)
    assert [lv.n_points for lv in hier.levels] == [16385, 257, 5]


def test_c_points(small_problem):
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2)
    np.testing.assert_array_equal(hier.levels[0].c_points(), [0, 4, 8, 12, 16])


def test_coarse_times_are_slices(small_problem):
    hier = build_hierarchy(small_problem, nt=64, m=8, levels=3)
    fine = hier.levels[0].times
    np.testing.assert_array_equal(hier.levels[1].times, fine[::8])
    np.testing.assert_array_equal(hier.levels[2].times, fine[::64])
    assert hier.levels[1].dt == hier.levels[0].dt * 8


def test_hierarchy_validation(small_problem):
    with pytest.raises(ValueError, match="at least 2"):
        build_hierarchy(small_problem, nt=8, m=1, levels=2)
    with pytest.raises(ValueError, match="divisible"):
        build_hierarchy(small_problem, nt=1000, m=8, levels=3)
    with pytest.raises(ValueError):
        build_hierarchy(small_problem, nt=8, m=2, levels=0)
    # per-level factors accepted
    hier = build_hierarchy(small_problem, nt=64, m=[4, 8], levels=3)
    assert [lv.n_points for lv in hier.levels] == [65, 17, 3]


# --------------------------------------------------------------------------
# space-time action
# --------------------------------------------------------------------------

def test_apply_a_on_trajectory(hier16, traj16):
    stf = seeded(hier16, traj16)
    action = apply_A(hier16, stf)
    np.testing.assert_allclose(action, stf.G, atol=5e-9)


def test_apply_a_single_row_matches_dae_residual(small_problem, hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    stf.U[:, :-1] *= 1.0  # potentials and current both perturbed
    action = apply_A(hier16, stf)
    lev = hier16.finest
    j = 5
    from coaxmgrit import State

    r = dae_residual(State.from_vector(stf.U[j]), State.from_vector(stf.U[j - 1]),
                     lev.dt, lev.times[j], small_problem.ops, small_problem.source)
    g_src = np.zeros(small_problem.n_rows)
    g_src[-1] = small_problem.source.voltage(lev.times[j])
    np.testing.assert_allclose(action[j], r + g_src, rtol=1e-12, atol=1e-15)


def test_apply_a_row_zero_is_initial_value(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[0] = rng.standard_normal(stf.U.shape[1])
    assert np.array_equal(apply_A(hier16, stf)[0], stf.U[0])


def test_initial_rhs_layout(small_problem, hier16):
    g = build_space_time_rhs(hier16)
    assert np.all(g.G[0] == 0.0)  # zero initial state
    volts = [small_problem.source.voltage(t) for t in hier16.finest.times[1:]]
    np.testing.assert_array_equal(g.G[1:, -1], volts)
    assert np.all(g.G[1:, :-1] == 0.0)


# --------------------------------------------------------------------------
# relaxation
# --------------------------------------------------------------------------

def test_f_relax_exactness(hier16, traj16):
    # sequential stepping and the sweep divide by ulp-different dt values,
    # so agreement is to solver accuracy rather than bitwise
    stf = build_space_time_rhs(hier16)
    stf.U[::4] = traj16[::4]  # exact C-point values
    f_relax(hier16, stf)
    scale = np.abs(traj16).max()
    assert np.abs(stf.U - traj16).max() <= 1e-12 * scale


def test_f_relax_updates_only_f_points(small_problem):
    hier = build_hierarchy(small_problem, nt=4, m=2, levels=2, t_end=0.001)
    stf = build_space_time_rhs(hier)
    marker = 123.456
    stf.U[:, -1] = marker
    f_relax(hier, stf)
    # C-points (0, 2, 4) untouched; F-points (1, 3) recomputed
    assert np.all(stf.U[[0, 2, 4], -1] == marker)
    assert np.all(stf.U[[1, 3], -1] != marker)


def test_f_relax_idempotent(hier16, traj16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-3
    once = f_relax(hier16, stf.copy()).U
    twice = f_relax(hier16, SpaceTimeFunction(0, once.copy(), stf.G.copy())).U
    np.testing.assert_array_equal(once, twice)


def test_c_relax_fixed_point_on_trajectory(hier16, traj16):
    stf = seeded(hier16, traj16.copy())
    c_relax(hier16, stf)
    scale = np.abs(traj16).max()
    assert np.abs(stf.U - traj16).max() <= 1e-12 * scale


def test_c_relax_zero_fixed_point():
    problem = build_problem(n_nodes=9, source=ConstantSource(0.0))
    hier = build_hierarchy(problem, nt=8, m=2, levels=2, t_end=0.001)
    stf = build_space_time_rhs(hier)
    c_relax(hier, stf)
    np.testing.assert_array_equal(stf.U, 0.0)


def test_c_relax_matches_direct_stepper_call(small_problem, rng):
    hier = build_hierarchy(small_problem, nt=2, m=2, levels=2, t_end=0.001)
    stf = build_space_time_rhs(hier)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    expected = hier.level_ops[0].solve_row(stf.U[1].copy(), stf.G[2], 2)
    before = stf.U.copy()
    c_relax(hier, stf)
    np.testing.assert_array_equal(stf.U[2], expected)
    np.testing.assert_array_equal(stf.U[[0, 1]], before[[0, 1]])


def test_fcf_is_composition(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    manual = stf.copy()
    f_relax(hier16, manual)
    c_relax(hier16, manual)
    f_relax(hier16, manual)
    fcf_relax(hier16, stf)
    np.testing.assert_array_equal(stf.U, manual.U)


# --------------------------------------------------------------------------
# restriction / FAS / coarse solve / correction
# --------------------------------------------------------------------------

def test_restrict_injection_values(rng):
    x = rng.standard_normal((17, 3))
    coarse = restrict_injection(x, 4)
    np.testing.assert_array_equal(coarse, x[[0, 4, 8, 12, 16]])
    with pytest.raises(ValueError):
        restrict_injection(x, 5)


def test_restrict_injection_linearity(rng):
    x = rng.standard_normal((9, 4))
    y = rng.standard_normal((9, 4))
    lhs = restrict_injection(2.5 * x - 1.5 * y, 2)
    rhs = 2.5 * restrict_injection(x, 2) - 1.5 * restrict_injection(y, 2)
    np.testing.assert_array_equal(lhs, rhs)


def test_fas_fixed_point_on_exact_solution(hier16, traj16):
    stf = seeded(hier16, traj16.copy())
    coarse = fas_coarse_rhs(hier16, stf)
    np.testing.assert_array_equal(coarse.U, traj16[::4])
    v = coarse_solve(hier16, coarse.copy())
    # coarse solve returns R_I u, so the error correction vanishes
    np.testing.assert_allclose(v.U, traj16[::4], rtol=1e-7, atol=1e-12)


def test_fas_zero_residual_is_noop_correction(small_problem, rng):
    # construct g := A(u) so the residual is exactly zero at a random u;
    # tight Newton keeps the coarse row solves near machine accuracy
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.004,
                           newton=NewtonConfig(atol=1e-14, rtol=1e-14))
    stf = build_space_time_rhs(hier)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    stf.G[:] = apply_A(hier, stf)
    coarse = fas_coarse_rhs(hier, stf)
    v = coarse_solve(hier, coarse.copy())
    assert np.abs(v.U - stf.U[::4]).max() <= 1e-8


def test_fas_linear_equivalence(linear_problem, rng):
    # linear problem: the FAS correction equals the residual-equation
    # correction e = L2^-1 (w * R r), forward-substituted densely
    hier = build_hierarchy(linear_problem, nt=16, m=4, levels=2, t_end=0.004)
    stf = build_space_time_rhs(hier)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-5
    coarse = fas_coarse_rhs(hier, stf)
    v = coarse_solve(hier, coarse.copy())
    e_fas = v.U - stf.U[::4]

    n = linear_problem.n_rows
    p_phi, p_gamma = dense_row_operators(hier.level_ops[1], n)
    weight = hier.level_ops[1].injection_weight(hier.level_ops[0])
    r_fine = stf.G - apply_A(hier, stf)
    r_inj = weight * r_fine[::4]
    e_ref = np.zeros_like(e_fas)
    e_ref[0] = r_fine[0]  # zero by construction of row 0
    for k in range(1, e_ref.shape[0]):
        e_ref[k] = np.linalg.solve(p_phi, r_inj[k] + p_gamma @ e_ref[k - 1])
    np.testing.assert_allclose(e_fas, e_ref, rtol=1e-6, atol=1e-14)


def test_coarse_solve_against_scipy_root(small_problem):
    # brute-force per-row oracle: scipy.optimize.root on each block row
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.002)
    stf = build_space_time_rhs(hier)
    fcf_relax(hier, stf)
    coarse = fas_coarse_rhs(hier, stf)
    ops = hier.level_ops[1]
    u_ref = coarse.U.copy()
    u_ref[0] = coarse.G[0]
    for k in range(1, u_ref.shape[0]):
        sol = scipy.optimize.root(
            lambda v, k=k: ops.apply_row(v, u_ref[k - 1], k) - coarse.G[k],
            u_ref[k - 1], tol=1e-12)
        assert sol.success
        u_ref[k] = sol.x
    solved = coarse_solve(hier, coarse.copy())
    scale = max(np.abs(u_ref).max(), 1.0)
    assert np.abs(solved.U - u_ref).max() <= 1e-6 * scale


def test_correct_ideal_cpoint_arithmetic(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    f_relax(hier16, stf)
    u_c_before = stf.U[::4].copy()
    err = rng.standard_normal(u_c_before.shape) * 1e-5
    correct_ideal(hier16, stf, err)
    np.testing.assert_array_equal(stf.U[::4], u_c_before + err)


def test_correct_ideal_zero_error_fixed_point(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    f_relax(hier16, stf)
    before = stf.U.copy()
    correct_ideal(hier16, stf, np.zeros_like(stf.U[::4]))
    np.testing.assert_array_equal(stf.U, before)


# --------------------------------------------------------------------------
# cycles
# --------------------------------------------------------------------------

def test_v_cycle_two_level_matches_manual_composition(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    manual = stf.copy()
    fcf_relax(hier16, manual)
    coarse = fas_coarse_rhs(hier16, manual)
    u_save = coarse.U.copy()
    coarse_solve(hier16, coarse)
    correct_ideal(hier16, manual, coarse.U - u_save)
    v_cycle(hier16, stf)
    np.testing.assert_array_equal(stf.U, manual.U)


def test_v_cycle_three_level_matches_unrolled_recursion(mid_problem, rng):
    hier = build_hierarchy(mid_problem, nt=32, m=[4, 4], levels=3, t_end=0.004)
    stf = build_space_time_rhs(hier)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-5
    manual = stf.copy()
    # level 0
    fcf_relax(hier, manual)
    lvl1 = fas_coarse_rhs(hier, manual)
    save1 = lvl1.U.copy()
    # level 1
    fcf_relax(hier, lvl1)
    lvl2 = fas_coarse_rhs(hier, lvl1)
    save2 = lvl2.U.copy()
    coarse_solve(hier, lvl2)
    correct_ideal(hier, lvl1, lvl2.U - save2)
    # back to level 0
    correct_ideal(hier, manual, lvl1.U - save1)
    v_cycle(hier, stf)
    np.testing.assert_array_equal(stf.U, manual.U)


def test_f_cycle_two_level_matches_unrolled_schedule(hier16, rng):
    stf = build_space_time_rhs(hier16)
    stf.U[:] = rng.standard_normal(stf.U.shape) * 1e-4
    manual = stf.copy()
    fcf_relax(hier16, manual)
    coarse = fas_coarse_rhs(hier16, manual)
    u_save = coarse.U.copy()
    coarse_solve(hier16, coarse)
    correct_ideal(hier16, manual, coarse.U - u_save)
    v_cycle(hier16, manual)  # post-correction V at the same level
    f_cycle(hier16, stf)
    np.testing.assert_array_equal(stf.U, manual.U)


@pytest.mark.parametrize("levels, nt", [(2, 16), (3, 32), (4, 64)])
def test_f_cycle_coarsest_visit_schedule(small_problem, levels, nt):
    hier = build_hierarchy(small_problem, nt=nt, m=2, levels=levels, t_end=0.002)
    counter = CountingRows(hier.level_ops[-1])
    hier = hier.with_level_ops(levels - 1, counter)
    stf = build_space_time_rhs(hier)
    before = counter.solves
    f_cycle(hier, stf)
    f_visits = counter.solves - before
    coarsest_rows = hier.levels[-1].n_points - 1
    # standard F-cycle: the coarsest level is solved exactly `levels` times
    assert f_visits == levels * coarsest_rows

    stf = build_space_time_rhs(hier)
    before = counter.solves
    v_cycle(hier, stf)
    assert counter.solves - before == coarsest_rows


def test_cycles_fixed_point_on_trajectory(mid_problem):
    hier = build_hierarchy(mid_problem, nt=64, m=8, levels=2, t_end=0.01)
    traj = trajectory_matrix(mid_problem, hier.finest.times)
    for cycle in (v_cycle, f_cycle):
        stf = seeded(hier, traj.copy())
        cycle(hier, stf)
        c_pts = hier.levels[0].c_points()
        rel = np.abs(stf.U[c_pts] - traj[c_pts]).max() / np.abs(traj).max()
        assert rel < 1e-10
        assert residual_norm(hier, stf) < 1e-6


# --------------------------------------------------------------------------
# solve driver
# --------------------------------------------------------------------------

def test_two_level_ideal_coarse_operator_is_exact(linear_problem):
    hier = build_hierarchy(linear_problem, nt=64, m=8, levels=2, t_end=0.01)
    g = build_space_time_rhs(hier)
    ideal = IdealCoarseRows(hier.level_ops[0], g.G, 8)
    hier = hier.with_level_ops(1, ideal)
    result = solve(hier, g, cycle="V", tol=1e-10, max_iter=5)
    assert result.converged
    assert result.iterations == 1
    traj = trajectory_matrix(linear_problem, hier.finest.times)
    np.testing.assert_allclose(result.function.U, traj, rtol=1e-8, atol=1e-13)


def test_solve_zero_iterations_for_loose_tolerance(small_problem):
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.004)
    g = build_space_time_rhs(hier)
    result = solve(hier, g, tol=1e6)
    assert result.converged and result.iterations == 0
    assert result.residual_history == []


def test_solve_reports_nonconvergence(small_problem):
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.004)
    g = build_space_time_rhs(hier)
    result = solve(hier, g, tol=1e-300, max_iter=2)
    assert not result.converged
    assert result.iterations == 2


def test_solve_matches_sequential(mid_problem):
    hier = build_hierarchy(mid_problem, nt=64, m=8, levels=2, t_end=0.02)
    g = build_space_time_rhs(hier)
    result = solve(hier, g, cycle="V", tol=1e-6)
    assert result.converged
    assert result.iterations <= 15
    traj = trajectory_matrix(mid_problem, hier.finest.times)
    rel_i = (np.abs(result.function.U[:, -1] - traj[:, -1]).max()
             / np.abs(traj[:, -1]).max())
    rel_a = (np.abs(result.function.U[:, :-1] - traj[:, :-1]).max()
             / np.abs(traj[:, :-1]).max())
    assert rel_i <= 10 * 1e-6
    assert rel_a <= 10 * 1e-6


def test_solve_input_not_mutated(small_problem):
    hier = build_hierarchy(small_problem, nt=16, m=4, levels=2, t_end=0.004)
    g = build_space_time_rhs(hier)
    u_before = g.U.copy()
    solve(hier, g, tol=1e-4, max_iter=3)
    np.testing.assert_array_equal(g.U, u_before)
