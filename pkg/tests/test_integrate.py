import math

import numpy as np
import pytest

from sdcrk.errors import NewtonConvergenceError, UnsupportedScheduleError
from sdcrk.integrate import (
    IvpProblem,
    NewtonOptions,
    RelaxationConfig,
    collocation_stages,
    collocation_step,
    convergence_study,
    dahlquist_problem,
    fit_slope,
    integrate_sdc,
    long_time_error_growth,
    reference_solution,
    relaxed_update,
    rigid_body_problem,
    sdc_step,
)
from sdcrk.stability import stability_function
from sdcrk.tableau import (
    LAST_STAGE,
    QUADRATURE,
    ButcherTableau,
    EedMatrix,
    EedSchedule,
    NodeFamily,
    SdcMethod,
    assemble_sdc,
    collocation_method,
    make_eed,
    parse_schedule,
)


# -- problems -------------------------------------------------------------------


def test_rigid_body_problem_data():
    p = rigid_body_problem()
    assert abs(p.quadratic_invariant(p.u0) - 2.0 / 3.0) < 1e-15
    expected = np.array([0.0, 0.0, -1.0 / math.sqrt(3.0)])
    assert np.allclose(p.f(p.u0), expected, atol=1e-15)
    assert "casimir" in p.diagnostics


def test_rigid_body_flow_is_tangent_to_invariant(rng):
    p = rigid_body_problem()
    for _ in range(100):
        u = rng.uniform(-2.0, 2.0, size=3)
        assert abs(p.invariant @ u @ p.f(u)) < 1e-13


def test_invariant_tangency_validated():
    with pytest.raises(ValueError):
        IvpProblem(
            name="bad",
            f=lambda u: u,  # <S u, u> != 0
            u0=np.array([1.0, 0.0]),
            t_span=(0.0, 1.0),
            invariant=np.eye(2),
        )


def test_dahlquist_problem():
    p = dahlquist_problem(-1.0)
    assert p.is_complex
    assert abs(p.exact(1.0)[0] - math.exp(-1.0)) < 1e-15
    rotation = dahlquist_problem(1.0j)
    for t in (0.3, 2.0, 7.7):
        assert abs(abs(rotation.exact(t)[0]) - 1.0) < 1e-14
    still = dahlquist_problem(0.0)
    assert still.exact(5.0)[0] == 1.0


# -- collocation solves ------------------------------------------------------------


def test_collocation_step_matches_stability_function(radau3, gauss2):
    for tableau in (radau3, gauss2):
        p = dahlquist_problem(-1.0 + 0.7j)
        dt = 0.3
        u1 = collocation_step(p, p.u0, dt, tableau)
        expected = stability_function(tableau, (-1.0 + 0.7j) * dt)
        assert abs(u1[0] - expected) < 1e-13


def test_gauss1_midpoint_closed_form():
    t = collocation_method(NodeFamily("gauss", 1))
    p = dahlquist_problem(-1.0)
    dt = 0.2
    u1 = collocation_step(p, p.u0, dt, t)
    z = -dt
    assert abs(u1[0] - (1 + z / 2) / (1 - z / 2)) < 1e-14


def test_gauss_conserves_quadratic_invariant_per_step(gauss3):
    p = rigid_body_problem()
    h0 = p.quadratic_invariant(p.u0)
    u1 = collocation_step(p, p.u0, 1e-4, gauss3, NewtonOptions(tol=1e-14))
    assert abs(p.quadratic_invariant(u1) - h0) < 1e-14


def test_collocation_newton_failure():
    p = rigid_body_problem()
    with pytest.raises(NewtonConvergenceError):
        collocation_stages(p, p.u0, 0.5, collocation_method(NodeFamily("gauss", 2)),
                           NewtonOptions(tol=1e-15, max_iter=1))


# -- sdc stepping --------------------------------------------------------------------


def test_sdc_step_zero_rhs_is_identity(radau3):
    p = IvpProblem("flat", lambda u: np.zeros(2), np.array([1.5, -2.0]), (0.0, 1.0))
    for mode in (QUADRATURE, LAST_STAGE):
        method = SdcMethod(radau3, parse_schedule("zero,ie", radau3, 2), mode)
        u1, diag = sdc_step(p, p.u0, 0.4, method)
        assert np.array_equal(u1, p.u0)
        assert diag.gamma is None


def test_sdc_step_matches_assembled_stability_function(radau3):
    lam = -1.0
    p = dahlquist_problem(lam)
    method = SdcMethod(radau3, parse_schedule("zero,jumper", radau3, 2), LAST_STAGE)
    big = assemble_sdc(method)
    dt = 0.1
    u1, _ = sdc_step(p, p.u0, dt, method)
    assert abs(u1[0] - stability_function(big, lam * dt)) < 1e-13


def test_sdc_step_exact_schedule_reaches_collocation_stages():
    # with A_delta = A the correction term cancels the previous sweep and the
    # stages satisfy the collocation system; a lower-triangular (DIRK-like)
    # tableau keeps the schedule within the sequential-sweep contract
    a = ((0.25, 0.0, 0.0), (0.3, 0.4, 0.0), (0.1, 0.5, 0.3))
    t = ButcherTableau(a, (0.2, 0.5, 0.3), tuple(sum(row) for row in a))
    p = rigid_body_problem()
    method = SdcMethod(t, parse_schedule("zero,exact", t, 2), QUADRATURE)
    opts = NewtonOptions(tol=1e-13)
    u1, diag = sdc_step(p, p.u0, 0.1, method, opts, with_collocation_residual=True)
    assert diag.collocation_residual < 1e-11
    assert abs(u1 - collocation_step(p, p.u0, 0.1, t, opts)).max() < 1e-11


def test_sdc_step_rejects_non_triangular_schedule(radau2):
    p = dahlquist_problem(-1.0)
    full = EedMatrix("custom", radau2.a)  # a_12 != 0
    sched = EedSchedule((make_eed("zero", radau2.c), full))
    with pytest.raises(UnsupportedScheduleError):
        sdc_step(p, p.u0, 0.1, SdcMethod(radau2, sched, QUADRATURE))


def test_init_by_eed_equals_zero_init_plus_one_sweep():
    # consistent (row sums = c) EEDs initialize identically either way
    p = rigid_body_problem()
    t = collocation_method(NodeFamily("radau", 3))
    ie = make_eed("implicit-euler", t.c)
    opts = NewtonOptions(tol=1e-14)
    method = SdcMethod(t, EedSchedule((make_eed("zero", t.c), ie)), QUADRATURE)
    _, diag = sdc_step(p, p.u0, 0.2, method, opts)
    sweep_stages = diag.stages[1]
    ie_tableau = ButcherTableau(ie.matrix, t.b, tuple(sum(r, 0 * r[0]) for r in ie.matrix))
    direct, _, _ = collocation_stages(p, p.u0, 0.2, ie_tableau, opts)
    assert np.abs(sweep_stages - direct).max() < 1e-12


def test_jumper_init_schedule_executes(radau3):
    # auto-indexed initializer: jumper(1) as A_delta^0 (an implicit init solve)
    p = rigid_body_problem()
    method = SdcMethod(radau3, parse_schedule("jumper,jumper", radau3, 1), LAST_STAGE)
    u1, diag = sdc_step(p, p.u0, 0.1, method)
    assert np.all(np.isfinite(u1))
    assert diag.newton_iterations[0] > 0


# -- relaxation -------------------------------------------------------------------


def test_gamma_is_one_for_converged_gauss_stages(gauss3):
    p = rigid_body_problem()
    a, b, _ = gauss3.as_float()
    _, fs, _ = collocation_stages(p, p.u0, 0.1, gauss3, NewtonOptions(tol=1e-14))
    update = relaxed_update(p.u0, fs, 0.1, (a, b), RelaxationConfig(p.invariant))
    assert abs(update.gamma - 1.0) < 1e-10
    assert not update.fallback


def test_relaxed_update_fallback_on_zero_rhs(gauss3):
    a, b, _ = gauss3.as_float()
    s_matrix = np.diag([0.5, 0.5, 1.0])
    fs = np.zeros((3, 3))
    u0 = np.array([1.0, 2.0, 3.0])
    update = relaxed_update(u0, fs, 0.1, (a, b), RelaxationConfig(s_matrix))
    assert update.fallback and update.gamma == 1.0
    assert np.array_equal(update.u_next, u0)


def test_relaxed_sdc_conserves_invariant_per_step(gauss3):
    p = rigid_body_problem()
    method = SdcMethod(gauss3, parse_schedule("zero,ee", gauss3, 2), QUADRATURE)
    relax = RelaxationConfig(p.invariant)
    u, _ = sdc_step(p, p.u0, 0.1, method, relaxation=relax)
    h0 = p.quadratic_invariant(p.u0)
    assert abs(p.quadratic_invariant(u) - h0) < 1e-14
    # a couple more steps stay on the level set
    for _ in range(5):
        u, diag = sdc_step(p, u, 0.1, method, relaxation=relax)
        assert abs(p.quadratic_invariant(u) - h0) < 5e-14
        assert abs(diag.gamma - 1.0) < 1e-2


def test_relaxation_conservation_bound_any_method(radau2, rng):
    # whenever <S u, f(u)> = 0 the relaxed update conserves to solver tolerance
    p = rigid_body_problem()
    method = SdcMethod(radau2, parse_schedule("zero,ie", radau2, 1), QUADRATURE)
    relax = RelaxationConfig(p.invariant)
    opts = NewtonOptions(tol=1e-12)
    u = p.u0.copy()
    for _ in range(10):
        u_next, _ = sdc_step(p, u, 0.25, method, opts, relaxation=relax)
        drift = abs(p.quadratic_invariant(u_next) - p.quadratic_invariant(u))
        assert drift <= 10 * opts.tol * float(np.abs(u).max()) ** 2 + 1e-15
        u = u_next


# -- drivers --------------------------------------------------------------------------


def test_integrate_sdc_records_trajectory(radau2):
    p = dahlquist_problem(-1.0)
    method = SdcMethod(radau2, parse_schedule("zero,jumper", radau2, 2), QUADRATURE)
    traj = integrate_sdc(p, method, 0.25)
    assert len(traj.times) == 5
    assert traj.times[-1] == pytest.approx(1.0)
    assert abs(traj.final[0] - math.exp(-1.0)) < 1e-4


def test_reference_solution_richardson(gauss2):
    p = dahlquist_problem(-1.0)
    ref = reference_solution(p, dt_ref=0.02, stages=4)
    assert abs(ref[0] - math.exp(-1.0)) < 1e-13


def test_convergence_study_dahlquist_orders(radau3):
    p = dahlquist_problem(-1.0)
    dts = [2.0**-e for e in range(2, 7)]
    method = SdcMethod(radau3, parse_schedule("zero,jumper", radau3, 2), LAST_STAGE)
    result = convergence_study(p, method, dts, floor=1e-12)
    assert not result.saturated
    assert result.slope == pytest.approx(4.0, abs=0.2)


def test_convergence_study_needs_reference():
    p = rigid_body_problem()
    method = SdcMethod(
        collocation_method(NodeFamily("radau", 2)),
        parse_schedule("zero,ie", collocation_method(NodeFamily("radau", 2)), 1),
        QUADRATURE,
    )
    with pytest.raises(ValueError):
        convergence_study(p, method, [0.1])


def test_fit_slope_saturation():
    slope, saturated = fit_slope([(0.1, 1e-16), (0.05, 1e-16)], floor=1e-13)
    assert slope is None and saturated


def test_long_time_drift_shrinks_with_dt(gauss2):
    p = rigid_body_problem()
    method = SdcMethod(gauss2, parse_schedule("zero,ee", gauss2, 2), QUADRATURE)
    coarse = long_time_error_growth(p, method, t_end=5.0, dt=0.2)
    fine = long_time_error_growth(p, method, t_end=5.0, dt=0.1)
    assert fine.raw.invariant_drift.max() < coarse.raw.invariant_drift.max()
    assert coarse.relaxed.invariant_drift.max() < 1e-13
    assert fine.relaxed.invariant_drift.max() < 1e-13
    assert coarse.relaxed.gammas is not None


def test_long_time_error_trace_against_exact():
    p = dahlquist_problem(-0.3)
    # give the scalar problem a trivial invariant-free error path: use the
    # rigid body instead, with the reference marched alongside
    rb = rigid_body_problem()
    t = collocation_method(NodeFamily("gauss", 2))
    method = SdcMethod(t, parse_schedule("zero,ee", t, 2), QUADRATURE)
    result = long_time_error_growth(rb, method, t_end=1.0, dt=0.1, with_error=True)
    assert result.raw.errors is not None
    assert result.raw.errors[0] == 0.0
    assert result.raw.errors[-1] < 1e-4
    assert result.relaxed.errors[-1] < 1e-4
