"""Time integration of IVPs with SDC sweeps, collocation solves, relaxation.

All stepping runs at 64-bit; the method coefficients are converted from the
high-precision tableaux once per integrator.  The Dahlquist problem uses a
native complex scalar state so stability cross-checks avoid embedding
artifacts; every other problem is a real vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    NewtonConvergenceError,
    SdcError,
    UnsupportedScheduleError,
)
from .tableau import (
    EXTRAPOLATION,
    LAST_STAGE,
    QUADRATURE,
    ButcherTableau,
    NodeFamily,
    SdcMethod,
    assemble_sdc,
    collocation_method,
    lagrange_weights_at_one,
)

AT_SHIFTED_TIME = "shifted"
AT_NOMINAL_TIME = "nominal"


@dataclass(frozen=True)
class IvpProblem:
    """An autonomous initial value problem u' = f(u).

    ``invariant`` is a symmetric matrix S with <S u, f(u)> = 0 along the
    flow; when present the quadratic form u^T S u is conserved exactly and
    relaxation can enforce it discretely.  ``diagnostics`` holds extra
    scalar observables (e.g. a Casimir) tracked for reporting only.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    u0: np.ndarray
    t_span: tuple[float, float]
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    exact: Callable[[float], np.ndarray] | None = None
    invariant: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        u0 = np.atleast_1d(np.asarray(self.u0))
        object.__setattr__(self, "u0", u0)
        if self.invariant is not None:
            s_matrix = np.asarray(self.invariant, dtype=float)
            object.__setattr__(self, "invariant", s_matrix)
            tangency = abs(s_matrix @ u0 @ self.f(u0))
            scale = 1.0 + float(np.abs(u0).max()) ** 2
            if tangency > 1e-10 * scale:
                raise ValueError(
                    f"flow is not tangent to the invariant level set at u0 "
                    f"(<S u0, f(u0)> = {tangency:.3e})"
                )

    @property
    def dim(self) -> int:
        return self.u0.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.u0)

    def quadratic_invariant(self, u: np.ndarray) -> float:
        if self.invariant is None:
            raise ValueError(f"problem {self.name!r} declares no quadratic invariant")
        return float(np.real(u @ self.invariant @ u))


@dataclass(frozen=True)
class NewtonOptions:
    """Stage-solver controls: residual tolerance and iteration cap."""

    tol: float = 1e-12
    max_iter: int = 50


@dataclass
class StepDiagnostics:
    """Per-step record: stage values per sweep, solver effort, relaxation."""

    stages: list
    newton_iterations: tuple
    collocation_residual: float | None = None
    gamma: float | None = None
    gamma_fallback: bool = False


@dataclass(frozen=True)
class RelaxationConfig:
    """Relaxation settings for conserving the quadratic form of ``s_matrix``.

    The denominator guard is relative to the scale of the stage Gramian;
    below it the step falls back to gamma = 1.  ``time_interpretation``
    selects whether the clock advances by gamma*dt (the order-preserving
    reading) or by dt.
    """

    s_matrix: np.ndarray
    denominator_guard: float = 1e-12
    time_interpretation: str = AT_SHIFTED_TIME

    def __post_init__(self):
        if self.time_interpretation not in (AT_SHIFTED_TIME, AT_NOMINAL_TIME):
            raise ValueError("time_interpretation must be 'shifted' or 'nominal'")
        if self.denominator_guard <= 0:
            raise ValueError("denominator guard must be positive")


class RelaxedUpdate(NamedTuple):
    u_next: np.ndarray
    gamma: float
    fallback: bool


def _jacobian(problem: IvpProblem, u: np.ndarray) -> np.ndarray:
    if problem.jac is not None:
        return np.asarray(problem.jac(u))
    # forward differences, step sqrt(eps) * (1 + |u|)
    n = u.size
    f0 = problem.f(u)
    jac = np.empty((n, n), dtype=f0.dtype)
    for j in range(n):
        h = math.sqrt(np.finfo(float).eps) * (1.0 + abs(complex(u[j])))
        up = u.copy()
        up[j] += h
        jac[:, j] = (problem.f(up) - f0) / h
    return jac


def _solve_stage(problem, r, eta, guess, opts, stage_index):
    """Solve u = r + eta * f(u); explicit when eta == 0.

    Always applies at least one Newton update (a warm start close to the
    root must not short-circuit the sweep) and stops once the correction
    falls below the mixed absolute/relative tolerance.
    """
    if eta == 0.0:
        return r.copy(), 0
    u = guess.copy()
    eye = np.eye(u.size)
    for iteration in range(1, opts.max_iter + 1):
        resid = u - r - eta * problem.f(u)
        jac = eye - eta * _jacobian(problem, u)
        step = np.linalg.solve(jac, resid)
        u = u - step
        if np.abs(step).max() <= opts.tol * (1.0 + np.abs(u).max()):
            return u, iteration
    resid = float(np.abs(u - r - eta * problem.f(u)).max())
    raise NewtonConvergenceError(
        f"stage {stage_index + 1} Newton stalled (residual {resid:.3e})",
        residual=resid,
        stage=stage_index + 1,
    )


class _CompiledSdc:
    """Float64 view of an SDC method, prepared once per integration run."""

    def __init__(self, method: SdcMethod):
        self.method = method
        self.a, self.b, self.c = method.tableau.as_float()
        self.s = method.s
        self.k = method.k
        self.eeds = [m.as_float() for m in method.schedule.mats]
        for idx, m in enumerate(method.schedule.mats):
            if not m.is_lower_triangular():
                raise UnsupportedScheduleError(
                    f"schedule entry {idx} ({m.label}) is not lower triangular; "
                    "sequential sweeps cannot solve it"
                )
        self.mode = method.final_update
        if self.mode == EXTRAPOLATION:
            self.ell = np.array([float(w) for w in lagrange_weights_at_one(method.tableau.c)])
        else:
            self.ell = None
        self._augmented: tuple[np.ndarray, np.ndarray] | None = None

    def augmented(self) -> tuple[np.ndarray, np.ndarray]:
        if self._augmented is None:
            big = assemble_sdc(self.method)
            a_aug, b_aug, _ = big.as_float()
            self._augmented = (a_aug, b_aug)
        return self._augmented

    def sweep_stages(self, problem, u_n, dt, opts):
        """All stage values and derivatives, block by block."""
        dtype = complex if problem.is_complex else float
        stages: list[np.ndarray] = []
        derivs: list[np.ndarray] = []
        newton: list[int] = []
        init = self.eeds[0]
        if not init.any():
            block = np.tile(u_n.astype(dtype), (self.s, 1))
            f_n = problem.f(u_n)
            fblock = np.tile(f_n, (self.s, 1))
            newton.append(0)
        else:
            block = np.empty((self.s, problem.dim), dtype=dtype)
            fblock = np.empty_like(block)
            count = 0
            for i in range(self.s):
                r = u_n + dt * (init[i, :i] @ fblock[:i]) if i else u_n.astype(dtype)
                value, iters = _solve_stage(problem, r, dt * init[i, i], u_n, opts, i)
                block[i] = value
                fblock[i] = problem.f(value)
                count += iters
            newton.append(count)
        stages.append(block)
        derivs.append(fblock)
        for k in range(1, self.k + 1):
            eed = self.eeds[k]
            base = u_n + dt * ((self.a - eed) @ derivs[-1])
            block = np.empty((self.s, problem.dim), dtype=dtype)
            fblock = np.empty_like(block)
            count = 0
            for i in range(self.s):
                r = base[i] + dt * (eed[i, :i] @ fblock[:i]) if i else base[i]
                value, iters = _solve_stage(problem, r, dt * eed[i, i], stages[-1][i], opts, i)
                block[i] = value
                fblock[i] = problem.f(value)
                count += iters
            stages.append(block)
            derivs.append(fblock)
            newton.append(count)
        return stages, derivs, tuple(newton)

    def finish(self, u_n, dt, stages, derivs):
        if self.mode == QUADRATURE:
            return u_n + dt * (self.b @ derivs[-1])
        if self.mode == LAST_STAGE:
            return stages[-1][-1].copy()
        return self.ell @ stages[-1]


def relaxed_update(
    u_n: np.ndarray,
    stage_derivatives: np.ndarray,
    dt: float,
    tableau_arrays: tuple[np.ndarray, np.ndarray],
    config: RelaxationConfig,
) -> RelaxedUpdate:
    """Scaled update u + dt*gamma*sum(b_i f_i) conserving u^T S u.

    ``tableau_arrays`` is the (A, b) float pair of the Runge-Kutta method
    whose (solved) stages produced the derivatives; for an SDC method that
    is the augmented tableau.  A vanishing denominator falls back to
    gamma = 1 and flags the step.
    """
    a, b = tableau_arrays
    fs = np.asarray(stage_derivatives)
    gram = fs @ config.s_matrix @ fs.T
    numerator = 2.0 * np.einsum("i,ij,ij->", b, a, gram)
    denominator = b @ gram @ b
    scale = float(np.abs(gram).max()) * (float(np.abs(b).sum()) ** 2)
    if scale == 0.0 or abs(denominator) < config.denominator_guard * scale:
        return RelaxedUpdate(u_n + dt * (b @ fs), 1.0, True)
    gamma = float(numerator / denominator)
    return RelaxedUpdate(u_n + dt * gamma * (b @ fs), gamma, False)


def sdc_step(
    problem: IvpProblem,
    u_n: np.ndarray,
    dt: float,
    method: SdcMethod,
    opts: NewtonOptions | None = None,
    *,
    relaxation: RelaxationConfig | None = None,
    with_collocation_residual: bool = False,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One SDC step: K sweeps from the schedule's initializer, then update.

    Stage solves run Newton on u = r + dt*a_ii f(u); a zero diagonal entry
    makes the stage explicit.  Only lower-triangular schedules are
    supported.  Prefer :func:`integrate_sdc` for long runs; this entry point
    recompiles the method each call.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    compiled = _CompiledSdc(method)
    return _step_compiled(
        compiled, problem, np.atleast_1d(u_n), dt,
        opts or NewtonOptions(), relaxation, with_collocation_residual,
    )


def _step_compiled(compiled, problem, u_n, dt, opts, relaxation, with_residual=False):
    stages, derivs, newton = compiled.sweep_stages(problem, u_n, dt, opts)
    diag = StepDiagnostics(stages=stages, newton_iterations=newton)
    if relaxation is not None:
        a_aug, b_aug = compiled.augmented()
        flat = np.vstack(derivs)
        u_next, gamma, fallback = relaxed_update(u_n, flat, dt, (a_aug, b_aug), relaxation)
        diag.gamma, diag.gamma_fallback = gamma, fallback
    else:
        u_next = compiled.finish(u_n, dt, stages, derivs)
    if with_residual:
        ref_stages, _, _ = collocation_stages(problem, u_n, dt, compiled.method.tableau, opts)
        diag.collocation_residual = float(np.abs(stages[-1] - ref_stages).max())
    return u_next, diag


def collocation_stages(
    problem: IvpProblem,
    u_n: np.ndarray,
    dt: float,
    tableau: ButcherTableau,
    opts: NewtonOptions | None = None,
):
    """Fully coupled Newton solve of the collocation stage system."""
    opts = opts or NewtonOptions()
    a, _, _ = tableau.as_float()
    s = a.shape[0]
    u_n = np.atleast_1d(u_n)
    d = u_n.size
    dtype = complex if problem.is_complex else float
    stages = np.tile(u_n.astype(dtype), (s, 1))
    eye = np.eye(s * d, dtype=dtype)
    for iteration in range(1, opts.max_iter + 1):
        fs = np.array([problem.f(x) for x in stages])
        resid = stages - u_n[None, :] - dt * (a @ fs)
        jacs = np.array([_jacobian(problem, x) for x in stages])
        big = eye - dt * (a[:, :, None, None] * jacs[None, :, :, :]).transpose(
            0, 2, 1, 3
        ).reshape(s * d, s * d)
        delta = np.linalg.solve(big, resid.reshape(-1))
        stages = stages - delta.reshape(s, d)
        if np.abs(delta).max() <= opts.tol * (1.0 + np.abs(stages).max()):
            fs = np.array([problem.f(x) for x in stages])
            return stages, fs, iteration
    resid = float(np.abs(stages - u_n[None, :] - dt * (a @ np.array([problem.f(x) for x in stages]))).max())
    raise NewtonConvergenceError(
        f"collocation solve stalled (residual {resid:.3e})", residual=resid
    )


def collocation_step(
    problem: IvpProblem,
    u_n: np.ndarray,
    dt: float,
    tableau: ButcherTableau,
    opts: NewtonOptions | None = None,
) -> np.ndarray:
    """One step of the collocation method itself (quadrature update)."""
    _, b, _ = tableau.as_float()
    _, fs, _ = collocation_stages(problem, u_n, dt, tableau, opts)
    return np.atleast_1d(u_n) + dt * (b @ fs)


# ---------------------------------------------------------------------------
# test problems


def rigid_body_problem() -> IvpProblem:
    """Euler's rigid body with inertia constants N = (1, 3, 2).

    The Hamiltonian H = u^T S u with S = diag(D)/2, D = (1, 1, 2), is the
    conserved quadratic form; the Casimir is tracked as a diagnostic only.
    """
    d1, d2, d3 = 1.0, 1.0, 2.0
    n1, n2, n3 = 1.0, 3.0, 2.0

    def f(u):
        return np.array([u[1] * u[2], u[0] * u[2], -u[0] * u[1]])

    def jac(u):
        return np.array(
            [[0.0, u[2], u[1]], [u[2], 0.0, u[0]], [-u[1], -u[0], 0.0]]
        )

    s_matrix = np.diag([d1, d2, d3]) / 2.0

    def casimir(u):
        return 0.5 * (n1 * d1 * u[0] ** 2 + n2 * d2 * u[1] ** 2 + n3 * d3 * u[2] ** 2)

    return IvpProblem(
        name="rigid-body",
        f=f,
        u0=np.array([1.0 / math.sqrt(3.0), 1.0, 0.0]),
        t_span=(0.0, 10.0),
        jac=jac,
        invariant=s_matrix,
        diagnostics={"casimir": casimir},
    )


def dahlquist_problem(lam: complex) -> IvpProblem:
    """u' = lam * u as a complex scalar problem with its exact flow."""
    lam = complex(lam)

    def f(u):
        return lam * u

    def jac(u):
        return np.array([[lam]])

    def exact(t):
        return np.array([np.exp(lam * t)])

    return IvpProblem(
        name="dahlquist",
        f=f,
        u0=np.array([1.0 + 0.0j]),
        t_span=(0.0, 1.0),
        jac=jac,
        exact=exact,
    )


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    gammas: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate_sdc(
    problem: IvpProblem,
    method: SdcMethod,
    dt: float,
    *,
    t_end: float | None = None,
    opts: NewtonOptions | None = None,
    relaxation: RelaxationConfig | None = None,
) -> Trajectory:
    """March the SDC method from t0 with fixed dt, recording every step.

    Without relaxation the step count is rounded so the run lands exactly
    on t_end; with shifted-time relaxation the clock advances by gamma*dt
    and the run stops at the first time >= t_end.
    """
    opts = opts or NewtonOptions()
    compiled = _CompiledSdc(method)
    t0 = problem.t_span[0]
    t_end = problem.t_span[1] if t_end is None else t_end
    shifted = relaxation is not None and relaxation.time_interpretation == AT_SHIFTED_TIME
    u = problem.u0.copy()
    t = t0
    times = [t]
    states = [u.copy()]
    gammas = []
    if shifted:
        while t < t_end - 1e-12 * max(1.0, abs(t_end)):
            u, diag = _step_compiled(compiled, problem, u, dt, opts, relaxation)
            t += diag.gamma * dt
            times.append(t)
            states.append(u.copy())
            gammas.append(diag.gamma)
    else:
        n_steps = max(1, round((t_end - t0) / dt))
        for i in range(n_steps):
            u, diag = _step_compiled(compiled, problem, u, dt, opts, relaxation)
            t = t0 + (i + 1) * dt
            times.append(t)
            states.append(u.copy())
            if relaxation is not None:
                gammas.append(diag.gamma)
    return Trajectory(
        np.array(times),
        np.array(states),
        np.array(gammas) if gammas else None,
    )


def reference_solution(
    problem: IvpProblem,
    dt_ref: float,
    *,
    t_end: float | None = None,
    stages: int = 8,
    opts: NewtonOptions | None = None,
    richardson_tol: float = 1e-13,
) -> np.ndarray:
    """High-accuracy endpoint state by refined Gauss collocation.

    Integrates with an s-stage Gauss method at step ``dt_ref`` and verifies
    by Richardson: a run at half the step must agree to ``richardson_tol``.
    """
    opts = opts or NewtonOptions(tol=2e-14)
    t0 = problem.t_span[0]
    t_end = problem.t_span[1] if t_end is None else t_end
    tableau = collocation_method(NodeFamily("gauss", stages))

    def run(n_steps: int) -> np.ndarray:
        h = (t_end - t0) / n_steps
        u = problem.u0.copy()
        for _ in range(n_steps):
            u = collocation_step(problem, u, h, tableau, opts)
        return u

    n = max(1, math.ceil((t_end - t0) / dt_ref))
    coarse = run(n)
    fine = run(2 * n)
    gap = float(np.abs(coarse - fine).max())
    if gap > richardson_tol * (1.0 + float(np.abs(fine).max())):
        raise SdcError(
            f"reference solution failed Richardson verification (gap {gap:.3e})"
        )
    return fine


@dataclass(frozen=True)
class ConvergenceResult:
    """Error-vs-step-size study with a least-squares slope.

    ``slope`` is fitted over the points with error above ``floor`` and is
    None (with ``saturated`` set) when fewer than two such points exist.
    """

    points: tuple
    slope: float | None
    saturated: bool
    floor: float


def fit_slope(points: Sequence[tuple[float, float]], floor: float) -> tuple[float | None, bool]:
    kept = [(dt, err) for dt, err in points if err > floor]
    if len(kept) < 2:
        return None, True
    xs = np.log([p[0] for p in kept])
    ys = np.log([p[1] for p in kept])
    return float(np.polyfit(xs, ys, 1)[0]), False


def convergence_study(
    problem: IvpProblem,
    method: SdcMethod,
    dts: Sequence[float],
    *,
    opts: NewtonOptions | None = None,
    reference: np.ndarray | None = None,
    floor: float | None = None,
) -> ConvergenceResult:
    """Global endpoint error against the exact or supplied reference state."""
    opts = opts or NewtonOptions()
    t_end = problem.t_span[1]
    if problem.exact is not None:
        target = np.atleast_1d(problem.exact(t_end))
    elif reference is not None:
        target = np.atleast_1d(reference)
    else:
        raise ValueError(
            "problem has no exact solution; pass reference= (see reference_solution)"
        )
    floor = 50 * np.finfo(float).eps if floor is None else floor
    points = []
    for dt in dts:
        traj = integrate_sdc(problem, method, dt, opts=opts)
        points.append((float(dt), float(np.abs(traj.final - target).max())))
    slope, saturated = fit_slope(points, floor)
    return ConvergenceResult(tuple(points), slope, saturated, floor)


@dataclass(frozen=True)
class LongTimeSeries:
    times: np.ndarray
    states: np.ndarray
    invariant_drift: np.ndarray
    errors: np.ndarray | None
    gammas: np.ndarray | None


@dataclass(frozen=True)
class LongTimeResult:
    raw: LongTimeSeries
    relaxed: LongTimeSeries


def long_time_error_growth(
    problem: IvpProblem,
    method: SdcMethod,
    t_end: float,
    dt: float,
    *,
    opts: NewtonOptions | None = None,
    with_error: bool = False,
    reference_substeps: int = 20,
) -> LongTimeResult:
    """Invariant drift (and optionally global error) with and without relaxation.

    The relaxed run advances the clock by gamma*dt.  Error traces use the
    exact solution when available, otherwise a Gauss-8 reference marched
    alongside with ``reference_substeps`` substeps per sample interval.
    """
    if problem.invariant is None:
        raise ValueError("long-time drift study needs a problem with an invariant")
    opts = opts or NewtonOptions()
    h0 = problem.quadratic_invariant(problem.u0)
    ref_tableau = collocation_method(NodeFamily("gauss", 8)) if with_error and problem.exact is None else None

    def run(relaxation: RelaxationConfig | None) -> LongTimeSeries:
        traj = integrate_sdc(problem, method, dt, t_end=t_end, opts=opts, relaxation=relaxation)
        drift = np.array(
            [abs(problem.quadratic_invariant(u) - h0) for u in traj.states]
        )
        errors = None
        if with_error:
            if problem.exact is not None:
                errors = np.array(
                    [
                        float(np.abs(u - np.atleast_1d(problem.exact(t))).max())
                        for t, u in zip(traj.times, traj.states)
                    ]
                )
            else:
                errors = np.empty(len(traj.times))
                ref = problem.u0.copy()
                errors[0] = 0.0
                ref_opts = NewtonOptions(tol=1e-13)
                for i in range(1, len(traj.times)):
                    span = traj.times[i] - traj.times[i - 1]
                    h = span / reference_substeps
                    for _ in range(reference_substeps):
                        ref = collocation_step(problem, ref, h, ref_tableau, ref_opts)
                    errors[i] = float(np.abs(traj.states[i] - ref).max())
        return LongTimeSeries(traj.times, traj.states, drift, errors, traj.gammas)

    raw = run(None)
    relaxed = run(RelaxationConfig(problem.invariant))
    return LongTimeResult(raw, relaxed)
