"""Linear stability analysis on the Dahlquist equation, at 64-bit precision.

Stability regions need throughput rather than extra digits, so everything
here runs on numpy complex128; poles of the stability function are detected
by a condition-number threshold and flagged rather than raised during grid
sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PoleError, SingularEedError
from .tableau import ButcherTableau, EedMatrix, EedSchedule, SdcMethod

#: Condition number of (I - zA) beyond which a sample is flagged as a pole.
POLE_CONDITION = 1e14


def _as_matrix(obj) -> np.ndarray:
    if isinstance(obj, ButcherTableau):
        return obj.as_float()[0]
    if isinstance(obj, EedMatrix):
        return obj.as_float()
    return np.asarray(obj, dtype=float)


def _iteration_eeds(schedule) -> list[np.ndarray]:
    """Iteration matrices A_delta^1..A_delta^K (the initializer is not one)."""
    if isinstance(schedule, EedSchedule):
        return [m.as_float() for m in schedule.mats[1:]]
    if isinstance(schedule, SdcMethod):
        return [m.as_float() for m in schedule.schedule.mats[1:]]
    return [_as_matrix(m) for m in schedule]


@dataclass(frozen=True)
class GridSpec:
    """Rectangular sampling grid in the complex plane."""

    re_min: float = -20.0
    re_max: float = 5.0
    im_min: float = -15.0
    im_max: float = 15.0
    n_re: int = 401
    n_im: int = 401

    def __post_init__(self):
        if self.re_min >= self.re_max or self.im_min >= self.im_max:
            raise ValueError("grid bounds must be increasing")
        if self.n_re < 2 or self.n_im < 2:
            raise ValueError("grid needs at least 2 samples per axis")

    @property
    def re_axis(self) -> np.ndarray:
        return np.linspace(self.re_min, self.re_max, self.n_re)

    @property
    def im_axis(self) -> np.ndarray:
        return np.linspace(self.im_min, self.im_max, self.n_im)

    def points(self) -> np.ndarray:
        return self.re_axis[None, :] + 1j * self.im_axis[:, None]

    def header(self) -> str:
        return (
            f"# re_min={self.re_min} re_max={self.re_max} "
            f"im_min={self.im_min} im_max={self.im_max} "
            f"n_re={self.n_re} n_im={self.n_im}"
        )


@dataclass(frozen=True)
class ComplexGrid:
    """Sampled non-negative values over a grid.

    ``values[j, i]`` corresponds to ``re_axis[i] + 1j * im_axis[j]`` (row
    index runs over the imaginary axis, ascending).  ``poles`` marks samples
    where the underlying linear solve was (numerically) singular; those
    values are +inf.
    """

    spec: GridSpec
    values: np.ndarray
    poles: np.ndarray

    def to_csv(self) -> str:
        lines = [self.spec.header(), "re,im,value,flag"]
        re_ax, im_ax = self.spec.re_axis, self.spec.im_axis
        for j, im in enumerate(im_ax):
            for i, re in enumerate(re_ax):
                v = self.values[j, i]
                value = "inf" if not np.isfinite(v) else repr(float(v))
                lines.append(
                    f"{float(re)!r},{float(im)!r},{value},{int(self.poles[j, i])}"
                )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        vals = np.where(np.isfinite(self.values), self.values, np.inf)
        return {
            "re_axis": self.spec.re_axis.tolist(),
            "im_axis": self.spec.im_axis.tolist(),
            "values": [
                [None if p else float(v) for v, p in zip(row, prow)]
                for row, prow in zip(vals, self.poles)
            ],
        }


def _stability_batch(a: np.ndarray, b: np.ndarray, z: np.ndarray, flag_poles: bool = True):
    """R(z) = 1 + z b^T (I - zA)^{-1} 1 for a batch of z values."""
    shape = z.shape
    zf = z.reshape(-1)
    n = a.shape[0]
    eye = np.eye(n)
    mats = eye[None, :, :] - zf[:, None, None] * a[None, :, :]
    ones = np.ones((zf.size, n), dtype=complex)
    values = np.empty(zf.size, dtype=complex)
    poles = np.zeros(zf.size, dtype=bool)
    if flag_poles:
        conds = np.linalg.cond(mats)
        poles = ~np.isfinite(conds) | (conds > POLE_CONDITION)
    good = ~poles
    if np.any(good):
        sol = np.linalg.solve(mats[good], ones[good][..., None])[..., 0]
        values[good] = 1 + zf[good] * (sol @ b)
    values[poles] = np.inf
    return values.reshape(shape), poles.reshape(shape)


def stability_function(tableau: ButcherTableau, z: complex) -> complex:
    """R(z) of the tableau; returns complex infinity at a pole."""
    a, b, _ = tableau.as_float()
    values, poles = _stability_batch(a, b, np.array([z], dtype=complex))
    if poles[0]:
        return complex(np.inf, 0.0)
    return complex(values[0])


def stability_region(tableau: ButcherTableau, spec: GridSpec | None = None) -> ComplexGrid:
    """|R(z)| sampled on the grid, with pole flags."""
    spec = GridSpec() if spec is None else spec
    a, b, _ = tableau.as_float()
    values, poles = _stability_batch(a, b, spec.points())
    return ComplexGrid(spec, np.abs(values), poles)


def iteration_matrix(a, a_delta, z: complex) -> np.ndarray:
    """B(z) = z (I - z A_delta)^{-1} (A - A_delta)."""
    a = _as_matrix(a)
    d = _as_matrix(a_delta)
    n = a.shape[0]
    m = np.eye(n) - z * d
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > POLE_CONDITION:
        raise PoleError(f"I - z A_delta is singular at z = {z}")
    return z * np.linalg.solve(m, a - d)


def growth_rate(a, schedule, z: complex, k: int | None = None, norm: str = "inf") -> float:
    """k-th root of the norm of the product B^k(z) ... B^1(z).

    ``schedule`` may be an EedSchedule (its initializer is skipped), an
    SdcMethod, or an explicit sequence of iteration matrices.  Returns
    +inf when any factor hits a pole.
    """
    if norm != "inf":
        raise ValueError("only the infinity norm is implemented")
    a = _as_matrix(a)
    eeds = _iteration_eeds(schedule)
    k = len(eeds) if k is None else k
    if not 1 <= k <= len(eeds):
        raise ValueError(f"k must be in [1, {len(eeds)}], got {k}")
    prod = np.eye(a.shape[0], dtype=complex)
    try:
        for d in eeds[:k]:
            prod = iteration_matrix(a, d, z) @ prod
    except PoleError:
        return np.inf
    return float(np.abs(prod).sum(axis=1).max() ** (1.0 / k))


def growth_rate_grid(a, schedule, spec: GridSpec | None = None, k: int | None = None) -> ComplexGrid:
    """rho_bar_k sampled over a grid (vectorized over grid points)."""
    spec = GridSpec() if spec is None else spec
    a = _as_matrix(a)
    eeds = _iteration_eeds(schedule)
    k = len(eeds) if k is None else k
    if not 1 <= k <= len(eeds):
        raise ValueError(f"k must be in [1, {len(eeds)}], got {k}")
    z = spec.points().reshape(-1)
    n = a.shape[0]
    eye = np.eye(n)
    prod = np.broadcast_to(eye.astype(complex), (z.size, n, n)).copy()
    poles = np.zeros(z.size, dtype=bool)
    for d in eeds[:k]:
        mats = eye[None, :, :] - z[:, None, None] * d[None, :, :]
        conds = np.linalg.cond(mats)
        poles |= ~np.isfinite(conds) | (conds > POLE_CONDITION)
        good = ~poles
        if np.any(good):
            bk = z[good, None, None] * np.linalg.solve(mats[good], (a - d)[None, :, :])
            prod[good] = bk @ prod[good]
    values = np.full(z.size, np.inf)
    good = ~poles
    values[good] = np.abs(prod[good]).sum(axis=2).max(axis=1) ** (1.0 / k)
    return ComplexGrid(spec, values.reshape(spec.points().shape), poles.reshape(spec.points().shape))


def stiff_limit_matrix(a, a_delta) -> np.ndarray:
    """B_S = I - A_delta^{-1} A, the infinite-z limit of the iteration matrix."""
    a = _as_matrix(a)
    d = _as_matrix(a_delta)
    cond = np.linalg.cond(d)
    if not np.isfinite(cond) or cond > POLE_CONDITION:
        raise SingularEedError("A_delta is singular; stiff-limit matrix undefined")
    return np.eye(a.shape[0]) - np.linalg.solve(d, a)


@dataclass(frozen=True)
class NilpotencyReport:
    """Norm of the stiff-limit product B_S^K ... B_S^1 and the verdict."""

    norm: float
    passed: bool
    tolerance: float


def certify_stiff_nilpotency(a, schedule, tol: float = 1e-8) -> NilpotencyReport:
    """Check that the stiff-limit iteration matrices multiply to (near) zero.

    The product is taken in sweep order, last iteration leftmost, matching
    the error propagation e^{K+1} = B^K ... B^1 e^1.
    """
    a = _as_matrix(a)
    eeds = _iteration_eeds(schedule)
    prod = np.eye(a.shape[0])
    for d in eeds:
        prod = stiff_limit_matrix(a, d) @ prod
    norm = float(np.abs(prod).sum(axis=1).max())
    return NilpotencyReport(norm, norm < tol, tol)


def dahlquist_sweep(method: SdcMethod, z: complex, u_n: complex = 1.0) -> complex:
    """One SDC step on u' = lambda*u by direct sweep recursion.

    Independent of the assembled augmented tableau; used to cross-check
    ``stability_function`` and efficient for very large iteration counts.
    Raises PoleError if an implicit stage factor vanishes.
    """
    a, b, c = method.tableau.as_float()
    s = method.s
    mats = [m.as_float() for m in method.schedule.mats]
    init = mats[0]
    m0 = np.eye(s) - z * init
    if np.linalg.cond(m0) > POLE_CONDITION:
        raise PoleError(f"initial solve singular at z = {z}")
    stages = np.linalg.solve(m0, np.full(s, u_n, dtype=complex))
    for d in mats[1:]:
        rhs = u_n + z * ((a - d) @ stages)
        m = np.eye(s) - z * d
        if np.linalg.cond(m) > POLE_CONDITION:
            raise PoleError(f"sweep solve singular at z = {z}")
        stages = np.linalg.solve(m, rhs)
    from .tableau import EXTRAPOLATION, LAST_STAGE, lagrange_weights_at_one

    if method.final_update == LAST_STAGE:
        return complex(stages[-1])
    if method.final_update == EXTRAPOLATION:
        ell = np.array([float(w) for w in lagrange_weights_at_one(method.tableau.c)])
        return complex(ell @ stages)
    return complex(u_n + z * (b @ stages))


def contour_polylines(grid: ComplexGrid, level: float = 1.0) -> list[np.ndarray]:
    """Marching-squares polylines of ``values == level`` in (re, im) pairs.

    Requires the optional scikit-image dependency (``pip install
    sdcrk[contours]``); core grid emission never needs it.
    """
    try:
        from skimage.measure import find_contours
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise ImportError(
            "contour extraction needs scikit-image; install sdcrk[contours]"
        ) from exc
    values = np.where(np.isfinite(grid.values), grid.values, 1e300)
    out = []
    re_ax, im_ax = grid.spec.re_axis, grid.spec.im_axis
    d_re = re_ax[1] - re_ax[0]
    d_im = im_ax[1] - im_ax[0]
    for path in find_contours(values, level):
        # find_contours returns (row, col) = (im index, re index)
        re = re_ax[0] + path[:, 1] * d_re
        im = im_ax[0] + path[:, 0] * d_im
        out.append(np.column_stack([re, im]))
    return out
