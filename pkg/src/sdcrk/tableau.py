"""Collocation tableaux, error-discretization matrices, and SDC assembly.

Coefficients are built in arbitrary-precision floating point (default 256
bits) because the B-series order analysis downstream cancels catastrophically
at 64-bit for large augmented tableaux.  Conversion to numpy floats happens
once, at the boundary to the stability and integration modules.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from . import mp
from .errors import IllConditionedError, ResourceLimitError, SingularEedError

NODE_FAMILIES = ("gauss", "radau", "lobatto", "equidistant")

#: Final-update modes for the SDC output step.
QUADRATURE = "quadrature"
LAST_STAGE = "last-stage"
EXTRAPOLATION = "extrapolation"
FINAL_UPDATES = (QUADRATURE, LAST_STAGE, EXTRAPOLATION)

MAX_COLLOCATION_STAGES = 12


@dataclass(frozen=True)
class NodeFamily:
    """A named collocation node set: family kind plus stage count."""

    kind: str
    s: int

    def __post_init__(self):
        if self.kind not in NODE_FAMILIES:
            raise ValueError(f"unknown node family {self.kind!r}, expected one of {NODE_FAMILIES}")
        smin = 2 if self.kind == "lobatto" else 1
        if not smin <= self.s <= MAX_COLLOCATION_STAGES:
            raise ResourceLimitError(
                f"{self.kind} stage count must be in [{smin}, {MAX_COLLOCATION_STAGES}], got {self.s}"
            )

    @property
    def order(self) -> int | None:
        """Classical order of the collocation method, if known in closed form."""
        return {
            "gauss": 2 * self.s,
            "radau": 2 * self.s - 1,
            "lobatto": 2 * self.s - 2,
            "equidistant": None,
        }[self.kind]

    @property
    def includes_right_endpoint(self) -> bool:
        return self.kind in ("radau", "lobatto", "equidistant")


@dataclass(frozen=True)
class ButcherTableau:
    """Runge-Kutta coefficients (A, b, c) with mpfr entries."""

    a: tuple
    b: tuple
    c: tuple

    def __post_init__(self):
        coerce = lambda v: v if isinstance(v, mpfr) else mpfr(v)
        a = tuple(tuple(coerce(v) for v in row) for row in self.a)
        b = tuple(coerce(v) for v in self.b)
        c = tuple(coerce(v) for v in self.c)
        s = len(c)
        if len(b) != s or len(a) != s or any(len(row) != s for row in a):
            raise ValueError("inconsistent tableau dimensions")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return len(self.c)

    @property
    def precision(self) -> int:
        return mp.precision_of(v for row in self.a for v in row)

    def as_float(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """64-bit copies (A, b, c) for stability sweeps and time stepping."""
        a = np.array([[float(v) for v in row] for row in self.a])
        b = np.array([float(v) for v in self.b])
        c = np.array([float(v) for v in self.c])
        return a, b, c


@dataclass(frozen=True)
class EedMatrix:
    """An error-equation-discretization ("sweeper") matrix with a kind tag."""

    kind: str
    matrix: tuple
    label: str = ""

    def __post_init__(self):
        coerce = lambda v: v if isinstance(v, mpfr) else mpfr(v)
        m = tuple(tuple(coerce(v) for v in row) for row in self.matrix)
        if any(len(row) != len(m) for row in m):
            raise ValueError("EED matrix must be square")
        object.__setattr__(self, "matrix", m)
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @property
    def s(self) -> int:
        return len(self.matrix)

    def is_diagonal(self) -> bool:
        return all(
            self.matrix[i][j] == 0 for i in range(self.s) for j in range(self.s) if i != j
        )

    def is_lower_triangular(self) -> bool:
        return all(self.matrix[i][j] == 0 for i in range(self.s) for j in range(i + 1, self.s))

    def as_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.matrix])


@dataclass(frozen=True)
class EedSchedule:
    """Ordered error discretizations [A_delta^0, ..., A_delta^K], K >= 1."""

    mats: tuple

    def __post_init__(self):
        mats = tuple(self.mats)
        if len(mats) < 2:
            raise ValueError("a schedule needs an initializer and at least one iteration")
        s = mats[0].s
        if any(m.s != s for m in mats):
            raise ValueError("all schedule matrices must share the stage count")
        object.__setattr__(self, "mats", mats)

    @property
    def k(self) -> int:
        """Number of correction iterations."""
        return len(self.mats) - 1

    @property
    def s(self) -> int:
        return self.mats[0].s

    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.mats)


@dataclass(frozen=True)
class SdcMethod:
    """An SDC method: underlying tableau, EED schedule, and final update."""

    tableau: ButcherTableau
    schedule: EedSchedule
    final_update: str = QUADRATURE

    def __post_init__(self):
        if self.final_update not in FINAL_UPDATES:
            raise ValueError(f"final_update must be one of {FINAL_UPDATES}")
        if self.schedule.s != self.tableau.s:
            raise ValueError("schedule and tableau stage counts differ")
        if self.final_update == LAST_STAGE:
            gap = abs(self.tableau.c[-1] - 1)
            if gap > mpfr(2) ** (-(self.tableau.precision // 2)):
                raise ValueError("last-stage update requires c_s = 1")
        if self.final_update == EXTRAPOLATION:
            c = self.tableau.c
            if len(set(map(str, c))) != len(c):
                raise ValueError("extrapolation update requires pairwise-distinct nodes")

    @property
    def s(self) -> int:
        return self.tableau.s

    @property
    def k(self) -> int:
        return self.schedule.k


# ---------------------------------------------------------------------------
# node computation


def _defining_polynomial(kind: str, s: int) -> tuple[list[int], int, int]:
    """Integer coefficients of d^m/dx^m [x^p (x-1)^q] plus endpoint-root info.

    Returns (ascending coefficients, has_root_at_0, has_root_at_1).
    """
    p, q, m = {
        "gauss": (s, s, s),
        "radau": (s - 1, s, s - 1),
        "lobatto": (s - 1, s - 1, s - 2),
    }[kind]
    coeffs = [0] * (p + q + 1)
    for j in range(q + 1):
        coeffs[p + j] = math.comb(q, j) * (-1) ** (q - j)
    for _ in range(m):
        coeffs = [i * coeffs[i] for i in range(1, len(coeffs))]
    root0 = 1 if kind == "lobatto" else 0
    root1 = 1 if kind in ("radau", "lobatto") else 0
    return coeffs, root0, root1


def _deflate_root(coeffs: list[int], root: int) -> list[int]:
    """Exact synthetic division of an integer polynomial by (x - root)."""
    desc = coeffs[::-1]
    out = [desc[0]]
    for a in desc[1:]:
        out.append(a + root * out[-1])
    if out[-1] != 0:
        raise ValueError(f"{root} is not a root")
    return out[:-1][::-1]


def make_nodes(family: NodeFamily, precision: int | None = None) -> tuple:
    """Collocation nodes of the family at the requested precision.

    Gauss/Radau/Lobatto nodes are the roots of the classical defining
    polynomials, found by Newton iteration from 64-bit seed roots; endpoint
    roots are deflated exactly beforehand.  Equidistant nodes are i/s
    (right-aligned, avoiding c_1 = 0).
    """
    bits = precision if precision is not None else mp.default_precision()
    with mp.working_precision(bits):
        if family.kind == "equidistant":
            return tuple(mpfr(i) / family.s for i in range(1, family.s + 1))
        coeffs, root0, root1 = _defining_polynomial(family.kind, family.s)
        interior = coeffs
        if root0:
            if interior[0] != 0:
                raise ValueError("expected a root at x = 0")
            interior = interior[1:]
        if root1:
            interior = _deflate_root(interior, 1)
        nodes = []
        if len(interior) > 1:
            seeds = np.sort(np.roots(np.array(interior[::-1], dtype=float)).real)
            dcoeffs = [i * interior[i] for i in range(1, len(interior))]
            stop = mpfr(2) ** (-bits + 8)
            for seed in seeds:
                x = mpfr(float(seed))
                for _ in range(80):
                    step = mp.poly_eval(interior, x) / mp.poly_eval(dcoeffs, x)
                    x -= step
                    if abs(step) <= stop * max(abs(x), mpfr(1)):
                        break
                else:
                    raise IllConditionedError(
                        f"node root find did not converge, residual {mp.poly_eval(interior, x)!s}"
                    )
                nodes.append(x)
        if root0:
            nodes.insert(0, mpfr(0))
        if root1:
            nodes.append(mpfr(1))
        nodes.sort()
        if family.kind == "gauss":
            # symmetrize about 1/2 to remove asymmetric roundoff
            half = len(nodes) // 2
            for i in range(half):
                lo, hi = nodes[i], nodes[-1 - i]
                nodes[i] = (lo + 1 - hi) / 2
                nodes[-1 - i] = 1 - nodes[i]
            if len(nodes) % 2 == 1:
                nodes[half] = mpfr(1) / 2
        for lo, hi in zip(nodes, nodes[1:]):
            if not lo < hi:
                raise IllConditionedError("nodes failed to separate")
        return tuple(nodes)


def collocation_tableau(c: Sequence) -> ButcherTableau:
    """Collocation coefficients a_ij = int_0^{c_i} l_j, b_j = int_0^1 l_j.

    Lagrange basis polynomials are expanded to coefficient form and
    integrated exactly at the working precision of the nodes.
    """
    bits = mp.precision_of(c)
    with mp.working_precision(bits):
        c = tuple(mpfr(x) for x in c)
        s = len(c)
        gap = min((abs(c[i] - c[j]) for i in range(s) for j in range(i)), default=mpfr(1))
        if gap < mpfr(2) ** (-(bits // 2)):
            raise IllConditionedError(f"nearly coincident nodes (gap {gap!s})")
        a = [[mpfr(0)] * s for _ in range(s)]
        b = [mpfr(0)] * s
        for j in range(s):
            num = [mpfr(1)]
            den = mpfr(1)
            for m_ in range(s):
                if m_ == j:
                    continue
                num = [mpfr(0)] + num  # multiply by x ...
                for k in range(len(num) - 1):
                    num[k] -= num[k + 1] * c[m_]  # ... minus c_m
                den *= c[j] - c[m_]
            anti = [mpfr(0)] + [num[k] / (k + 1) for k in range(len(num))]
            b[j] = mp.poly_eval(anti, mpfr(1)) / den
            for i in range(s):
                a[i][j] = mp.poly_eval(anti, c[i]) / den
        return ButcherTableau(tuple(map(tuple, a)), tuple(b), c)


def collocation_method(family: NodeFamily, precision: int | None = None) -> ButcherTableau:
    """Convenience: nodes plus collocation tableau in one call."""
    return collocation_tableau(make_nodes(family, precision))


def lagrange_weights_at_one(c: Sequence) -> tuple:
    """l_i(1) for the Lagrange basis over the nodes; used by extrapolation."""
    with mp.working_precision(mp.precision_of(c)):
        s = len(c)
        out = []
        for i in range(s):
            w = mpfr(1)
            for j in range(s):
                if j != i:
                    w *= (1 - c[j]) / (c[i] - c[j])
            out.append(w)
        return tuple(out)


# ---------------------------------------------------------------------------
# error equation discretizations

EED_KINDS = (
    "zero",
    "implicit-euler",
    "explicit-euler",
    "diagonal",
    "min-sr-ns",
    "min-sr-flex",
    "jumper",
    "jumper-shift",
    "trapezoid",
    "lu",
    "custom",
)


def _node_intervals(c: Sequence) -> list:
    return [c[0]] + [c[i] - c[i - 1] for i in range(1, len(c))]


def make_eed(
    kind: str,
    c: Sequence,
    *,
    k: int | None = None,
    alpha=None,
    v: int | None = None,
    tableau: ButcherTableau | None = None,
    matrix=None,
) -> EedMatrix:
    """Construct an error-discretization matrix over the nodes ``c``.

    Iteration-indexed kinds (``min-sr-flex``, ``jumper``, ``jumper-shift``)
    require ``k >= 1``; ``diagonal`` requires ``alpha``; ``lu`` requires the
    collocation ``tableau``; ``custom`` requires an explicit ``matrix``.
    """
    bits = mp.precision_of(c)
    with mp.working_precision(bits):
        c = tuple(mpfr(x) for x in c)
        s = len(c)
        if kind in ("min-sr-flex", "jumper", "jumper-shift"):
            if k is None or k < 1:
                raise ValueError(f"{kind} needs an iteration index k >= 1")
        if kind == "zero":
            return EedMatrix("zero", mp.zeros(s, s))
        if kind == "implicit-euler":
            dt = _node_intervals(c)
            m = [[dt[j] if j <= i else mpfr(0) for j in range(s)] for i in range(s)]
            return EedMatrix("implicit-euler", tuple(map(tuple, m)))
        if kind == "explicit-euler":
            dt = _node_intervals(c)
            m = [[dt[j + 1] if j < i else mpfr(0) for j in range(s)] for i in range(s)]
            return EedMatrix("explicit-euler", tuple(map(tuple, m)))
        if kind == "trapezoid":
            dt = _node_intervals(c)
            m = [[mpfr(0)] * s for _ in range(s)]
            for i in range(s):
                for j in range(i):
                    m[i][j] = (dt[j] + dt[j + 1]) / 2
                m[i][i] = dt[i] / 2
            return EedMatrix("trapezoid", tuple(map(tuple, m)))
        if kind == "lu":
            if tableau is None:
                raise ValueError("lu EED needs the underlying tableau")
            _, upper = mp.lu_doolittle(mp.transpose(tableau.a))
            return EedMatrix("lu", mp.transpose(upper))
        if kind == "custom":
            if matrix is None:
                raise ValueError("custom EED needs an explicit matrix")
            return EedMatrix("custom", tuple(tuple(row) for row in matrix))
        # remaining kinds are diagonal scalings of c
        if kind == "diagonal":
            if alpha is None:
                raise ValueError("diagonal EED needs alpha")
            scale = mpfr(alpha)
            label = f"diagonal({alpha})"
        elif kind == "min-sr-ns":
            scale = 1 / mpfr(s)
            label = "min-sr-ns"
        elif kind == "min-sr-flex":
            scale = 1 / mpfr(k)
            label = f"min-sr-flex({k})"
        elif kind == "jumper":
            scale = 1 / mpfr(2 * k)
            label = f"jumper({k})"
        elif kind == "jumper-shift":
            if v is None:
                raise ValueError("jumper-shift needs the jump-free count v")
            if 2 * k - v < 1:
                raise ValueError(f"jumper-shift divisor 2*{k} - {v} must be >= 1")
            scale = 1 / mpfr(2 * k - v)
            label = f"jumper-shift({k},v={v})"
        else:
            raise ValueError(f"unknown EED kind {kind!r}")
        m = [[c[i] * scale if i == j else mpfr(0) for j in range(s)] for i in range(s)]
        return EedMatrix(kind, tuple(map(tuple, m)), label)


@dataclass(frozen=True)
class MinSrSResult:
    """Outcome of the stiff spectral-radius minimization."""

    eed: EedMatrix
    spectral_radius: float
    converged: bool


def min_sr_s_eed(
    tableau: ButcherTableau,
    initial: EedMatrix | None = None,
    *,
    seed: int = 0,
    restarts: int = 0,
    max_iter: int = 4000,
) -> MinSrSResult:
    """Diagonal EED minimizing the spectral radius of I - A_delta^{-1} A.

    Derivative-free (Nelder-Mead) descent on the log-diagonal; deterministic
    for fixed ``seed``.  Returns the best matrix found with the achieved
    radius; ``converged`` is False when the iteration budget ran out.
    """
    from scipy.optimize import minimize

    s = tableau.s
    if s > 8:
        raise ResourceLimitError(f"min-sr-s optimization capped at s = 8, got {s}")
    a_float, _, c_float = tableau.as_float()
    if initial is not None:
        d0 = np.diag(initial.as_float())
    else:
        d0 = c_float / s
    if np.any(d0 <= 0):
        raise SingularEedError("initial diagonal must be positive")

    best = {"x": np.log(d0), "val": np.inf}

    def objective(x):
        radius = float(np.max(np.abs(np.linalg.eigvals(np.eye(s) - (a_float / np.exp(x)[:, None])))))
        if radius < best["val"]:
            best["val"] = radius
            best["x"] = x.copy()
        return radius

    objective(np.log(d0))
    converged = True
    starts = [np.log(d0)]
    if restarts:
        rng = np.random.default_rng(seed)
        starts += [np.log(d0) + 0.1 * rng.standard_normal(s) for _ in range(restarts)]
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-12, "fatol": 1e-14},
        )
        converged = converged and bool(res.success)
    d = np.exp(best["x"])
    with mp.working_precision(tableau.precision):
        m = [[mpfr(d[i]) if i == j else mpfr(0) for j in range(s)] for i in range(s)]
    return MinSrSResult(EedMatrix("custom", tuple(map(tuple, m)), "min-sr-s"), best["val"], converged)


# ---------------------------------------------------------------------------
# SDC assembly


def assemble_sdc(method: SdcMethod) -> ButcherTableau:
    """The (K+1)s-stage augmented Butcher tableau of an SDC method.

    Block row 0 carries A_delta^0; block row k carries [A - A_delta^k,
    A_delta^k] in the (k-1, k) block columns.  The weight vector depends on
    the final update: quadrature puts b on the last block, last-stage copies
    the final row (making the tableau stiffly accurate), extrapolation
    combines the last block's rows with the Lagrange weights at 1.
    """
    t = method.tableau
    with mp.working_precision(t.precision):
        s, kk = t.s, method.k
        n = (kk + 1) * s
        zero = mpfr(0)
        big = [[zero] * n for _ in range(n)]
        mats = method.schedule.mats
        for i in range(s):
            for j in range(s):
                big[i][j] = mats[0].matrix[i][j]
        for k in range(1, kk + 1):
            ek = mats[k].matrix
            for i in range(s):
                for j in range(s):
                    big[k * s + i][(k - 1) * s + j] = t.a[i][j] - ek[i][j]
                    big[k * s + i][k * s + j] = ek[i][j]
        c_aug = list(mp.row_sums(mats[0].matrix))
        for _ in range(kk):
            c_aug.extend(t.c)
        if method.final_update == QUADRATURE:
            b_aug = [zero] * (n - s) + list(t.b)
        elif method.final_update == LAST_STAGE:
            b_aug = list(big[n - 1])
        else:
            ell = lagrange_weights_at_one(t.c)
            b_aug = [
                sum((ell[i] * big[kk * s + i][j] for i in range(s)), zero) for j in range(n)
            ]
        return ButcherTableau(tuple(map(tuple, big)), tuple(b_aug), tuple(c_aug))


# ---------------------------------------------------------------------------
# simplifying assumptions


def _default_tolerance(bits: int) -> mpfr:
    return mpfr(10) ** -(mp.decimal_digits(bits) - 10)


@dataclass(frozen=True)
class AssumptionReport:
    """Maximal orders of the classical and EED simplifying assumptions.

    ``p_b``, ``eta_c``, ``zeta_d`` are the classical B/C/D orders of the
    tableau; when an EED was supplied, ``eta_cw``/``zeta_dy`` report the
    analogous EED identities together with the extracted constant sequences.
    """

    p_b: int
    eta_c: int
    zeta_d: int
    eta_cw: int | None = None
    zeta_dy: int | None = None
    w_constants: tuple = ()
    y_constants: tuple = ()
    tolerance: float = 0.0


def check_simplifying(
    tableau: ButcherTableau,
    eed: EedMatrix | None = None,
    qmax: int | None = None,
    tol=None,
) -> AssumptionReport:
    """Measure how far the B/C/D (and C_W/D_Y) identities hold.

    Each identity is accepted at order q when its residual stays below
    ``tol * max(1, |rhs|)``; the report carries the maximal consecutive q.
    """
    bits = tableau.precision
    with mp.working_precision(bits):
        a, b, c = tableau.a, tableau.b, tableau.c
        s = tableau.s
        if qmax is None:
            qmax = 2 * s
        if qmax < 1:
            raise ValueError("qmax must be >= 1")
        tol = _default_tolerance(bits) if tol is None else mpfr(tol)
        ok = lambda lhs, rhs: abs(lhs - rhs) <= tol * max(mpfr(1), abs(rhs))

        powers = [[mpfr(1)] * s]
        for _ in range(qmax):
            powers.append([powers[-1][i] * c[i] for i in range(s)])

        p_b = 0
        for q in range(1, qmax + 1):
            if not ok(mp.vec_dot(b, powers[q - 1]), 1 / mpfr(q)):
                break
            p_b = q

        eta_c = 0
        for q in range(1, qmax + 1):
            if not all(
                ok(mp.vec_dot(a[i], powers[q - 1]), powers[q][i] / q) for i in range(s)
            ):
                break
            eta_c = q

        zeta_d = 0
        for q in range(1, qmax + 1):
            good = all(
                ok(
                    sum((b[i] * powers[q - 1][i] * a[i][j] for i in range(s)), mpfr(0)),
                    b[j] / q * (1 - powers[q][j]),
                )
                for j in range(s)
            )
            if not good:
                break
            zeta_d = q

        if eed is None:
            return AssumptionReport(p_b, eta_c, zeta_d, tolerance=float(tol))

        e = eed.matrix
        eta_cw = 0
        w_constants = []
        for q in range(1, qmax + 1):
            lhs = [mp.vec_dot(e[i], powers[q - 1]) for i in range(s)]
            pivot = max(range(s), key=lambda i: abs(powers[q][i]))
            if powers[q][pivot] == 0:
                break
            w_q = lhs[pivot] / powers[q][pivot]
            if not all(ok(lhs[i], powers[q][i] * w_q) for i in range(s)):
                break
            eta_cw = q
            w_constants.append(w_q)

        zeta_dy = 0
        y_constants = []
        for q in range(1, qmax + 1):
            lhs = [
                sum((b[i] * powers[q - 1][i] * e[i][j] for i in range(s)), mpfr(0))
                for j in range(s)
            ]
            scale = [b[j] * powers[q][j] for j in range(s)]
            pivot = max(range(s), key=lambda j: abs(scale[j]))
            if scale[pivot] == 0:
                break
            y_q = lhs[pivot] / scale[pivot]
            if not all(ok(lhs[j], scale[j] * y_q) for j in range(s)):
                break
            zeta_dy = q
            y_constants.append(y_q)

        return AssumptionReport(
            p_b,
            eta_c,
            zeta_d,
            eta_cw,
            zeta_dy,
            tuple(w_constants),
            tuple(y_constants),
            float(tol),
        )


def is_stiffly_accurate(tableau: ButcherTableau, tol=None) -> bool:
    """True when the last row of A equals b within tolerance."""
    with mp.working_precision(tableau.precision):
        tol = _default_tolerance(tableau.precision) if tol is None else mpfr(tol)
        last = tableau.a[-1]
        return all(abs(last[j] - tableau.b[j]) <= tol for j in range(tableau.s))


# ---------------------------------------------------------------------------
# schedule DSL

_ENTRY_RE = re.compile(r"^([a-z-]+)(?:\(([^)]*)\))?(?:\*(\d+))?$")

_DSL_KINDS = {
    "zero": "zero",
    "ie": "implicit-euler",
    "ee": "explicit-euler",
    "trap": "trapezoid",
    "lu": "lu",
    "ns": "min-sr-ns",
    "minsrns": "min-sr-ns",
    "flex": "min-sr-flex",
    "minsrflex": "min-sr-flex",
    "jumper": "jumper",
    "jshift": "jumper-shift",
    "diag": "diagonal",
    "minsrs": "min-sr-s",
    "exact": "exact",
}

#: Kinds whose matrix depends on a running iteration index.
_AUTO_INDEXED = ("min-sr-flex", "jumper", "jumper-shift")


def _parse_number(text: str) -> mpfr:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return mpfr(num.strip()) / mpfr(den.strip())
    return mpfr(text)


def parse_schedule(spec: str, tableau: ButcherTableau, iterations: int) -> EedSchedule:
    """Expand a schedule DSL string into an EED schedule of length K+1.

    Grammar: comma-separated entries ``name[(params)][*count]``.  The first
    expanded entry is the initializer A_delta^0.  When fewer than K+1 entries
    are given the last one repeats.  Auto-indexed kinds (``jumper``, ``flex``,
    ``jshift``) receive consecutive indices 1, 2, ... in order of appearance,
    so ``zero,jumper`` yields diag(c)/(2k) at iteration k.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    raw = [token.strip() for token in spec.split(",") if token.strip()]
    if not raw:
        raise ValueError("empty schedule")
    expanded: list[tuple[str, str]] = []
    for token in raw:
        match = _ENTRY_RE.match(token)
        if match is None:
            raise ValueError(f"cannot parse schedule entry {token!r}")
        name, params, count = match.groups()
        if name not in _DSL_KINDS:
            raise ValueError(f"unknown schedule kind {name!r}")
        expanded.extend([(name, params or "")] * (int(count) if count else 1))
    if len(expanded) > iterations + 1:
        raise ValueError(
            f"schedule has {len(expanded)} entries but K = {iterations} allows {iterations + 1}"
        )
    while len(expanded) < iterations + 1:
        expanded.append(expanded[-1])

    c = tableau.c
    with mp.working_precision(tableau.precision):
        mats = []
        counter = 0
        for name, params in expanded:
            kind = _DSL_KINDS[name]
            if kind in _AUTO_INDEXED:
                counter += 1
            if kind == "jumper-shift":
                kv = dict(p.split("=") for p in params.split(";") if "=" in p)
                if "v" not in kv:
                    raise ValueError("jshift needs a v=... parameter")
                mats.append(make_eed(kind, c, k=counter, v=int(kv["v"])))
            elif kind in ("jumper", "min-sr-flex"):
                mats.append(make_eed(kind, c, k=counter))
            elif kind == "diagonal":
                if not params:
                    raise ValueError("diag needs a scale parameter, e.g. diag(1/3)")
                mats.append(make_eed(kind, c, alpha=_parse_number(params)))
            elif kind == "min-sr-s":
                kv = dict(p.split("=") for p in params.split(";") if "=" in p)
                seed = int(kv.get("seed", 0))
                mats.append(min_sr_s_eed(tableau, seed=seed).eed)
            elif kind == "exact":
                mats.append(EedMatrix("custom", tableau.a, "exact"))
            else:
                mats.append(make_eed(kind, c, tableau=tableau))
        return EedSchedule(tuple(mats))


def sdc_method(
    family: NodeFamily,
    schedule_spec: str,
    iterations: int,
    final_update: str = QUADRATURE,
    precision: int | None = None,
) -> SdcMethod:
    """Convenience constructor from a node family and a DSL schedule."""
    t = collocation_method(family, precision)
    return SdcMethod(t, parse_schedule(schedule_spec, t, iterations), final_update)


# ---------------------------------------------------------------------------
# JSON serialization


def tableau_to_json(tableau: ButcherTableau) -> str:
    """Serialize as {"c", "A", "b"} with full-precision decimal strings."""
    return json.dumps(
        {
            "c": [mp.to_decimal(v) for v in tableau.c],
            "A": [[mp.to_decimal(v) for v in row] for row in tableau.a],
            "b": [mp.to_decimal(v) for v in tableau.b],
        }
    )


def tableau_from_json(text: str, precision: int | None = None) -> ButcherTableau:
    bits = precision if precision is not None else mp.default_precision()
    data = json.loads(text)
    with mp.working_precision(bits):
        return ButcherTableau(
            tuple(tuple(mpfr(v) for v in row) for row in data["A"]),
            tuple(mpfr(v) for v in data["b"]),
            tuple(mpfr(v) for v in data["c"]),
        )


def eed_to_json(eed: EedMatrix) -> str:
    return json.dumps(
        {"kind": eed.kind, "A": [[mp.to_decimal(v) for v in row] for row in eed.matrix]}
    )


def eed_from_json(text: str, precision: int | None = None) -> EedMatrix:
    bits = precision if precision is not None else mp.default_precision()
    data = json.loads(text)
    with mp.working_precision(bits):
        return EedMatrix(
            data.get("kind", "custom"),
            tuple(tuple(mpfr(v) for v in row) for row in data["A"]),
        )
