"""B-series order verification: elementary weights, SDC order, order tables.

The central objects are stage-weight vectors: for a tableau, ``Phi_i(leaf) =
c_i`` and ``Phi(B+(forest)) = A @ (elementwise product of the forest's
vectors)``.  For an SDC method the same recursion decomposes block-wise over
the augmented tableau, so weights are computed per sweep without ever forming
the (K+1)s-square matrix:

    Phi^0(t)  = A_delta^0 @ product_0(children)
    Phi^k(t)  = (A - A_delta^k) @ product_{k-1}(children)
                + A_delta^k @ product_k(children)

Everything runs on mpfr at the tableau's precision; public entry points set
the working context themselves.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

from gmpy2 import mpfr

from . import mp
from .errors import PrecisionWarning, SingularEedError
from .tableau import (
    EXTRAPOLATION,
    LAST_STAGE,
    QUADRATURE,
    ButcherTableau,
    EedMatrix,
    EedSchedule,
    NodeFamily,
    SdcMethod,
    collocation_method,
    lagrange_weights_at_one,
    parse_schedule,
)
from .trees import LEAF, RootedTree, bamboo, gamma, trees_by_size


def _default_tolerance(bits: int) -> mpfr:
    return mpfr(10) ** -(mp.decimal_digits(bits) // 2)


@dataclass(frozen=True)
class FailedCondition:
    """One violated order condition: the tree and both sides of the identity."""

    tree: RootedTree
    lhs: float
    rhs: float
    residual: float


@dataclass(frozen=True)
class OrderReport:
    """Result of an order probe.

    ``order`` is the largest probed level at which every condition holds;
    ``first_failures`` lists the violated conditions one level above.  For
    height-order probes ``size_cap`` records the size truncation: the true
    condition quantifies over infinitely many trees per height, so any
    reported height order is relative to the stated cap.
    """

    order: int
    first_failures: tuple = ()
    tolerance: float = 0.0
    pmax: int = 0
    size_cap: int | None = None


class BSeriesWeights:
    """Memoized stage-weight vectors for a fixed Runge-Kutta tableau.

    The memo dictionary is filled a size-generation at a time when driven by
    the order detectors; concurrent readers are safe once a generation is
    complete, and single-threaded use is bit-reproducible.
    """

    def __init__(self, tableau: ButcherTableau):
        self._a = tableau.a
        self._b = tableau.b
        self._s = tableau.s
        self._memo: dict[RootedTree, tuple] = {LEAF: tuple(tableau.c)}

    def stage_vector(self, tree: RootedTree) -> tuple:
        vec = self._memo.get(tree)
        if vec is None:
            vec = tuple(mp.mat_vec(self._a, self.forest_product(tree.children)))
            self._memo[tree] = vec
        return vec

    def forest_product(self, forest: Sequence[RootedTree]) -> list:
        prod = [mpfr(1)] * self._s
        for child in forest:
            vec = self.stage_vector(child)
            prod = [prod[i] * vec[i] for i in range(self._s)]
        return prod

    def weight(self, tree: RootedTree) -> mpfr:
        return mp.vec_dot(self._b, self.forest_product(tree.children))


_WEIGHT_CACHE: "weakref.WeakKeyDictionary[ButcherTableau, BSeriesWeights]" = (
    weakref.WeakKeyDictionary()
)


def stage_weights(tableau: ButcherTableau, tree: RootedTree) -> tuple:
    """Per-stage weight vector Phi_i(tree) for the tableau."""
    with mp.working_precision(tableau.precision):
        calc = _WEIGHT_CACHE.get(tableau)
        if calc is None:
            calc = _WEIGHT_CACHE[tableau] = BSeriesWeights(tableau)
        return calc.stage_vector(tree)


def elementary_weight(tableau: ButcherTableau, tree: RootedTree) -> mpfr:
    """The B-series coefficient alpha(tree) the tableau assigns."""
    with mp.working_precision(tableau.precision):
        calc = _WEIGHT_CACHE.get(tableau)
        if calc is None:
            calc = _WEIGHT_CACHE[tableau] = BSeriesWeights(tableau)
        return calc.weight(tree)


class SdcBSeries:
    """Block-wise B-series weights of an SDC method and its underlying RKM."""

    def __init__(self, method: SdcMethod):
        t = method.tableau
        self.method = method
        self.bits = t.precision
        self._s = t.s
        self._b = t.b
        with mp.working_precision(self.bits):
            mats = [m.matrix for m in method.schedule.mats]
            self._eeds = mats
            self._a_minus = [None] + [mp.mat_sub(t.a, e) for e in mats[1:]]
            self._underlying = BSeriesWeights(t)
            self._memo: list[dict[RootedTree, tuple]] = [
                {LEAF: tuple(mp.row_sums(mats[0]))}
            ] + [{LEAF: tuple(t.c)} for _ in range(method.k)]
            if method.final_update == EXTRAPOLATION:
                self._ell = lagrange_weights_at_one(t.c)
            else:
                self._ell = None

    @property
    def underlying(self) -> BSeriesWeights:
        return self._underlying

    def block_vector(self, k: int, tree: RootedTree) -> tuple:
        """alpha^{[k,i]}(tree) for the stages of sweep block k."""
        memo = self._memo[k]
        vec = memo.get(tree)
        if vec is None:
            if k == 0:
                vec = tuple(mp.mat_vec(self._eeds[0], self._product(0, tree.children)))
            else:
                prev = mp.mat_vec(self._a_minus[k], self._product(k - 1, tree.children))
                cur = mp.mat_vec(self._eeds[k], self._product(k, tree.children))
                vec = tuple(prev[i] + cur[i] for i in range(self._s))
            memo[tree] = vec
        return vec

    def _product(self, k: int, forest: Sequence[RootedTree]) -> list:
        prod = [mpfr(1)] * self._s
        for child in forest:
            vec = self.block_vector(k, child)
            prod = [prod[i] * vec[i] for i in range(self._s)]
        return prod

    def final_weight(self, tree: RootedTree, block: int | None = None) -> mpfr:
        """alpha^{[k]}(tree) of the method truncated after ``block`` sweeps."""
        k = self.method.k if block is None else block
        mode = self.method.final_update
        if mode == QUADRATURE:
            return mp.vec_dot(self._b, self._product(k, tree.children))
        if mode == LAST_STAGE:
            return self.block_vector(k, tree)[-1]
        vec = self.block_vector(k, tree)
        return mp.vec_dot(self._ell, vec)

    def underlying_weight(self, tree: RootedTree) -> mpfr:
        """beta(tree) of the underlying tableau under the same update."""
        mode = self.method.final_update
        if mode == QUADRATURE:
            return self._underlying.weight(tree)
        if mode == LAST_STAGE:
            return self._underlying.stage_vector(tree)[-1]
        return mp.vec_dot(self._ell, self._underlying.stage_vector(tree))

    def stage_errors(self, tree: RootedTree, block: int | None = None) -> tuple:
        """Coefficient errors beta^{[i]} - alpha^{[k,i]} on the tree."""
        k = self.method.k if block is None else block
        got = self.block_vector(k, tree)
        want = self._underlying.stage_vector(tree)
        return tuple(want[i] - got[i] for i in range(self._s))


# ---------------------------------------------------------------------------
# order detection


def rk_order(tableau: ButcherTableau, pmax: int, tol=None) -> OrderReport:
    """Classical order: largest p with alpha(t) = 1/gamma(t) for |t| <= p.

    Residuals are scaled by gamma(t), separating true zeros from roundoff
    across precisions.
    """
    with mp.working_precision(tableau.precision):
        tol = _default_tolerance(tableau.precision) if tol is None else mpfr(tol)
        calc = BSeriesWeights(tableau)
        by_size = trees_by_size(pmax)
        for size in range(1, pmax + 1):
            failures = []
            for tree in by_size[size]:
                g = gamma(tree)
                lhs = calc.weight(tree)
                residual = abs(lhs - 1 / mpfr(g)) * g
                if residual > tol:
                    failures.append(
                        FailedCondition(tree, float(lhs), 1.0 / g, float(residual))
                    )
            if failures:
                return OrderReport(size - 1, tuple(failures), float(tol), pmax)
        return OrderReport(pmax, (), float(tol), pmax)


def _sdc_residual_ok(lhs: mpfr, rhs: mpfr, tree: RootedTree, tol: mpfr) -> bool:
    scale = max(1 / mpfr(gamma(tree)), abs(rhs))
    return abs(lhs - rhs) <= tol * scale


def sdc_order(method: SdcMethod, pmax: int, tol=None, *, series: SdcBSeries | None = None) -> OrderReport:
    """SDC order: agreement of the assembled method with the underlying RKM.

    Compares alpha^{[K]} of the augmented tableau against beta of the
    underlying tableau, both taken with the method's final-update convention,
    over all trees of size <= pmax.
    """
    ser = series if series is not None else SdcBSeries(method)
    with mp.working_precision(ser.bits):
        tol = _default_tolerance(ser.bits) if tol is None else mpfr(tol)
        by_size = trees_by_size(pmax)
        for size in range(1, pmax + 1):
            failures = []
            for tree in by_size[size]:
                lhs = ser.final_weight(tree)
                rhs = ser.underlying_weight(tree)
                if not _sdc_residual_ok(lhs, rhs, tree, tol):
                    failures.append(
                        FailedCondition(tree, float(lhs), float(rhs), float(abs(lhs - rhs)))
                    )
            if failures:
                return OrderReport(size - 1, tuple(failures), float(tol), pmax)
        return OrderReport(pmax, (), float(tol), pmax)


def _height_probe(
    compare: Callable[[RootedTree], FailedCondition | None],
    hmax: int,
    size_cap: int,
    tol: mpfr,
) -> OrderReport:
    by_size = trees_by_size(size_cap)
    by_height: dict[int, list[RootedTree]] = {}
    for size in range(1, size_cap + 1):
        for tree in by_size[size]:
            if tree.height <= hmax:
                by_height.setdefault(tree.height, []).append(tree)
    for h in range(1, hmax + 1):
        failures = [f for tree in by_height.get(h, []) if (f := compare(tree))]
        if failures:
            return OrderReport(h - 1, tuple(failures), float(tol), hmax, size_cap)
    return OrderReport(hmax, (), float(tol), hmax, size_cap)


def height_order(method: SdcMethod, hmax: int, size_cap: int | None = None, tol=None) -> OrderReport:
    """Height order of the SDC output: agreement on trees of height <= h.

    Only trees up to ``size_cap`` (default hmax + 4) are enumerated; the
    report records the truncation since each height class is infinite.
    """
    size_cap = hmax + 4 if size_cap is None else size_cap
    if size_cap < hmax:
        raise ValueError("size_cap must be at least hmax")
    ser = SdcBSeries(method)
    with mp.working_precision(ser.bits):
        tol = _default_tolerance(ser.bits) if tol is None else mpfr(tol)

        def compare(tree):
            lhs = ser.final_weight(tree)
            rhs = ser.underlying_weight(tree)
            if not _sdc_residual_ok(lhs, rhs, tree, tol):
                return FailedCondition(tree, float(lhs), float(rhs), float(abs(lhs - rhs)))
            return None

        return _height_probe(compare, hmax, size_cap, tol)


def stage_height_order(
    method: SdcMethod,
    hmax: int,
    size_cap: int | None = None,
    tol=None,
    *,
    block: int | None = None,
) -> OrderReport:
    """Height order of the internal stages after ``block`` sweeps (default K)."""
    size_cap = hmax + 4 if size_cap is None else size_cap
    if size_cap < hmax:
        raise ValueError("size_cap must be at least hmax")
    block = method.k if block is None else block
    ser = SdcBSeries(method)
    with mp.working_precision(ser.bits):
        tol = _default_tolerance(ser.bits) if tol is None else mpfr(tol)

        def compare(tree):
            got = ser.block_vector(block, tree)
            want = ser.underlying.stage_vector(tree)
            worst = None
            for i in range(method.s):
                if not _sdc_residual_ok(got[i], want[i], tree, tol):
                    r = float(abs(got[i] - want[i]))
                    if worst is None or r > worst.residual:
                        worst = FailedCondition(tree, float(got[i]), float(want[i]), r)
            return worst

        return _height_probe(compare, hmax, size_cap, tol)


@dataclass(frozen=True)
class SdcIterationState:
    """Per-stage coefficient errors eps^{[k,i]} on selected trees."""

    block: int
    errors: dict = field(default_factory=dict)

    def single_tree(self) -> RootedTree:
        if len(self.errors) != 1:
            raise ValueError("state holds several trees; pass the tree explicitly")
        return next(iter(self.errors))


def internal_stage_errors(
    method: SdcMethod, trees: Sequence[RootedTree], block: int | None = None
) -> SdcIterationState:
    """eps^{[k,i]} = beta^{[i]} - alpha^{[k,i]} for each requested tree."""
    ser = SdcBSeries(method)
    k = method.k if block is None else block
    with mp.working_precision(ser.bits):
        return SdcIterationState(k, {tree: ser.stage_errors(tree, k) for tree in trees})


def stage_linear_order(
    method: SdcMethod,
    hmax: int,
    tol=None,
    *,
    block: int | None = None,
) -> int:
    """Largest h such that the stages match beta^{[i]} on all bamboos of size <= h.

    This is the stage order seen by linear problems, where only bamboo trees
    carry B-series weight and order and height order coincide.
    """
    block = method.k if block is None else block
    ser = SdcBSeries(method)
    with mp.working_precision(ser.bits):
        tol = _default_tolerance(ser.bits) if tol is None else mpfr(tol)
        for h in range(1, hmax + 1):
            tree = bamboo(h)
            got = ser.block_vector(block, tree)
            want = ser.underlying.stage_vector(tree)
            if not all(_sdc_residual_ok(got[i], want[i], tree, tol) for i in range(method.s)):
                return h - 1
        return hmax


def jump_condition_check(
    method: SdcMethod,
    eed: EedMatrix,
    tol=None,
    *,
    stage_height: int | None = None,
    block: int | None = None,
) -> bool:
    """Whether ``eed`` triggers an order jump when used for the next sweep.

    Evaluates the bamboo condition: A_delta and A must act identically on the
    stage coefficient errors at the first disagreeing bamboo, i.e. the one
    just above the linear stage order (computed via
    :func:`stage_linear_order` unless ``stage_height`` is supplied).
    ``block`` selects which sweep's stages form the current state; the
    default is the method's last sweep.
    """
    block = method.k if block is None else block
    ser = SdcBSeries(method)
    with mp.working_precision(ser.bits):
        tol = _default_tolerance(ser.bits) if tol is None else mpfr(tol)
        if stage_height is None:
            probe = 2 * (block + 1) + 2
            stage_height = stage_linear_order(method, probe, tol=tol, block=block)
        bam = bamboo(stage_height + 1)
        eps = ser.stage_errors(bam, block)
        lhs = mp.mat_vec(eed.matrix, eps)
        rhs = mp.mat_vec(method.tableau.a, eps)
        scale = max(
            1 / mpfr(gamma(bamboo(stage_height + 2))), max(abs(r) for r in rhs)
        )
        return all(abs(lhs[i] - rhs[i]) <= tol * scale for i in range(method.s))


def unique_diagonal_jump_eed(
    state: SdcIterationState,
    tableau: ButcherTableau,
    tree: RootedTree | None = None,
    tol=None,
) -> EedMatrix:
    """The only diagonal EED that performs an order jump from this state.

    Entry i is (sum_j a_ij eps_j) / eps_i evaluated on the bamboo one above
    the stage height order; vanishing eps_i makes the construction singular.
    """
    tree = state.single_tree() if tree is None else tree
    eps = state.errors[tree]
    bits = tableau.precision
    with mp.working_precision(bits):
        tol = (mpfr(10) ** -(mp.decimal_digits(bits) - 10)) if tol is None else mpfr(tol)
        scale = max(abs(e) for e in eps)
        rhs = mp.mat_vec(tableau.a, eps)
        diag = []
        for i in range(tableau.s):
            if abs(eps[i]) <= tol * max(scale, mpfr(1)):
                raise SingularEedError(
                    f"stage {i + 1} has vanishing coefficient error; diagonal jump EED undefined"
                )
            diag.append(rhs[i] / eps[i])
        m = [
            [diag[i] if i == j else mpfr(0) for j in range(tableau.s)]
            for i in range(tableau.s)
        ]
        return EedMatrix("custom", tuple(map(tuple, m)), "unique-jump")


# ---------------------------------------------------------------------------
# order tables


@dataclass(frozen=True)
class OrderTable:
    """Detected SDC orders over a grid of stage counts and iteration counts.

    ``orders[(s, k)]`` is the detected order capped at the underlying
    method's order; ``jumps[(s, k)]`` flags entries that gained at least two
    orders over the previous iteration (column k-1, with the K=0 method as
    the baseline for k=1).
    """

    family: str
    schedule: str
    mode: str
    precision: int
    s_values: tuple
    k_values: tuple
    orders: dict
    jumps: dict
    baseline: dict

    def rows(self):
        for s in self.s_values:
            yield s, [self.orders[(s, k)] for k in self.k_values]

    def to_csv(self) -> str:
        lines = ["s," + ",".join(str(k) for k in self.k_values)]
        for s, row in self.rows():
            lines.append(f"{s}," + ",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "schedule": self.schedule,
            "mode": self.mode,
            "precision_bits": self.precision,
            "s_values": list(self.s_values),
            "k_values": list(self.k_values),
            "orders": [[self.orders[(s, k)] for k in self.k_values] for s in self.s_values],
            "jumps": [[self.jumps[(s, k)] for k in self.k_values] for s in self.s_values],
            "baseline_orders": [self.baseline[s] for s in self.s_values],
        }


def table_mode(family: NodeFamily, mode: str = "auto") -> str:
    """Resolve the final-update mode used for order tables.

    ``auto`` picks the last stage whenever the family contains the right
    endpoint (Radau IIA, Lobatto IIIA, equidistant) and quadrature otherwise
    (Gauss); this is the convention that reproduces the published tables.
    """
    if mode != "auto":
        return mode
    return LAST_STAGE if family.includes_right_endpoint else QUADRATURE


def order_table(
    family_kind: str,
    s_values: Sequence[int],
    k_values: Sequence[int],
    schedule: str,
    mode: str = "auto",
    precision: int | None = None,
    tol=None,
) -> OrderTable:
    """Detected-order table over (s, k) for a schedule template.

    Each entry probes all trees up to the underlying order p and reports
    min(detected, p), which matches the plateau of the published tables.
    """
    bits = precision if precision is not None else mp.default_precision()
    s_values = tuple(sorted(s_values))
    k_values = tuple(sorted(k_values))
    kmax = k_values[-1]
    orders: dict = {}
    jumps: dict = {}
    baseline: dict = {}
    for s in s_values:
        family = NodeFamily(family_kind, s)
        resolved = table_mode(family, mode)
        t = collocation_method(family, bits)
        p = family.order
        if p is None:
            p = rk_order(t, pmax=2 * s, tol=tol).order
        if mp.decimal_digits(bits) < 3 * p:
            warnings.warn(
                f"{mp.decimal_digits(bits)} decimal digits may be too few to "
                f"verify order {p}; use at least {3 * p} digits",
                PrecisionWarning,
                stacklevel=2,
            )
        method = SdcMethod(t, parse_schedule(schedule, t, kmax), resolved)
        ser = SdcBSeries(method)
        with mp.working_precision(ser.bits):
            tol_s = _default_tolerance(ser.bits) if tol is None else mpfr(tol)
            by_size = trees_by_size(p)

            def detect(k: int) -> int:
                for size in range(1, p + 1):
                    for tree in by_size[size]:
                        lhs = ser.final_weight(tree, block=k)
                        rhs = ser.underlying_weight(tree)
                        if not _sdc_residual_ok(lhs, rhs, tree, tol_s):
                            return size - 1
                return p

            previous = baseline[s] = detect(0)
            for k in range(1, kmax + 1):
                detected = detect(k)
                if k in k_values:
                    orders[(s, k)] = detected
                    jumps[(s, k)] = detected - previous >= 2
                previous = detected
    resolved_any = table_mode(NodeFamily(family_kind, s_values[0]), mode)
    return OrderTable(
        family_kind, schedule, resolved_any, bits, s_values, k_values, orders, jumps, baseline
    )
