import json

import numpy as np
import pytest
from gmpy2 import mpfr

from sdcrk import mp
from sdcrk.errors import IllConditionedError, ResourceLimitError
from sdcrk.tableau import (
    LAST_STAGE,
    QUADRATURE,
    ButcherTableau,
    EedMatrix,
    EedSchedule,
    NodeFamily,
    SdcMethod,
    assemble_sdc,
    check_simplifying,
    collocation_method,
    collocation_tableau,
    eed_from_json,
    eed_to_json,
    is_stiffly_accurate,
    lagrange_weights_at_one,
    make_eed,
    make_nodes,
    min_sr_s_eed,
    parse_schedule,
    tableau_from_json,
    tableau_to_json,
)


def close(x, y, tol="1e-70"):
    return abs(mpfr(x) - mpfr(y)) < mpfr(tol)


# -- nodes --------------------------------------------------------------------


def test_node_examples():
    assert close(make_nodes(NodeFamily("gauss", 1))[0], "0.5")
    assert make_nodes(NodeFamily("radau", 1)) == (mpfr(1),)
    c = make_nodes(NodeFamily("radau", 2))
    assert close(c[0] * 3, 1) and c[1] == 1


def test_radau_nodes_by_quadrature_exactness():
    # independent check: the collocation weights over Radau nodes must
    # integrate x^q exactly for q <= 2s - 2
    for s in (2, 3, 4):
        t = collocation_method(NodeFamily("radau", s))
        with mp.working_precision(t.precision):
            for q in range(2 * s - 1):
                integral = sum(
                    (t.b[i] * t.c[i] ** q for i in range(s)), mpfr(0)
                )
                assert close(integral, 1 / mpfr(q + 1), "1e-60")


def test_lobatto_endpoints_exact():
    c = make_nodes(NodeFamily("lobatto", 4))
    assert c[0] == 0 and c[-1] == 1


def test_gauss_symmetry():
    c = make_nodes(NodeFamily("gauss", 6))
    for i in range(6):
        assert close(c[i] + c[5 - i], 1)


def test_equidistant_right_aligned():
    c = make_nodes(NodeFamily("equidistant", 4))
    assert [str(x) for x in c] == ["0.25", "0.5", "0.75", "1.0"]


def test_family_validation():
    with pytest.raises(ValueError):
        NodeFamily("chebyshev", 3)
    with pytest.raises(ResourceLimitError):
        NodeFamily("gauss", 13)
    with pytest.raises(ResourceLimitError):
        NodeFamily("lobatto", 1)


# -- collocation ---------------------------------------------------------------


def test_collocation_examples():
    t = collocation_tableau((mpfr("0.5"),))
    assert close(t.a[0][0], "0.5") and close(t.b[0], 1)

    with mp.working_precision(256):
        t2 = collocation_tableau((mpfr(0), mpfr(1)))
    assert close(t2.a[1][0], "0.5") and close(t2.a[1][1], "0.5")
    assert t2.a[0][0] == 0 and t2.a[0][1] == 0
    assert close(t2.b[0], "0.5") and close(t2.b[1], "0.5")

    t3 = collocation_tableau((mpfr(1),))
    assert t3.a[0][0] == 1 and t3.b[0] == 1


def test_collocation_row_sums_equal_c():
    for family in ("gauss", "radau", "lobatto"):
        t = collocation_method(NodeFamily(family, 4))
        with mp.working_precision(t.precision):
            for i in range(4):
                assert close(sum(t.a[i], mpfr(0)), t.c[i], "1e-65")


def test_nearly_coincident_nodes_rejected():
    with mp.working_precision(256):
        c = (mpfr("0.5"), mpfr("0.5") + mpfr(10) ** -45)
    with pytest.raises(IllConditionedError):
        collocation_tableau(c)


def test_tableau_dimension_validation():
    with pytest.raises(ValueError):
        ButcherTableau(((1,),), (1, 2), (1,))


# -- EEDs ----------------------------------------------------------------------


def test_eed_examples_on_radau2(radau2):
    c = radau2.c
    jumper = make_eed("jumper", c, k=1)
    assert close(jumper.matrix[0][0], mpfr(1) / 6) and close(jumper.matrix[1][1], "0.5")
    assert jumper.is_diagonal()

    ee = make_eed("explicit-euler", c)
    assert ee.matrix[0][0] == 0 and ee.matrix[1][1] == 0
    assert close(ee.matrix[1][0], mpfr(2) / 3)

    ns = make_eed("min-sr-ns", c)
    assert close(ns.matrix[0][0], mpfr(1) / 6) and close(ns.matrix[1][1], "0.5")


def test_implicit_euler_row_sums_are_nodes(radau3):
    ie = make_eed("implicit-euler", radau3.c)
    with mp.working_precision(radau3.precision):
        for i in range(3):
            assert close(sum(ie.matrix[i], mpfr(0)), radau3.c[i], "1e-70")


def test_trapezoid_row_sums_on_lobatto():
    # with c_1 = 0 the trapezoid EED is consistent with the nodes
    t = collocation_method(NodeFamily("lobatto", 4))
    trap = make_eed("trapezoid", t.c)
    with mp.working_precision(t.precision):
        for i in range(4):
            assert close(sum(trap.matrix[i], mpfr(0)), t.c[i], "1e-70")


def test_trapezoid_exact_on_linear_integrand(gauss3):
    # composite trapezoid integrates x exactly: sum_j m_ij c_j = c_i^2 / 2
    trap = make_eed("trapezoid", gauss3.c)
    with mp.working_precision(gauss3.precision):
        for i in range(3):
            lhs = sum((trap.matrix[i][j] * gauss3.c[j] for j in range(3)), mpfr(0))
            assert close(lhs, gauss3.c[i] ** 2 / 2, "1e-70")


def test_jumper_shift():
    c = (mpfr("0.25"), mpfr(1))
    e = make_eed("jumper-shift", c, k=2, v=1)  # divisor 2*2 - 1 = 3
    assert close(e.matrix[0][0], mpfr("0.25") / 3)
    with pytest.raises(ValueError):
        make_eed("jumper-shift", c, k=1, v=2)


def test_lu_eed(radau3):
    lu = make_eed("lu", radau3.c, tableau=radau3)
    assert lu.is_lower_triangular()
    # independent reconstruction: A^T = L @ U with unit lower L
    with mp.working_precision(radau3.precision):
        low, up = mp.lu_doolittle(mp.transpose(radau3.a))
        for i in range(3):
            assert low[i][i] == 1
            for j in range(3):
                prod = sum((low[i][k] * up[k][j] for k in range(3)), mpfr(0))
                assert close(prod, radau3.a[j][i], "1e-70")
                assert lu.matrix[i][j] == up[j][i]


def test_zero_and_custom():
    c = (mpfr("0.5"),)
    z = make_eed("zero", c)
    assert z.matrix == ((mpfr(0),),)
    custom = make_eed("custom", c, matrix=((mpfr("0.3"),),))
    assert custom.kind == "custom"
    with pytest.raises(ValueError):
        make_eed("jumper", c)  # missing k
    with pytest.raises(ValueError):
        make_eed("lu", c)  # missing tableau


# -- schedules -----------------------------------------------------------------


def test_schedule_dsl_auto_indexing(radau2):
    sched = parse_schedule("zero,jumper", radau2, 3)
    assert sched.labels() == ("zero", "jumper(1)", "jumper(2)", "jumper(3)")
    with mp.working_precision(radau2.precision):
        assert close(sched.mats[2].matrix[1][1], mpfr(1) / 4)


def test_schedule_dsl_flex_then_jshift(radau3):
    # three flex sweeps then the shifted jumper continuing at k = 4
    sched = parse_schedule("flex*3,jshift(v=3)", radau3, 3)
    assert sched.labels() == (
        "min-sr-flex(1)",
        "min-sr-flex(2)",
        "min-sr-flex(3)",
        "jumper-shift(4,v=3)",
    )
    with mp.working_precision(radau3.precision):
        assert close(sched.mats[3].matrix[2][2], radau3.c[2] / 5, "1e-70")


def test_schedule_dsl_repetition_and_padding(radau2):
    sched = parse_schedule("ie*4", radau2, 3)
    assert len(sched.mats) == 4
    assert all(label == "implicit-euler" for label in sched.labels())
    padded = parse_schedule("zero,ie", radau2, 3)
    assert padded.labels() == ("zero", "implicit-euler", "implicit-euler", "implicit-euler")


def test_schedule_dsl_diag_fraction(radau2):
    sched = parse_schedule("zero,diag(1/3),diag(0.25)", radau2, 2)
    with mp.working_precision(radau2.precision):
        assert close(sched.mats[1].matrix[1][1], mpfr(1) / 3)
        assert close(sched.mats[2].matrix[1][1], mpfr("0.25"))


def test_schedule_dsl_errors(radau2):
    with pytest.raises(ValueError):
        parse_schedule("zero,warp", radau2, 2)
    with pytest.raises(ValueError):
        parse_schedule("zero,ie,ie,ie", radau2, 2)  # too long for K = 2
    with pytest.raises(ValueError):
        parse_schedule("zero,jshift", radau2, 1)  # missing v
    with pytest.raises(ValueError):
        parse_schedule("", radau2, 1)


def test_schedule_validation(radau2):
    with pytest.raises(ValueError):
        EedSchedule((make_eed("zero", radau2.c),))


# -- assembly ------------------------------------------------------------------


def test_assemble_block_structure():
    t = ButcherTableau(((1,),), (1,), (1,))
    theta = EedMatrix("custom", ((mpfr("0.3"),),))
    method = SdcMethod(t, EedSchedule((make_eed("zero", t.c), theta)), QUADRATURE)
    big = assemble_sdc(method)
    rows = [[float(v) for v in row] for row in big.a]
    assert rows == [[0.0, 0.0], [1.0 - 0.3, 0.3]]
    assert [float(v) for v in big.b] == [0.0, 1.0]
    assert [float(v) for v in big.c] == [0.0, 1.0]


def test_assemble_quadrature_weights_sum_to_one(radau3):
    method = SdcMethod(radau3, parse_schedule("zero,jumper", radau3, 3), QUADRATURE)
    big = assemble_sdc(method)
    with mp.working_precision(big.precision):
        assert close(sum(big.b, mpfr(0)), 1, "1e-70")


def test_assemble_last_stage_is_stiffly_accurate(radau3):
    method = SdcMethod(radau3, parse_schedule("zero,ie", radau3, 2), LAST_STAGE)
    big = assemble_sdc(method)
    assert is_stiffly_accurate(big)


def test_last_stage_requires_right_endpoint(gauss2):
    with pytest.raises(ValueError):
        SdcMethod(gauss2, parse_schedule("zero,ie", gauss2, 1), LAST_STAGE)


def test_lagrange_weights_at_one(radau3, gauss2):
    # with c_s = 1 extrapolation picks out the last stage
    ell = lagrange_weights_at_one(radau3.c)
    assert close(ell[-1], 1) and close(ell[0], 0) and close(ell[1], 0)
    with mp.working_precision(gauss2.precision):
        assert close(sum(lagrange_weights_at_one(gauss2.c), mpfr(0)), 1)


# -- stiff accuracy and simplifying assumptions --------------------------------


def test_is_stiffly_accurate(radau2, gauss2):
    assert is_stiffly_accurate(radau2)
    assert not is_stiffly_accurate(gauss2)


@pytest.mark.parametrize(
    "family,s,expected",
    [
        ("gauss", 2, (4, 2, 2)),
        ("gauss", 3, (6, 3, 3)),
        ("radau", 3, (5, 3, 2)),
        ("lobatto", 4, (6, 4, 2)),
    ],
)
def test_classical_simplifying_assumptions(family, s, expected):
    t = collocation_method(NodeFamily(family, s))
    report = check_simplifying(t)
    assert (report.p_b, report.eta_c, report.zeta_d) == expected


def test_eed_assumption_constants(gauss3):
    half = make_eed("diagonal", gauss3.c, alpha=mpfr("0.5"))
    report = check_simplifying(gauss3, half, qmax=6)
    assert report.eta_cw == 6
    assert all(close(w, "0.5") for w in report.w_constants)
    assert report.zeta_dy == 6
    assert all(close(y, "0.5") for y in report.y_constants)


def test_trapezoid_cw_order():
    # on Lobatto nodes (c_1 = 0) the trapezoid EED has row sums c, so the
    # C_W identity holds exactly for constants and linears and fails beyond
    t = collocation_method(NodeFamily("lobatto", 4))
    trap = make_eed("trapezoid", t.c)
    report = check_simplifying(t, trap, qmax=6)
    assert report.eta_cw == 2
    assert close(report.w_constants[0], 1) and close(report.w_constants[1], "0.5")
    # on Gauss nodes the row sums are c_i - c_1/2, so even C_W(1) fails
    g = collocation_method(NodeFamily("gauss", 3))
    assert check_simplifying(g, make_eed("trapezoid", g.c), qmax=6).eta_cw == 0


# -- min-sr-s optimization -------------------------------------------------------


def test_min_sr_s_scalar_exact():
    t = collocation_method(NodeFamily("radau", 1))
    result = min_sr_s_eed(t)
    assert result.spectral_radius < 1e-8
    assert abs(float(result.eed.matrix[0][0]) - 1.0) < 1e-6


def test_min_sr_s_beats_min_sr_ns(radau2):
    ns = make_eed("min-sr-ns", radau2.c)
    a, _, _ = radau2.as_float()
    radius_ns = float(
        np.max(np.abs(np.linalg.eigvals(np.eye(2) - np.linalg.solve(ns.as_float(), a))))
    )
    result = min_sr_s_eed(radau2)
    assert result.spectral_radius < radius_ns - 1e-3


def test_min_sr_s_descent_from_perturbed_optimum(radau3):
    best = min_sr_s_eed(radau3)
    perturbed = EedMatrix(
        "custom",
        tuple(
            tuple(v * mpfr("1.05") if i == j else mpfr(0) for j, v in enumerate(row))
            for i, row in enumerate(best.eed.matrix)
        ),
    )
    a, _, _ = radau3.as_float()
    radius_at_guess = float(
        np.max(np.abs(np.linalg.eigvals(np.eye(3) - np.linalg.solve(perturbed.as_float(), a))))
    )
    again = min_sr_s_eed(radau3, initial=perturbed)
    assert again.spectral_radius <= radius_at_guess + 1e-12


def test_min_sr_flex_invertible_for_radau_and_gauss():
    for family in ("radau", "gauss"):
        t = collocation_method(NodeFamily(family, 4))
        a, _, _ = t.as_float()
        for k in range(1, 5):
            eed = make_eed("min-sr-flex", t.c, k=k)
            m = np.eye(4) - np.linalg.solve(eed.as_float(), a)
            assert np.all(np.isfinite(m))


# -- serialization ---------------------------------------------------------------


def test_tableau_json_round_trip(radau3):
    text = tableau_to_json(radau3)
    payload = json.loads(text)
    assert set(payload) == {"c", "A", "b"}
    back = tableau_from_json(text, precision=radau3.precision)
    with mp.working_precision(radau3.precision):
        for i in range(3):
            assert abs(back.c[i] - radau3.c[i]) < mpfr(10) ** -70
            for j in range(3):
                assert abs(back.a[i][j] - radau3.a[i][j]) < mpfr(10) ** -70


def test_eed_json_round_trip(radau2):
    e = make_eed("jumper", radau2.c, k=2)
    back = eed_from_json(eed_to_json(e), precision=radau2.precision)
    with mp.working_precision(radau2.precision):
        assert abs(back.matrix[1][1] - e.matrix[1][1]) < mpfr(10) ** -70
