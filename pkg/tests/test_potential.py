import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amoebalab.generalized import affine_fit
from amoebalab.geometry import Grid
from amoebalab.potential import (CurrentError, PotentialRecovery, _ls_integral, convex_envelope,
                                 midpoint_convexity_violation, mollifier, potential_from_current,
                                 second_differences)
from amoebalab.superforms import SuperCurrent11

from conftest import line_ronkin_oracle

SQUARE = Grid((-1, 1, -1, 1), (60, 60))


def _up_to_affine(R, target, grid):
    X = grid.centers().reshape(-1, 2)
    d = (R - target).ravel()
    A = np.column_stack([X, np.ones(len(X))])
    coef, *_ = np.linalg.lstsq(A, d, rcond=None)
    return d - A @ coef


def test_mollifier_is_a_unit_mass_radial_bump():
    k = mollifier(3.0, 2)
    assert k.shape == (7, 7)
    assert k.sum() == pytest.approx(1.0)
    assert np.array_equal(k, k.T) and np.array_equal(k, k[::-1])
    assert k[0].sum() == 0.0  # radius 3 cells: the outer ring is outside the support


def test_identity_density_gives_the_quadratic():
    S = SuperCurrent11.uniform(SQUARE, np.eye(2))
    R = potential_from_current(S, eps=3)
    x = SQUARE.centers()
    res = _up_to_affine(R.values, 0.5 * np.sum(x ** 2, axis=-1), SQUARE)
    assert np.sqrt(np.mean(res ** 2)) <= 1e-2
    assert R.meta["midpoint_convex"] and R.meta["reconstruction_l1_rel"] <= 0.05
    assert R.meta["path_residual_rel"] <= 1e-6
    c = tuple(n // 2 for n in SQUARE.shape)
    assert R.values[c] == 0.0


def test_general_constant_density_gives_its_quadratic_form():
    A = np.array([[2.0, 0.7], [0.7, 1.0]])
    S = SuperCurrent11.uniform(SQUARE, A)
    for integration in ("path", "least_squares"):
        R = potential_from_current(S, eps=3, integration=integration)
        x = SQUARE.centers()
        want = 0.5 * np.einsum("...i,ij,...j->...", x, A, x)
        res = _up_to_affine(R.values, want, SQUARE)
        assert np.sqrt(np.mean(res ** 2)) <= 1e-2


def test_zero_current_gives_zero():
    R = potential_from_current(SuperCurrent11(SQUARE, np.zeros((2, 2) + SQUARE.shape)), eps=3)
    assert np.all(R.values == 0.0)


def test_current_checks():
    asym = np.zeros((2, 2) + SQUARE.shape)
    asym[0, 1] = 1.0
    with pytest.raises(CurrentError, match="symmetric"):
        potential_from_current(SuperCurrent11(SQUARE, asym), eps=3)
    neg = SuperCurrent11.uniform(SQUARE, np.diag([1.0, -1.0]))
    with pytest.raises(CurrentError, match="negative"):
        potential_from_current(neg, eps=3)
    # mu_11 varying in x2 with mu_12 = 0 is not closed
    x = SQUARE.centers()
    masses = np.zeros((2, 2) + SQUARE.shape)
    masses[0, 0] = (1.0 + x[..., 1]) * SQUARE.cell_area
    masses[1, 1] = SQUARE.cell_area
    with pytest.raises(CurrentError, match="closed"):
        potential_from_current(SuperCurrent11(SQUARE, masses), eps=3)
    R = potential_from_current(SuperCurrent11(SQUARE, masses), eps=3, check=False)
    assert not R.meta["closed"]
    with pytest.raises(ValueError):
        potential_from_current(SuperCurrent11.uniform(SQUARE, np.eye(2)), eps=1.5)


def test_hessian_of_a_smooth_convex_function_is_recovered():
    # R = log(e^x1 + e^x2 + 1): its Hessian is a closed symmetric positive current
    g = Grid((-3, 3, -3, 3), (90, 90))
    x = g.centers()
    e = np.stack([np.exp(x[..., 0]), np.exp(x[..., 1]), np.ones(x.shape[:-1])], axis=-1)
    p = e / e.sum(axis=-1, keepdims=True)
    H = np.empty((2, 2) + g.shape)
    for j in range(2):
        for k in range(2):
            H[j, k] = (j == k) * p[..., j] - p[..., j] * p[..., k]
    S = SuperCurrent11(g, H * g.cell_area)
    R = potential_from_current(S, eps=2, closed_tol=1e-2)
    want = np.log(e.sum(axis=-1))
    res = _up_to_affine(R.values, want, g)
    assert np.max(np.abs(res)) <= 2e-2
    assert R.meta["reconstruction_l1_rel"] <= 0.05
    assert R.meta["convexity_violation"] <= 1e-9
    # the projection only removes discretization-level wrinkles
    assert R.meta["envelope_max_change"] <= 1e-3
    raw = potential_from_current(S, eps=2, closed_tol=1e-2, envelope=False)
    assert raw.meta["convexity_violation"] == pytest.approx(R.meta["convexity_violation_raw"])


def test_ls_integral_of_an_exact_gradient():
    g = Grid((0, 1, 0, 2), (40, 50))
    x = g.centers()
    f = np.sin(x[..., 0]) * x[..., 1] + x[..., 1] ** 2
    g1 = np.cos(x[..., 0]) * x[..., 1]
    g2 = np.sin(x[..., 0]) + 2 * x[..., 1]
    F = _ls_integral([g1, g2], g.spacing)
    res = (F - F.mean()) - (f - f.mean())
    assert np.max(np.abs(res)) <= 5e-3


def test_second_differences_of_a_quadratic():
    g = Grid((0, 1, 0, 1), (20, 20))
    x = g.centers()
    R = 1.5 * x[..., 0] ** 2 + 0.4 * x[..., 0] * x[..., 1] + x[..., 1] ** 2
    H = second_differences(R, g.spacing)
    assert np.allclose(H[0, 0], 3.0) and np.allclose(H[1, 1], 2.0)
    assert np.allclose(H[0, 1], 0.4) and np.allclose(H[1, 0], 0.4)


# -- convex envelope -----------------------------------------------------------

def test_envelope_of_convex_and_affine_arrays_is_identity():
    i, j = np.meshgrid(np.arange(12.0), np.arange(9.0), indexing="ij")
    convex = (i - 4.3) ** 2 + 0.5 * (j - 2) ** 2 + 0.1 * i * j
    assert np.max(np.abs(convex_envelope(convex) - convex)) <= 1e-9
    affine = 2 * i - j + 3
    assert np.array_equal(convex_envelope(affine), affine)


def test_envelope_removes_a_bump():
    i, j = np.meshgrid(np.arange(15.0), np.arange(15.0), indexing="ij")
    base = 0.1 * ((i - 7) ** 2 + (j - 7) ** 2)
    bumped = base.copy()
    bumped[7, 7] += 5.0
    # without the centre, the lowest chord through it joins the four axis neighbours (value 0.1)
    want = base.copy()
    want[7, 7] = 0.1
    assert np.max(np.abs(convex_envelope(bumped) - want)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 10), st.integers(3, 10)), elements=st.floats(-5, 5)))
def test_envelope_is_a_convex_minorant_and_idempotent(R):
    E = convex_envelope(R)
    assert np.all(E <= R + 1e-9)
    assert midpoint_convexity_violation(E) <= 1e-9 * max(1.0, np.max(np.abs(R)))
    assert np.max(np.abs(convex_envelope(E) - E)) <= 1e-9 * max(1.0, np.max(np.abs(R)))


# -- estimator and the line pushforward ----------------------------------------

def test_estimator_api():
    est = PotentialRecovery(eps=3).fit(SuperCurrent11.uniform(SQUARE, np.eye(2)))
    assert est.get_params() == {"eps": 3, "closed_tol": 1e-6, "check": True}
    v = est.predict([[0.5, -0.25], [0.0, 0.0]])
    assert v.shape == (2,)
    grad = est.gradient()
    assert grad.shape == (2,) + SQUARE.shape
    assert "reconstruction_l1_rel" in est.report_


def test_line_pushforward_matches_ronkin_up_to_affine(ms1, ms1_fit):
    # the marked sphere ({0, 1}, identity residues) is the line z1 - z2 - 1 = 0 shifted by
    # b = -offset; z2 -> -z2 is a torus rotation, so its Ronkin function is that of 1 + z1 + z2
    b = -np.asarray(ms1.offset)
    P = np.array([(u, v) for u in np.linspace(-3, 3, 5) for v in np.linspace(-3, 3, 5)])
    got = ms1_fit.ronkin(P)
    want = np.array([line_ronkin_oracle(p - b) for p in P])
    _, _, dev = affine_fit(P, got - want)
    assert dev <= 5e-2
    meta = ms1_fit.potential_.meta
    assert meta["reconstruction_l1_rel"] <= 0.05
    assert meta["convexity_violation"] <= 1e-9
