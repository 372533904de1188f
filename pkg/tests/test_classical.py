import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amoebalab.classical import (ClassicalAmoeba, QuadratureError, ma_total_mass_classical, rasterize_amoeba,
                                 ronkin_gradient, ronkin_value, ronkin_value_jensen)
from amoebalab.geometry import Cone, cone_mismatch_deg, recession_cone_estimate
from amoebalab.laurent import parse_laurent

from conftest import line_ronkin_oracle

LINE = parse_laurent("1 + z1 + z2", 2)


# -- Ronkin function -----------------------------------------------------------

def test_ronkin_examples():
    assert abs(ronkin_value(LINE, (-10, -10))) <= 1e-6
    assert abs(ronkin_value(LINE, (10, 0)) - 10) <= 1e-6
    assert ronkin_value(parse_laurent("-3.5", 2), (1.2, -4)) == pytest.approx(np.log(3.5), abs=1e-15)


@pytest.mark.parametrize("x", [(0.0, 0.0), (0.3, -1.2), (-2.0, 1.5), (4.0, 4.5), (-0.5, -0.5), (1.0, 0.0)])
def test_ronkin_matches_the_jensen_oracle(x):
    # x is on the line amoeba iff 1, e^x1, e^x2 satisfy the triangle inequality; off it the
    # tensor rule converges spectrally, on it the one-variable fallback takes over
    a = sorted([1.0, np.exp(x[0]), np.exp(x[1])])
    tol = 1e-7 if a[2] <= a[0] + a[1] else 1e-8
    assert abs(ronkin_value(LINE, x) - line_ronkin_oracle(x)) <= tol


def test_ronkin_just_off_the_amoeba():
    # 1 - e^x1 - e^x2 = 1.8e-4: the fiber nearly touches the curve and the tensor rule
    # stalls at its node cap, but R = 0 exactly because the constant term dominates
    x = (-2.27014028, -0.10923609)
    assert 0 < 1 - np.exp(x[0]) - np.exp(x[1]) < 2e-4
    assert abs(ronkin_value(LINE, x)) <= 1e-12
    assert abs(line_ronkin_oracle(x)) <= 1e-12


@pytest.mark.parametrize("text, x, want", [
    ("1 + z1", (0.5, 0.0), 0.5),  # max(0, x1)
    ("1 + z1", (-0.7, 3.0), 0.0),
    ("z2 - 2", (1.0, 0.2), np.log(2.0)),
    ("3*z1^2*z2", (0.4, -1.0), np.log(3.0) + 0.8 - 1.0),
])
def test_jensen_rule_on_one_variable_examples(text, x, want):
    assert ronkin_value_jensen(parse_laurent(text, 2), x) == pytest.approx(want, abs=1e-12)


def test_jensen_rule_matches_the_tensor_rule_off_the_amoeba():
    G = parse_laurent("1 + z1 + z2 + z1*z2 + 3*z1^2*z2^-1", 2)
    for x in [(0.3, 0.2), (2.0, -1.0), (-3.0, -3.0)]:
        assert ronkin_value_jensen(G, x) == pytest.approx(ronkin_value(G, x, nq_max=4096), abs=1e-8)
    big = parse_laurent("1 + z1^3*z2 + 2*z2^-2", 2)
    assert ronkin_value_jensen(big, (300.0, 200.0)) == pytest.approx(1100.0, abs=1e-6)


def test_ronkin_survives_large_arguments():
    F = parse_laurent("1 + z1^3*z2 + 2*z2^-2", 2)
    v = ronkin_value(F, (300.0, 200.0))
    assert np.isfinite(v) and v == pytest.approx(3 * 300 + 200, abs=1e-6)


def test_ronkin_gradient_examples():
    assert np.allclose(ronkin_gradient(LINE, (-10, -10)), (0, 0), atol=1e-6)
    assert np.allclose(ronkin_gradient(LINE, (10, 0)), (1, 0), atol=1e-6)
    mono = parse_laurent("2*z1^3*z2^-2", 2)
    assert np.array_equal(ronkin_gradient(mono, (0.4, 7.0)), [3.0, -2.0])


def test_gradient_matches_the_derivative_of_the_oracle():
    for x in [(0.7, -1.4), (-1.0, 2.0), (2.5, 2.0)]:
        h = 1e-4
        fd = [(line_ronkin_oracle(np.add(x, d)) - line_ronkin_oracle(np.subtract(x, d))) / (2 * h)
              for d in ([h, 0], [0, h])]
        assert np.allclose(ronkin_gradient(LINE, x), fd, atol=1e-6)


def test_gradient_on_the_zero_set_raises():
    with pytest.raises(QuadratureError):
        ronkin_gradient(LINE, (np.log(2.0), 0.0), Nq=4, adaptive=False)  # 1 + (-2) + 1 = 0 hits a node


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.floats(-4, 4), st.floats(-4, 4)), st.tuples(st.floats(-4, 4), st.floats(-4, 4)),
       st.floats(0.01, 0.99))
def test_ronkin_is_convex(x, y, lam):
    x, y = np.array(x), np.array(y)
    mid = ronkin_value(LINE, lam * x + (1 - lam) * y)
    assert mid <= lam * ronkin_value(LINE, x) + (1 - lam) * ronkin_value(LINE, y) + 1e-7


# -- rasters -------------------------------------------------------------------

def test_line_raster_has_three_components(line_amoeba):
    assert line_amoeba.components_.n_components == 3
    assert line_amoeba.raster_.meta["fibers"] == 600


def test_vertical_line_raster():
    R = rasterize_amoeba(parse_laurent("z1 - 1", 2), (-3, 3, -3, 3), (60, 60), fibers=120, angles=32)
    cols = np.flatnonzero(R.mask.any(axis=1))
    # x1 = 0 sits on the border of cells 29 and 30, plus one cell of dilation on each side
    assert set(cols) <= {28, 29, 30, 31} and {29, 30} <= set(cols)
    assert R.mask[29].all() or R.mask[30].all()


def test_raster_without_the_second_variable():
    R = rasterize_amoeba(parse_laurent("1 + z1", 2), (-3, 3, -3, 3), (60, 60), fibers=120, angles=32)
    cols = np.flatnonzero(R.mask.any(axis=1))
    assert set(cols) <= {28, 29, 30, 31} and R.mask[cols].any(axis=0).all()


def test_monomial_raster_is_empty():
    R = rasterize_amoeba(parse_laurent("3*z1^2*z2", 2), (-3, 3, -3, 3), (40, 40))
    assert not R.mask.any() and R.meta["mode"] == "monomial"


def test_raster_points_lie_near_the_curve():
    # every occupied cell is within a few cells of some Log(z) with F(z) = 0
    R = rasterize_amoeba(LINE, (-4, 4, -4, 4), (80, 80), fibers=160, angles=64)
    x1 = np.linspace(-4, 4, 400)
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    z1 = np.exp(x1[:, None] + 1j * t[None, :]).ravel()
    pts = np.column_stack([np.log(np.abs(z1)), np.log(np.abs(1 + z1))])
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(R.grid.center_of(np.argwhere(R.mask)))
    assert d.max() <= 3 * R.grid.spacing.max()


# -- order map -----------------------------------------------------------------

def test_line_orders(line_amoeba):
    o = line_amoeba.orders_
    assert sorted(map(tuple, o.rounded.tolist())) == [(0, 0), (0, 1), (1, 0)]
    assert o.rounding_distance.max() < 1e-3 and o.injective and o.in_polytope


def test_orders_of_z1_plus_z2():
    A = ClassicalAmoeba(box=(-4, 4, -4, 4), grid=80, fibers=160, angles=32, ma_grid=9).fit("z1 + z2")
    assert A.components_.n_components == 2
    assert sorted(map(tuple, A.orders_.rounded.tolist())) == [(0, 1), (1, 0)]


def test_constant_has_one_component_of_order_zero():
    A = ClassicalAmoeba(box=(-2, 2, -2, 2), grid=20, ma_grid=5).fit("2.5")
    assert A.components_.n_components == 1
    assert A.orders_.rounded.tolist() == [[0, 0]]
    assert A.ma_mass_ == 0.0


def test_affine_on_components_with_matching_slopes(line_amoeba):
    rng = np.random.default_rng(0)
    C = line_amoeba.components_
    for i, cid in enumerate(line_amoeba.orders_.component_ids):
        cells = np.argwhere(C.labels == cid)
        # stay far from the amoeba: pick cells near the deepest one
        deep, _ = C.deepest_cell(cid)
        near = cells[np.linalg.norm(cells - deep, axis=1) <= 20]
        pts = C.grid.center_of(near[rng.choice(len(near), 5, replace=False)])
        vals = np.array([ronkin_value(LINE, p) for p in pts])
        A = np.column_stack([pts, np.ones(5)])
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        assert np.max(np.abs(vals - A @ coef)) <= 1e-6
        assert np.allclose(coef[:2], line_amoeba.orders_.raw[i], atol=1e-4)


# -- Monge-Ampere mass and recession -------------------------------------------

def test_ma_mass_of_the_line(line_amoeba):
    assert abs(line_amoeba.ma_mass_ - 0.5) <= 0.02


def test_ma_mass_of_the_square():
    assert abs(ma_total_mass_classical(parse_laurent("1 + z1 + z2 + z1*z2", 2), (-6, 6, -6, 6)) - 1.0) <= 0.03


def test_ma_mass_of_a_monomial():
    assert ma_total_mass_classical(parse_laurent("z1^2*z2^-1", 2), (-6, 6, -6, 6)) == 0.0


def test_recession_cones_of_the_line(line_amoeba):
    # normal cones of the unit triangle at its vertices, written down by hand
    want = {(0, 0): [[-1, 0], [0, -1]], (1, 0): [[0, -1], [1, 1]], (0, 1): [[-1, 0], [1, 1]]}
    for i, cid in enumerate(line_amoeba.orders_.component_ids):
        nu = tuple(line_amoeba.orders_.rounded[i])
        rec = recession_cone_estimate(line_amoeba.components_, cid)
        assert cone_mismatch_deg(rec, Cone(np.array(want[nu], dtype=float))) <= 2.0
    assert all(r["pass"] for r in line_amoeba.recession_report(tol_deg=2.0))


def test_check_invariants_on_the_line(line_amoeba):
    checks = line_amoeba.check_invariants()
    assert all(c["pass"] for c in checks.values()), {k: c["pass"] for k, c in checks.items()}
    assert checks["component_count_bounds"]["components"] == 3


def test_estimator_predict_and_params(line_amoeba):
    lab = line_amoeba.predict([[-5, -5], [5, -1], [-1, 5], [100, 100]])
    assert lab[0] > 0 and lab[1] > 0 and lab[2] > 0 and len(set(lab[:3])) == 3
    assert lab[3] == -1
    assert line_amoeba.get_params()["grid"] == 300
    assert np.allclose(line_amoeba.ronkin([[10, 0]]), [10.0], atol=1e-6)
