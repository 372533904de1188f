import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amoebalab.generalized import (GeneralizedAmoeba, affine_fit, asymptotic_fan, build_marked_sphere,
                                   hessian_pushforward, jacobian_rank, log_map, ma_total_mass_generalized,
                                   newton_polytope_generalized, nondegeneracy, order_map_generalized,
                                   properness_bounds, rasterize_generalized, ronkin_generalized,
                                   verify_fan_limit, verify_recession_theorem)
from amoebalab.geometry import Cone, cone_mismatch_deg, flood_components
from amoebalab.laurent import support_polytope
from amoebalab.superforms import GridField, is_positive, is_symmetric


def fd_jacobian_rank(MS, z, h=1e-6):
    """Numerical rank of the real 2 x 2 Jacobian of the Log map by central differences."""
    cols = []
    for d in (h, 1j * h):
        cols.append((log_map(MS, z + d) - log_map(MS, z - d)) / (2 * h))
    sv = np.linalg.svd(np.column_stack(cols), compute_uv=False)
    return int(np.sum(sv > 1e-6 * max(1.0, sv[0]))), sv


# -- marked spheres ------------------------------------------------------------

def test_build_examples(ms1):
    assert np.array_equal(ms1.residue_at_infinity, [-1.0, -1.0])
    assert np.array_equal(asymptotic_fan(ms1).rays[-1], [1.0, 1.0])
    zero = build_marked_sphere([0], [[0], [0]])
    assert zero.is_degenerate
    with pytest.raises(ValueError, match="coincide"):
        build_marked_sphere([0, 0], [[1, 0], [0, 1]])


def test_build_rejects_bad_input():
    with pytest.raises(ValueError, match="real"):
        build_marked_sphere([0, 1], [[1j, 0], [0, 1]])
    with pytest.raises(ValueError, match="base point"):
        build_marked_sphere([0, 1], [[1, 0], [0, 1]], base_point=1.0)
    with pytest.raises(ValueError, match="columns"):
        build_marked_sphere([0, 1], [[1, 0, 0], [0, 1, 0]])
    assert build_marked_sphere([-1, 1], [[1, 0], [0, 1]]).base_point == 2.0


# -- Log map -------------------------------------------------------------------

def test_log_map_examples(ms1):
    assert np.allclose(log_map(ms1, -1), [0, 0], atol=1e-15)
    assert np.allclose(log_map(ms1, 2), [np.log(2), -np.log(2)])
    # a base point with |z0| = |z0 - 1| = 1 makes both constants vanish
    ms = build_marked_sphere([0, 1], [[1, 0], [0, 1]], np.exp(1j * np.pi / 3))
    assert np.allclose(log_map(ms, 2), [np.log(2), 0.0], atol=1e-15)
    zero_row = build_marked_sphere([0, 1, 2j], [[1, -2, 0.5], [0, 0, 0]])
    z = np.random.default_rng(0).normal(size=20) * 3 + 1j
    assert np.all(log_map(zero_row, z)[:, 1] == 0.0)
    with pytest.raises(ValueError):
        log_map(ms1, 1.0)


def test_log_map_matches_log_of_the_curve(ms1):
    # the image of z is Log(z, z - 1) minus the base-point constants
    z = np.array([0.3 + 2j, -4 + 0.1j, 7.5, 1 - 1e-3j])
    want = np.column_stack([np.log(np.abs(z)), np.log(np.abs(z - 1))]) - [0.0, np.log(2)]
    assert np.allclose(log_map(ms1, z), want, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.complex_numbers(max_magnitude=5), st.complex_numbers(max_magnitude=5))
def test_base_point_shift_is_one_constant(z0, z1):
    pts = [0, 1, 2j]
    res = [[1, -0.5, 2], [0.3, 1, -1]]
    for b in (z0, z1):
        if min(abs(b - p) for p in pts) < 1e-3:
            return
    a, b = build_marked_sphere(pts, res, z0), build_marked_sphere(pts, res, z1)
    z = np.array([3 + 1j, -2 - 2j, 0.5 + 0.5j, 10j])
    diff = log_map(a, z) - log_map(b, z)
    assert np.allclose(diff, diff[0], atol=1e-12)


# -- critical ranks ------------------------------------------------------------

def test_rank_examples(ms1):
    r = jacobian_rank(ms1, 1j)
    assert (r.rank, r.dim_L, r.dim_L_cap_conj) == (2, 1, 0)
    assert fd_jacobian_rank(ms1, 1j)[0] == 2
    r = jacobian_rank(ms1, 0.5)
    assert (r.rank, r.dim_L_cap_conj) == (1, 1)
    rank, sv = fd_jacobian_rank(ms1, 0.5)
    assert rank == 1 and sv[1] < 1e-8
    zero = build_marked_sphere([0], [[0], [0]])
    assert jacobian_rank(zero, 1 + 1j).rank == 0


def test_rank_formula_matches_finite_differences():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(4):
        s = int(rng.integers(2, 5))
        pts = rng.normal(size=s) + 1j * rng.normal(size=s)
        MS = build_marked_sphere(pts, rng.normal(size=(2, s)), base_point=10.0)
        for _ in range(40):
            z = complex(rng.normal() * 2, rng.normal() * 2)
            if np.min(np.abs(z - pts)) < 1e-2:
                continue
            assert jacobian_rank(MS, z).rank == fd_jacobian_rank(MS, z)[0]
            checked += 1
    assert checked >= 100


def test_rank_drops_on_the_real_locus(ms1):
    # real points away from the marked ones: phi is real so L meets conj L
    for x in np.linspace(-3, 4, 20):
        if min(abs(x), abs(x - 1)) < 0.05:
            continue
        assert jacobian_rank(ms1, x).rank == 1
        assert fd_jacobian_rank(ms1, x)[0] == 1


# -- fan and nondegeneracy -----------------------------------------------------

def test_fan_examples(ms1):
    assert asymptotic_fan(ms1).rays.tolist() == [[-1, 0], [0, -1], [1, 1]]
    one = asymptotic_fan(build_marked_sphere([0], [[1], [1]]))
    assert one.rays.tolist() == [[-1, -1], [1, 1]]
    zero = asymptotic_fan(build_marked_sphere([0, 1], [[0, 0], [0, 0]]))
    assert zero.zero.all() and len(zero.rays) == 3


def test_fan_rays_are_the_normal_fan_of_the_line(ms1):
    N = support_polytope(__import__("amoebalab").parse_laurent("z1 - z2 - 1", 2))
    rays = asymptotic_fan(ms1).rays
    edge_normals = N.normals
    for r in rays:
        u = r / np.linalg.norm(r)
        assert np.min(np.linalg.norm(edge_normals - u, axis=1)) < 1e-12


def test_nondegeneracy_examples(ms1):
    r = nondegeneracy(ms1)
    assert r.nondegenerate and r.fan_dim == 1 and r.criteria_agree
    r = nondegeneracy(build_marked_sphere([0, 1], [[0, 0], [0, 0]]))
    assert not r.nondegenerate and r.fan_dim == 0
    assert nondegeneracy(build_marked_sphere([0, 1], [[1, -1], [0, 0]])).nondegenerate


# -- fan limit -----------------------------------------------------------------

@pytest.fixture(scope="module")
def fan_report(ms1):
    return verify_fan_limit(ms1, [1, 2, 4, 8], (-6, 6, -6, 6))


def test_fan_limit_decays(fan_report):
    d = fan_report.distances
    assert d[-1] < d[0] / 3
    assert fan_report.nonincreasing and fan_report.passed
    assert fan_report.max_ratio <= 1.1


def test_fan_limit_is_deterministic(ms1, fan_report):
    again = verify_fan_limit(ms1, [1], (-6, 6, -6, 6))
    assert again.distances[0] == fan_report.distances[0]


def test_fan_limit_for_a_single_line():
    # one point with residues (1, 1): the amoeba is the diagonal itself, so it sits on its fan
    MS = build_marked_sphere([0], [[1], [1]])
    rep = verify_fan_limit(MS, [1, 2, 4], (-6, 6, -6, 6))
    assert rep.passed and max(rep.distances) <= rep.resolution


def test_fan_limit_rejects_bad_t(ms1):
    with pytest.raises(ValueError):
        verify_fan_limit(ms1, [2, 1], (-6, 6, -6, 6))


# -- raster and properness -----------------------------------------------------

def test_raster_matches_the_curve_image(ms1):
    R = rasterize_generalized(ms1, (-4, 4, -4, 4), (80, 80))
    assert flood_components(R.mask, R.grid).n_components == 3
    x = np.linspace(-4, 4, 400)
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    z = np.exp(x[:, None] + 1j * t[None, :]).ravel()
    z = z[np.abs(z - 1) > 1e-6]
    pts = log_map(ms1, z)
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(R.grid.center_of(np.argwhere(R.mask)))
    assert d.max() <= 3 * R.grid.spacing.max()


def test_properness_bounds_are_finite_and_stable(ms1):
    a = properness_bounds(ms1, (-3, 3, -3, 3), 0.05)
    b = properness_bounds(ms1, (-3, 3, -3, 3), 0.02)
    for r in (a, b):
        assert r["samples_in_box"] > 0
        assert 0 < r["min_pole_distance"] and np.isfinite(r["max_abs_z"])
    # for x in [-3, 3]^2, |z| <= e^3 and |z - p| >= e^-3 bound every preimage
    assert b["min_pole_distance"] >= np.exp(-3) * 0.99 and b["max_abs_z"] <= np.exp(3) * 1.01
    assert b["min_pole_distance"] == pytest.approx(a["min_pole_distance"], rel=0.1)
    assert b["max_abs_z"] == pytest.approx(a["max_abs_z"], rel=0.1)


# -- Hessian pushforward -------------------------------------------------------

def test_hessian_of_ms1_is_symmetric_and_positive(ms1_fit):
    S = ms1_fit.hessian_.current
    assert is_symmetric(S, 1e-2) and is_positive(S, 64)
    assert ms1_fit.potential_.meta["curl_residual"] <= 0.05


def test_zero_row_kills_the_matching_masses():
    MS = build_marked_sphere([0, 1], [[1, -0.5], [0, 0]])
    H = hessian_pushforward(MS, (-4, 4, -4, 4), (40, 40), samples=200_000, seed=0)
    m = H.current.masses
    # Omega_1 is the second differential, which vanishes
    assert np.all(m[0, 0] == 0) and np.all(m[0, 1] == 0) and np.all(m[1, 0] == 0)
    assert m[1, 1].sum() > 0


def test_doubling_samples_changes_the_mass_by_less_than_the_sampling_error(ms1):
    n = 1_000_000
    a = hessian_pushforward(ms1, (-6, 6, -6, 6), (50, 50), n, seed=0)
    b = hessian_pushforward(ms1, (-6, 6, -6, 6), (50, 50), 2 * n, seed=0)
    A, B = a.current.masses, b.current.masses
    assert abs(A.sum() - B.sum()) / B.sum() < 2 / np.sqrt(n)
    # cell by cell the change stays within the split-half error estimate
    assert np.abs(A - B).sum() / np.abs(B).sum() <= 2 * a.meta["mc_rel_error"]


def test_pushforward_is_deterministic(ms1):
    a = hessian_pushforward(ms1, (-4, 4, -4, 4), (30, 30), 100_000, seed=5)
    b = hessian_pushforward(ms1, (-4, 4, -4, 4), (30, 30), 100_000, seed=5)
    assert np.array_equal(a.current.masses, b.current.masses)


# -- Ronkin, orders, polytope, mass --------------------------------------------

def test_ms1_orders_polytope_and_mass(ms1_fit):
    o = ms1_fit.orders_
    assert len(o.component_ids) == 3 and o.injective
    # the orders form a unit right triangle up to translation
    N = ms1_fit.newton_polytope_
    assert N.area == pytest.approx(0.5, abs=0.025)
    ref = newton_polytope_generalized([[0, 0], [1, 0], [0, 1]])
    shifted = N.vertices - N.vertices.mean(axis=0)
    target = ref.vertices - ref.vertices.mean(axis=0)
    # match each vertex to the nearest target vertex; edges may be mirrored, so compare both
    d = min(np.max(np.min(np.linalg.norm(shifted[:, None] - s * target[None], axis=2), axis=1))
            for s in (np.array([1, 1]), np.array([1, -1]), np.array([-1, 1]), np.array([-1, -1])))
    assert d <= 0.05
    assert abs(ms1_fit.ma_["mass"] - 0.5) <= 0.05


def test_ms1_invariants(ms1_fit):
    checks = ms1_fit.check_invariants()
    assert all(c["pass"] for c in checks.values()), {k: c["pass"] for k, c in checks.items()}


def test_ms1_ronkin_is_affine_on_components(ms1_fit):
    from amoebalab.generalized import deep_cells

    R = ms1_fit.potential_
    noise = ms1_fit.hessian_.meta["mc_rel_error"]
    for cid in ms1_fit.components_.ids():
        cells = deep_cells(ms1_fit.components_, cid, ms1_fit.eps + 2)
        x = R.grid.center_of(cells)
        _, _, res = affine_fit(x, R.values[cells[:, 0], cells[:, 1]])
        assert res <= 3 * noise * np.ptp(R.values)


def test_order_map_is_gauge_covariant(ms1_fit):
    R = ms1_fit.potential_
    x = R.grid.centers()
    v = np.array([0.3, -1.1])
    shifted = GridField(R.grid, R.values + x @ v + 2.0)
    a = order_map_generalized(R, ms1_fit.components_, ms1_fit.eps + 2)
    b = order_map_generalized(shifted, ms1_fit.components_, ms1_fit.eps + 2)
    assert np.allclose(b.orders - a.orders, v, atol=1e-10)


def test_newton_polytope_degenerate_cases():
    P = newton_polytope_generalized([[0.2, 0.3]])
    assert P.dim == 0 and P.degenerate
    S = newton_polytope_generalized([[0, 0], [1, 1], [2, 2]])
    assert S.dim == 1 and S.degenerate
    with pytest.raises(ValueError):
        newton_polytope_generalized(np.zeros((0, 2)))


def test_recession_checker_on_the_classical_line(line_amoeba):
    N = support_polytope(line_amoeba.polynomial_)
    rep = verify_recession_theorem(line_amoeba.components_, N, line_amoeba.orders_.raw)
    assert rep["pass"]


def test_degenerate_sphere_end_to_end():
    MS = build_marked_sphere([0, 1], [[0, 0], [0, 0]])
    G = GeneralizedAmoeba(box=(-3, 3, -3, 3), grid=40, samples=20_000, seed=0).fit(MS)
    assert G.potential_.meta["degenerate"] and not np.any(G.potential_.values)
    assert G.components_.n_components == 1
    assert G.orders_.orders.tolist() == [[0.0, 0.0]]
    assert G.ma_["mass"] == 0.0
    rep = verify_recession_theorem(G.components_, G.newton_polytope_, G.orders_.orders)
    assert rep["pass"]
    assert cone_mismatch_deg(Cone.full(), Cone.full()) == 0.0


def test_ma_of_a_flat_field_is_zero():
    from amoebalab.geometry import Grid

    g = Grid((0, 1, 0, 1), (20, 20))
    assert ma_total_mass_generalized(GridField(g, np.zeros(g.shape)), np.zeros((1, 2)))["mass"] == 0.0


# -- scaling -------------------------------------------------------------------

@pytest.fixture(scope="module")
def ms2_fit():
    MS = build_marked_sphere([0, 1], [[2, 0], [0, 2]], -1)
    return GeneralizedAmoeba(box=(-6, 6, -6, 6), grid=200, samples=2_000_000, seed=0).fit(MS)


def test_doubling_residues_quadruples_the_mass(ms1_fit, ms2_fit):
    assert ms2_fit.ma_["mass"] == pytest.approx(4 * ms1_fit.ma_["mass"], rel=0.05)
    assert ms2_fit.newton_polytope_.area == pytest.approx(2.0, rel=0.05)


def test_scaling_law_of_the_ronkin_function(ms1_fit, ms2_fit):
    # Log scales by 2 and the Hessian current by 4 per unit of image area, so R_2(x) = 4 R(x / 2)
    P = np.array([(u, v) for u in np.linspace(-3, 3, 5) for v in np.linspace(-3, 3, 5)])
    r2 = ms2_fit.ronkin(P)
    _, _, dev = affine_fit(P, r2 - 4 * ms1_fit.ronkin(P / 2))
    assert dev <= 0.05 * np.ptp(r2)
    # the linear guess 2 R(x / 2) is clearly rejected
    _, _, wrong = affine_fit(P, r2 - 2 * ms1_fit.ronkin(P / 2))
    assert wrong > 10 * dev


def test_ronkin_generalized_of_degenerate_sphere_is_flat():
    R = ronkin_generalized(build_marked_sphere([0], [[0], [0]]), (-2, 2, -2, 2), (20, 20), samples=10_000)
    assert R.meta["degenerate"] and not np.any(R.values)


def test_estimator_predict(ms1_fit):
    lab = ms1_fit.predict([[-5, -5], [5, -1], [-1, 5], [50, 50]])
    assert lab[3] == -1 and len(set(lab[:3])) == 3 and min(lab[:3]) > 0
    assert ms1_fit.get_params()["seed"] == 0
