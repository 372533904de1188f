import cmath

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from amoebalab.laurent import (DegenerateFiberError, LaurentPolynomial, ParseError, aberth_roots, eval_laurent,
                               fiber_roots, parse_laurent, support_polytope, z2_degree_span)


# -- parsing -------------------------------------------------------------------

def test_parse_line():
    F = parse_laurent("1 + z1 + z2", 2)
    assert F.terms == {(0, 0): 1, (1, 0): 1, (0, 1): 1}


def test_parse_cancellation_is_an_error():
    with pytest.raises(ParseError, match="empty"):
        parse_laurent("z1^-1*z2 - z1^-1*z2", 2)


def test_parse_single_term_one_variable():
    assert parse_laurent("2*z1^3", 1).terms == {(3,): 2}


def test_parse_combines_like_terms_and_complex_coefficients():
    F = parse_laurent("z1*z2 + 2*z2*z1 - 3 + (1+2j)*z1^-2", 2)
    assert F.terms == {(1, 1): 3, (0, 0): -3, (-2, 0): 1 + 2j}


@pytest.mark.parametrize("text", ["1 + z1^0.5", "z3", "1 +", "z1^", "(z1)", "1 ** z1", ""])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_laurent(text, 2)


def test_json_round_trip():
    F = parse_laurent("1 - 2j*z1^-1*z2^2 + 0.5*z2", 2)
    assert LaurentPolynomial.from_json(F.to_json()).terms == F.terms


# -- evaluation ----------------------------------------------------------------

def test_eval_examples():
    F = parse_laurent("1 + z1 + z2", 2)
    assert eval_laurent(F, [1, 1]) == pytest.approx(3)
    assert eval_laurent(parse_laurent("z1^-1", 1), [2]) == pytest.approx(0.5)
    w = cmath.exp(1j * cmath.pi / 3)
    assert abs(eval_laurent(F, [-1, w]) - w) < 1e-15


def test_eval_rejects_zero_coordinate():
    with pytest.raises(ZeroDivisionError):
        eval_laurent(parse_laurent("1 + z1", 2), [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=6),
       st.floats(0.3, 3), st.floats(0, 6.3), st.floats(0.3, 3), st.floats(0, 6.3))
def test_eval_matches_direct_arithmetic(terms, r1, t1, r2, t2):
    coeffs = {}
    for a, b, re, im in terms:
        coeffs[(a, b)] = coeffs.get((a, b), 0) + complex(re, im)
    if all(c == 0 for c in coeffs.values()):
        return
    F = LaurentPolynomial(coeffs, 2)
    z1, z2 = r1 * cmath.exp(1j * t1), r2 * cmath.exp(1j * t2)
    direct = sum(c * z1 ** a * z2 ** b for (a, b), c in F.terms.items())
    scale = sum(abs(c) * abs(z1) ** a * abs(z2) ** b for (a, b), c in F.terms.items())
    assert abs(eval_laurent(F, [z1, z2]) - direct) <= 1e-12 * scale


# -- support polytope ----------------------------------------------------------

def test_support_triangle():
    P = support_polytope(parse_laurent("1 + z1 + z2", 2))
    assert sorted(map(tuple, P.vertices.tolist())) == [(0, 0), (0, 1), (1, 0)]
    assert P.area == pytest.approx(0.5)


def test_support_segment_drops_interior_point():
    P = support_polytope(parse_laurent("1 + z1 + z1^2", 1))
    assert sorted(P.vertices.ravel().tolist()) == [0, 2]


def test_support_square():
    P = support_polytope(parse_laurent("1 + z1 + z2 + z1*z2", 2))
    assert sorted(map(tuple, P.vertices.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert P.area == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.sets(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=3, max_size=10),
       st.complex_numbers(min_magnitude=0.1, max_magnitude=10), st.tuples(st.integers(-3, 3), st.integers(-3, 3)))
def test_support_scale_and_shift_invariance(exps, c, beta):
    F = LaurentPolynomial({e: 1 + k for k, e in enumerate(sorted(exps))}, 2)
    P = support_polytope(F)
    assert np.allclose(support_polytope(F * c).vertices, P.vertices)
    assert np.allclose(support_polytope(F.shifted(beta)).vertices, P.vertices + np.array(beta))


# -- fiber roots ---------------------------------------------------------------

def test_fiber_roots_linear():
    F = parse_laurent("1 + z1 + z2", 2)
    r = fiber_roots(F, 0.0, 0.0)
    assert len(r) == 1 and abs(r[0] + 2) < 1e-12


def test_fiber_root_at_zero_is_discarded():
    assert len(fiber_roots(parse_laurent("1 + z1 + z2", 2), 0.0, np.pi)) == 0


def test_fiber_roots_square_root():
    r = np.sort_complex(fiber_roots(parse_laurent("z2^2 - z1", 2), 0.0, 0.0))
    assert np.allclose(r, [-1, 1], atol=1e-12)


def test_fiber_without_z2_is_degenerate():
    with pytest.raises(DegenerateFiberError):
        fiber_roots(parse_laurent("1 + z1", 2), 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.complex_numbers(min_magnitude=0.05, max_magnitude=20), min_size=1, max_size=8))
def test_aberth_matches_known_roots(roots):
    # simple, separated roots: a k-fold root is only determined to ~eps^(1/k)
    for i, a in enumerate(roots):
        for b in roots[i + 1:]:
            assume(abs(a - b) >= 0.05 * max(1.0, abs(a), abs(b)))
    coeffs = np.poly(roots)[::-1]  # low -> high
    got = aberth_roots(coeffs)
    # every true root is matched by a computed one (multiplicity-aware via a greedy assignment)
    left = list(got)
    for r in roots:
        k = int(np.argmin([abs(g - r) for g in left]))
        assert abs(left.pop(k) - r) <= 1e-6 * max(1.0, abs(r))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 3), st.floats(-3, 3), st.floats(-3, 3)),
                min_size=2, max_size=6),
       st.floats(-2, 2), st.floats(0, 6.28))
def test_fiber_roots_residual_and_count(terms, x1, th1):
    coeffs = {}
    for a, b, re, im in terms:
        if abs(complex(re, im)) > 1e-3:
            coeffs[(a, b)] = coeffs.get((a, b), 0) + complex(re, im)
    coeffs = {e: c for e, c in coeffs.items() if abs(c) > 1e-3}
    if len({e[1] for e in coeffs}) < 2:
        return
    F = LaurentPolynomial(coeffs, 2)
    r = fiber_roots(F, x1, th1)
    z1 = np.exp(complex(x1, th1))
    # count: the z2-degree span minus roots at zero, generically equal to the span
    assert len(r) <= z2_degree_span(F)
    for z2 in r:
        scale = sum(abs(c) * abs(z1) ** a * abs(z2) ** b for (a, b), c in F.terms.items())
        assert abs(eval_laurent(F, [z1, z2])) <= 1e-9 * scale
