import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from qstfield import functionals as fn
from qstfield import propagators as pr
from qstfield.model import DomainError, Event, ModelParams, ParameterError, PlaneWaveConfig

P = ModelParams(1.0, 0.7)
POOL = [Event(0.4, (0.1, 0.0, 0.0)), Event(-0.3, (0.0, 0.5, 0.0)), Event(0.0, (0.0, 0.0, -0.4)),
        Event(1.1, (0.3, 0.3, 0.0))]
CFG = PlaneWaveConfig((0.6 - 0.2j, 0.3j), ((0.4, 0.1, -0.2, 0.3), (-0.5, 0.2, 0.0, 0.1)))
PLUS = pr.PropagatorKind.parse("wightman-plus")


def dplus(x, y, beta=None):
    kind = PLUS if beta is None else pr.PropagatorKind.parse("thermal", beta)
    return pr.eval(kind, P, x.t - y.t, 0.0, float(np.linalg.norm(np.subtract(x.x, y.x))))


@hs.composite
def monomials(draw, max_power=3):
    k = draw(hs.integers(1, 2))
    idx = draw(hs.lists(hs.integers(0, len(POOL) - 1), min_size=k, max_size=k, unique=True))
    powers = draw(hs.lists(hs.integers(1, max_power), min_size=k, max_size=k))
    coeff = complex(draw(hs.integers(-3, 3)) or 1, draw(hs.integers(-2, 2)))
    return fn.monomial([(POOL[i], p) for i, p in zip(idx, powers)], coeff)


@settings(max_examples=25, deadline=None)
@given(monomials(2), monomials(2), monomials(2))
def test_star_product_is_associative(a, b, c):
    lhs = fn.star_product(fn.star_product(a, b), c)
    rhs = fn.star_product(a, fn.star_product(b, c))
    assert lhs.structurally_equal(rhs, 1e-12)


@settings(max_examples=25, deadline=None)
@given(monomials(), monomials())
def test_involution_reverses_products(a, b):
    lhs = fn.involution(fn.star_product(a, b))
    rhs = fn.star_product(fn.involution(b), fn.involution(a))
    assert lhs.structurally_equal(rhs, 1e-12)
    assert fn.involution(fn.involution(a)) == a


@settings(max_examples=25, deadline=None)
@given(monomials(), monomials())
def test_time_ordered_product_is_commutative(a, b):
    assert fn.time_ordered_product(a, b).structurally_equal(fn.time_ordered_product(b, a), 1e-12)


@settings(max_examples=40, deadline=None)
@given(hs.lists(hs.integers(1, 4), min_size=1, max_size=3), hs.lists(hs.integers(1, 4), min_size=1, max_size=3))
def test_product_multiplicities_match_leg_enumeration(pa, pb):
    if sum(pa) + sum(pb) > 10:
        return
    assert fn.contraction_counts(pa, pb) == fn.brute_force_contraction_counts(pa, pb)


@settings(max_examples=25, deadline=None)
@given(monomials(), monomials())
def test_canonical_form_is_idempotent_and_merges(a, b):
    s = a + b
    assert fn.Functional.from_terms(s.terms) == s
    assert (a - a).is_zero
    assert (a + a).structurally_equal(a.scale(2), 1e-15)


@settings(max_examples=25, deadline=None)
@given(monomials(), monomials())
def test_json_round_trip(a, b):
    f = fn.star_product(a, b)
    again = fn.functional_from_json(json.loads(fn.dumps(f)))
    assert again == f


def test_phi2_star_phi2_pattern():
    x, y = POOL[0], POOL[1]
    prod = fn.star_product(fn.field_at(x, 2), fn.field_at(y, 2))
    coeffs = {sum(e.mult for e in t.edges): t.coefficient for t in prod.terms}
    assert coeffs == {0: 1, 1: 4, 2: 2}


def test_commutator_of_fields_is_i_pauli_jordan():
    x, y = POOL[0], POOL[1]
    val = fn.evaluate(fn.commutator(fn.field_at(x), fn.field_at(y)), CFG, P)
    r = float(np.linalg.norm(np.subtract(x.x, y.x)))
    pj = pr.eval(pr.PropagatorKind.parse("pauli-jordan"), P, x.t - y.t, 0.0, r)
    assert val == pytest.approx(1j * pj, abs=1e-15)


def test_classical_evaluation_of_atoms():
    x = POOL[2]
    val = fn.evaluate(fn.field_at(x, 3, 2.0), CFG, P)
    assert val == pytest.approx(2.0 * complex(CFG(x.z, np.array(x.x))) ** 3)


@pytest.mark.parametrize("beta", [None, 1.5])
def test_four_point_function_is_sum_over_pairings(beta):
    x = POOL
    prod = fn.field_at(x[0])
    for e in x[1:]:
        prod = fn.star_product(prod, fn.field_at(e))
    state = "vacuum" if beta is None else "thermal"
    val = fn.state_value(prod, P, state, beta)
    d = lambda i, j: dplus(x[i], x[j], beta)
    expected = d(0, 1) * d(2, 3) + d(0, 2) * d(1, 3) + d(0, 3) * d(1, 2)
    assert val == pytest.approx(expected, rel=1e-8)


def test_thermal_normal_ordered_atoms_pair_within_atoms():
    beta = 2.0
    x, y = POOL[0], POOL[1]
    tmv = pr.PropagatorKind.parse("thermal-minus-vacuum", beta)
    r = float(np.linalg.norm(np.subtract(x.x, y.x)))
    square = fn.state_value(fn.field_at(x, 2), P, "thermal", beta)
    assert square == pytest.approx(pr.eval(tmv, P, 0.0, 0.0, 0.0), rel=1e-12)
    bilocal = fn.state_value(fn.monomial([(x, 1), (y, 1)]), P, "thermal", beta)
    assert bilocal == pytest.approx(pr.eval(tmv, P, x.t - y.t, 0.0, r), rel=1e-12)
    # separate atoms multiplied by the star product contract with the full thermal kernel
    prod = fn.state_value(fn.star_product(fn.field_at(x), fn.field_at(y)), P, "thermal", beta)
    assert prod == pytest.approx(dplus(x, y, beta), rel=1e-10)


def test_translate_and_domain():
    x = POOL[0]
    a = fn.translate(fn.field_at(x), 0.5, 0.2)
    assert a.terms[0].vertices[0].shift == complex(0.5, -0.2)
    with pytest.raises(DomainError):
        fn.translate(fn.field_at(x), 0.0, -0.1)
    twice = fn.translate(fn.translate(fn.field_at(x), 0.3), 0.2)
    assert twice == fn.translate(fn.field_at(x), 0.5)


def test_degree_cap_raises_complexity_error():
    with pytest.raises(fn.ComplexityError):
        fn.star_product(fn.field_at(POOL[0], 9), fn.field_at(POOL[1], 8))
    with pytest.raises(fn.ComplexityError):
        fn.connected_correlator("vacuum", [fn.field_at(e) for e in POOL + POOL[:3]], P)


def test_connected_correlators():
    x, y, z = POOL[:3]
    c2 = fn.connected_correlator("vacuum", [fn.field_at(x, 2), fn.field_at(y, 2)], P)
    assert c2 == pytest.approx(2 * dplus(x, y) ** 2, rel=1e-12)
    c3 = fn.connected_correlator(("thermal", 1.0), [fn.field_at(e) for e in (x, y, z)], P)
    assert abs(c3) <= 1e-15
    c4 = fn.connected_correlator("vacuum", [fn.field_at(e) for e in POOL], P)
    assert abs(c4) <= 1e-15


def test_component_assertion_flags_vacuum_bubbles():
    bubble = fn.star_product(fn.field_at(POOL[0]), fn.field_at(POOL[1]))
    obs = fn.field_at(POOL[2]).mark_observable()
    mixed = fn.contract_product(bubble, obs, fn.STAR_PLUS)
    with pytest.raises(fn.StructureError):
        fn.assert_components_touch_observable(mixed.terms)
    linked = fn.star_product(fn.field_at(POOL[0]), obs, connected=True)
    fn.assert_components_touch_observable(linked.terms)


@settings(max_examples=20, deadline=None)
@given(monomials(2), monomials(2))
def test_time_order_resolution_preserves_values(a, b):
    for f in (fn.time_ordered_product(a, b), fn.anti_time_ordered_product(a, b), fn.star_product(a, b)):
        g = fn.resolve_time_order(f)
        assert fn.evaluate(g, CFG, P) == pytest.approx(fn.evaluate(f, CFG, P), rel=1e-12, abs=1e-15)


def test_formal_series_arithmetic():
    a = fn.FormalSeries({0: fn.ONE, 1: fn.field_at(POOL[0])}, 2)
    b = fn.FormalSeries({1: fn.field_at(POOL[1])}, 2)
    prod = a.star(b)
    assert prod[0].is_zero
    assert prod[1] == fn.field_at(POOL[1])
    assert prod[2] == fn.star_product(fn.field_at(POOL[0]), fn.field_at(POOL[1]))
    assert prod.truncate(1).max_order == 1
    assert (a - a)[1].is_zero
    with pytest.raises(ParameterError):
        fn.monomial([(POOL[0], -1)])
