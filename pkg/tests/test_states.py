import math

import numpy as np
import pytest

from qstfield import functionals as fn
from qstfield import perturbation as pt
from qstfield import propagators as pr
from qstfield import states as st
from qstfield.model import CutoffSpec, DomainError, Event, ModelParams, ParameterError

P = ModelParams(1.0, 0.5)
CUT = CutoffSpec(0.5, 0.5, 2.0, 0.5)
SPEC = pr.QuadratureSpec(mc_samples=400)
PHI3 = fn.field_at(Event(0.0), 3)


@pytest.fixture(scope="module")
def first_order():
    return pt.bogoliubov(pt.Interaction(3, CUT), PHI3, 1)


def dplus(x, y, beta=None):
    kind = pr.PropagatorKind.parse("wightman-plus") if beta is None else pr.PropagatorKind.parse("thermal", beta)
    return pr.eval(kind, P, x.t - y.t, 0.0, float(np.linalg.norm(np.subtract(x.x, y.x))))


def test_exponential_tree_bound():
    val, err = st.exponential_tree_bound(1.0, pr.QuadratureSpec(mc_samples=2000))
    assert abs(val - 8 * math.pi) <= 3 * err
    assert err / val <= 0.01
    with pytest.raises(ParameterError):
        st.exponential_tree_bound(0.0)


def test_radial_integral_gaussian():
    val, err = st.radial_integral(lambda r: np.exp(-r * r / 2), 12.0, pr.QuadratureSpec(mc_samples=4000))
    assert abs(val - (2 * math.pi) ** 1.5) <= 4 * err


def test_mc_matches_tensor_first_order(first_order):
    mc, err = st.expectation(st.VACUUM, first_order, 1, P, SPEC, CUT, "mc")
    tensor, _ = st.expectation(st.VACUUM, first_order, 1, P, SPEC, CUT, "tensor")
    assert abs(mc - tensor) <= 3 * err
    assert mc.imag == pytest.approx(0.0, abs=1e-15)


def test_tensor_converges_under_refinement(first_order):
    coarse, _ = st.expectation(st.VACUUM, first_order, 1, P, pr.QuadratureSpec(tensor_nodes=8), CUT, "tensor")
    fine, _ = st.expectation(st.VACUUM, first_order, 1, P, pr.QuadratureSpec(tensor_nodes=16), CUT, "tensor")
    assert abs(coarse - fine) <= 1e-3 * abs(fine)


def test_mc_is_reproducible_and_seeded(first_order):
    a = st.expectation(st.VACUUM, first_order, 1, P, SPEC, CUT, "mc")
    b = st.expectation(st.VACUUM, first_order, 1, P, SPEC, CUT, "mc")
    c = st.expectation(st.VACUUM, first_order, 1, P, pr.QuadratureSpec(mc_samples=400, seed=7), CUT, "mc")
    assert a == b
    assert a[0] != c[0]


def test_adiabatic_scan_reuses_common_shells(first_order):
    scan = st.adiabatic_scan(st.VACUUM, first_order, 1, [2.0, 4.0, 8.0], P, SPEC, CUT, "mc")
    assert scan.converged
    assert scan.increments[-1] <= 0.01
    assert all(s2 > s1 for s1, s2 in zip(scan.samples, scan.samples[1:]))
    rows = scan.to_csv().strip().split("\n")
    assert rows[0] == "parameter,re,im,stderr,samples,converged"
    assert len(rows) == 4
    with pytest.raises(ParameterError):
        st.ScanResult([2.0, 1.0])


def test_degenerate_observable_vanishes():
    R = pt.bogoliubov(pt.Interaction(4, CUT), fn.field_at(Event(0.0), 2), 1)
    val, _ = st.expectation(st.VACUUM, R, 1, P, SPEC, CUT, "mc")
    assert val == 0


def test_thermal_two_point_and_kms_condition():
    beta = 2.0
    x, y = Event(0.4, (0.2, 0.0, 0.0)), Event(-0.1, (0.0, 0.3, 0.0))
    th = st.StateSpec.thermal(beta)
    two, _ = st.expectation(th, fn.star_product(fn.field_at(x), fn.field_at(y)), 0, P)
    assert two == pytest.approx(dplus(x, y, beta), rel=1e-8)
    shifted, _ = st.expectation(th, fn.star_product(fn.translate(fn.field_at(x), 0.0, beta), fn.field_at(y)), 0, P)
    swapped, _ = st.expectation(th, fn.star_product(fn.field_at(y), fn.field_at(x)), 0, P)
    assert shifted == pytest.approx(swapped, rel=1e-8)


def test_dressed_state_ratio():
    x, y = Event(0.2, (0.1, 0.0, 0.0)), Event(0.0, (0.0, 0.2, 0.0))
    c = 0.4 + 0.3j
    B = fn.ONE + fn.field_at(x, 1, c)
    val, _ = st.expectation(st.StateSpec.dressed(B), fn.field_at(y), 0, P)
    num = c * dplus(y, x) + c.conjugate() * dplus(x, y)
    den = 1 + abs(c) ** 2 * dplus(x, x)
    assert val == pytest.approx(num / den, rel=1e-8)
    plain, _ = st.expectation(st.StateSpec.dressed(fn.ONE), fn.star_product(fn.field_at(x), fn.field_at(y)), 0, P)
    assert plain == pytest.approx(dplus(x, y), rel=1e-8)


def test_thermal_expectation_approaches_vacuum(first_order):
    vac, _ = st.expectation(st.VACUUM, first_order, 1, P, SPEC, CUT, "tensor")
    gaps = [abs(st.expectation(st.StateSpec.thermal(b), first_order, 1, P, SPEC, CUT, "tensor")[0] - vac)
            for b in (4.0, 6.0, 8.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert np.polyfit([4.0, 6.0, 8.0], np.log(gaps), 1)[0] <= -0.9


def test_time_evolution_routes_agree_at_first_order(first_order):
    # at first order the commutator expansion truncated at n = 1 is exact, so it must match cocycle conjugation
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    R = pt.bogoliubov(V, PHI3, 1)
    for t in (0.5, 1.5):
        a, _ = st.time_evolution_expectation(st.VACUUM, R, V, t, P, 1, 1, pr.DEFAULT_SPEC, None, "tensor")
        b, _ = st.cocycle_expectation(st.VACUUM, R, V, t, P, 1, pr.DEFAULT_SPEC, "tensor")
        assert a == pytest.approx(b, rel=1e-4)
    zero, _ = st.time_evolution_expectation(st.VACUUM, R, V, 0.0, P, 1, 1, pr.DEFAULT_SPEC, None, "tensor")
    bare, _ = st.expectation(st.VACUUM, R, 1, P, pr.DEFAULT_SPEC, V.cutoffs, "tensor")
    assert zero == bare
    with pytest.raises(DomainError):
        st.time_evolution_expectation(st.VACUUM, R, V, -1.0, P)
    with pytest.raises(fn.ComplexityError):
        st.commutator_expansion_functional(R, V, 1.0, n=3)


def test_interacting_kms_without_correction_is_thermal_expectation():
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    R = pt.bogoliubov(V, PHI3, 1)
    direct, _ = st.expectation(st.StateSpec.thermal(3.0), R, 1, P, pr.DEFAULT_SPEC, V.cutoffs, "tensor")
    trunc0, _ = st.interacting_kms(PHI3, V, 3.0, P, 1, 0, pr.DEFAULT_SPEC, None, "tensor")
    assert trunc0 == pytest.approx(direct, rel=1e-12)


def test_clustering_function_is_connected():
    V = pt.Interaction(4, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    A = fn.field_at(Event(0.0))
    val0, _ = st.clustering_function(A, A, V, 2.0, st.StateSpec.thermal(2.0), ModelParams(1.0, 1.0), k=0)
    # at k = 0 only the free thermal two-point function of A and alpha_t(B) survives
    expected = pr.eval(pr.PropagatorKind.parse("thermal", 2.0), ModelParams(1.0, 1.0), -2.0, 0.0, 0.0)
    assert val0 == pytest.approx(expected, rel=1e-8)
    with pytest.raises(DomainError):
        st.clustering_function(A, A, V, -1.0, st.VACUUM, P)


def test_expression_serialization(first_order):
    expr = st.state_expression(st.VACUUM, first_order[1], 1, "bogoliubov")
    expr.validate()
    data = expr.to_json()
    assert data["order"] == 1
    assert data["terms"]
