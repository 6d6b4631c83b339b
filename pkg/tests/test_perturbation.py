import numpy as np
import pytest

from qstfield import functionals as fn
from qstfield import perturbation as pt
from qstfield import propagators as pr
from qstfield.model import CutoffSpec, DomainError, Event, ModelParams, ParameterError, PlaneWaveConfig

P = ModelParams(1.0, 1.0)
CUT = CutoffSpec(0.2, 0.2, 1.0, 0.5)
TIMES = tuple(round(-0.4 + 0.1 * i, 10) for i in range(8))


def lattice_interaction(n, cutoffs=CUT, times=TIMES, points=((0.0, 0.0, 0.0), (0.3, 0.0, 0.0))):
    return pt.Interaction(n, cutoffs, lattice=pt.Lattice(times, points, 0.1))


def probes(seed=5):
    rng = np.random.default_rng(seed)
    return [PlaneWaveConfig(tuple(0.5 * complex(*rng.normal(size=2)) for _ in range(2)),
                            tuple(tuple(rng.normal(size=4)) for _ in range(2))) for _ in range(3)]


def relative(diff, parts):
    cfgs = probes()
    num = max(abs(fn.evaluate(diff, c, P)) for c in cfgs)
    den = max(sum(abs(fn.evaluate(g, c, P)) for g in parts) for c in cfgs)
    return num / den


def test_s_matrix_low_orders():
    V = lattice_interaction(3).functional()
    S = pt.s_matrix(V, 2)
    assert S[0] == fn.ONE
    assert S[1].structurally_equal(V.scale(-1j), 1e-15)
    assert S[2].structurally_equal(fn.time_ordered_product(V, V).scale(-0.5), 1e-15)


def test_lattice_drops_zero_weight_atoms():
    V = lattice_interaction(3, times=(-1.0, 0.0, 5.0))
    assert len(V.functional().terms) == 2


@pytest.mark.parametrize("n", [3, 4])
def test_unitarity_on_lattice(n):
    S = pt.s_matrix(lattice_interaction(n), 2)
    Sd = S.involution()
    prod = S.star(Sd)
    for k in (1, 2):
        assert relative(prod[k], [S[k], Sd[k]]) <= 1e-10


def test_inverse_equals_adjoint_coefficientwise():
    S = pt.s_matrix(lattice_interaction(3), 2)
    Si = pt.s_inverse(S)
    for k in (1, 2):
        assert fn.resolve_time_order(Si[k]).structurally_equal(fn.resolve_time_order(S.involution()[k]), 1e-12)


def test_star_inverse_agrees_with_anti_chronological_inverse():
    S = pt.s_matrix(lattice_interaction(3, times=TIMES[:4]), 3)
    a, b = pt.s_inverse(S), pt.star_inverse(S)
    for k in range(4):
        assert a[k].structurally_equal(b[k], 1e-12)
    with pytest.raises(ParameterError):
        pt.s_inverse(b)


def test_bogoliubov_first_order_is_retarded():
    y = Event(0.0, (0.0, 0.0, 0.3))
    for x in (Event(-0.7, (0.2, 0.1, 0.0)), Event(0.6, (0.1, 0.0, 0.0))):
        R = pt.bogoliubov(fn.field_at(x, 2), fn.field_at(y), 1)
        r = float(np.linalg.norm(np.subtract(x.x, y.x)))
        da = pr.eval(pr.PropagatorKind.parse("advanced"), P, x.t - y.t, 0.0, r)
        for c in probes():
            assert fn.evaluate(R[1], c, P) == pytest.approx(fn.evaluate(fn.field_at(x, 1, 2 * da), c, P), abs=1e-15)
        assert R[0] == fn.field_at(y).mark_observable()


def test_bogoliubov_equals_source_derivative_of_relative_s():
    V = lattice_interaction(3, times=TIMES[:5])
    A = fn.field_at(Event(0.05), 2)
    R = pt.bogoliubov(V, A, 2)
    D = pt.relative_s(V, A, 2).source_derivative().scale(1j)
    for k in range(3):
        assert R[k].structurally_equal(D[k], 1e-12)


def test_bogoliubov_inverse_round_trip():
    V = lattice_interaction(3)
    A = fn.field_at(Event(0.05), 2)
    back = pt.bogoliubov_inverse(V, pt.bogoliubov(V, A, 2, check=False), 2)
    assert relative(back[0] - A, [A]) <= 1e-12
    for k in (1, 2):
        assert relative(back[k], [A]) <= 1e-10


def test_interacting_product_reduces_to_star_product_at_order_zero():
    V = lattice_interaction(3, times=TIMES[:3])
    a, b = fn.field_at(Event(0.0)), fn.field_at(Event(0.1, (0.2, 0.0, 0.0)))
    prod = pt.interacting_product(V, a, b, 1)
    assert relative(prod[0] - fn.star_product(a, b), [fn.star_product(a, b)]) <= 1e-12


def test_connected_component_assertion_for_quartic_interaction():
    V = pt.Interaction(4, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    R = pt.bogoliubov(V, fn.field_at(Event(0.0), 2), 2, check=True)
    assert all(v.observable or v.is_free for k in R.orders() for t in R[k].terms for v in t.vertices)
    with pytest.raises(fn.ComplexityError):
        pt.bogoliubov(V, fn.field_at(Event(0.0), 2), 4)


def test_order_guard_and_validation():
    with pytest.raises(fn.ComplexityError):
        pt.s_matrix(lattice_interaction(3), 5)
    with pytest.raises(ParameterError):
        pt.Interaction(1, CUT)
    with pytest.raises(ParameterError):
        pt.Interaction(3, CUT, temporal="other")
    with pytest.raises(ParameterError):
        pt.Interaction(3, CUT, temporal="chi-minus-chi'")


def test_cocycle_first_order_is_past_window():
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    t = 0.8
    U = pt.cocycle(V, t, 1)
    assert U[0] == fn.ONE
    raised = V.with_(cutoffs=V.cutoffs.with_(T=t + 0.5))
    assert U[1].structurally_equal(pt.past_window(raised, t).functional().scale(1j), 1e-15)
    # U(0) = 1: the first-order window weight chi(t) - chi(t - 0) vanishes identically
    (term,) = pt.cocycle(V, 0.0, 1)[1].terms
    ts = np.linspace(-2, 2, 81)
    assert not np.any(term.vertices[0].position.tag.value(V.cutoffs, ts, np.zeros_like(ts)))
    with pytest.raises(DomainError):
        pt.cocycle(V, -1.0, 1)


def test_cocycle_identity_and_unitarity_on_lattice():
    cut = CutoffSpec(0.2, 1.4, 1.0, 0.5)
    times = tuple(round(-0.4 + 0.1 * i, 10) for i in range(40))
    V = lattice_interaction(3, cut, times, points=((0.0, 0.0, 0.0),))
    t, s = 0.4, 0.7
    lhs = pt.cocycle(V, t + s, 2)
    rhs = pt.cocycle(V, t, 2).star(pt.alpha(pt.cocycle(V, s, 2), t))
    for k in (1, 2):
        assert relative(lhs[k] - rhs[k], [lhs[k], rhs[k]]) <= 1e-8
    U = pt.cocycle(V, t, 2)
    unit = U.star(U.involution())
    for k in (1, 2):
        assert relative(unit[k], [U[k]]) <= 1e-10


def test_cocycle_negative_is_shifted_adjoint():
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    Um = pt.cocycle_negative(V, 0.6, 1)
    expected = pt._real_shift(pt.cocycle(V, 0.6, 1).involution(), -0.6)
    assert Um[1].structurally_equal(expected[1], 1e-15)


def test_generator_orders():
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    K = pt.generator(V, 2)
    assert K[0].is_zero
    assert K[1] == V.with_(temporal="chidot-").functional().mark_observable()
    assert not K[2].is_zero


def test_graphs_listing():
    V = pt.Interaction(3, CutoffSpec(0.5, 0.5, 1.0, 0.5))
    g = pt.graphs(pt.s_matrix(V, 2))
    assert g["provenance"] == "s-matrix"
    assert [o["order"] for o in g["orders"]] == [0, 1, 2]
    mults = sorted(sum(e["multiplicity"] for e in term["edges"]) for term in g["orders"][2]["terms"])
    assert mults == [0, 1, 2, 3]
