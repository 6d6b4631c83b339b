import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs
from scipy import integrate, special

from qstfield import propagators as pr
from qstfield.model import DomainError, ModelParams, ParameterError, gaussian_kernel

PLUS = pr.PropagatorKind.parse("wightman-plus")
PJ = pr.PropagatorKind.parse("pauli-jordan")
FEYNMAN = pr.PropagatorKind.parse("feynman")
ADV = pr.PropagatorKind.parse("advanced")
RET = pr.PropagatorKind.parse("retarded")
DIRAC = pr.PropagatorKind.parse("dirac")


def quad_wightman(p, t, u, r):
    """Independent radial integral of the Wightman mode with adaptive quadrature."""
    def mode(k, part):
        w = math.hypot(k, p.m)
        amp = np.exp(-1j * complex(t, -u) * w) / (2 * w)
        sinc = math.sin(k * r) / (k * r) if k * r > 1e-12 else 1.0
        val = k * k * math.exp(-p.lam**2 * (2 * k * k + p.m**2)) * amp * sinc / (2 * math.pi**2)
        return getattr(val, part)

    re, _ = integrate.quad(mode, 0, np.inf, args=("real",), limit=400, epsabs=1e-14)
    im, _ = integrate.quad(mode, 0, np.inf, args=("imag",), limit=400, epsabs=1e-14)
    return complex(re, im)


@pytest.mark.parametrize("t,u,r", [(0.0, 0.0, 0.0), (0.7, 0.0, 0.5), (-1.3, 0.4, 1.2), (2.5, 1.0, 0.1)])
def test_wightman_matches_adaptive_quadrature(params, t, u, r):
    assert pr.eval(PLUS, params, t, u, r) == pytest.approx(quad_wightman(params, t, u, r), rel=1e-9, abs=1e-13)


def test_bessel_k1_oracle_matches_scipy():
    for x in (0.1, 0.5, 1.0, 3.0, 8.0):
        assert pr.bessel_k1(x) == pytest.approx(special.k1(x), rel=1e-8)


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_small_lambda_approaches_undamped_wightman(r):
    # the Gaussian damping shifts the equal-time kernel by O(lam^2)
    dev = []
    for lam in (0.01, 0.005):
        p = ModelParams(1.0, lam)
        dev.append(pr.eval(PLUS, p, 0.0, 0.0, r).real / pr.classical_wightman_oracle(p, r) - 1)
    assert abs(dev[1]) < 2e-4
    assert dev[0] / dev[1] == pytest.approx(4.0, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(hs.floats(-5, 5), hs.floats(0, 5), hs.sampled_from([0.5, 1.0]))
def test_exchange_relation_property(t, r, lam):
    p = ModelParams(1.0, lam)
    lhs = pr.eval(PLUS, p, t, 0, r) - pr.eval(PLUS, p, -t, 0, r)
    assert abs(lhs - 1j * pr.eval(PJ, p, t, 0, r)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(hs.floats(-5, 5), hs.floats(0, 5))
def test_pauli_jordan_real_and_odd(t, r):
    p = ModelParams(1.0, 0.5)
    v = pr.eval(PJ, p, t, 0, r)
    assert v.imag == 0.0
    assert pr.eval(PJ, p, -t, 0, r) == pytest.approx(-v, abs=1e-15)


def test_pauli_jordan_slope_magnitude_and_sign(params):
    # with the Wightman mode exp(-i t w) / 2w, Delta = -i (D+(x) - D+(-x)) has mode -sin(w t)/w
    lam = params.lam
    h = 1e-3 * lam
    vals = pr.evaluate_array(PJ, params, np.array([-2 * h, -h, h, 2 * h]), 0, np.zeros(4)).real
    slope = float(np.array([1, -8, 8, -1]) @ vals / (12 * h))
    magnitude = 2 * math.sqrt(2 * math.pi) * lam * gaussian_kernel(np.zeros(4), 2 * lam) * math.exp(-lam**2)
    assert slope == pytest.approx(-magnitude, rel=1e-6)


def test_feynman_family_relations(params):
    t = np.linspace(-3, 3, 25)
    r = np.full(25, 0.6)
    f = pr.evaluate_array(FEYNMAN, params, t, 0, r)
    assert np.array_equal(f, pr.evaluate_array(FEYNMAN, params, -t, 0, r))
    pos = t > 0
    assert np.array_equal(f[pos], pr.evaluate_array(PLUS, params, t[pos], 0, r[pos]))
    adv = pr.evaluate_array(ADV, params, t, 0, r)
    ret = pr.evaluate_array(RET, params, t, 0, r)
    pj = pr.evaluate_array(PJ, params, t, 0, r)
    assert np.all(adv[t > 0] == 0) and np.all(ret[t < 0] == 0)
    assert np.allclose(ret - adv, pj, atol=1e-15)
    assert np.allclose(pr.evaluate_array(DIRAC, params, t, 0, r), 0.5j * (adv + ret), atol=1e-15)
    # D_A = -i (D_F - D+)
    assert np.allclose(adv, -1j * (f - pr.evaluate_array(PLUS, params, t, 0, r)), atol=1e-15)


def test_boundedness_by_value_at_origin(params):
    rng = np.random.default_rng(3)
    t, r = rng.uniform(-4, 4, 300), rng.uniform(0, 4, 300)
    bound = pr.wightman_bound(params)
    assert bound == pytest.approx(pr.eval(PLUS, params, 0, 0, 0).real)
    assert np.abs(pr.evaluate_array(PLUS, params, t, 0, r)).max() <= bound * (1 + 1e-12)


def test_thermal_kms_and_vacuum_limit(params):
    beta = 2.5
    th = pr.PropagatorKind.parse("thermal", beta)
    tmv = pr.PropagatorKind.parse("thermal-minus-vacuum", beta)
    for t, r in ((0.4, 0.3), (-1.2, 1.1)):
        assert pr.eval(th, params, t, beta, r) == pytest.approx(pr.eval(th, params, -t, 0, r), abs=1e-12)
        diff = pr.eval(th, params, t, 0, r) - pr.eval(PLUS, params, t, 0, r)
        assert pr.eval(tmv, params, t, 0, r) == pytest.approx(diff, abs=1e-13)
    far = pr.PropagatorKind.parse("thermal", 60.0)
    assert pr.eval(far, params, 0.3, 0, 0.2) == pytest.approx(pr.eval(PLUS, params, 0.3, 0, 0.2), abs=1e-20)


def test_domain_errors():
    p = ModelParams(1.0, 0.5)
    with pytest.raises(DomainError):
        pr.eval(PLUS, p, 0.0, 0.0, -1.0)
    with pytest.raises(DomainError):
        pr.eval(PLUS, p, 0.0, -0.1, 0.0)
    with pytest.raises(DomainError):
        pr.eval(FEYNMAN, p, 0.0, 0.1, 0.0)
    with pytest.raises(DomainError):
        pr.eval(pr.PropagatorKind.parse("thermal", 1.0), p, 0.0, 1.5, 0.0)
    with pytest.raises(ParameterError):
        pr.PropagatorKind.parse("thermal")
    with pytest.raises(ParameterError):
        pr.PropagatorKind.parse("wightman-plus", 2.0)
    with pytest.raises(ParameterError):
        pr.QuadratureSpec(nodes=4)


def test_cache_is_transparent():
    p = ModelParams(1.0, 0.5)
    cache = pr.PropagatorCache(p)
    t = np.round(np.linspace(-2, 2, 30), 6)
    r = np.round(np.linspace(0, 2, 30), 6)
    first = cache.get_many(PLUS, t, 0.0, r)
    again = cache.get_many(PLUS, t, 0.0, r)
    assert np.array_equal(first, again)
    assert cache.hits == 30 and cache.misses == 30
    # values are computed at the quantized coordinates
    tq, rq = cache.quantize(t) * cache.quantum, cache.quantize(r) * cache.quantum
    assert np.array_equal(first, pr.evaluate_array(PLUS, p, tq, 0, rq))


def test_table_rows_and_csv():
    p = ModelParams(1.0, 0.5)
    rows = pr.tabulate(PLUS, p, [0.0, 1.0], [0.0], [0.2, 0.4, 0.6])
    assert len(rows) == 6
    text = pr.rows_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0].split(",") == pr.CSV_COLUMNS
    first = dict(zip(pr.CSV_COLUMNS, lines[1].split(",")))
    v = pr.eval(PLUS, p, 0.0, 0.0, 0.2)
    assert float(first["re"]) == v.real and float(first["im"]) == v.imag


def test_feynman_momentum_space_inverse_transform():
    p = ModelParams(1.0, 0.5)
    v = pr.eval(FEYNMAN, p, 0.7, 0.0, 0.5)
    assert pr.feynman_fourier_oracle(p, 0.7, 0.5) == pytest.approx(v, rel=1e-4)
    with pytest.raises(ParameterError):
        pr.feynman_momentum(p, 1.0, 0.5, 0.0)


def test_feynman_momentum_filk_variant_pole_structure():
    p = ModelParams(1.0, 0.5)
    std = pr.feynman_momentum(p, 0.3, 0.4, 1e-6)
    filk = pr.feynman_momentum(p, 0.3, 0.4, 1e-6, filk=True)
    denom = complex(-0.09 + 0.16 + 1.0, -1e-6)
    assert std == pytest.approx(-1j / (2 * math.pi) ** 4 * math.exp(-0.25 * (2 * 0.16 + 1)) / denom, rel=1e-9)
    assert filk == pytest.approx(1j * math.exp(-0.25 * (0.09 + 0.16)) / denom, rel=1e-9)


def test_weak_source_term_magnitude(params):
    # the pairing equals the stated value up to the overall sign fixed by the Wightman convention
    lhs = pr.source_term_pairing(params)
    rhs = pr.source_term_prediction(params)
    assert lhs == pytest.approx(-rhs, rel=1e-6)


def test_equation_of_motion_residual(params):
    for t, r in ((0.3, 0.7), (1.5, 1.0), (-2.0, 0.5)):
        assert pr.equation_of_motion_residual(params, t, r) <= 1e-5
    with pytest.raises(DomainError):
        pr.equation_of_motion_residual(params, 0.0, 0.0)


def test_decay_fits(params):
    assert pr.decay_fit(PLUS, params, "spatial", (5 * params.lam, 15 * params.lam)) <= -0.9
    assert -1.7 <= pr.decay_fit(PLUS, params, "temporal", (10.0, 100.0)) <= -1.3
    assert pr.decay_fit("thermal-minus-vacuum", params, "beta", (2.0, 8.0)) <= -0.9
    with pytest.raises(ParameterError):
        pr.decay_fit(PLUS, params, "sideways", (1.0, 2.0))
    with pytest.raises(ParameterError):
        pr.decay_fit(PLUS, params, "spatial", (2.0, 1.0))


def test_edge_kernels_thermal_shifted_forms():
    p = ModelParams(1.0, 0.5)
    tau = np.array([0.4 - 0.0j, -0.7 + 0.0j])
    r = np.array([0.3, 0.9])
    beta = 2.0
    plus = pr.edge_kernel("plus", p, tau, r)
    d = pr.edge_kernel("d", p, tau, r, beta=beta)
    assert np.allclose(pr.edge_kernel("beta", p, tau, r, beta=beta), plus + d, atol=1e-15)
    assert np.allclose(pr.edge_kernel("F+d", p, tau, r, beta=beta), pr.edge_kernel("F", p, tau, r) + d, atol=1e-15)
    with pytest.raises(ParameterError):
        pr.edge_kernel("bogus", p, tau, r)
