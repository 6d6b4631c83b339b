"""Expectation values of perturbative series in the vacuum, thermal and dressed
states, with Monte Carlo and tensor-product integration over free vertices.

Free vertices carry weight tags (cutoff functions). Monte Carlo samples each
free vertex uniformly in time over the tag support and uniformly inside
fixed-width spherical shells in space; each shell draws from its own random
substream keyed by ``(seed, group, shell)``, so scans over the spatial cutoff
reuse identical samples in the shells they share.
"""

from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .functionals import (
    ComplexityError,
    ContractedTerm,
    FormalSeries,
    Functional,
    StructureError,
    _as_functional,
    as_series,
    assert_components_touch_observable,
    commutator,
    contract_to_state,
    evaluate_terms,
    involution,
    star_product,
    translate,
)
from .model import ZERO, CutoffSpec, DomainError, ModelParams, ParameterError, PlaneWaveConfig
from .perturbation import Interaction, bogoliubov, cocycle, cocycle_negative, generator
from .propagators import DEFAULT_SPEC, PropagatorCache, QuadratureSpec, edge_kernel

MAX_TENSOR_POINTS = 4_000_000
MC_CHUNK = 4096


class NumericError(ArithmeticError):
    """Raised when an integrand produces non-finite values."""


@dataclass(frozen=True)
class StateSpec:
    """State tag: ``vacuum``, ``thermal`` (with ``beta``) or ``dressed`` (with ``dressing``)."""

    kind: str = "vacuum"
    beta: float | None = None
    dressing: Functional | None = None

    def __post_init__(self):
        if self.kind not in ("vacuum", "thermal", "dressed"):
            raise ParameterError(f"unknown state kind {self.kind!r}")
        if self.kind == "thermal" and not (self.beta is not None and self.beta > 0):
            raise ParameterError("thermal states need beta > 0")
        if self.kind == "dressed":
            if self.dressing is None or self.dressing.has_free:
                raise ParameterError("dressed states need a fully fixed dressing functional")

    @classmethod
    def vacuum(cls) -> "StateSpec":
        return cls("vacuum")

    @classmethod
    def thermal(cls, beta: float) -> "StateSpec":
        return cls("thermal", float(beta))

    @classmethod
    def dressed(cls, b: Functional) -> "StateSpec":
        return cls("dressed", dressing=_as_functional(b))

    @property
    def contraction(self) -> str:
        return "thermal" if self.kind == "thermal" else "vacuum"


VACUUM = StateSpec.vacuum()


@dataclass(frozen=True)
class IntegrandExpression:
    """Fully contracted terms awaiting integration over their free vertices."""

    terms: tuple
    beta: float | None = None
    config: PlaneWaveConfig = ZERO
    order: int | None = None
    provenance: str = ""

    def validate(self) -> None:
        """Structural checks: contracted legs, self-edges, observable connectivity."""
        at_zero = not self.config.amplitudes
        marked = any(v.observable for t in self.terms for v in t.vertices)
        for t in self.terms:
            if at_zero and any(t.powers):
                raise StructureError("term with surviving field legs at the zero configuration")
            for name, i, j, _ in t.edges:
                if i == j and name != "d":
                    raise StructureError(f"self-edge of kind {name!r}")
        if marked:
            assert_components_touch_observable(self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def to_json(self) -> dict:
        out = []
        for t in self.terms:
            out.append({
                "coefficient": {"re": t.coefficient.real, "im": t.coefficient.imag},
                "vertices": [
                    {"free": v.is_free,
                     "weight": v.position.tag.name if v.is_free else None,
                     "shift": {"re": v.shift.real, "im": v.shift.imag}}
                    for v in t.vertices
                ],
                "edges": [{"kind": n, "i": i, "j": j, "multiplicity": m} for n, i, j, m in t.edges],
            })
        return {"order": self.order, "provenance": self.provenance, "beta": self.beta, "terms": out}


@dataclass(frozen=True)
class IntegrationResult:
    value: complex
    stderr: float
    samples: int


# ---------------------------------------------------------------- grouping

def _tag_key(tag):
    return (tag.name, tag.params)


def _group_terms(terms):
    """Group terms by the multiset of free-vertex weight tags.

    Returns ``{signature: [(term, slots)]}`` where ``slots[k]`` maps vertex ``k``
    to its sample slot (``None`` for fixed vertices).
    """
    groups: dict = {}
    for term in terms:
        free = [(k, v.position.tag) for k, v in enumerate(term.vertices) if v.is_free]
        free.sort(key=lambda kv: (_tag_key(kv[1]), kv[0]))
        sig = tuple(tag for _, tag in free)
        slots = [None] * len(term.vertices)
        for s, (k, _) in enumerate(free):
            slots[k] = s
        groups.setdefault(sig, []).append((term, slots))
    return groups


def _group_id(sig) -> int:
    return zlib.crc32(repr([_tag_key(t) for t in sig]).encode())


def _term_values(term: ContractedTerm, slots, ts, xs, params, spec, beta, config, cache):
    """Values of one term at sample points ``ts[q, N]``, ``xs[q, N, 3]``."""
    npts = ts.shape[1] if ts.size else 1
    zs, ps = [], []
    for k, v in enumerate(term.vertices):
        s = slots[k]
        if s is None:
            e = v.position.event
            zs.append(np.full(npts, e.z + v.shift))
            ps.append(np.broadcast_to(np.asarray(e.x), (npts, 3)))
        else:
            zs.append(ts[s] + v.shift)
            ps.append(xs[s])
    val = np.full(npts, term.coefficient, dtype=complex)
    for name, i, j, mult in term.edges:
        tau = zs[i] - zs[j]
        r = np.linalg.norm(ps[i] - ps[j], axis=-1)
        val = val * edge_kernel(name, params, tau, r, spec, beta, cache) ** mult
    for z, x, p in zip(zs, ps, term.powers):
        if p:
            val = val * config(z, x) ** p
    return val


def _group_values(members, ts, xs, params, spec, beta, config, cache):
    total = 0
    for term, slots in members:
        total = total + _term_values(term, slots, ts, xs, params, spec, beta, config, cache)
    return total


def _weights(sig, cutoffs, ts, xs):
    w = np.ones(ts.shape[1])
    for s, tag in enumerate(sig):
        w = w * tag.value(cutoffs, ts[s], np.linalg.norm(xs[s], axis=-1))
    return w


def _shell_edges(radius: float, width: float) -> np.ndarray:
    edges = np.arange(0.0, radius, width)
    return np.append(edges, radius)


def _uniform_in_shell(u, a, b):
    """Map uniforms ``u[:, 0:3]`` to points uniform in the shell ``a <= |x| < b``."""
    r = np.cbrt(a**3 + (b**3 - a**3) * u[:, 0])
    cos = 2.0 * u[:, 1] - 1.0
    sin = np.sqrt(np.maximum(0.0, 1.0 - cos**2))
    phi = 2.0 * np.pi * u[:, 2]
    return np.stack([r * sin * np.cos(phi), r * sin * np.sin(phi), r * cos], axis=-1)


def _shell_volume(a, b):
    return 4.0 * np.pi / 3.0 * (b**3 - a**3)


# ---------------------------------------------------------------- Monte Carlo

def _mc_single(sig, members, params, spec, cutoffs, beta, config, cache) -> IntegrationResult:
    tag = sig[0]
    lo, hi = tag.time_support(cutoffs)
    if hi <= lo:
        return IntegrationResult(0j, 0.0, 0)
    edges = _shell_edges(tag.radius(cutoffs), spec.shell_width)
    gid = _group_id(sig)
    n = spec.mc_samples
    value, var, count = 0j, 0.0, 0
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, gid, k]))
        u = rng.random((n, 4))
        ts = (lo + (hi - lo) * u[:, 3])[None, :]
        xs = _uniform_in_shell(u, a, b)[None, :, :]
        f = _group_values(members, ts, xs, params, spec, beta, config, cache) * _weights(sig, cutoffs, ts, xs)
        vol = (hi - lo) * _shell_volume(a, b)
        value += vol * f.mean()
        if n > 1:
            var += vol**2 * (f.real.var(ddof=1) + f.imag.var(ddof=1)) / n
        count += n
    return IntegrationResult(complex(value), math.sqrt(var), count)


def _mc_mixture(sig, members, params, spec, cutoffs, beta, config, cache) -> IntegrationResult:
    """Several free vertices: independent shell-mixture densities per vertex."""
    q = len(sig)
    supports = [tag.time_support(cutoffs) for tag in sig]
    if any(hi <= lo for lo, hi in supports):
        return IntegrationResult(0j, 0.0, 0)
    shells = [_shell_edges(tag.radius(cutoffs), spec.shell_width) for tag in sig]
    total = spec.mc_samples * max(len(e) - 1 for e in shells)
    gid = _group_id(sig)
    acc = []
    for c, start in enumerate(range(0, total, MC_CHUNK)):
        n = min(MC_CHUNK, total - start)
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, gid, 1_000_000 + c]))
        ts = np.empty((q, n))
        xs = np.empty((q, n, 3))
        inv_density = np.ones(n)
        for s in range(q):
            e = shells[s]
            idx = rng.integers(0, len(e) - 1, size=n)
            u = rng.random((n, 4))
            a, b = e[idx], e[idx + 1]
            r = np.cbrt(a**3 + (b**3 - a**3) * u[:, 0])
            cos = 2.0 * u[:, 1] - 1.0
            sin = np.sqrt(np.maximum(0.0, 1.0 - cos**2))
            phi = 2.0 * np.pi * u[:, 2]
            xs[s] = np.stack([r * sin * np.cos(phi), r * sin * np.sin(phi), r * cos], axis=-1)
            lo, hi = supports[s]
            ts[s] = lo + (hi - lo) * u[:, 3]
            inv_density *= (len(e) - 1) * _shell_volume(a, b) * (hi - lo)
        f = _group_values(members, ts, xs, params, spec, beta, config, cache) * _weights(sig, cutoffs, ts, xs)
        acc.append(f * inv_density)
    f = np.concatenate(acc)
    stderr = math.sqrt((f.real.var(ddof=1) + f.imag.var(ddof=1)) / len(f)) if len(f) > 1 else 0.0
    return IntegrationResult(complex(f.mean()), stderr, len(f))


# ---------------------------------------------------------------- tensor grids

def _composite(breaks, width, nodes):
    x0, w0 = leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        m = max(1, int(math.ceil((b - a) / width)))
        edges = np.linspace(a, b, m + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            xs.append(0.5 * (hi - lo) * x0 + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * w0)
    if not xs:
        return np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(ws)


def _vertex_grid(tag, cutoffs, spec, radial_only):
    ts, wt = _composite(tag.breakpoints(cutoffs), spec.panel_width, spec.tensor_nodes)
    rho = tag.radius(cutoffs)
    rs, wr = _composite([0.0, rho], spec.panel_width, spec.tensor_nodes)
    if radial_only:
        T, Rr = np.meshgrid(ts, rs, indexing="ij")
        W = np.outer(wt, 4.0 * np.pi * rs**2 * wr)
        pts = np.zeros(T.shape + (3,))
        pts[..., 0] = Rr
        return T.ravel(), pts.reshape(-1, 3), W.ravel()
    n = spec.tensor_nodes
    cs, wc = leggauss(n)
    ph = 2.0 * np.pi * np.arange(n) / n
    wp = np.full(n, 2.0 * np.pi / n)
    T, Rr, C, P = np.meshgrid(ts, rs, cs, ph, indexing="ij")
    W = (wt[:, None, None, None] * (rs**2 * wr)[None, :, None, None]
         * wc[None, None, :, None] * wp[None, None, None, :])
    S = np.sqrt(1.0 - C**2)
    pts = np.stack([Rr * S * np.cos(P), Rr * S * np.sin(P), Rr * C], axis=-1)
    return T.ravel(), pts.reshape(-1, 3), W.ravel()


def _tensor(sig, members, params, spec, cutoffs, beta, config, cache) -> IntegrationResult:
    q = len(sig)
    if 4 * q > 8:
        raise ComplexityError(f"tensor integration is limited to 8 dimensions, got {4 * q}")
    fixed_at_origin = all(
        np.allclose(v.position.event.x, 0.0)
        for term, _ in members for v in term.vertices if not v.is_free
    )
    radial = q == 1 and fixed_at_origin and not config.amplitudes
    grids = [_vertex_grid(tag, cutoffs, spec, radial) for tag in sig]
    size = int(np.prod([len(g[2]) for g in grids]))
    if size > MAX_TENSOR_POINTS:
        raise ComplexityError(f"tensor grid of {size} points exceeds the cap {MAX_TENSOR_POINTS}; use method='mc'")
    if size == 0:
        return IntegrationResult(0j, 0.0, 0)
    idx = np.indices([len(g[2]) for g in grids]).reshape(q, -1)
    ts = np.stack([grids[s][0][idx[s]] for s in range(q)])
    xs = np.stack([grids[s][1][idx[s]] for s in range(q)])
    w = np.prod(np.stack([grids[s][2][idx[s]] for s in range(q)]), axis=0)
    value = 0j
    for start in range(0, size, 1 << 17):
        sl = slice(start, start + (1 << 17))
        f = _group_values(members, ts[:, sl], xs[:, sl], params, spec, beta, config, cache)
        value += np.sum(f * _weights(sig, cutoffs, ts[:, sl], xs[:, sl]) * w[sl])
    return IntegrationResult(complex(value), 0.0, size)


# ---------------------------------------------------------------- integration

def integrate_expression(expr: IntegrandExpression, params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
                         cutoffs: CutoffSpec | None = None, method: str = "mc",
                         cache: PropagatorCache | None = None, validate: bool = True) -> IntegrationResult:
    """Integrate every term; groups of terms with equal free weights share samples."""
    if method not in ("mc", "tensor"):
        raise ParameterError(f"unknown integration method {method!r}")
    if validate:
        expr.validate()
    if expr.is_zero:
        return IntegrationResult(0j, 0.0, 0)
    if cache is None:
        cache = PropagatorCache(params, spec)
    value, var, samples = 0j, 0.0, 0
    for sig, members in sorted(_group_terms(expr.terms).items(), key=lambda kv: repr(kv[0])):
        if not sig:
            value += evaluate_terms([t for t, _ in members], params, spec, expr.beta, expr.config, cache)
            continue
        if cutoffs is None:
            raise ParameterError("free vertices need a CutoffSpec for their weights")
        if method == "tensor":
            res = _tensor(sig, members, params, spec, cutoffs, expr.beta, expr.config, cache)
        elif len(sig) == 1:
            res = _mc_single(sig, members, params, spec, cutoffs, expr.beta, expr.config, cache)
        else:
            res = _mc_mixture(sig, members, params, spec, cutoffs, expr.beta, expr.config, cache)
        value += res.value
        var += res.stderr**2
        samples += res.samples
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise NumericError("integration produced a non-finite value")
    return IntegrationResult(complex(value), math.sqrt(var), samples)


def integrate(expr: IntegrandExpression, params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
              cutoffs: CutoffSpec | None = None, method: str = "mc",
              cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """Integrate an expression; returns ``(value, stderr)`` (stderr is 0 for tensor grids)."""
    res = integrate_expression(expr, params, spec, cutoffs, method, cache)
    return res.value, res.stderr


def radial_integral(func, radius: float, spec: QuadratureSpec = DEFAULT_SPEC, stream: int = 0) -> tuple[float, float]:
    """Stratified Monte Carlo estimate of ``int_{|x| < radius} func(|x|) d^3x``.

    Diagnostic helper (no cutoff weights); uses the same shell sampler as
    :func:`integrate`.
    """
    edges = _shell_edges(radius, spec.shell_width)
    value, var = 0.0, 0.0
    n = spec.mc_samples
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream, k]))
        x = _uniform_in_shell(rng.random((n, 3)), a, b)
        f = np.asarray(func(np.linalg.norm(x, axis=-1)), dtype=float)
        vol = _shell_volume(a, b)
        value += vol * f.mean()
        var += vol**2 * f.var(ddof=1) / n
    return float(value), math.sqrt(var)


def exponential_tree_bound(m: float, spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Monte Carlo value of ``int e^{-m|x|} d^3x`` over a ball of radius ``40/m`` (exact: ``8 pi / m^3``)."""
    if not m > 0:
        raise ParameterError("m must be positive")
    return radial_integral(lambda r: np.exp(-m * r), 40.0 / m, spec, stream=0x7EE)


# ---------------------------------------------------------------- expectations

def _coefficient(series, k: int) -> Functional:
    if isinstance(series, FormalSeries):
        if k > series.max_order:
            raise ParameterError(f"order {k} exceeds the series truncation {series.max_order}")
        return series[k]
    if k != 0:
        return Functional()
    return _as_functional(series)


def state_expression(state: StateSpec, a: Functional, order: int | None = None,
                     provenance: str = "") -> IntegrandExpression:
    terms = contract_to_state(a, state.contraction, state.beta)
    return IntegrandExpression(tuple(terms), state.beta, ZERO, order, provenance)


def _expect_functional(state: StateSpec, a: Functional, params, spec, cutoffs, method, cache, order=None,
                       provenance="") -> IntegrationResult:
    if state.kind == "dressed":
        b = state.dressing
        bstar = involution(b)
        norm = integrate_expression(state_expression(VACUUM, star_product(bstar, b)), params, spec, cutoffs,
                                    method, cache, validate=False)
        if abs(norm.value) == 0:
            raise ParameterError("dressing functional has zero norm")
        num = integrate_expression(state_expression(VACUUM, star_product(star_product(bstar, a), b)),
                                   params, spec, cutoffs, method, cache, validate=False)
        return IntegrationResult(num.value / norm.value, num.stderr / abs(norm.value), num.samples)
    expr = state_expression(state, a, order, provenance)
    return integrate_expression(expr, params, spec, cutoffs, method, cache)


def expectation(state: StateSpec, series, k: int, params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
                cutoffs: CutoffSpec | None = None, method: str = "mc",
                cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """Order-``k`` coefficient of ``series`` in ``state``; returns ``(value, stderr)``.

    Thermal states substitute the contraction kernels (``D+ -> D_beta``,
    ``D_F -> D_F + D_beta - D+``) and pair leftover legs inside each atom with
    ``D_beta - D+``; dressed states return ``omega(B* A B) / omega(B* B)``.
    """
    a = _coefficient(series, k)
    prov = series.provenance if isinstance(series, FormalSeries) else ""
    res = _expect_functional(state, a, params, spec, cutoffs, method, cache, k, prov)
    return res.value, res.stderr


@dataclass
class ScanResult:
    """Estimates along an increasing parameter sequence."""

    parameters: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    stderrs: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    tolerance: float = 0.01

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.parameters[:-1], self.parameters[1:])):
            raise ParameterError("scan parameters must be strictly increasing")
        if any(s < 0 for s in self.stderrs):
            raise ParameterError("standard errors must be nonnegative")

    @property
    def increments(self) -> list[float]:
        """Relative increments ``|v_i - v_{i-1}| / |v_i|``."""
        out = []
        for a, b in zip(self.estimates[:-1], self.estimates[1:]):
            out.append(abs(b - a) / abs(b) if b != 0 else (0.0 if a == 0 else math.inf))
        return out

    @property
    def converged(self) -> bool:
        inc = self.increments
        return bool(inc) and inc[-1] <= self.tolerance or (not inc and len(self.estimates) == 1)

    def rows(self) -> list[dict]:
        flag = "true" if self.converged else "false"
        return [
            {"parameter": p, "re": v.real, "im": v.imag, "stderr": s, "samples": n, "converged": flag}
            for p, v, s, n in zip(self.parameters, self.estimates, self.stderrs, self.samples)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["parameter", "re", "im", "stderr", "samples", "converged"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def adiabatic_scan(state: StateSpec, series, k: int, radii, params: ModelParams,
                   spec: QuadratureSpec = DEFAULT_SPEC, cutoffs: CutoffSpec | None = None,
                   method: str = "mc", tolerance: float = 0.01, dressing_family=None,
                   monotone: bool = False) -> ScanResult:
    """Expectation of the order-``k`` coefficient as the spatial cutoff radius grows.

    Parameters
    ----------
    dressing_family : callable, optional
        ``R -> B_R`` for dressed states; with ``monotone`` the norms
        ``omega(B_R* B_R)`` are asserted nondecreasing in ``R``.
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise ParameterError("radii must be a nonempty increasing list")
    if cutoffs is None:
        raise ParameterError("adiabatic scans need a CutoffSpec")
    cache = PropagatorCache(params, spec)
    out = ScanResult(radii, [], [], [], tolerance)
    norms = []
    for R in radii:
        st = state
        if dressing_family is not None:
            b = _as_functional(dressing_family(R))
            st = StateSpec.dressed(b)
            norms.append(integrate_expression(state_expression(VACUUM, star_product(involution(b), b)),
                                              params, spec, cutoffs, method, cache, validate=False).value.real)
        a = _coefficient(series, k)
        res = _expect_functional(st, a, params, spec, cutoffs.with_(R=R), method, cache, k)
        out.estimates.append(res.value)
        out.stderrs.append(res.stderr)
        out.samples.append(res.samples)
    if monotone and any(b < a - 1e-12 * abs(a) for a, b in zip(norms[:-1], norms[1:])):
        raise StructureError("dressing norms are not monotone in the support of h")
    out.__post_init__()
    return out


# ---------------------------------------------------------------- KMS expansion

def _geometric_nodes(length: float, first: float, nodes: int):
    """Gauss-Legendre nodes on ``[0, length]`` with panels doubling away from 0."""
    breaks = [0.0]
    step = first
    while breaks[-1] + step < length:
        breaks.append(breaks[-1] + step)
        step *= 2.0
    breaks.append(length)
    return _composite(breaks, math.inf, nodes)


def _connected_pair(x: Functional, y: Functional) -> Functional:
    return star_product(x, y, connected=True)


def interacting_kms_functional(a, V: Interaction, beta: float, k: int = 1, truncation: int = 1,
                               spec: QuadratureSpec = DEFAULT_SPEC, u_first: float = 0.25) -> Functional:
    """Functional whose thermal expectation is the truncated interacting KMS value at order ``k``.

    Includes ``omega_beta(R_V(A))`` and, for ``truncation = 1``, the two
    imaginary-time terms ``-int_0^{beta/2} du omega^c(K_{-iu} x R_V(A))`` and
    ``-int_0^{beta/2} dv omega^c(R_V(A)_{-iv} x K)``; the ``u`` integrals are
    Gauss-Legendre sums on panels clustered at 0.
    """
    if truncation not in (0, 1):
        raise ComplexityError("the interacting KMS expansion is implemented for truncation <= 1")
    if k > 2:
        raise ComplexityError("the interacting KMS expansion is implemented for k <= 2")
    R = bogoliubov(V, a, k, check=False)
    total = R[k]
    if truncation == 0 or k == 0:
        return total
    Kser = generator(V, k)
    us, ws = _geometric_nodes(beta / 2.0, u_first, spec.tensor_nodes)
    for j in range(1, k + 1):
        X, Y = Kser[j], R[k - j]
        if X.is_zero or Y.is_zero:
            continue
        terms = []
        for u, w in zip(us, ws):
            terms.extend(_connected_pair(translate(X, 0.0, u), Y).scale(-w).terms)
            terms.extend(_connected_pair(translate(Y, 0.0, u), X).scale(-w).terms)
        total = total + Functional.from_terms(terms)
    return total


def interacting_kms(a, V: Interaction, beta: float, params: ModelParams, k: int = 1, truncation: int = 1,
                    spec: QuadratureSpec = DEFAULT_SPEC, cutoffs: CutoffSpec | None = None,
                    method: str = "mc", cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """Truncated interacting KMS expectation of ``A`` at order ``k``; returns ``(value, stderr)``."""
    f = interacting_kms_functional(a, V, beta, k, truncation, spec)
    cutoffs = V.cutoffs if cutoffs is None else cutoffs
    res = _expect_functional(StateSpec.thermal(beta), f, params, spec, cutoffs, method, cache, k, "interacting-kms")
    return res.value, res.stderr


def kms_scan(a, V: Interaction, betas, params: ModelParams, k: int = 1, truncation: int = 1,
             spec: QuadratureSpec = DEFAULT_SPEC, method: str = "mc", tolerance: float = 0.01) -> ScanResult:
    betas = [float(b) for b in betas]
    if not betas:
        raise ParameterError("betas must be a nonempty increasing list")
    cache = PropagatorCache(params, spec)
    out = ScanResult(betas, [], [], [], tolerance)
    for b in betas:
        f = interacting_kms_functional(a, V, b, k, truncation, spec)
        res = _expect_functional(StateSpec.thermal(b), f, params, spec, V.cutoffs, method, cache, k)
        out.estimates.append(res.value)
        out.stderrs.append(res.stderr)
        out.samples.append(res.samples)
    return out


# ---------------------------------------------------------------- time evolution

def commutator_expansion_functional(observable, V: Interaction, t: float, n: int = 1, k: int = 1,
                                    spec: QuadratureSpec = DEFAULT_SPEC, panel: float = 1.0) -> Functional:
    """Order-``k`` part of ``sum_{j <= n} i^j int_{t S_j} [K_{-t_1}, [..., [K_{-t_j}, A]]]``.

    ``observable`` is a functional (order 0) or a series such as ``R_V(A)``.
    The simplex integrals use composite Gauss-Legendre rules.
    """
    if t < 0:
        raise DomainError("time evolution needs t >= 0")
    if n > 2:
        raise ComplexityError("the commutator expansion is implemented for n <= 2")
    obs = as_series(observable, k) if isinstance(observable, FormalSeries) else FormalSeries.constant(observable, k)
    total = obs[k] if k <= obs.max_order else Functional()
    if t == 0 or n == 0 or k == 0:
        return total
    Kser = generator(V, k)
    ts, ws = _composite([0.0, t], panel, spec.tensor_nodes)
    terms = []
    for j in range(1, k + 1):
        X, Y = Kser[j], obs[k - j]
        if X.is_zero or Y.is_zero:
            continue
        for s, w in zip(ts, ws):
            terms.extend(commutator(translate(X, -s), Y).scale(1j * w).terms)
    if n == 2 and k >= 2:
        for j1 in range(1, k + 1):
            for j2 in range(1, k - j1 + 1):
                Y = obs[k - j1 - j2]
                if Y.is_zero:
                    continue
                for s1, w1 in zip(ts, ws):
                    inner_t, inner_w = _composite([0.0, s1], panel, spec.tensor_nodes)
                    for s2, w2 in zip(inner_t, inner_w):
                        inner = commutator(translate(Kser[j2], -s2), Y)
                        terms.extend(commutator(translate(Kser[j1], -s1), inner).scale(-w1 * w2).terms)
    return total + Functional.from_terms(terms)


def time_evolution_expectation(state: StateSpec, observable, V: Interaction, t: float, params: ModelParams,
                               n: int = 1, k: int = 1, spec: QuadratureSpec = DEFAULT_SPEC,
                               cutoffs: CutoffSpec | None = None, method: str = "mc",
                               cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """``omega^{U(-t)}(A)`` at order ``k`` through the commutator expansion truncated at ``n``."""
    f = commutator_expansion_functional(observable, V, t, n, k, spec)
    cutoffs = V.cutoffs if cutoffs is None else cutoffs
    res = _expect_functional(state, f, params, spec, cutoffs, method, cache, k, "commutator-expansion")
    return res.value, res.stderr


def cocycle_conjugation_functional(observable, V: Interaction, t: float, k: int = 1) -> tuple[Functional, Interaction]:
    """Order-``k`` part of ``U(-t)^* A U(-t)`` and the interaction with its adjusted plateau."""
    U = cocycle_negative(V, t, k)
    obs = as_series(observable, k) if isinstance(observable, FormalSeries) else FormalSeries.constant(observable, k)
    conj = U.involution().star(obs).star(U)
    c = V.cutoffs
    return conj[k], V.with_(cutoffs=c.with_(T=max(c.T, t + c.eps)))


def cocycle_expectation(state: StateSpec, observable, V: Interaction, t: float, params: ModelParams,
                        k: int = 1, spec: QuadratureSpec = DEFAULT_SPEC, method: str = "mc",
                        cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """``omega(U(-t)^* A U(-t))`` at order ``k`` by direct cocycle conjugation."""
    f, V = cocycle_conjugation_functional(observable, V, t, k)
    res = _expect_functional(state, f, params, spec, V.cutoffs, method, cache, k, "cocycle")
    return res.value, res.stderr


def clustering_function(a, b, V: Interaction, t: float, state: StateSpec, params: ModelParams, k: int = 1,
                        spec: QuadratureSpec = DEFAULT_SPEC, method: str = "tensor",
                        cache: PropagatorCache | None = None) -> tuple[complex, float]:
    """``D(t) = omega(A alpha_t^V(B)) - omega(A) omega(alpha_t^V(B))`` summed through order ``k``.

    ``alpha_t^V(B) = U(t) alpha_t(B) U(t)^*`` with the cocycle of ``V``; the
    truncated product keeps only terms with a contraction between ``A`` and the
    evolved ``B``.
    """
    if t < 0:
        raise DomainError("clustering needs t >= 0")
    U = cocycle(V, t, k)
    c = V.cutoffs
    cut = c.with_(T=max(c.T, t + c.eps))
    bt = translate(_as_functional(b).mark_observable(), t)
    evolved = U.star(FormalSeries.constant(bt, k)).star(U.involution())
    A = _as_functional(a).mark_observable()
    terms = []
    for j in range(k + 1):
        terms.extend(_connected_pair(A, evolved[j]).terms)
    res = _expect_functional(state, Functional.from_terms(terms), params, spec, cut, method, cache, k, "clustering")
    return res.value, res.stderr
