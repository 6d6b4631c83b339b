"""Formal power series in the interaction: S-matrix, its inverse, relative
S-matrices, the Bogoliubov map and its inverse, the cocycle of the interacting
time evolution and its generator.

Orders count powers of the interaction; observables carry order 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .functionals import (
    CHI,
    CHIDOT_MINUS,
    ONE,
    ComplexityError,
    FormalSeries,
    Free,
    Functional,
    WeightTag,
    as_series,
    assert_components_touch_observable,
    monomial,
    star_product,
    time_ordered_product,
    translate,
    _as_functional,
    _shift,
)
from .model import CutoffSpec, DomainError, Event, ParameterError

MAX_ORDER = 4
TEMPORAL_VARIANTS = ("chi", "chidot-", "chi-minus-chi'")


@dataclass(frozen=True)
class Lattice:
    """Finite set of interaction atoms ``(t_a, x_a)`` with a common cell volume.

    A lattice interaction replaces the spacetime integral by the Riemann sum
    ``sum_a cell * w(t_a, x_a) phi^n(t_a, x_a)``; atoms with zero weight are
    dropped. Lattice interactions give exact probes of algebraic identities.
    """

    times: tuple
    points: tuple = ((0.0, 0.0, 0.0),)
    cell: float = 1.0

    def atoms(self):
        for t in self.times:
            for x in self.points:
                yield float(t), tuple(float(c) for c in x)


@dataclass(frozen=True)
class Interaction:
    """Local interaction ``g int w(t) h(x) phi^n(x) dx``.

    Parameters
    ----------
    n : int
        Degree of the monomial, at least 2.
    cutoffs : CutoffSpec
    temporal : {'chi', 'chidot-', "chi-minus-chi'"}
        Temporal weight: the plateau ``chi``, ``chi' theta(-t)``, or the window
        ``[chi(t) - chi(t - s)] theta(sign (t - c))`` with ``window = (s, sign, c)``.
    lattice : Lattice, optional
        Replace the integral by a sum over fixed atoms.
    """

    n: int
    cutoffs: CutoffSpec
    temporal: str = "chi"
    window: tuple = ()
    lattice: Lattice | None = None
    coupling: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError("interaction degree n must be an integer >= 2")
        if self.temporal not in TEMPORAL_VARIANTS:
            raise ParameterError(f"unknown temporal variant {self.temporal!r}")
        if self.temporal == "chi-minus-chi'" and len(self.window) != 3:
            raise ParameterError("the window variant needs (shift, sign, cut)")

    @property
    def tag(self) -> WeightTag:
        if self.temporal == "chi":
            return CHI
        if self.temporal == "chidot-":
            return CHIDOT_MINUS
        return WeightTag("chi-window", self.window)

    def with_(self, **changes) -> "Interaction":
        return replace(self, **changes)

    def functional(self) -> Functional:
        if self.lattice is None:
            return monomial([(Free(self.tag), self.n)], self.coupling)
        total = Functional()
        terms = []
        for t, x in self.lattice.atoms():
            w = float(self.tag.value(self.cutoffs, t, np.linalg.norm(x)))
            if w != 0.0:
                terms.append(monomial([(Event(t, x), self.n)], self.coupling * self.lattice.cell * w))
        for term in terms:
            total = Functional(total.terms + term.terms)
        return Functional.from_terms(total.terms)


def _as_interaction_functional(v) -> Functional:
    if isinstance(v, Interaction):
        return v.functional()
    return _as_functional(v)


def _check_order(K: int):
    if K < 0:
        raise ParameterError("maximal order must be nonnegative")
    if K > MAX_ORDER:
        raise ComplexityError(f"perturbative order {K} exceeds the guard {MAX_ORDER}")


def time_ordered_powers(v, K: int) -> list[Functional]:
    """``[1, V, V.TV, ..., V^{.T K}]``."""
    _check_order(K)
    V = _as_interaction_functional(v)
    powers = [ONE]
    for _ in range(K):
        powers.append(time_ordered_product(powers[-1], V))
    return powers


def s_matrix(v, K: int) -> FormalSeries:
    """Time-ordered exponential ``S(V) = sum_k (-i)^k / k! V^{.T k}``."""
    powers = time_ordered_powers(v, K)
    coeffs = {k: p.scale((-1j) ** k / math.factorial(k)) for k, p in enumerate(powers)}
    return FormalSeries(coeffs, K, "s-matrix")


def s_inverse(S: FormalSeries, K: int | None = None) -> FormalSeries:
    """Inverse of an S-matrix through anti-chronological products.

    With ``T^k`` the time-ordered powers read off ``S``, the anti-chronological
    powers follow from ``Tbar^k = -sum_{j=1}^k C(k, j) (-1)^j T^j * Tbar^{k-j}``
    and ``S^{-1} = sum_k i^k / k! Tbar^k``.
    """
    if S.provenance != "s-matrix":
        raise ParameterError("s_inverse needs an S-matrix series; use star_inverse otherwise")
    K = S.max_order if K is None else min(K, S.max_order)
    T = [S[k].scale(math.factorial(k) / (-1j) ** k) for k in range(K + 1)]
    tbar = [ONE]
    for k in range(1, K + 1):
        acc = Functional()
        for j in range(1, k + 1):
            acc = acc + star_product(T[j], tbar[k - j]).scale(-math.comb(k, j) * (-1) ** j)
        tbar.append(acc)
    coeffs = {k: tbar[k].scale(1j**k / math.factorial(k)) for k in range(K + 1)}
    return FormalSeries(coeffs, K, "inverse")


def star_inverse(S: FormalSeries) -> FormalSeries:
    """Generic star inverse of a series with unit leading coefficient."""
    if not S[0].structurally_equal(ONE, 1e-12):
        raise ParameterError("series must start with the unit functional")
    X = [ONE]
    for k in range(1, S.max_order + 1):
        acc = Functional()
        for j in range(1, k + 1):
            acc = acc - star_product(S[j], X[k - j])
        X.append(acc)
    return FormalSeries(dict(enumerate(X)), S.max_order, "inverse")


@dataclass
class BigradedSeries:
    """Coefficients ``c[(k, l)]`` of order ``k`` in V and ``l`` in an auxiliary source."""

    coefficients: dict = field(default_factory=dict)
    max_order: int = 0
    max_source_order: int = 1

    def __getitem__(self, kl) -> Functional:
        return self.coefficients.get(kl, Functional())

    def source_derivative(self) -> FormalSeries:
        """``d/ds`` at ``s = 0`` (the ``l = 1`` coefficients) as a series in V."""
        return FormalSeries({k: self[(k, 1)] for k in range(self.max_order + 1)}, self.max_order, "relative-s")


def relative_s(v, a, K: int, L: int = 1) -> BigradedSeries:
    """Relative S-matrix ``S_V(sA) = S(V)^{-1} * S(V + sA)``, bi-graded in (V, s)."""
    _check_order(K)
    V = _as_interaction_functional(v)
    A = _as_functional(a).mark_observable()
    vp = time_ordered_powers(V, K)
    ap = [ONE]
    for _ in range(L):
        ap.append(time_ordered_product(ap[-1], A))
    sinv = s_inverse(s_matrix(V, K))
    mixed = {}
    for k in range(K + 1):
        for l in range(L + 1):
            c = (-1j) ** (k + l) / (math.factorial(k) * math.factorial(l))
            mixed[(k, l)] = time_ordered_product(vp[k], ap[l]).scale(c)
    out = {}
    for k in range(K + 1):
        for l in range(L + 1):
            acc = Functional()
            for j in range(k + 1):
                acc = acc + star_product(sinv[j], mixed[(k - j, l)])
            out[(k, l)] = acc
    return BigradedSeries(out, K, L)


def _check_bogoliubov_guard(V: Functional, K: int):
    if V.max_degree >= 4 and K > 3:
        raise ComplexityError("Bogoliubov maps of degree-4 interactions are limited to order 3")


def bogoliubov(v, a, K: int, check: bool = True) -> FormalSeries:
    """Bogoliubov map ``R_V(A) = S(V)^{-1} * (S(V) .T A)`` truncated at order ``K``.

    The observable's vertices are marked; with ``check`` every term is
    asserted to have each connected component touch an observable vertex.
    """
    _check_order(K)
    V = _as_interaction_functional(v)
    _check_bogoliubov_guard(V, K)
    A = _as_functional(a).mark_observable()
    S = s_matrix(V, K)
    sinv = s_inverse(S)
    sa = [time_ordered_product(S[k], A) for k in range(K + 1)]
    coeffs = {}
    for k in range(K + 1):
        acc = Functional()
        for j in range(k + 1):
            acc = acc + star_product(sinv[j], sa[k - j])
        coeffs[k] = acc
    out = FormalSeries(coeffs, K, "bogoliubov")
    if check:
        for k in out.orders():
            assert_components_touch_observable(out[k].terms)
    return out


def bogoliubov_inverse(v, b, K: int) -> FormalSeries:
    """``R_V^{-1}(B) = S(-V) .T (S(V) * B)`` for a series ``B``."""
    _check_order(K)
    V = _as_interaction_functional(v)
    _check_bogoliubov_guard(V, K)
    B = as_series(b, K)
    S = s_matrix(V, K)
    Sm = s_matrix(V.scale(-1), K)
    out = Sm.tord(S.star(B))
    out.provenance = "bogoliubov-inverse"
    return out


def interacting_product(v, a, b, K: int) -> FormalSeries:
    """``A *_V B = R_V^{-1}(R_V(A) * R_V(B))``."""
    ra = bogoliubov(v, a, K, check=False)
    rb = bogoliubov(v, b, K, check=False)
    return bogoliubov_inverse(v, ra.star(rb), K)


def alpha(x, t: float, u: float = 0.0):
    """Free time evolution of a functional or series (complex shifts with ``u >= 0``)."""
    if isinstance(x, FormalSeries):
        return x.map(lambda f: translate(f, t, u))
    return translate(x, t, u)


def _real_shift(x, t: float):
    if isinstance(x, FormalSeries):
        return x.map(lambda f: _shift(f, complex(t)))
    return _shift(_as_functional(x), complex(t))


def _cocycle_interaction(V: Interaction, t: float) -> Interaction:
    c = V.cutoffs
    if c.T < t + c.eps:
        c = c.with_(T=t + c.eps)
    return V.with_(cutoffs=c)


def past_window(V: Interaction, t: float) -> Interaction:
    """``V_t^-``: the part of ``V - alpha_t V`` in the past of ``alpha_t`` of the slice.

    The cut sits at ``s = t``, inside the plateau overlap where ``chi(s) - chi(s - t)``
    vanishes, so ``V_t^-`` is earlier than the translated observable slice.
    """
    return V.with_(temporal="chi-minus-chi'", window=(float(t), -1.0, float(t)))


def cocycle(V: Interaction, t: float, K: int) -> FormalSeries:
    """``U(t) = S(V)^* * S(V - V_t^-)`` for ``t >= 0``.

    The plateau end ``T`` is raised to ``t + eps`` when needed.
    """
    if t < 0:
        raise DomainError("cocycle(t) needs t >= 0; use cocycle_negative for U(-t)")
    V = _cocycle_interaction(V, t)
    Vf = V.functional()
    W = Vf - past_window(V, t).functional()
    U = s_matrix(Vf, K).involution().star(s_matrix(W, K))
    U.provenance = "cocycle"
    return U


def cocycle_negative(V: Interaction, t: float, K: int) -> FormalSeries:
    """``U(-t) = alpha_{-t}(U(t)^*)`` for ``t >= 0``."""
    U = cocycle(V, t, K).involution()
    out = _real_shift(U, -t)
    out.provenance = "cocycle"
    return out


def generator(V: Interaction, K: int) -> FormalSeries:
    """``K = R_V(Vdot)`` with ``Vdot`` the interaction with temporal weight ``chi' theta(-t)``.

    The order-``j`` coefficient is ``R_{j-1}(Vdot)``, since ``Vdot`` is itself
    first order in the coupling; order 0 vanishes.
    """
    _check_order(K)
    vdot = V.with_(temporal="chidot-").functional()
    if K == 0:
        return FormalSeries({0: Functional()}, 0, "generator")
    R = bogoliubov(V, vdot, K - 1, check=False)
    return FormalSeries({j: R[j - 1] for j in range(1, K + 1)}, K, "generator")


def graphs(series: FormalSeries) -> dict:
    """JSON-ready listing of the contraction graphs per order."""
    out = {"provenance": series.provenance, "max_order": series.max_order, "orders": []}
    for k in series.orders():
        entries = []
        for t in series[k].terms:
            entries.append({
                "coefficient": {"re": t.coefficient.real, "im": t.coefficient.imag},
                "vertices": [{"power": v.power, "free": v.is_free, "observable": v.observable,
                              "label": v.label} for v in t.vertices],
                "edges": [{"kind": e.kind, "i": e.i, "j": e.j, "multiplicity": e.mult} for e in t.edges],
            })
        out["orders"].append({"order": k, "terms": entries})
    return out
