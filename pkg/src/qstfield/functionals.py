"""Polynomial field functionals with exact Wick combinatorics.

A functional is a finite sum of terms

    c * prod_edges H_e(x_i - x_j)^mult * prod_vertices phi(x_v)^power_v

where each vertex is either a fixed event or a free (integrated) point carrying
a cutoff weight, and ``power_v`` counts the field legs not yet contracted.
Products contract legs of the left factor with legs of the right factor only,
so terms never contain self-edges (normal ordering).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from more_itertools import set_partitions

from .model import ZERO, CutoffSpec, DomainError, Event, ModelParams, ParameterError, PlaneWaveConfig
from .propagators import DEFAULT_SPEC, PropagatorCache, QuadratureSpec, edge_kernel

MAX_DEGREE = 16
MAX_CORRELATOR_FACTORS = 6

STAR_PLUS = "star:D+"
STAR_PJ = "star:iDl/2"
TORD = "tord:DF"
ATORD = "atord:DF*"
THERMAL = "thermal:Db"
EDGE_KINDS = (STAR_PLUS, STAR_PJ, TORD, ATORD, THERMAL)
SYMMETRIC_KINDS = (TORD, ATORD)

# vacuum and thermal kernel names for each edge kind (see propagators.edge_kernel)
VACUUM_KERNEL = {STAR_PLUS: "plus", STAR_PJ: "half-i-pj", TORD: "F", ATORD: "Fbar", THERMAL: "beta"}
THERMAL_KERNEL = {STAR_PLUS: "beta", STAR_PJ: "half-i-pj", TORD: "F+d", ATORD: "Fbar+d", THERMAL: "beta"}


class ComplexityError(RuntimeError):
    """Raised when a request exceeds a combinatorial complexity guard."""


class StructureError(AssertionError):
    """Raised when a generated term violates a structural invariant."""


# ---------------------------------------------------------------- weights

_OBSERVABLE_KERNELS: dict = {}


def register_observable_kernel(name: str, func, time_support: tuple[float, float], radius: float):
    """Register a smooth observable weight ``func(t, r)`` with compact support."""
    _OBSERVABLE_KERNELS[name] = (func, tuple(time_support), float(radius))


@dataclass(frozen=True)
class WeightTag:
    """Weight attached to a free vertex.

    Names: ``chi`` (chi h), ``chidot-`` (chi' theta(-t) h), ``chi-window``
    with params ``(s, sign, c)`` giving ``[chi(t) - chi(t - s)] theta(sign (t - c)) h``,
    ``chi-past`` with params ``(t0,)`` giving ``(1 - chi(t)) theta(-t) theta(t - t0) h``,
    and ``obs:<name>`` for a registered observable kernel.
    """

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in ("chi", "chidot-", "chi-window", "chi-past") and not self.name.startswith("obs:"):
            raise ParameterError(f"unregistered weight tag {self.name!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def value(self, cutoffs: CutoffSpec, t, r):
        t = np.asarray(t, dtype=float)
        if self.name == "chi":
            return cutoffs.chi(t) * cutoffs.h_radial(r)
        if self.name == "chidot-":
            return np.where(t < 0, cutoffs.chi_dot(t), 0.0) * cutoffs.h_radial(r)
        if self.name == "chi-window":
            s, sign, c = self.params
            window = cutoffs.chi(t) - cutoffs.chi(t - s)
            return np.where(sign * (t - c) > 0, window, 0.0) * cutoffs.h_radial(r)
        if self.name == "chi-past":
            (t0,) = self.params
            inside = (t < 0) & (t > t0)
            return np.where(inside, 1.0 - cutoffs.chi(t), 0.0) * cutoffs.h_radial(r)
        func, _, _ = _OBSERVABLE_KERNELS[self.name[4:]]
        return func(t, r)

    def time_support(self, cutoffs: CutoffSpec) -> tuple[float, float]:
        lo, hi = cutoffs.time_support
        if self.name == "chi":
            return lo, hi
        if self.name == "chidot-":
            return lo, -cutoffs.eps
        if self.name == "chi-window":
            s, sign, c = self.params
            a, b = min(lo, lo + s), max(hi, hi + s)
            return (a, min(b, c)) if sign < 0 else (max(a, c), b)
        if self.name == "chi-past":
            return self.params[0], -cutoffs.eps
        return _OBSERVABLE_KERNELS[self.name[4:]][1]

    def breakpoints(self, cutoffs: CutoffSpec) -> list[float]:
        """Times where the weight has a kink or a plateau edge (for panel placement)."""
        lo, hi = self.time_support(cutoffs)
        pts = {lo, hi}
        if self.name in ("chi", "chi-window", "chi-past"):
            e, T = cutoffs.eps, cutoffs.T
            shifts = [0.0] + ([self.params[0]] if self.name == "chi-window" else [])
            for s in shifts:
                pts.update(p + s for p in (-2 * e, -e, T, T + e))
        return sorted(p for p in pts if lo <= p <= hi)

    def radius(self, cutoffs: CutoffSpec) -> float:
        if self.name.startswith("obs:"):
            return _OBSERVABLE_KERNELS[self.name[4:]][2]
        return cutoffs.radius


CHI = WeightTag("chi")
CHIDOT_MINUS = WeightTag("chidot-")


# ---------------------------------------------------------------- structures

@dataclass(frozen=True)
class Fixed:
    event: Event


@dataclass(frozen=True)
class Free:
    tag: WeightTag


@dataclass(frozen=True)
class Vertex:
    """Vertex of a term.

    ``label`` groups vertices created by one :func:`monomial` call; products keep
    the labels of different factors distinct. ``shift`` is the complex time
    translation ``t - iu`` applied at evaluation. ``observable`` marks vertices
    of the observable in Bogoliubov maps.
    """

    label: int
    position: Fixed | Free
    power: int
    shift: complex = 0j
    observable: bool = False

    @property
    def is_free(self) -> bool:
        return isinstance(self.position, Free)

    def type_key(self):
        pos = self.position
        if isinstance(pos, Fixed):
            e = pos.event
            pk = (0, e.t, e.u, *e.x)
        else:
            pk = (1, pos.tag.name, *pos.tag.params)
        return (pk, self.shift.real, self.shift.imag, self.power, self.observable)


@dataclass(frozen=True)
class Edge:
    kind: str
    i: int
    j: int
    mult: int
    beta: float | None = None


@dataclass(frozen=True)
class MonomialTerm:
    coefficient: complex
    vertices: tuple
    edges: tuple = ()

    @property
    def degree(self) -> int:
        return sum(v.power for v in self.vertices)

    def key(self):
        return _canonical(self.vertices, self.edges)[0]


def _canonical(vertices: tuple, edges: tuple):
    """Canonical ordering of vertices, labels and edges.

    Vertices are sorted by type; permutations among equal-type vertices are
    searched (up to 720 candidates) for the lexicographically smallest edge
    encoding, so isomorphic terms share a key.
    """
    n = len(vertices)
    tkeys = [v.type_key() for v in vertices]
    base = sorted(range(n), key=lambda i: (tkeys[i], vertices[i].label, i))
    classes = [list(g) for _, g in itertools.groupby(base, key=lambda i: tkeys[i])]
    count = 1
    for c in classes:
        count *= math.factorial(len(c))
    if count <= 720:
        candidates = (sum(p, []) for p in itertools.product(*(list(map(list, itertools.permutations(c))) for c in classes)))
    else:
        candidates = iter([base])
    best = None
    for order in candidates:
        pos = {old: new for new, old in enumerate(order)}
        relabel: dict = {}
        labels = []
        for old in order:
            lab = vertices[old].label
            if lab not in relabel:
                relabel[lab] = len(relabel)
            labels.append(relabel[lab])
        enc = []
        for e in edges:
            a, b = pos[e.i], pos[e.j]
            if e.kind in SYMMETRIC_KINDS and a > b:
                a, b = b, a
            enc.append((e.kind, a, b, e.mult, -1.0 if e.beta is None else e.beta))
        enc.sort()
        cand = (tuple(labels), tuple(enc))
        if best is None or cand < best[0]:
            best = (cand, order)
    (labels, enc), order = best
    new_vertices = tuple(replace(vertices[old], label=labels[k]) for k, old in enumerate(order))
    new_edges = tuple(Edge(k, a, b, m, None if beta < 0 else beta) for k, a, b, m, beta in enc)
    key = (tuple(tkeys[i] for i in order), labels, enc)
    return key, new_vertices, new_edges


def _prune(vertices: tuple, edges: tuple):
    """Drop fixed vertices with no legs and no edges (they contribute a factor 1)."""
    used = {e.i for e in edges} | {e.j for e in edges}
    keep = [k for k, v in enumerate(vertices) if v.is_free or v.power > 0 or k in used]
    if len(keep) == len(vertices):
        return vertices, edges
    remap = {old: new for new, old in enumerate(keep)}
    return (tuple(vertices[k] for k in keep),
            tuple(replace(e, i=remap[e.i], j=remap[e.j]) for e in edges))


@dataclass(frozen=True)
class Functional:
    """Canonical finite sum of :class:`MonomialTerm` (merged, zero terms dropped)."""

    terms: tuple = ()

    @staticmethod
    def from_terms(terms: Iterable[MonomialTerm]) -> "Functional":
        acc: dict = {}
        for term in terms:
            if term.coefficient == 0:
                continue
            vs, es = _prune(term.vertices, term.edges)
            key, vs, es = _canonical(vs, es)
            slot = acc.get(key)
            if slot is None:
                acc[key] = [complex(term.coefficient), abs(term.coefficient), vs, es]
            else:
                slot[0] += term.coefficient
                slot[1] += abs(term.coefficient)
        out = []
        for key in sorted(acc):
            c, scale, vs, es = acc[key]
            if abs(c) <= 1e-12 * scale:
                continue
            out.append(MonomialTerm(c, vs, es))
        return Functional(tuple(out))

    def __add__(self, other: "Functional") -> "Functional":
        return Functional.from_terms(self.terms + _as_functional(other).terms)

    def __radd__(self, other):
        if other == 0:
            return self
        return self.__add__(other)

    def __neg__(self) -> "Functional":
        return self.scale(-1)

    def __sub__(self, other: "Functional") -> "Functional":
        return self + (-_as_functional(other))

    def scale(self, c: complex) -> "Functional":
        if c == 0:
            return Functional()
        return Functional(tuple(replace(t, coefficient=t.coefficient * c) for t in self.terms))

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def max_degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    @property
    def has_free(self) -> bool:
        return any(v.is_free for t in self.terms for v in t.vertices)

    def structurally_equal(self, other: "Functional", tol: float = 0.0) -> bool:
        a = {t.key(): t.coefficient for t in self.terms}
        b = {t.key(): t.coefficient for t in other.terms}
        if a.keys() != b.keys():
            return False
        return all(abs(a[k] - b[k]) <= tol * max(1.0, abs(a[k])) for k in a)

    def mark_observable(self) -> "Functional":
        return Functional.from_terms(
            replace(t, vertices=tuple(replace(v, observable=True) for v in t.vertices)) for t in self.terms
        )

    def to_json(self) -> list:
        return [_term_json(t) for t in self.terms]


def _as_functional(x) -> Functional:
    if isinstance(x, Functional):
        return x
    if isinstance(x, (int, float, complex)):
        return constant(x)
    raise TypeError(f"cannot convert {type(x).__name__} to a functional")


def _position_json(pos):
    if isinstance(pos, Fixed):
        e = pos.event
        return {"fixed": {"t": e.t, "u": e.u, "x": list(e.x)}}
    return {"free": {"tag": pos.tag.name, "params": list(pos.tag.params)}}


def _term_json(t: MonomialTerm) -> dict:
    return {
        "coefficient": {"re": t.coefficient.real, "im": t.coefficient.imag},
        "vertices": [
            {"label": v.label, "position": _position_json(v.position), "power": v.power,
             "shift": {"re": v.shift.real, "im": v.shift.imag}, "observable": v.observable}
            for v in t.vertices
        ],
        "edges": [
            {"kind": e.kind, "i": e.i, "j": e.j, "multiplicity": e.mult, **({"beta": e.beta} if e.beta else {})}
            for e in t.edges
        ],
    }


def functional_from_json(data: list) -> Functional:
    terms = []
    for t in data:
        vs = []
        for v in t["vertices"]:
            p = v["position"]
            if "fixed" in p:
                f = p["fixed"]
                pos = Fixed(Event(f["t"], tuple(f["x"]), f["u"]))
            else:
                pos = Free(WeightTag(p["free"]["tag"], tuple(p["free"]["params"])))
            vs.append(Vertex(v["label"], pos, v["power"], complex(v["shift"]["re"], v["shift"]["im"]), v["observable"]))
        es = [Edge(e["kind"], e["i"], e["j"], e["multiplicity"], e.get("beta")) for e in t["edges"]]
        c = t["coefficient"]
        terms.append(MonomialTerm(complex(c["re"], c["im"]), tuple(vs), tuple(es)))
    return Functional.from_terms(terms)


def dumps(a: Functional) -> str:
    return json.dumps(a.to_json(), sort_keys=True)


# ---------------------------------------------------------------- constructors

def _position(p) -> Fixed | Free:
    if isinstance(p, (Fixed, Free)):
        return p
    if isinstance(p, Event):
        return Fixed(p)
    if isinstance(p, WeightTag):
        return Free(p)
    raise ParameterError(f"cannot interpret {p!r} as a vertex position")


def monomial(vertices: Iterable[tuple], coefficient: complex = 1.0) -> Functional:
    """Single-term functional ``c * prod phi(x_v)^power_v`` (no edges).

    Repeated fixed positions are merged into one vertex.
    """
    merged: dict = {}
    order = []
    for pos, power in vertices:
        if power < 0:
            raise ParameterError("vertex powers must be nonnegative")
        pos = _position(pos)
        if isinstance(pos, Fixed) and pos in merged:
            merged[pos] += power
            continue
        key = pos if isinstance(pos, Fixed) else object()
        merged[key] = power
        order.append((key, pos))
    vs = tuple(Vertex(0, pos, merged[key]) for key, pos in order)
    return Functional.from_terms([MonomialTerm(complex(coefficient), vs, ())])


def constant(c: complex) -> Functional:
    return Functional.from_terms([MonomialTerm(complex(c), (), ())])


def field_at(event: Event, power: int = 1, coefficient: complex = 1.0) -> Functional:
    """Atom ``c * phi(x)^power``."""
    return monomial([(event, power)], coefficient)


ONE = constant(1.0)


# ---------------------------------------------------------------- products

def _contractions(pa: list, pb: list):
    """Yield contraction matrices as lists of ``(i, j, k)`` with k >= 1."""
    cells = [(i, j) for i in range(len(pa)) for j in range(len(pb)) if pa[i] and pb[j]]
    row, col = list(pa), list(pb)
    acc: list = []

    def rec(c):
        if c == len(cells):
            yield list(acc)
            return
        i, j = cells[c]
        for k in range(min(row[i], col[j]) + 1):
            if k:
                row[i] -= k
                col[j] -= k
                acc.append((i, j, k))
            yield from rec(c + 1)
            if k:
                acc.pop()
                row[i] += k
                col[j] += k

    yield from rec(0)


def _falling(n: int, k: int) -> int:
    return math.factorial(n) // math.factorial(n - k)


def _product_terms(ta: MonomialTerm, tb: MonomialTerm, kind: str, beta=None, connected=False):
    pa = [v.power for v in ta.vertices]
    pb = [v.power for v in tb.vertices]
    if sum(pa) + sum(pb) > MAX_DEGREE:
        raise ComplexityError(
            f"product of terms with {sum(pa)} and {sum(pb)} legs exceeds the degree cap {MAX_DEGREE}; "
            "lower the perturbative order or the interaction degree"
        )
    offset = max((v.label for v in ta.vertices), default=-1) + 1
    na = len(ta.vertices)
    b_vertices = [replace(v, label=v.label + offset) for v in tb.vertices]
    b_edges = [replace(e, i=e.i + na, j=e.j + na) for e in tb.edges]
    coeff = ta.coefficient * tb.coefficient
    for pattern in _contractions(pa, pb):
        if connected and not pattern:
            continue
        rows = [0] * len(pa)
        cols = [0] * len(pb)
        denom = 1
        for i, j, k in pattern:
            rows[i] += k
            cols[j] += k
            denom *= math.factorial(k)
        mult = 1
        for p, r in zip(pa, rows):
            mult *= _falling(p, r)
        for p, c in zip(pb, cols):
            mult *= _falling(p, c)
        mult //= denom
        vs = tuple(replace(v, power=v.power - r) for v, r in zip(ta.vertices, rows)) + tuple(
            replace(v, power=v.power - c) for v, c in zip(b_vertices, cols)
        )
        new = tuple(Edge(kind, i, na + j, k, beta) for i, j, k in pattern)
        yield MonomialTerm(coeff * mult, vs, ta.edges + tuple(b_edges) + new)


def contract_product(a: Functional, b: Functional, kind: str, beta=None, connected=False) -> Functional:
    """``m o exp(Gamma_H)`` for the kernel ``kind``; only cross-factor contractions."""
    if kind not in EDGE_KINDS:
        raise ParameterError(f"unknown contraction kernel {kind!r}")
    a, b = _as_functional(a), _as_functional(b)
    return Functional.from_terms(
        t for ta in a.terms for tb in b.terms for t in _product_terms(ta, tb, kind, beta, connected)
    )


def star_product(a: Functional, b: Functional, kernel: str = STAR_PLUS, beta=None,
                 connected: bool = False) -> Functional:
    """Star product with a star-type kernel (Wightman by default).

    With ``connected`` set, only terms with at least one contraction between the
    factors are kept (for truncated correlations).
    """
    if kernel in (TORD, ATORD):
        raise ParameterError("use time_ordered_product for the Feynman kernel")
    return contract_product(a, b, kernel, beta, connected)


def time_ordered_product(a: Functional, b: Functional) -> Functional:
    """Commutative product with Feynman-kernel contractions."""
    return contract_product(a, b, TORD)


def anti_time_ordered_product(a: Functional, b: Functional) -> Functional:
    return contract_product(a, b, ATORD)


def commutator(a: Functional, b: Functional) -> Functional:
    return star_product(a, b) - star_product(b, a)


# ---------------------------------------------------------------- involution and translation

_INVOLUTION_KIND = {TORD: ATORD, ATORD: TORD}


def involution(a: Functional) -> Functional:
    """``A*``: conjugate coefficients and shifts; swap star-type edge arguments."""
    terms = []
    for t in _as_functional(a).terms:
        vs = tuple(replace(v, shift=v.shift.conjugate()) for v in t.vertices)
        es = []
        for e in t.edges:
            if e.kind in _INVOLUTION_KIND:
                es.append(replace(e, kind=_INVOLUTION_KIND[e.kind]))
            else:
                es.append(replace(e, i=e.j, j=e.i))
        terms.append(MonomialTerm(t.coefficient.conjugate(), vs, tuple(es)))
    return Functional.from_terms(terms)


def resolve_time_order(a: Functional) -> Functional:
    """Rewrite edges between fixed vertices into a representation-independent form.

    ``D_F(x) = D+(x)`` for ``x0 > 0`` and ``conj D_F(x) = D+(-x)``, so Feynman
    edges between time-separated fixed vertices become oriented Wightman edges
    (later argument first). At equal times ``D+ = D_F``, so Wightman edges there
    become symmetric Feynman edges. Value preserving; used to compare series
    built from different products coefficient by coefficient.
    """
    terms = []
    for t in _as_functional(a).terms:
        es = []
        for e in t.edges:
            vi, vj = t.vertices[e.i], t.vertices[e.j]
            if vi.is_free or vj.is_free or vi.shift.imag != vj.shift.imag or e.kind not in (STAR_PLUS, TORD, ATORD):
                es.append(e)
                continue
            ti = vi.position.event.t + vi.shift.real
            tj = vj.position.event.t + vj.shift.real
            if ti == tj:
                es.append(replace(e, kind=TORD) if vi.position.event.u == vj.position.event.u else e)
            elif e.kind == STAR_PLUS:
                es.append(e)
            else:
                later_first = (ti > tj) == (e.kind == TORD)
                es.append(replace(e, kind=STAR_PLUS) if later_first else replace(e, kind=STAR_PLUS, i=e.j, j=e.i))
        terms.append(replace(t, edges=tuple(es)))
    return Functional.from_terms(terms)


def _shift(a: Functional, z: complex) -> Functional:
    return Functional.from_terms(
        replace(t, vertices=tuple(replace(v, shift=v.shift + z) for v in t.vertices)) for t in a.terms
    )


def translate(a: Functional, t: float, u: float = 0.0) -> Functional:
    """Translate every vertex by the complex time ``t - iu`` (``u >= 0``)."""
    if u < 0:
        raise DomainError("only lower half-plane translations (u >= 0) are allowed")
    return _shift(_as_functional(a), complex(t, -u))


# ---------------------------------------------------------------- formal series

@dataclass
class FormalSeries:
    """Truncated power series in the coupling with functional coefficients."""

    coefficients: dict = field(default_factory=dict)
    max_order: int = 0
    provenance: str = ""

    def __post_init__(self):
        self.coefficients = {
            k: _as_functional(v) for k, v in self.coefficients.items() if k <= self.max_order
        }

    def __getitem__(self, k: int) -> Functional:
        if k > self.max_order:
            raise ParameterError(f"order {k} exceeds the truncation {self.max_order}")
        return self.coefficients.get(k, Functional())

    def orders(self):
        return range(self.max_order + 1)

    def truncate(self, k: int) -> "FormalSeries":
        return FormalSeries({o: self[o] for o in range(min(k, self.max_order) + 1)}, min(k, self.max_order), self.provenance)

    def __add__(self, other: "FormalSeries") -> "FormalSeries":
        k = min(self.max_order, other.max_order)
        return FormalSeries({o: self[o] + other[o] for o in range(k + 1)}, k)

    def __sub__(self, other: "FormalSeries") -> "FormalSeries":
        k = min(self.max_order, other.max_order)
        return FormalSeries({o: self[o] - other[o] for o in range(k + 1)}, k)

    def scale(self, c: complex) -> "FormalSeries":
        return FormalSeries({o: f.scale(c) for o, f in self.coefficients.items()}, self.max_order, self.provenance)

    def map(self, fn) -> "FormalSeries":
        return FormalSeries({o: fn(f) for o, f in self.coefficients.items()}, self.max_order, self.provenance)

    def product(self, other: "FormalSeries", op) -> "FormalSeries":
        k = min(self.max_order, other.max_order)
        out = {}
        for o in range(k + 1):
            acc = Functional()
            for j in range(o + 1):
                x, y = self[j], other[o - j]
                if x.is_zero or y.is_zero:
                    continue
                acc = acc + op(x, y)
            out[o] = acc
        return FormalSeries(out, k)

    def star(self, other: "FormalSeries") -> "FormalSeries":
        return self.product(other, star_product)

    def tord(self, other: "FormalSeries") -> "FormalSeries":
        return self.product(other, time_ordered_product)

    def involution(self) -> "FormalSeries":
        return self.map(involution)

    @staticmethod
    def constant(a: Functional, max_order: int) -> "FormalSeries":
        return FormalSeries({0: _as_functional(a)}, max_order)

    def to_json(self) -> dict:
        return {"max_order": self.max_order, "provenance": self.provenance,
                "orders": {str(o): f.to_json() for o, f in sorted(self.coefficients.items())}}


def as_series(x, max_order: int) -> FormalSeries:
    if isinstance(x, FormalSeries):
        return x.truncate(max_order) if x.max_order > max_order else x
    return FormalSeries.constant(x, max_order)


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class ContractedTerm:
    """Term with every leg assigned: kernel edges, leftover powers, weights.

    Edges are ``(kernel_name, i, j, mult)`` with kernel names understood by
    :func:`qstfield.propagators.edge_kernel`; ``i == j`` occurs only for the
    thermal self-pairing kernel ``d`` (value ``m_beta``).
    """

    coefficient: complex
    vertices: tuple
    edges: tuple
    powers: tuple


def _state_kernel_table(state: str):
    if state == "vacuum":
        return VACUUM_KERNEL
    if state == "thermal":
        return THERMAL_KERNEL
    raise ParameterError(f"unknown state {state!r}")


def _pairings(powers: list):
    """Perfect matchings of legs among vertices: yield (count, [(v, w, k)]) with v <= w."""
    n = len(powers)
    cells = [(v, w) for v in range(n) for w in range(v, n)]
    left = list(powers)
    acc: list = []

    def rec(c):
        if c == len(cells):
            if all(x == 0 for x in left):
                count = 1
                for p in powers:
                    count *= math.factorial(p)
                for v, w, k in acc:
                    count //= math.factorial(k) * (2**k if v == w else 1)
                yield count, list(acc)
            return
        v, w = cells[c]
        if v == w:
            kmax = left[v] // 2
        else:
            kmax = min(left[v], left[w])
        for k in range(kmax + 1):
            used = 2 * k if v == w else k
            if k:
                left[v] -= used if v == w else k
                if v != w:
                    left[w] -= k
                acc.append((v, w, k))
            yield from rec(c + 1)
            if k:
                acc.pop()
                left[v] += used if v == w else k
                if v != w:
                    left[w] += k

    yield from rec(0)


def contract_to_state(a: Functional, state: str = "vacuum", beta: float | None = None) -> list[ContractedTerm]:
    """Fully contracted terms of ``omega(A)``.

    Vacuum: terms with leftover legs vanish. Thermal: edge kernels are
    substituted (D+ -> D_beta, D_F -> D_F + d) and leftover legs are paired
    within each label group with ``d = D_beta - D+``.
    """
    table = _state_kernel_table(state)
    if state == "thermal" and not (beta and beta > 0):
        raise ParameterError("thermal state needs beta > 0")
    out = []
    for t in _as_functional(a).terms:
        edges = [(table[e.kind], e.i, e.j, e.mult) for e in t.edges]
        powers = [v.power for v in t.vertices]
        if state == "vacuum" or not any(powers):
            if any(powers):
                continue
            out.append(ContractedTerm(t.coefficient, t.vertices, tuple(edges), tuple([0] * len(powers))))
            continue
        groups: dict = {}
        for k, v in enumerate(t.vertices):
            if v.power:
                groups.setdefault(v.label, []).append(k)
        options = []
        for idx in groups.values():
            opts = [(c, [(idx[v], idx[w], k) for v, w, k in pairs if k])
                    for c, pairs in _pairings([powers[i] for i in idx])]
            options.append(opts)
        for combo in itertools.product(*options):
            c = t.coefficient
            extra = []
            for count, pairs in combo:
                c = c * count
                extra.extend(("d", v, w, k) for v, w, k in pairs)
            out.append(ContractedTerm(c, t.vertices, tuple(edges + extra), tuple([0] * len(powers))))
    return out


def classical_terms(a: Functional) -> list[ContractedTerm]:
    """Terms for evaluation at a field configuration (vacuum kernels, legs kept)."""
    return [
        ContractedTerm(t.coefficient, t.vertices, tuple((VACUUM_KERNEL[e.kind], e.i, e.j, e.mult) for e in t.edges),
                       tuple(v.power for v in t.vertices))
        for t in _as_functional(a).terms
    ]


def _edge_betas(a: Functional) -> set:
    return {e.beta for t in a.terms for e in t.edges if e.beta is not None}


def evaluate_terms(terms: list[ContractedTerm], params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
                   beta: float | None = None, config: PlaneWaveConfig = ZERO,
                   cache: PropagatorCache | None = None) -> complex:
    """Sum of fully fixed contracted terms; edge kernels are evaluated in batches."""
    requests: dict = {}
    plan = []
    for term in terms:
        zs = []
        xs = []
        for v in term.vertices:
            if v.is_free:
                raise ParameterError("free vertices need integration; use states.integrate")
            e = v.position.event
            zs.append(e.z + v.shift)
            xs.append(np.asarray(e.x))
        slots = []
        for name, i, j, mult in term.edges:
            tau = zs[i] - zs[j]
            r = float(np.linalg.norm(xs[i] - xs[j]))
            lst = requests.setdefault(name, [])
            slots.append((name, len(lst), mult))
            lst.append((tau, r))
        field = 1.0 + 0j
        for z, x, p in zip(zs, xs, term.powers):
            if p:
                field *= complex(config(z, x)) ** p
        plan.append((term.coefficient, slots, field))
    values = {}
    for name, pts in requests.items():
        tau = np.array([p[0] for p in pts], dtype=complex)
        r = np.array([p[1] for p in pts])
        values[name] = edge_kernel(name, params, tau, r, spec, beta, cache)
    total = 0j
    for coeff, slots, field in plan:
        val = coeff * field
        for name, idx, mult in slots:
            val *= values[name][idx] ** mult
        total += val
    return complex(total)


def evaluate(a: Functional, config: PlaneWaveConfig = ZERO, params: ModelParams | None = None,
             spec: QuadratureSpec = DEFAULT_SPEC, cache: PropagatorCache | None = None):
    """Evaluate ``A`` at a plane-wave configuration (``ZERO`` by default).

    Returns a complex number when every vertex is fixed; with free vertices the
    surviving terms are returned as an :class:`qstfield.states.IntegrandExpression`.
    """
    a = _as_functional(a)
    at_zero = not config.amplitudes
    terms = contract_to_state(a, "vacuum") if at_zero else classical_terms(a)
    betas = _edge_betas(a)
    beta = betas.pop() if betas else None
    if a.has_free:
        from .states import IntegrandExpression

        return IntegrandExpression(tuple(terms), beta=beta, config=config, provenance="evaluate")
    if not terms:
        return 0j
    if params is None:
        if all(not term.edges for term in terms):
            params = ModelParams(1.0, 1.0)
        else:
            raise ParameterError("model parameters are needed to evaluate propagator edges")
    return evaluate_terms(terms, params, spec, beta, config, cache)


def state_value(a: Functional, params: ModelParams, state: str = "vacuum", beta: float | None = None,
                spec: QuadratureSpec = DEFAULT_SPEC, cache: PropagatorCache | None = None) -> complex:
    """``omega(A)`` for a fully fixed functional in the vacuum or thermal state."""
    a = _as_functional(a)
    if a.has_free:
        raise ParameterError("free vertices need integration; use states.expectation")
    return evaluate_terms(contract_to_state(a, state, beta), params, spec, beta, ZERO, cache)


def connected_correlator(state, factors: list, params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
                         cache: PropagatorCache | None = None) -> complex:
    """Truncated correlation ``omega^c(A_1 x ... x A_n)`` by partition recursion.

    Parameters
    ----------
    state : 'vacuum' or ('thermal', beta)
    factors : list of fully fixed functionals, ``n <= 6``
    """
    if len(factors) > MAX_CORRELATOR_FACTORS:
        raise ComplexityError(f"connected correlators are limited to {MAX_CORRELATOR_FACTORS} factors")
    name, beta = (state, None) if isinstance(state, str) else (state[0], state[1])
    if cache is None:
        cache = PropagatorCache(params, spec)
    memo: dict = {}

    def full(idx):
        prod = factors[idx[0]]
        for i in idx[1:]:
            prod = star_product(prod, factors[i])
        return state_value(prod, params, name, beta, spec, cache)

    def conn(idx):
        if idx in memo:
            return memo[idx]
        total = full(idx)
        for part in set_partitions(list(idx)):
            if len(part) < 2:
                continue
            prod = 1.0 + 0j
            for block in part:
                prod *= conn(tuple(sorted(block)))
            total -= prod
        memo[idx] = total
        return total

    return conn(tuple(range(len(factors))))


def connected_components(vertices: tuple, edges) -> list[set]:
    """Connected components of a term's contraction graph (vertex index sets)."""
    parent = list(range(len(vertices)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        i, j = (e.i, e.j) if isinstance(e, Edge) else (e[1], e[2])
        parent[find(i)] = find(j)
    comps: dict = {}
    for k in range(len(vertices)):
        comps.setdefault(find(k), set()).add(k)
    return list(comps.values())


def assert_components_touch_observable(terms) -> None:
    """Raise :class:`StructureError` if a component misses every observable vertex."""
    for t in terms:
        for comp in connected_components(t.vertices, t.edges):
            if not any(t.vertices[k].observable for k in comp):
                raise StructureError(
                    f"term with coefficient {t.coefficient} has a component without observable vertices"
                )


def brute_force_contraction_counts(pa: list[int], pb: list[int]) -> dict:
    """Count labeled leg matchings between two monomials by explicit enumeration.

    Independent of :func:`contract_product`: every leg is distinct, each leg of
    the left factor is either left open or joined to an unused leg of the right
    factor, and matchings are tallied by their vertex-level contraction pattern
    ``frozenset((i, j, k))``.
    """
    legs_a = [i for i, p in enumerate(pa) for _ in range(p)]
    legs_b = [j for j, p in enumerate(pb) for _ in range(p)]
    counts: dict = {}
    used = [False] * len(legs_b)
    chosen: list = []

    def rec(a):
        if a == len(legs_a):
            pattern: dict = {}
            for i, j in chosen:
                pattern[(i, j)] = pattern.get((i, j), 0) + 1
            key = frozenset((i, j, k) for (i, j), k in pattern.items())
            counts[key] = counts.get(key, 0) + 1
            return
        rec(a + 1)
        for b in range(len(legs_b)):
            if not used[b]:
                used[b] = True
                chosen.append((legs_a[a], legs_b[b]))
                rec(a + 1)
                chosen.pop()
                used[b] = False

    rec(0)
    return counts


def contraction_counts(pa: list[int], pb: list[int]) -> dict:
    """Multiplicities produced by the product combinatorics, keyed like the brute-force oracle."""
    out = {}
    for pattern in _contractions(list(pa), list(pb)):
        rows = [0] * len(pa)
        cols = [0] * len(pb)
        denom = 1
        for i, j, k in pattern:
            rows[i] += k
            cols[j] += k
            denom *= math.factorial(k)
        mult = 1
        for p, r in zip(pa, rows):
            mult *= _falling(p, r)
        for p, c in zip(pb, cols):
            mult *= _falling(p, c)
        out[frozenset(pattern)] = mult // denom
    return out
