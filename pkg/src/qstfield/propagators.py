"""Gaussian-damped two-point kernels.

Every kernel is an isotropic mode integral

    D(t - iu, r) = 1/(2 pi^2) int_0^pmax dp p^2 exp(-lam^2 (2 p^2 + m^2)) F(p) sinc(p r)

evaluated with Gauss-Legendre nodes on ``[0, pmax]``. The Wightman mode is
``F = exp(-i (t - iu) w) / (2 w)`` with ``w = sqrt(p^2 + m^2)``; the commutator
function is ``Delta = -i (D+(x) - D+(-x))``, i.e. mode ``-sin(w t) / w``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .model import DomainError, ModelParams, ParameterError


class Variant(str, enum.Enum):
    PAULI_JORDAN = "pauli-jordan"
    WIGHTMAN_PLUS = "wightman-plus"
    FEYNMAN = "feynman"
    ADVANCED = "advanced"
    RETARDED = "retarded"
    DIRAC = "dirac"
    THERMAL = "thermal"
    THERMAL_MINUS_VACUUM = "thermal-minus-vacuum"


THERMAL_VARIANTS = (Variant.THERMAL, Variant.THERMAL_MINUS_VACUUM)
REAL_TIME_VARIANTS = (Variant.FEYNMAN, Variant.ADVANCED, Variant.RETARDED, Variant.DIRAC)


@dataclass(frozen=True)
class PropagatorKind:
    """Kernel variant plus inverse temperature for the thermal variants."""

    variant: Variant
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant in THERMAL_VARIANTS:
            if self.beta is None or not self.beta > 0:
                raise ParameterError(f"{self.variant.value} needs beta > 0")
            object.__setattr__(self, "beta", float(self.beta))
        elif self.beta is not None:
            raise ParameterError(f"{self.variant.value} does not take beta")

    @classmethod
    def parse(cls, name: str, beta: float | None = None) -> "PropagatorKind":
        try:
            variant = Variant(name)
        except ValueError:
            names = ", ".join(v.value for v in Variant)
            raise ParameterError(f"unknown kind {name!r}; expected one of {names}") from None
        return cls(variant, beta)

    @property
    def label(self) -> str:
        return self.variant.value


@dataclass(frozen=True)
class QuadratureSpec:
    """Numerical settings shared by propagators and integrators.

    Parameters
    ----------
    nodes : int
        Minimum radial Gauss-Legendre node count (raised automatically for
        strongly oscillating integrands).
    p_max_sigmas : float
        Momentum cut ``W``; the Gaussian tail beyond ``pmax`` is below ``exp(-W)``.
    mc_samples : int
        Monte Carlo samples per stratum (spherical shell).
    seed : int
        Root seed of all random streams.
    oracle_nodes : int
        Node count for independent cross-check quadratures.
    shell_width : float
        Width of the Monte Carlo radial strata.
    tensor_nodes : int
        Gauss-Legendre nodes per panel and coordinate for tensor integration.
    panel_width : float
        Maximal panel length (in units of 1/m) for tensor integration.
    """

    nodes: int = 256
    p_max_sigmas: float = 40.0
    mc_samples: int = 2000
    seed: int = 20240613
    oracle_nodes: int = 512
    shell_width: float = 0.25
    tensor_nodes: int = 12
    panel_width: float = 0.5

    def __post_init__(self):
        if self.nodes < 16:
            raise ParameterError("nodes must be at least 16")
        if self.p_max_sigmas < 20:
            raise ParameterError("p_max_sigmas must be at least 20")
        if self.mc_samples < 1 or self.oracle_nodes < 1:
            raise ParameterError("sample and node counts must be positive")
        if not self.shell_width > 0:
            raise ParameterError("shell_width must be positive")
        if self.tensor_nodes < 2 or not self.panel_width > 0:
            raise ParameterError("tensor_nodes must be >= 2 and panel_width positive")


DEFAULT_SPEC = QuadratureSpec()


@lru_cache(maxsize=64)
def _gl(n: int):
    return leggauss(n)


def _sinc(x: np.ndarray) -> np.ndarray:
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)


def p_max(params: ModelParams, spec: QuadratureSpec) -> float:
    return math.sqrt(spec.p_max_sigmas / (2 * params.lam**2))


def _node_count(params, spec, t, r):
    pm = p_max(params, spec)
    span = np.abs(t) * (math.sqrt(pm**2 + params.m**2) - params.m) + np.abs(r) * pm
    need = np.ceil(0.5 * span) + 64
    n = np.maximum(spec.nodes, 32 * np.ceil(need / 32))
    return n.astype(int)


def _mode(name, tau, w, beta):
    """Mode amplitude ``F`` (without the Gaussian damping)."""
    if name == "plus":
        return np.exp(-1j * tau * w) / (2 * w)
    if name == "pj":
        return -np.sin(w * tau) / w
    denom = -np.expm1(-beta * w)
    if name == "thermal":
        return (np.exp(-1j * tau * w) + np.exp(1j * tau * w - beta * w)) / (2 * w * denom)
    if name == "tmv":
        return (np.exp(-1j * tau * w - beta * w) + np.exp(1j * tau * w - beta * w)) / (2 * w * denom)
    raise ParameterError(f"unknown mode {name}")


def _radial(name, params, spec, tau, r, beta=None):
    """Vectorized radial mode integral for complex times ``tau`` and radii ``r``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=complex))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    tau, r = np.broadcast_arrays(tau, r)
    shape = tau.shape
    tau, r = tau.ravel(), r.ravel()
    out = np.empty(tau.shape, dtype=complex)
    if tau.size == 0:
        return out.reshape(shape)
    pm = p_max(params, spec)
    counts = _node_count(params, spec, tau.real, r)
    for n in np.unique(counts):
        idx = np.nonzero(counts == n)[0]
        x, wts = _gl(int(n))
        p = 0.5 * pm * (x + 1.0)
        wp = 0.5 * pm * wts
        w = np.sqrt(p * p + params.m**2)
        common = wp * p * p * np.exp(-(params.lam**2) * (2 * p * p + params.m**2)) / (2 * math.pi**2)
        block = max(1, 400_000 // int(n))
        for s in range(0, idx.size, block):
            sel = idx[s : s + block]
            amp = _mode(name, tau[sel, None], w[None, :], beta)
            amp = amp * _sinc(p[None, :] * r[sel, None])
            out[sel] = np.sum(amp * common[None, :], axis=1)
    return out.reshape(shape)


def _check_args(kind: PropagatorKind, t, u, r):
    t, u, r = (np.asarray(a, dtype=float) for a in (t, u, r))
    if np.any(r < 0):
        raise DomainError("spatial separation r must be nonnegative")
    if np.any(u < 0):
        raise DomainError("imaginary-time offset u must be nonnegative")
    if kind.variant in THERMAL_VARIANTS and np.any(u > kind.beta):
        raise DomainError(f"thermal kernels need 0 <= u <= beta = {kind.beta}")
    if kind.variant in REAL_TIME_VARIANTS and np.any(u != 0):
        raise DomainError(f"{kind.label} is a real-time kernel; u must be 0")
    return t, u, r


def _values(kind: PropagatorKind, params, spec, t, u, r):
    """Unchecked vectorized evaluation; ``u`` may have either sign internally."""
    v = kind.variant
    tau = np.asarray(t, dtype=float) - 1j * np.asarray(u, dtype=float)
    if v is Variant.WIGHTMAN_PLUS:
        return _radial("plus", params, spec, tau, r)
    if v is Variant.PAULI_JORDAN:
        return _radial("pj", params, spec, tau, r)
    if v is Variant.THERMAL:
        return _radial("thermal", params, spec, tau, r, kind.beta)
    if v is Variant.THERMAL_MINUS_VACUUM:
        return _radial("tmv", params, spec, tau, r, kind.beta)
    t = np.asarray(t, dtype=float)
    if v is Variant.FEYNMAN:
        return _radial("plus", params, spec, np.abs(t), r)
    pj = _radial("pj", params, spec, t, r)
    if v is Variant.ADVANCED:
        return np.where(t < 0, -pj, 0.0)
    if v is Variant.RETARDED:
        return np.where(t > 0, pj, 0.0)
    if v is Variant.DIRAC:
        return 0.5j * np.sign(t) * pj
    raise ParameterError(f"unhandled variant {v}")


def evaluate_array(kind: PropagatorKind, params: ModelParams, t, u, r, spec: QuadratureSpec = DEFAULT_SPEC):
    """Vectorized :func:`eval` with the same domain checks."""
    t, u, r = _check_args(kind, t, u, r)
    return _values(kind, params, spec, t, u, r)


def eval(kind: PropagatorKind, params: ModelParams, t: float, u: float = 0.0, r: float = 0.0,
         spec: QuadratureSpec = DEFAULT_SPEC, cache: "PropagatorCache | None" = None) -> complex:
    """Evaluate a kernel at relative complex time ``t - iu`` and separation ``r``.

    Raises
    ------
    DomainError
        Negative ``r`` or ``u``; thermal kernels with ``u > beta``; a nonzero
        ``u`` for the real-time Feynman family.
    """
    _check_args(kind, t, u, r)
    if cache is not None:
        return complex(cache.get_many(kind, np.array([t]), np.array([u]), np.array([r]))[0])
    return complex(_values(kind, params, spec, float(t), float(u), float(r))[0])


class PropagatorCache:
    """Memo of kernel values keyed by kind and quantized ``(t, u, r)``.

    Values are computed at the quantized coordinates, so a hit returns exactly
    what a fresh evaluation at the key would. Reads are lock-free; inserts are
    serialized. Once ``max_entries`` is reached new values are returned but not
    stored.
    """

    def __init__(self, params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC,
                 quantum: float = 1e-9, max_entries: int = 1_000_000):
        self.params = params
        self.spec = spec
        self.quantum = quantum
        self.max_entries = max_entries
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._memo)

    def quantize(self, x):
        return np.rint(np.asarray(x, dtype=float) / self.quantum).astype(np.int64)

    def get_many(self, kind: PropagatorKind, t, u, r) -> np.ndarray:
        t, u, r = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, u, r)))
        shape = t.shape
        keys = np.stack([self.quantize(t).ravel(), self.quantize(u).ravel(), self.quantize(r).ravel()], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        tag = (kind.variant.value, kind.beta)
        vals = np.empty(len(uniq), dtype=complex)
        missing = []
        for i, k in enumerate(map(tuple, uniq.tolist())):
            v = self._memo.get((tag, k))
            if v is None:
                missing.append(i)
            else:
                vals[i] = v
        self.hits += len(uniq) - len(missing)
        self.misses += len(missing)
        if missing:
            miss = np.array(missing)
            q = uniq[miss].astype(float) * self.quantum
            new = _values(kind, self.params, self.spec, q[:, 0], q[:, 1], q[:, 2])
            vals[miss] = new
            with self._lock:
                room = self.max_entries - len(self._memo)
                for i, v in zip(missing[: max(room, 0)], new[: max(room, 0)]):
                    self._memo[(tag, tuple(uniq[i].tolist()))] = complex(v)
        return vals[inverse].reshape(shape)


def wightman_bound(params: ModelParams, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Closed-form sup bound ``(2 pi)^-3 int d^3p exp(-lam^2 (2 p^2 + m^2)) / (2 w)``.

    This is the value of ``D+`` at the origin.
    """
    return float(_radial("plus", params, spec, 0.0, 0.0)[0].real)


def feynman_momentum(params: ModelParams, p0: float, pvec_norm: float, epsilon: float,
                     filk: bool = False) -> complex:
    """Momentum-space Feynman kernel, or the Filk-rule variant when ``filk`` is set.

    Standard: ``(-i/(2 pi)^4) exp(-lam^2 (2|p|^2 + m^2)) / (p^2 + m^2 - i eps)``.
    Filk: ``i exp(-lam^2 <p>^2) / (p^2 + m^2 - i eps)``.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    lam2, m2 = params.lam**2, params.m**2
    p2 = -p0 * p0 + pvec_norm * pvec_norm
    denom = complex(p2 + m2, -epsilon)
    if filk:
        return 1j * math.exp(-lam2 * (p0 * p0 + pvec_norm * pvec_norm)) / denom
    return -1j / (2 * math.pi) ** 4 * math.exp(-lam2 * (2 * pvec_norm**2 + m2)) / denom


def bessel_k1(x: float, nodes: int = 400) -> float:
    """``K1(x) = int_0^inf exp(-x cosh s) cosh s ds`` by truncated Gauss-Legendre."""
    if not x > 0:
        raise DomainError("K1 needs a positive argument")
    # integrand below exp(-60) relative to its peak beyond s_max
    s_max = math.acosh(1.0 + 60.0 / x)
    nodes_x, wts = _gl(nodes)
    s = 0.5 * s_max * (nodes_x + 1.0)
    c = np.cosh(s)
    return float(0.5 * s_max * np.sum(wts * np.exp(-x * (c - 1.0)) * c) * math.exp(-x))


def classical_wightman_oracle(params: ModelParams, r: float) -> float:
    """Undeformed equal-time Wightman function ``m K1(m r) / (4 pi^2 r)``."""
    if not r > 0:
        raise DomainError("classical kernel diverges at r = 0")
    return params.m * bessel_k1(params.m * r) / (4 * math.pi**2 * r)


def decay_fit(kind: PropagatorKind | Variant | str, params: ModelParams, direction: str,
              window: tuple[float, float], fixed: float = 0.0,
              spec: QuadratureSpec = DEFAULT_SPEC, points: int = 24) -> float:
    """Least-squares decay rate of ``|D|`` over a window.

    Parameters
    ----------
    direction : {'spatial', 'temporal', 'beta'}
        'spatial': slope of ``log|D(fixed, r)|`` against ``r``.
        'temporal': slope of ``log|D(t, fixed)|`` against ``log t`` (power-law exponent).
        'beta': slope of ``log|D_beta(fixed, 0)|`` against ``beta`` for a thermal
        variant; ``kind`` then only names the variant.
    """
    lo, hi = window
    if not hi > lo:
        raise ParameterError("window must be an increasing interval")
    if direction == "spatial":
        xs = np.linspace(lo, hi, points)
        vals = _values(_as_kind(kind), params, spec, np.full(points, fixed), 0.0, xs)
        ordinate = xs
    elif direction == "temporal":
        xs = np.geomspace(lo, hi, points)
        vals = _values(_as_kind(kind), params, spec, xs, 0.0, np.full(points, fixed))
        ordinate = np.log(xs)
    elif direction == "beta":
        variant = kind.variant if isinstance(kind, PropagatorKind) else Variant(kind)
        xs = np.linspace(lo, hi, points)
        vals = np.array([_values(PropagatorKind(variant, b), params, spec, fixed, 0.0, 0.0)[0] for b in xs])
        ordinate = xs
    else:
        raise ParameterError("direction must be 'spatial', 'temporal' or 'beta'")
    mags = np.abs(vals)
    if np.any(mags < 1e-300):
        raise DomainError("kernel underflows inside the window; use a smaller window")
    slope, _ = np.polyfit(ordinate, np.log(mags), 1)
    return float(slope)


def _as_kind(kind) -> PropagatorKind:
    if isinstance(kind, PropagatorKind):
        return kind
    return PropagatorKind(Variant(kind))


CSV_COLUMNS = ["kind", "m", "lambda", "beta", "t", "u", "r", "re", "im"]


def tabulate(kind: PropagatorKind, params: ModelParams, ts, us, rs,
             spec: QuadratureSpec = DEFAULT_SPEC) -> list[dict]:
    """Rows over the grid ``ts x us x rs`` in lexicographic order."""
    grid = [(t, u, r) for t in ts for u in us for r in rs]
    if not grid:
        return []
    t, u, r = (np.array(c, dtype=float) for c in zip(*grid))
    vals = evaluate_array(kind, params, t, u, r, spec)
    beta = "" if kind.beta is None else repr(kind.beta)
    return [
        {"kind": kind.label, "m": repr(params.m), "lambda": repr(params.lam), "beta": beta,
         "t": repr(float(a)), "u": repr(float(b)), "r": repr(float(c)),
         "re": repr(float(v.real)), "im": repr(float(v.imag))}
        for (a, b, c), v in zip(grid, vals)
    ]


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


EDGE_KERNELS = ("plus", "half-i-pj", "F", "Fbar", "beta", "F+d", "Fbar+d", "d")


def edge_kernel(name: str, params: ModelParams, tau, r, spec: QuadratureSpec = DEFAULT_SPEC,
                beta: float | None = None, cache: PropagatorCache | None = None) -> np.ndarray:
    """Contraction kernel values at complex relative times ``tau`` and radii ``r``.

    Names: ``plus`` (D+), ``half-i-pj`` (i Delta / 2), ``F`` (time ordered),
    ``Fbar`` (its complex conjugate), ``beta`` (thermal two-point function),
    ``d`` (thermal minus vacuum) and the thermal shifts ``F+d``, ``Fbar+d``.
    """
    tau = np.asarray(tau, dtype=complex)
    r = np.asarray(r, dtype=float)
    t, u = tau.real, -tau.imag

    def get(variant, tt, uu, b=None):
        kind = PropagatorKind(variant, b)
        if cache is not None:
            return cache.get_many(kind, tt, uu, r)
        return _values(kind, params, spec, tt, uu, r)

    if name == "plus":
        return get(Variant.WIGHTMAN_PLUS, t, u)
    if name == "half-i-pj":
        return 0.5j * get(Variant.PAULI_JORDAN, t, u)
    if name == "beta":
        return get(Variant.THERMAL, t, u, beta)
    if name == "d":
        return get(Variant.THERMAL_MINUS_VACUUM, t, u, beta)
    if np.any(np.abs(u) > 1e-12):
        raise DomainError("time-ordered kernels need equal imaginary shifts at both ends")
    zero = np.zeros_like(t)
    if name in ("F", "F+d"):
        val = get(Variant.WIGHTMAN_PLUS, np.abs(t), zero)
    elif name in ("Fbar", "Fbar+d"):
        val = np.conj(get(Variant.WIGHTMAN_PLUS, np.abs(t), zero))
    else:
        raise ParameterError(f"unknown edge kernel {name!r}")
    if name.endswith("+d"):
        val = val + get(Variant.THERMAL_MINUS_VACUUM, t, zero, beta)
    return val


def equation_of_motion_residual(params: ModelParams, t: float, r: float, step: float | None = None,
                                spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Relative residual of ``(-d_t^2 + Laplacian - m^2) D+`` at ``(t, r)``, ``r > 0``.

    Five-point central differences with spacing ``step`` (default ``0.05 lam``);
    the radial Laplacian is ``d_r^2 + (2/r) d_r``. The residual is normalized by
    the largest of the three terms.
    """
    h = 0.05 * params.lam if step is None else step
    if not r > 2 * h:
        raise DomainError("the radial stencil needs r > 2 * step")
    k = PropagatorKind(Variant.WIGHTMAN_PLUS)
    off = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    ft = _values(k, params, spec, t + off, 0.0, np.full(5, r))
    fr = _values(k, params, spec, np.full(5, t), 0.0, r + off)
    d2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h**2)
    d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    dtt = d2 @ ft
    lap = d2 @ fr + 2.0 / r * (d1 @ fr)
    mass = params.m**2 * ft[2]
    scale = max(abs(dtt), abs(lap), abs(mass))
    return float(abs(-dtt + lap - mass) / scale)


def feynman_fourier_oracle(params: ModelParams, t: float, r: float, epsilon: float = 1e-6,
                           p_nodes: int = 160, spec: QuadratureSpec = DEFAULT_SPEC) -> complex:
    """Position-space Feynman kernel by numerical inversion of :func:`feynman_momentum`.

    ``D_F(t, r) = 4 pi int dp p^2 sinc(p r) int dp0 e^{-i p0 t} F(p0, p)``; the
    ``p0`` integral is done on the real axis at finite ``epsilon``: the
    imaginary part of ``F`` (principal value) with a Cauchy weight on
    ``[0, 2w]``, the real part (the ``epsilon`` peak at ``p0 = w``) with
    logarithmically spaced breakpoints, and the tail with the Fourier weight.
    Independent of the mode integrals used by :func:`eval`.
    """
    from scipy import integrate

    pmax = p_max(params, spec)
    x, w = leggauss(p_nodes)
    ps, ws = 0.5 * pmax * (x + 1), 0.5 * pmax * w
    total = 0j
    for p, wp in zip(ps, ws):
        om = math.hypot(p, params.m)
        hw = epsilon / (2 * om)
        peaks = sorted({om} | {om + s * hw * 10.0**j for j in range(8) for s in (-1, 1)
                               if 0 < om + s * hw * 10.0**j < 2 * om})

        def part(q, name):
            return getattr(feynman_momentum(params, q, p, epsilon), name)

        re_near, _ = integrate.quad(lambda q: part(q, "real") * math.cos(q * t), 0, 2 * om,
                                    points=peaks, limit=400)
        im_near, _ = integrate.quad(lambda q: part(q, "imag") * math.cos(q * t) * (q - om), 0, 2 * om,
                                    weight="cauchy", wvar=om)
        re_tail, _ = integrate.quad(lambda q: part(q, "real"), 2 * om, np.inf, weight="cos", wvar=t, limlst=100)
        im_tail, _ = integrate.quad(lambda q: part(q, "imag"), 2 * om, np.inf, weight="cos", wvar=t, limlst=100)
        inner = 2 * complex(re_near + re_tail, im_near + im_tail)
        total += wp * 4 * math.pi * p * p * float(np.sinc(p * r / math.pi)) * inner
    return complex(total)


def source_term_pairing(params: ModelParams, width_t: float = 0.5, width_x: float = 0.5,
                        center: tuple = (0.3, 0.0, 0.0), nodes: int = 12, panel: float = 0.5,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> complex:
    """``int dt d^3x D_F(x) (box - m^2) f(x)`` for the Gaussian test function
    ``f = exp(-t^2 / (2 a^2) - |x - c|^2 / (2 b^2))``, ``box = -d_t^2 + Laplacian``.

    Four-dimensional tensor quadrature: composite Gauss-Legendre in ``t``
    (split at the kink ``t = 0``), ``r`` and ``cos(theta)``, uniform in ``phi``.
    """
    a, b = width_t, width_x
    c = np.asarray(center, dtype=float)
    if not (a > 0 and b > 0):
        raise ParameterError("test-function widths must be positive")
    gx, gw = leggauss(nodes)

    def composite(lo, hi):
        n = max(1, math.ceil((hi - lo) / panel))
        edges = np.linspace(lo, hi, n + 1)
        pts = [0.5 * (e1 - e0) * (gx + 1) + e0 for e0, e1 in zip(edges[:-1], edges[1:])]
        wts = [0.5 * (e1 - e0) * gw for e0, e1 in zip(edges[:-1], edges[1:])]
        return np.concatenate(pts), np.concatenate(wts)

    tn, tw = (np.concatenate(z) for z in zip(composite(-7 * a, 0.0), composite(0.0, 7 * a)))
    rn, rw = composite(0.0, float(np.linalg.norm(c)) + 7 * b)
    cn, cw = gx, gw
    nphi = 16
    phi = 2 * math.pi * np.arange(nphi) / nphi
    T, Rr = np.meshgrid(tn, rn, indexing="ij")
    kernel = _values(PropagatorKind(Variant.FEYNMAN), params, spec, T.ravel(), 0.0, Rr.ravel()).reshape(T.shape)
    st = np.sqrt(1 - cn**2)
    unit = np.stack(np.broadcast_arrays(st[:, None] * np.cos(phi), st[:, None] * np.sin(phi), cn[:, None]), axis=-1)
    xs = rn[:, None, None, None] * unit[None]
    d2 = np.sum((xs - c) ** 2, axis=-1)
    g = np.exp(-d2 / (2 * b**2))
    lap = (d2 / b**4 - 3 / b**2) * g
    ang = (lap * (2 * math.pi / nphi)).sum(axis=2) @ cw
    ang_g = (g * (2 * math.pi / nphi)).sum(axis=2) @ cw
    ft = np.exp(-tn**2 / (2 * a**2))
    dtt = (tn**2 / a**4 - 1 / a**2) * ft
    # (box - m^2) f = (-f_tt) g + f lap g - m^2 f g
    spatial_lap = (rw * rn**2 * ang)
    spatial_g = (rw * rn**2 * ang_g)
    inner_lap = kernel @ spatial_lap
    inner_g = kernel @ spatial_g
    return complex(np.sum(tw * (-dtt * inner_g + ft * inner_lap - params.m**2 * ft * inner_g)))


def source_term_prediction(params: ModelParams, width_x: float = 0.5, center: tuple = (0.3, 0.0, 0.0)) -> complex:
    """Stated source-term value ``-i 2 sqrt(2 pi) lam exp(-lam^2 m^2) int d^3x f(0, x) G_2lam(0, x)``.

    The Gaussian overlap is closed form: ``(b^2 / (b^2 + 4 lam^2))^{3/2} exp(-|c|^2 / (2 (b^2 + 4 lam^2)))``
    times the normalization that turns ``2 sqrt(2 pi) lam G_2lam(0, .)`` into a unit 3-D Gaussian.
    """
    b2, s2 = width_x**2, 4 * params.lam**2
    overlap = (b2 / (b2 + s2)) ** 1.5 * math.exp(-float(np.dot(center, center)) / (2 * (b2 + s2)))
    return -1j * math.exp(-(params.lam * params.m) ** 2) * overlap
