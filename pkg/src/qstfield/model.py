"""Physical parameters, spacetime geometry helpers, the Gaussian kernel and
smooth cutoff functions.

Two quadratic forms appear throughout the package and are kept apart here:
the Euclidean square ``<x>^2 = t^2 + |x|^2`` used by every Gaussian damping,
and the Minkowski square ``p^2 = -p0^2 + |p|^2`` used on mass shells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


class ParameterError(ValueError):
    """Raised when a parameter violates its documented invariant."""


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class ModelParams:
    """Mass ``m`` and noncommutativity length ``lam`` (both positive)."""

    m: float
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and self.m > 0):
            raise ParameterError(f"mass must be positive, got {self.m}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class Event:
    """Spacetime point ``(t - i u, x)`` with ``u >= 0`` an imaginary-time offset."""

    t: float
    x: tuple = (0.0, 0.0, 0.0)
    u: float = 0.0

    def __post_init__(self):
        x = tuple(float(c) for c in self.x)
        if len(x) != 3:
            raise ParameterError("spatial part must have three components")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "u", float(self.u))
        if not all(math.isfinite(c) for c in (self.t, self.u, *x)):
            raise ParameterError("event components must be finite")
        if self.u < 0:
            raise DomainError("imaginary-time offset u must be nonnegative")

    @property
    def z(self) -> complex:
        """Complex time coordinate ``t - i u``."""
        return complex(self.t, -self.u)

    def as_array(self) -> np.ndarray:
        return np.array([self.t, *self.x])


def euclidean_square(x) -> float:
    """Return ``<x>^2``, the Euclidean square of a 4-vector."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x))


def minkowski_square(p) -> float:
    """Return ``p^2 = -p0^2 + |p|^2`` (mostly-plus signature)."""
    p = np.asarray(p, dtype=float)
    return float(-p[0] ** 2 + np.dot(p[1:], p[1:]))


def _event_vector(x) -> np.ndarray:
    if isinstance(x, Event):
        if x.u != 0:
            raise DomainError("the Gaussian kernel is defined for real events only")
        return x.as_array()
    return np.asarray(x, dtype=float)


def gaussian_kernel(x, lam: float) -> float:
    """Gaussian ``G_lam(x) = exp(-<x>^2 / (2 lam^2)) / (sqrt(2 pi) lam)^4``.

    Parameters
    ----------
    x : Event or array_like
        Real event, or a 4-vector ``(t, x1, x2, x3)``.
    lam : float
        Width; must be positive.
    """
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    sq = euclidean_square(_event_vector(x))
    return math.exp(-sq / (2 * lam**2)) / (math.sqrt(2 * math.pi) * lam) ** 4


def gaussian_kernel_array(x: np.ndarray, lam: float) -> np.ndarray:
    """Vectorized :func:`gaussian_kernel` over the last axis of ``x``."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    sq = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
    return np.exp(-sq / (2 * lam**2)) / (math.sqrt(2 * math.pi) * lam) ** 4


def _f(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _df(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    # log form avoids 0/0 when exp(-1/s) and s^2 both underflow
    out[pos] = np.exp(-1.0 / s[pos] - 2.0 * np.log(s[pos]))
    return out


def bump(s):
    """Smooth step ``B(s) = f(s) / (f(s) + f(1 - s))`` with ``f(s) = exp(-1/s)``.

    ``B`` is 0 for ``s <= 0``, 1 for ``s >= 1`` and C-infinity in between.
    """
    s = np.asarray(s, dtype=float)
    a, b = _f(s), _f(1.0 - s)
    out = a / (a + b)
    return out if out.ndim else float(out)


def bump_derivative(s):
    """Derivative of :func:`bump`."""
    s = np.asarray(s, dtype=float)
    a, b = _f(s), _f(1.0 - s)
    da, db = _df(s), _df(1.0 - s)
    out = (da * b + a * db) / (a + b) ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CutoffSpec:
    """Temporal plateau ``chi`` and spatial bump ``h`` of the interaction.

    ``chi`` equals 1 on ``[-eps, T]`` and vanishes outside ``(-2 eps, T + eps)``;
    ``h`` equals 1 for ``|x| <= R`` and vanishes for ``|x| >= R + delta``.
    """

    eps: float
    T: float
    R: float
    delta: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if not self.T >= self.eps:
            raise ParameterError("plateau end T must satisfy T >= eps")
        if not self.R > 0:
            raise ParameterError("spatial radius R must be positive")
        if not self.delta > 0:
            raise ParameterError("rolloff width delta must be positive")

    def chi(self, t):
        t = np.asarray(t, dtype=float)
        return bump((t + 2 * self.eps) / self.eps) * bump((self.T + self.eps - t) / self.eps)

    def chi_dot(self, t):
        """Time derivative of ``chi``."""
        t = np.asarray(t, dtype=float)
        e = self.eps
        left, right = (t + 2 * e) / e, (self.T + e - t) / e
        return (bump_derivative(left) * bump(right) - bump(left) * bump_derivative(right)) / e

    def h_radial(self, r):
        r = np.asarray(r, dtype=float)
        return bump((self.R + self.delta - r) / self.delta)

    def h(self, x):
        x = np.asarray(x, dtype=float)
        return self.h_radial(np.sqrt(np.sum(x**2, axis=-1)))

    @property
    def time_support(self) -> tuple[float, float]:
        return (-2 * self.eps, self.T + self.eps)

    @property
    def radius(self) -> float:
        return self.R + self.delta

    def with_(self, **changes) -> "CutoffSpec":
        vals = dict(eps=self.eps, T=self.T, R=self.R, delta=self.delta)
        vals.update(changes)
        return CutoffSpec(**vals)


def cutoff_eval(spec: CutoffSpec, which: str, point) -> float:
    """Evaluate the temporal (``chi``) or spatial (``h``) cutoff at ``point``."""
    if which == "temporal":
        return float(spec.chi(point))
    if which == "spatial":
        return float(spec.h(point))
    raise ParameterError(f"unknown cutoff {which!r}; expected 'temporal' or 'spatial'")


def mean_square_identity(points, x) -> tuple[float, float]:
    """Both sides of ``sum_j <y_j - ybar>^2 + n <x - ybar>^2 = sum_j <y_j - x>^2``.

    Parameters
    ----------
    points : sequence of Event or 4-vectors
        The points ``y_1..y_n``.
    x : Event or 4-vector

    Returns
    -------
    (lhs, rhs) : tuple of float
    """
    ys = np.array([_event_vector(p) for p in points], dtype=float)
    if len(ys) == 0:
        raise ParameterError("at least one point is required")
    xv = _event_vector(x)
    ybar = ys.mean(axis=0)
    n = len(ys)
    lhs = float(np.sum((ys - ybar) ** 2) + n * np.sum((xv - ybar) ** 2))
    rhs = float(np.sum((ys - xv) ** 2))
    return lhs, rhs


def gaussian_normalization_check(n: int, lam: float, nodes: int = 64) -> float:
    """Quadrature value of ``(n^2 / (sqrt(2 pi) lam)^4) * int exp(-n <x>^2 / (2 lam^2)) d^4x``.

    The 4-D integral is a tensor-product Gauss-Legendre rule on the cube
    ``[-L, L]^4`` with ``L`` twelve standard deviations wide; the result
    should equal 1.
    """
    if n < 1:
        raise ParameterError("n must be a positive integer")
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    sigma = lam / math.sqrt(n)
    half = 12.0 * sigma
    xs, ws = leggauss(nodes)
    xs, ws = half * xs, half * ws
    g = np.exp(-n * xs**2 / (2 * lam**2))
    # the integrand factorizes, so the 4-D tensor sum is an outer product contraction
    integral = np.einsum("i,j,k,l,i,j,k,l->", ws, ws, ws, ws, g, g, g, g, optimize=True)
    return float(n**2 / (math.sqrt(2 * math.pi) * lam) ** 4 * integral)


def smear_plane_wave(amplitude: complex, k, lam: float) -> tuple[complex, np.ndarray]:
    """Apply the smearing map to ``c exp(i k.x)``: damp ``c`` by ``exp(-lam^2 <k>^2 / 2)``."""
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise ParameterError("wave vector must be finite")
    return complex(amplitude) * math.exp(-(lam**2) * euclidean_square(k) / 2), k


@dataclass(frozen=True)
class PlaneWaveConfig:
    """Field configuration ``phi(x) = sum_a c_a exp(i k_a . x)``.

    ``k . x`` is the Euclidean pairing ``k0 t + k1 x1 + k2 x2 + k3 x3``; the
    time argument may be complex, so the configuration can be evaluated at
    imaginary-time shifted vertices.
    """

    amplitudes: tuple = ()
    wavevectors: tuple = ()
    smeared: bool = field(default=False)

    def __post_init__(self):
        if len(self.amplitudes) != len(self.wavevectors):
            raise ParameterError("need one wave vector per amplitude")

    def smear(self, lam: float) -> "PlaneWaveConfig":
        pairs = [smear_plane_wave(c, k, lam) for c, k in zip(self.amplitudes, self.wavevectors)]
        return PlaneWaveConfig(
            tuple(c for c, _ in pairs), tuple(tuple(k) for _, k in pairs), smeared=True
        )

    def __call__(self, z, x) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast(z, x[..., 0]).shape, dtype=complex)
        for c, k in zip(self.amplitudes, self.wavevectors):
            k = np.asarray(k, dtype=float)
            out = out + complex(c) * np.exp(1j * (k[0] * z + x @ k[1:]))
        return out


ZERO = PlaneWaveConfig()
