"""Closed-form quantities for chordal SLE_kappa in the upper half-plane.

Everything here is a pure function of its arguments.  Points of the upper
half-plane are plain Python ``complex`` numbers; functions that need a
point strictly inside the half-plane call :func:`as_hpoint` and raise
:class:`DomainError` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


class DegenerateInputError(DomainError):
    """Coincident points where a two-point quantity diverges."""


def as_hpoint(z: complex) -> complex:
    """Return ``z`` as a complex number, requiring ``Im z > 0``."""
    z = complex(z)
    if not (z.imag > 0.0) or not math.isfinite(z.real) or not math.isfinite(z.imag):
        raise DomainError(f"point {z!r} is not in the open upper half-plane")
    return z


def adaptive_simpson(f, lo: float, hi: float, tol: float = 1e-10, max_depth: int = 60) -> float:
    """Integrate ``f`` over ``[lo, hi]`` by adaptive Simpson with absolute tolerance ``tol``."""
    flo, fhi = f(lo), f(hi)
    mid = 0.5 * (lo + hi)
    fmid = f(mid)
    whole = (hi - lo) * (flo + 4.0 * fmid + fhi) / 6.0
    total = 0.0
    stack = [(lo, hi, flo, fmid, fhi, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, s, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4.0 * flm + fm) / 6.0
        right = (b - m) * (fm + 4.0 * frm + fb) / 6.0
        delta = left + right - s
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return total


def c_star(a: float) -> float:
    """Constant in the conformal-radius one-point asymptotics, ``2 / int_0^pi sin^{4a} x dx``."""
    if not a > 0.25:
        raise DomainError(f"a must exceed 1/4, got {a}")
    p = 4.0 * a
    integral = adaptive_simpson(lambda x: math.sin(x) ** p, 0.0, math.pi, tol=1e-10)
    return 2.0 / integral


@dataclass(frozen=True)
class SleParams:
    """Derived constants of SLE_kappa.

    ``a = 2/kappa`` is the Loewner speed, ``d = 1 + kappa/8`` the path
    dimension, ``beta = kappa/8 + 8/kappa - 2`` the two-point exponent and
    ``c_star`` the one-point conformal-radius constant.
    """

    kappa: float
    a: float = field(init=False)
    d: float = field(init=False)
    beta: float = field(init=False)
    c_star: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        k = float(self.kappa)
        if not (0.0 < k < 8.0):
            raise DomainError(f"kappa must lie in (0, 8), got {self.kappa}")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "a", 2.0 / k)
        object.__setattr__(self, "d", 1.0 + k / 8.0)
        object.__setattr__(self, "beta", k / 8.0 + 8.0 / k - 2.0)
        object.__setattr__(self, "c_star", c_star(2.0 / k))

    @property
    def boundary_exponent(self) -> float:
        """``4a - 1``, the exponent of the boundary and tail estimates."""
        return 4.0 * self.a - 1.0

    @property
    def interior_exponent(self) -> float:
        """``2 - d``."""
        return 2.0 - self.d


@lru_cache(maxsize=64)
def params_from_kappa(kappa: float) -> SleParams:
    return SleParams(kappa)


def sin_arg(z: complex) -> float:
    """``sin(arg z)`` for ``z`` in the upper half-plane, i.e. ``Im z / |z|``."""
    z = as_hpoint(z)
    return math.sin(math.atan2(z.imag, z.real))


def green_one_point(z: complex, p: SleParams) -> float:
    """One-point Green's function ``Im(z)^{d-2} sin(arg z)^{4a-1}``."""
    z = as_hpoint(z)
    return z.imag ** (p.d - 2.0) * sin_arg(z) ** (4.0 * p.a - 1.0)


def green_covariant(abs_deriv: float, g_image: float, p: SleParams) -> float:
    """Pull a Green's function value back through a map with ``|f'| = abs_deriv``."""
    if not (abs_deriv > 0.0 and g_image > 0.0):
        raise DomainError("derivative modulus and Green's function value must be positive")
    return abs_deriv ** (2.0 - p.d) * g_image


def two_point_envelope(z: complex, w: complex, p: SleParams) -> float:
    """Up-to-constants envelope ``q^{d-2} [S(w) v q]^{-beta} G(z) G(w)``.

    The points are reordered so that ``|z| <= |w|``; ``q = |w - z| / |w|``.
    """
    z, w = as_hpoint(z), as_hpoint(w)
    if z == w:
        raise DegenerateInputError("two-point envelope diverges at z == w")
    if abs(z) > abs(w):
        z, w = w, z
    q = abs(w - z) / abs(w)
    s = max(sin_arg(w), q)
    return q ** (p.d - 2.0) * s ** (-p.beta) * green_one_point(z, p) * green_one_point(w, p)


def phi_value(delta: float, im_z: float, p: SleParams) -> float:
    """Closeness functional combining the boundary and interior regimes.

    ``delta^{4a-1}`` when ``delta >= im_z``, otherwise
    ``im_z^{4a-1} (delta/im_z)^{2-d}``.
    """
    if not (delta > 0.0 and im_z > 0.0):
        raise DomainError("delta and im_z must be positive")
    if delta >= im_z:
        return delta ** (4.0 * p.a - 1.0)
    return im_z ** (4.0 * p.a - 1.0) * (delta / im_z) ** (2.0 - p.d)


def exact_hm_halfplane(z: complex) -> tuple[float, float]:
    """Harmonic measure from ``z`` of ``(-inf, 0)`` and ``(0, inf)`` in the half-plane."""
    z = as_hpoint(z)
    theta = math.atan2(z.imag, z.real)
    return theta / math.pi, 1.0 - theta / math.pi


def phi_inverse(value: float, im_z: float, p: SleParams) -> float:
    """The distance ``delta`` with ``phi_value(delta, im_z) == value``."""
    if not (value > 0.0 and im_z > 0.0):
        raise DomainError("value and im_z must be positive")
    e = 4.0 * p.a - 1.0
    corner = im_z**e
    if value >= corner:
        return value ** (1.0 / e)
    return im_z * (value / corner) ** (1.0 / (2.0 - p.d))
