"""Complex polynomial arithmetic, first-order jets, root finding and resultants.

Everything here works with plain ``complex`` scalars, numpy arrays and
:class:`Jet1` values interchangeably, so the dynamical code can push
parameter derivatives through the same Horner loops it uses for values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np


class NonConvergence(RuntimeError):
    """Iterative solver did not reach its tolerance."""


class DegreeOverflow(ValueError):
    """A polynomial or Sylvester matrix exceeds the configured size cap."""


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------


_MP_TYPES = (mpmath.mpc, mpmath.mpf)


def _lift(x, like: "Jet1"):
    """Scalar in the arithmetic of ``like`` (complex or mpmath)."""
    if like.is_mp:
        return mpmath.mpc(x) if not isinstance(x, _MP_TYPES) else x
    return complex(x)


class Jet1:
    """Value plus first-order partials in a fixed set of directions.

    Arithmetic applies the product and chain rules exactly, so a polynomial
    evaluated on a jet returns its derivative along every tracked direction.
    """

    __slots__ = ("value", "partials")
    __array_priority__ = 100  # keep numpy scalars from swallowing jets

    def __init__(self, value, partials):
        if isinstance(value, _MP_TYPES):
            self.value = mpmath.mpc(value)
            self.partials = np.array([mpmath.mpc(x) for x in partials], dtype=object)
        else:
            self.value = complex(value)
            self.partials = np.asarray(partials, dtype=complex)

    @property
    def is_mp(self) -> bool:
        return self.partials.dtype == object

    @classmethod
    def variable(cls, value, index: int, n: int) -> "Jet1":
        e = np.zeros(n, dtype=complex)
        e[index] = 1.0
        return cls(value, e)

    @classmethod
    def constant(cls, value, n: int) -> "Jet1":
        return cls(value, np.zeros(n, dtype=complex))

    def to_mp(self) -> "Jet1":
        """Same jet with multiprecision entries at the current mpmath precision."""
        return Jet1(mpmath.mpc(self.value), [mpmath.mpc(x) for x in self.partials])

    @property
    def n(self) -> int:
        return len(self.partials)

    def _coerce(self, other):
        if isinstance(other, Jet1):
            if other.n != self.n:
                raise ValueError("jets track different numbers of directions")
            return other
        return Jet1(_lift(other, self), np.zeros(self.n, dtype=complex))

    def __add__(self, other):
        o = self._coerce(other)
        return Jet1(self.value + o.value, self.partials + o.partials)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet1(self.value - o.value, self.partials - o.partials)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __neg__(self):
        return Jet1(-self.value, -self.partials)

    def __mul__(self, other):
        if not isinstance(other, Jet1):
            c = _lift(other, self)
            return Jet1(self.value * c, self.partials * c)
        o = self._coerce(other)
        return Jet1(self.value * o.value, self.value * o.partials + o.value * self.partials)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet1):
            c = _lift(other, self)
            return Jet1(self.value / c, self.partials / c)
        o = self._coerce(other)
        v = self.value / o.value
        return Jet1(v, (self.partials - v * o.partials) / o.value)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("jets support non-negative integer powers only")
        if k == 0:
            return Jet1(_lift(1.0, self), np.zeros(self.n, dtype=complex))
        v = self.value ** (k - 1)
        return Jet1(v * self.value, k * v * self.partials)

    def __abs__(self):
        return abs(self.value)

    def __repr__(self) -> str:
        return f"Jet1({self.value!r}, {self.partials.tolist()!r})"


def jet_value(x):
    return x.value if isinstance(x, Jet1) else x


def jet_partials(x, n: int) -> np.ndarray:
    if isinstance(x, Jet1):
        return x.partials
    return np.zeros(n, dtype=complex)


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------


def _trim(coeffs: Sequence[complex]) -> tuple[complex, ...]:
    c = [complex(x) for x in coeffs]
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    if not c:
        c = [0j]
    return tuple(c)


@dataclass(frozen=True)
class Polynomial:
    """Univariate complex polynomial; ``coeffs[i]`` multiplies ``x**i``."""

    coeffs: tuple[complex, ...]

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", _trim(coeffs))

    @classmethod
    def monomial(cls, k: int, c: complex = 1.0) -> "Polynomial":
        return cls([0] * k + [c])

    @classmethod
    def from_roots(cls, roots: Sequence[complex]) -> "Polynomial":
        c = np.array([1.0 + 0j])
        for r in roots:
            c = np.convolve(c, [-complex(r), 1.0])
        return cls(c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def lc(self) -> complex:
        return self.coeffs[-1]

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def __call__(self, x):
        return eval_poly(self, x)

    def derivative(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial([0])
        return Polynomial([i * c for i, c in enumerate(self.coeffs)][1:])

    def monic(self) -> "Polynomial":
        return Polynomial([c / self.lc for c in self.coeffs])

    def __add__(self, other: "Polynomial") -> "Polynomial":
        other = _as_poly(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = np.zeros(n, dtype=complex)
        a[: len(self.coeffs)] += self.coeffs
        a[: len(other.coeffs)] += other.coeffs
        return Polynomial(a)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial([-c for c in self.coeffs])

    def __sub__(self, other) -> "Polynomial":
        return self + (-_as_poly(other))

    def __rsub__(self, other) -> "Polynomial":
        return _as_poly(other) - self

    def __mul__(self, other) -> "Polynomial":
        other = _as_poly(other)
        return Polynomial(np.convolve(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        out = Polynomial([1])
        for _ in range(k):
            out = out * self
        return out

    def compose(self, inner: "Polynomial") -> "Polynomial":
        out = Polynomial([0])
        for c in reversed(self.coeffs):
            out = out * inner + Polynomial([c])
        return out

    def __repr__(self) -> str:
        return f"Polynomial({list(self.coeffs)!r})"


def _as_poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial([x])


def eval_poly(poly: Polynomial, x):
    """Horner evaluation on a complex, an ndarray or a :class:`Jet1`."""
    coeffs = poly.coeffs
    acc = coeffs[-1]
    if isinstance(x, Jet1):
        acc = Jet1.constant(acc, x.n)
    elif isinstance(x, np.ndarray):
        acc = np.full(x.shape, acc, dtype=complex)
    for c in coeffs[-2::-1]:
        acc = acc * x + c
    return acc


# ---------------------------------------------------------------------------
# Roots
# ---------------------------------------------------------------------------


def _poly_and_derivative(coeffs: np.ndarray) -> Callable:
    dcoeffs = coeffs[1:] * np.arange(1, len(coeffs))

    def f(x):
        v = np.full(x.shape, coeffs[-1], dtype=complex)
        for c in coeffs[-2::-1]:
            v = v * x + c
        d = np.full(x.shape, dcoeffs[-1], dtype=complex)
        for c in dcoeffs[-2::-1]:
            d = d * x + c
        return v, d

    return f


def aberth(
    func: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    degree: int,
    radius: float,
    tol: float = 1e-14,
    max_iter: int = 500,
    seed: int = 0,
) -> np.ndarray:
    """Aberth-Ehrlich simultaneous iteration for the ``degree`` zeros of a
    monic polynomial given only through ``func(x) -> (value, derivative)``.

    Initial guesses sit on a circle of the given radius with a seeded random
    angular jitter so that symmetric polynomials don't stall the iteration.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(degree)
    angles = 2 * np.pi * (k + 0.25 + 0.5 * rng.random(degree)) / degree + 0.4
    z = radius * np.exp(1j * angles)
    active = np.ones(degree, dtype=bool)
    for _ in range(max_iter):
        v, d = func(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = v / d
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, 1.0)
            inv = 1.0 / diff
            np.fill_diagonal(inv, 0.0)
            s = inv.sum(axis=1)
            w = ratio / (1.0 - ratio * s)
        w = np.where(np.isfinite(w) & active, w, 0.0)
        z = z - w
        small = np.abs(w) <= tol * (1.0 + np.abs(z))
        active &= ~small
        if not active.any():
            return z
    raise NonConvergence(f"Aberth iteration stalled after {max_iter} steps")


def cauchy_radius(coeffs: Sequence[complex]) -> float:
    c = np.asarray(coeffs, dtype=complex)
    return float(1.0 + np.max(np.abs(c[:-1] / c[-1]))) if len(c) > 1 else 1.0


def roots(poly: Polynomial, tol: float = 1e-8, extended: bool = False, seed: int = 0) -> list[complex]:
    """All complex roots of ``poly`` with normalized residual at most ``tol``.

    ``extended=True`` switches to mpmath at 50 digits for ill-conditioned
    inputs.
    """
    if poly.degree < 1:
        raise ValueError("roots() needs degree >= 1")
    mono = poly.monic()
    n = mono.degree
    if n == 1:
        return [-mono.coeffs[0]]
    if extended:
        import mpmath

        with mpmath.workdps(50):
            rs = mpmath.polyroots([mpmath.mpc(c) for c in reversed(mono.coeffs)], maxsteps=400, extraprec=200)
        found = np.array([complex(r) for r in rs])
    else:
        c = np.asarray(mono.coeffs, dtype=complex)
        found = aberth(_poly_and_derivative(c), n, cauchy_radius(c), seed=seed)
    out = [complex(r) for r in found]
    for r in out:
        res = abs(mono(r)) / (1 + abs(r)) ** n
        if not res <= tol:
            raise NonConvergence(f"root residual {res:.3g} above tolerance {tol:.3g}")
    return out


def root_clusters(rts: Sequence[complex], rel: float = 1e-6) -> list[tuple[complex, int]]:
    """Group roots closer than ``rel * (1 + |root|)`` and report multiplicities."""
    remaining = list(rts)
    out = []
    while remaining:
        r = remaining.pop(0)
        group = [r]
        keep = []
        for s in remaining:
            if abs(s - r) <= rel * (1 + abs(r)) * max(1, len(group)):
                group.append(s)
            else:
                keep.append(s)
        remaining = keep
        out.append((complex(np.mean(group)), len(group)))
    return out


def batched_roots(coeff_stack: np.ndarray) -> np.ndarray:
    """Roots of many small polynomials at once.

    ``coeff_stack[..., i]`` multiplies ``x**i``; the leading coefficient must be
    nonzero everywhere. Degrees 1 and 2 use closed forms, higher degrees the
    eigenvalues of stacked companion matrices.
    """
    c = np.asarray(coeff_stack, dtype=complex)
    n = c.shape[-1] - 1
    c = c / c[..., -1:]
    if n == 1:
        return -c[..., :1]
    if n == 2:
        b, a0 = c[..., 1], c[..., 0]
        s = np.sqrt(b * b / 4 - a0)
        return np.stack([-b / 2 + s, -b / 2 - s], axis=-1)
    comp = np.zeros(c.shape[:-1] + (n, n), dtype=complex)
    comp[..., 1:, :-1] = np.eye(n - 1)
    comp[..., :, -1] = -c[..., :-1]
    return np.linalg.eigvals(comp)


# ---------------------------------------------------------------------------
# Resultants
# ---------------------------------------------------------------------------


def _bivar_degree_lambda(P: Sequence[Polynomial]) -> int:
    return max(p.degree for p in P)


def sylvester_matrix(p: Sequence[complex], q: Sequence[complex]) -> np.ndarray:
    """Sylvester matrix of two coefficient lists (index = power), rows of ``p``
    first, columns ordered from the highest power down."""
    m, n = len(p) - 1, len(q) - 1
    size = m + n
    S = np.zeros((size, size), dtype=complex)
    pr = np.asarray(p, dtype=complex)[::-1]
    qr = np.asarray(q, dtype=complex)[::-1]
    for i in range(n):
        S[i, i : i + m + 1] = pr
    for i in range(m):
        S[n + i, i : i + n + 1] = qr
    return S


def resultant_numeric(p: Sequence[complex], q: Sequence[complex]) -> complex:
    """Resultant with the convention ``lc(q)**deg p * prod p(beta)`` over the
    roots ``beta`` of ``q``.

    That equals ``(-1)**(deg p * deg q) * det(Sylvester, p rows first)``.
    """
    m, n = len(p) - 1, len(q) - 1
    return complex((-1) ** (m * n) * np.linalg.det(sylvester_matrix(p, q)))


def resultant_w(P: Sequence[Polynomial], Q: Sequence[Polynomial], size_cap: int = 64) -> Polynomial:
    """Eliminate ``w`` from two polynomials in ``(lam, w)``.

    ``P[j]`` is the coefficient of ``w**j`` as a polynomial in ``lam``. The
    result is assembled by evaluating the numeric resultant at scaled roots of
    unity and interpolating with an FFT; the formal w-degrees are used
    throughout, so the identity holds wherever the leading coefficients don't
    vanish.
    """
    P = [_as_poly(c) for c in P]
    Q = [_as_poly(c) for c in Q]
    while len(P) > 1 and P[-1].is_zero():
        P.pop()
    while len(Q) > 1 and Q[-1].is_zero():
        Q.pop()
    m, n = len(P) - 1, len(Q) - 1
    if m < 1 and n < 1:
        raise ValueError("at least one argument must involve w")
    if m + n > size_cap:
        raise DegreeOverflow(f"Sylvester matrix of size {m + n} exceeds cap {size_cap}")
    bound = n * _bivar_degree_lambda(P) + m * _bivar_degree_lambda(Q)
    N = bound + 1
    # radius ~1 keeps the Vandermonde system unitary
    nodes = np.exp(2j * np.pi * np.arange(N) / N)
    vals = np.array(
        [resultant_numeric([c(x) for c in P], [c(x) for c in Q]) for x in nodes]
    )
    coeffs = np.fft.fft(vals) / N
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    coeffs = np.where(np.abs(coeffs) < 1e-12 * scale, 0, coeffs)
    return Polynomial(coeffs)
