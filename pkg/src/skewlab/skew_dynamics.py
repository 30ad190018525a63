"""Polynomial skew products f(z, w) = (p(z), q(z, w)) and their fiberwise dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .poly_core import Jet1, Polynomial, eval_poly


class EscapedToInfinity(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"orbit escaped at step {step}")
        self.step = step


OVERFLOW = 1e150


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bivariate:
    """q(z, w) = sum_j coeffs[j](z) * w**j."""

    coeffs: tuple[Polynomial, ...]

    def __init__(self, coeffs: Sequence):
        cs = [c if isinstance(c, Polynomial) else Polynomial(c if isinstance(c, (list, tuple, np.ndarray)) else [c]) for c in coeffs]
        while len(cs) > 1 and cs[-1].is_zero():
            cs.pop()
        object.__setattr__(self, "coeffs", tuple(cs))

    @property
    def degree_w(self) -> int:
        return len(self.coeffs) - 1

    def coeffs_at(self, z) -> list:
        return [eval_poly(c, z) for c in self.coeffs]

    def __call__(self, z, w):
        return horner_w(self.coeffs_at(z), w)

    def d_dw(self) -> "Bivariate":
        if self.degree_w == 0:
            return Bivariate([Polynomial([0])])
        return Bivariate([j * c for j, c in enumerate(self.coeffs)][1:])

    def d_dz(self) -> "Bivariate":
        return Bivariate([c.derivative() for c in self.coeffs])

    def __add__(self, other: "Bivariate") -> "Bivariate":
        n = max(len(self.coeffs), len(other.coeffs))
        zero = Polynomial([0])
        a = list(self.coeffs) + [zero] * (n - len(self.coeffs))
        b = list(other.coeffs) + [zero] * (n - len(other.coeffs))
        return Bivariate([x + y for x, y in zip(a, b)])

    def scale(self, c: complex) -> "Bivariate":
        return Bivariate([Polynomial([c]) * x for x in self.coeffs])


def _coeff_vector(b: Bivariate, d: int) -> np.ndarray:
    out = np.zeros((d + 1, 4 * d + 8), dtype=complex)
    for j, c in enumerate(b.coeffs):
        cc = np.array(c.coeffs[: 4 * d + 8])
        out[j, : cc.size] = cc
    return out.ravel()


def horner_w(coeffs: list, w):
    acc = coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * w + c
    return acc


@dataclass(frozen=True)
class SkewProduct:
    """Regular polynomial skew product of degree d = deg p = deg_w q."""

    base: Polynomial
    fiber: Bivariate

    def __post_init__(self):
        d = self.fiber.degree_w
        if d < 1:
            raise ValueError("fiber must involve w")
        lead = self.fiber.coeffs[-1]
        if lead.degree != 0 or lead.coeffs[0] == 0:
            raise ValueError("coefficient of w**d must be a nonzero constant (regular skew product)")
        if self.base.degree != d:
            raise ValueError(f"base degree {self.base.degree} differs from fiber degree {d}")

    @property
    def d(self) -> int:
        return self.fiber.degree_w

    def p(self, z):
        return eval_poly(self.base, z)

    def q(self, z, w):
        return self.fiber(z, w)

    def coeffs_at(self, z) -> list:
        return self.fiber.coeffs_at(z)

    def __call__(self, z, w):
        return self.p(z), self.q(z, w)

    def is_normal_form(self) -> bool:
        c = self.fiber.coeffs
        return c[-1].coeffs == (1 + 0j,) and (self.d < 2 or c[-2].is_zero())


@dataclass(frozen=True)
class ParameterSlice:
    """Affine family lam -> base + sum_k lam_k * directions[k] acting on the fiber.

    The base polynomial p stays fixed; directions are bivariate perturbations of
    the fiber with no w**d term, so regularity holds for every lam.
    """

    base: SkewProduct
    directions: tuple[Bivariate, ...]
    _dw: tuple = field(init=False, repr=False, compare=False)
    _dz: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.base.d
        for r in self.directions:
            if r.degree_w >= d:
                raise ValueError("slice directions may not touch the w**d coefficient")
        object.__setattr__(self, "directions", tuple(self.directions))
        if self.directions:
            rows = [_coeff_vector(r, d) for r in self.directions]
            if np.linalg.matrix_rank(np.array(rows)) < len(rows):
                raise ValueError("slice directions are linearly dependent")
        object.__setattr__(self, "_dw", (self.base.fiber.d_dw(),) + tuple(r.d_dw() for r in self.directions))
        object.__setattr__(self, "_dz", (self.base.fiber.d_dz(),) + tuple(r.d_dz() for r in self.directions))

    @property
    def dim(self) -> int:
        return len(self.directions)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def p(self) -> Polynomial:
        return self.base.base

    def _combine(self, parts: Sequence[Bivariate], lam, z, w):
        out = parts[0](z, w)
        for lk, r in zip(lam, parts[1:]):
            out = out + lk * r(z, w)
        return out

    def q(self, lam, z, w):
        """Fiber map value; lam entries, z and w may be complex, arrays or jets."""
        return self._combine((self.base.fiber,) + self.directions, lam, z, w)

    def qw(self, lam, z, w):
        return self._combine(self._dw, lam, z, w)

    def qz(self, lam, z, w):
        return self._combine(self._dz, lam, z, w)

    def coeffs_at(self, lam, z) -> list:
        out = self.base.fiber.coeffs_at(z)
        for lk, r in zip(lam, self.directions):
            for j, c in enumerate(r.coeffs_at(z)):
                out[j] = out[j] + lk * c
        return out

    def instantiate(self, lam) -> SkewProduct:
        lam = [complex(x) for x in lam]
        fib = self.base.fiber
        for lk, r in zip(lam, self.directions):
            fib = fib + r.scale(lk)
        return SkewProduct(self.base.base, fib)

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for poly in (self.p,) + self.base.fiber.coeffs + tuple(c for r in self.directions for c in r.coeffs):
            h.update(repr(poly.coeffs).encode())
            h.update(b"|")
        return h.hexdigest()[:16]


def unicritical_slice(p: Polynomial, a_base: Sequence[complex], directions: Sequence[Sequence[complex]], d: int | None = None) -> ParameterSlice:
    """Slice of U_d: fiber w**d + a(z) with a = a_base + sum lam_k * directions[k]."""
    d = p.degree if d is None else d
    zero = Polynomial([0])
    fib = Bivariate([Polynomial(a_base)] + [zero] * (d - 1) + [Polynomial([1])])
    dirs = tuple(Bivariate([Polynomial(v)]) for v in directions)
    return ParameterSlice(SkewProduct(p, fib), dirs)


def product_map(p: Polynomial, q: Polynomial) -> SkewProduct:
    """Trivial product (p(z), q(w))."""
    return SkewProduct(p, Bivariate([Polynomial([c]) for c in q.coeffs]))


class OrbitJacobian(NamedTuple):
    dp: complex
    dQdw: complex
    dQdz: complex

    def matrix(self) -> np.ndarray:
        return np.array([[self.dp, 0], [self.dQdz, self.dQdw]], dtype=complex)


# ---------------------------------------------------------------------------
# Normal form
# ---------------------------------------------------------------------------


def to_normal_form(f: SkewProduct) -> tuple[SkewProduct, complex, Polynomial]:
    """Conjugate f to w**d + sum_{j<=d-2} A_j(z) w**j.

    Returns ``(g, s, t)`` with f o phi = phi o g for phi(z, v) = (z, s*(v + t(z))).
    """
    d = f.d
    b = list(f.fiber.coeffs)
    lead = b[-1].coeffs[0]
    s = complex(lead) ** (-1.0 / (d - 1)) if d > 1 else 1.0
    # u-coordinates: w = s u; q(z, s u) / s
    bu = [Polynomial([s ** (j - 1)]) * b[j] for j in range(d + 1)]
    t = Polynomial([-c / d for c in bu[d - 1].coeffs]) if d > 1 else Polynomial([0])
    # v-coordinates: u = v + t(z); new fiber = sum_j bu_j (v + t)^j - t(p(z))
    out = [Polynomial([0]) for _ in range(d + 1)]
    for j in range(d + 1):
        for i in range(j + 1):
            out[i] = out[i] + bu[j] * (t ** (j - i)) * math.comb(j, i)
    out[0] = out[0] - t.compose(f.base)
    out[d] = Polynomial([1])  # s^(d-1) * lead is 1 up to rounding
    if d > 1:
        out[d - 1] = Polynomial([0])
    return SkewProduct(f.base, Bivariate(out)), s, t


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------


def iterate(f: SkewProduct, z, w, n: int):
    """(p^n(z), Q^n_z(w)); raises EscapedToInfinity on overflow."""
    if n < 0:
        raise ValueError("n must be non-negative")
    for k in range(n):
        z, w = f.p(z), f.q(z, w)
        if not (abs(w) < OVERFLOW and abs(z) < OVERFLOW):
            raise EscapedToInfinity(k + 1)
    return z, w


def orbit_jacobian(f: SkewProduct, z, w, n: int) -> OrbitJacobian:
    """Entries of the lower-triangular differential of f^n at (z, w)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dp, dQdw, dQdz = 1.0 + 0j, 1.0 + 0j, 0j
    qw, qz = f.fiber.d_dw(), f.fiber.d_dz()
    dbase = f.base.derivative()
    for k in range(n):
        a, c, b = dbase(z), qz(z, w), qw(z, w)
        dQdz = c * dp + b * dQdz
        dQdw = b * dQdw
        dp = a * dp
        z, w = f.p(z), f.q(z, w)
        if not abs(w) < OVERFLOW:
            raise EscapedToInfinity(k + 1)
    return OrbitJacobian(complex(dp), complex(dQdw), complex(dQdz))


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------

ESCAPED, BOUNDED, UNDECIDED = 0, 1, 2


@dataclass(frozen=True)
class GreenConfig:
    max_iter: int = 200
    escape_radius: float = 10.0
    extra_iter: int = 3


class GreenValue(NamedTuple):
    value: float
    status: int
    steps: int


def fiber_bound(coeffs: list):
    """Radius beyond which |q_z(w)| > |w| >= 1, from the coefficient values at z."""
    lead = np.abs(coeffs[-1])
    s = 0.0
    for c in coeffs[:-1]:
        s = s + np.abs(c)
    return np.maximum(1.0, (1.0 + s) / lead)


def green_fiber_batch(coeffs_fn, base: Polynomial, d: int, z, w, cfg: GreenConfig = GreenConfig(), z_orbit=None):
    """Vectorized non-autonomous Green function.

    ``coeffs_fn(z, idx)`` returns the w-coefficients of q at base points z;
    ``idx`` holds the flat positions of those points in the input, so callers
    can attach per-point parameters.
    Returns ``(values, status)`` arrays with status ESCAPED, BOUNDED or UNDECIDED.
    BOUNDED means the orbit stayed in the escape disk and its modulus did not
    grow over the last quarter of the run (a heuristic certificate).

    Forward orbits of points on J_p drift off it in floating point. Passing
    ``z_orbit`` (shape of z plus a trailing orbit axis, entry 0 equal to z)
    supplies a precomputed, backward-stable base orbit; past its end the base
    is iterated forward and orbits whose base overflows become UNDECIDED.
    """
    z, w = np.broadcast_arrays(np.asarray(z, dtype=complex), np.asarray(w, dtype=complex))
    shape = w.shape
    z, w = z.ravel().copy(), w.ravel().copy()
    orb = None
    if z_orbit is not None:
        z_orbit = np.asarray(z_orbit, dtype=complex)
        orb = np.broadcast_to(z_orbit, shape + z_orbit.shape[-1:]).reshape(-1, z_orbit.shape[-1])
    m = w.size
    value = np.zeros(m)
    escaped = np.zeros(m, dtype=bool)
    lost = np.zeros(m, dtype=bool)
    esc_step = np.full(m, -1)
    max_early = np.zeros(m)
    max_late = np.zeros(m)
    late_start = (3 * cfg.max_iter) // 4
    idx = np.arange(m)
    logd = math.log(d)
    for n in range(cfg.max_iter + cfg.extra_iter + 1):
        if idx.size == 0:
            break
        zl, wl = z[idx], w[idx]
        aw = np.abs(wl)
        if n < cfg.max_iter:
            cz = [np.broadcast_to(np.asarray(c, dtype=complex), zl.shape) for c in coeffs_fn(zl, idx)]
            R = np.maximum(fiber_bound(cz), cfg.escape_radius)
            trig = (esc_step[idx] < 0) & (aw > R)
            esc_step[idx[trig]] = n
        es = esc_step[idx]
        fin = (es >= 0) & ((n - es >= cfg.extra_iter) | (aw > 1e60))
        if fin.any():
            value[idx[fin]] = np.log(aw[fin]) * math.exp(-n * logd)
            escaped[idx[fin]] = True
        if n < late_start:
            max_early[idx] = np.maximum(max_early[idx], aw)
        else:
            max_late[idx] = np.maximum(max_late[idx], aw)
        keep = ~fin & ((es >= 0) | (n < cfg.max_iter))
        if n >= cfg.max_iter:
            cz = [np.broadcast_to(np.asarray(c, dtype=complex), zl.shape) for c in coeffs_fn(zl, idx)]
        idx = idx[keep]
        with np.errstate(over="ignore", invalid="ignore"):
            w[idx] = horner_w([c[keep] for c in cz], wl[keep])
            if orb is not None and n + 1 < orb.shape[1]:
                z[idx] = orb[idx, n + 1]
            else:
                z[idx] = eval_poly(base, zl[keep])
        bad = ~np.isfinite(z[idx]) | (np.abs(z[idx]) > OVERFLOW)
        if bad.any():
            lost[idx[bad]] = True
            idx = idx[~bad]
    certified = (max_late <= max_early) & ~lost
    status = np.where(escaped, ESCAPED, np.where(certified, BOUNDED, UNDECIDED)).astype(np.int8)
    return value.reshape(shape), status.reshape(shape)


def green_vertical_detail(f: SkewProduct, z, w, cfg: GreenConfig = GreenConfig()) -> GreenValue:
    v, s = green_fiber_batch(lambda zz, _i: f.coeffs_at(zz), f.base, f.d, np.array([z]), np.array([w]), cfg)
    return GreenValue(float(v[0]), int(s[0]), cfg.max_iter)


def green_vertical(f: SkewProduct, z, w, cfg: GreenConfig = GreenConfig()) -> float:
    """G(z, w) = lim d^-n log+|Q^n_z(w)|; undecided orbits count as 0."""
    return green_vertical_detail(f, z, w, cfg).value


def green_base_batch(p: Polynomial, z, cfg: GreenConfig = GreenConfig()):
    """Vectorized escape-rate Green function of a single polynomial."""
    cs = [complex(c) for c in p.coeffs]
    return green_fiber_batch(lambda zz, _i: cs, Polynomial([0, 1]), p.degree, 0j, z, cfg)


def green_slice_batch(s: "ParameterSlice", lam, z, w, cfg: GreenConfig = GreenConfig(), z_orbit=None):
    """Green function over a slice; lam entries broadcast against z and w."""
    shape = np.broadcast_shapes(np.shape(z), np.shape(w), *[np.shape(l) for l in lam])
    lam_flat = [np.broadcast_to(np.asarray(l, dtype=complex), shape).ravel() for l in lam]
    z = np.broadcast_to(np.asarray(z, dtype=complex), shape)
    w = np.broadcast_to(np.asarray(w, dtype=complex), shape)
    return green_fiber_batch(lambda zz, i: s.coeffs_at([l[i] for l in lam_flat], zz), s.p, s.d, z, w, cfg, z_orbit)


def green_base(p: Polynomial, z, cfg: GreenConfig = GreenConfig()) -> float:
    """G_p(z) = lim d^-n log+|p^n(z)|."""
    v, _ = green_base_batch(p, np.array([z], dtype=complex), cfg)
    return float(v[0])


# ---------------------------------------------------------------------------
# Escape radius for the unicritical family
# ---------------------------------------------------------------------------


def is_unicritical(s: ParameterSlice) -> bool:
    c = s.base.fiber.coeffs
    mids_zero = all(x.is_zero() for x in c[1:-1])
    dirs_ok = all(r.degree_w == 0 for r in s.directions)
    return mids_zero and dirs_ok and c[-1].coeffs == (1 + 0j,)


def escape_radius(s: ParameterSlice, lam, jp_sample: np.ndarray | None = None, inflate: float = 1.1) -> float:
    """Radius 2 + A^(1/d), A = inflated max over a J_p sample of |a(z)|.

    With |w| > radius, |w^d + a(z)| >= |w|^d - A > |w| for every sampled z.
    """
    if not is_unicritical(s):
        raise ValueError("escape_radius needs a slice of the unicritical family")
    if jp_sample is None:
        from .measures_lyapunov import SamplerConfig, sample_mu_p

        jp_sample = sample_mu_p(s.p, SamplerConfig(n_samples=512, depth=40, seed=12345))
    a = s.coeffs_at(lam, np.asarray(jp_sample, dtype=complex))[0]
    A = inflate * float(np.max(np.abs(a)))
    return 2.0 + A ** (1.0 / s.d)
