"""Periodic orbits, Misiurewicz relations, independence certificates and genericity checks."""

from __future__ import annotations

import cmath
import hashlib
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

from .poly_core import DegreeOverflow, Jet1, NonConvergence, Polynomial, eval_poly, jet_partials, jet_value, roots
from .skew_dynamics import ParameterSlice, SkewProduct, orbit_jacobian


class BranchJumpRisk(RuntimeError):
    pass


class LostRepelling(RuntimeError):
    pass


class PersistentRelation(RuntimeError):
    pass


class SearchExhausted(RuntimeError):
    def __init__(self, msg: str, diagnostic: dict | None = None):
        super().__init__(msg)
        self.diagnostic = diagnostic or {}


class HypothesisViolated(ValueError):
    pass


REPELLING_MARGIN = 1.05


# ---------------------------------------------------------------------------
# Periodic orbits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicOrbit:
    z1: complex
    w1: complex
    m: int
    A: complex
    B: complex
    repelling: bool
    vertical_like: bool
    lam: tuple = ()

    def to_dict(self) -> dict:
        return {
            "z1": _cdump(self.z1),
            "w1": _cdump(self.w1),
            "m": self.m,
            "A": _cdump(self.A),
            "B": _cdump(self.B),
            "repelling": self.repelling,
            "vertical_like": self.vertical_like,
            "lam": [_cdump(x) for x in self.lam],
        }


def _cdump(x) -> list[float]:
    x = complex(x)
    return [x.real, x.imag]


def make_orbit(f: SkewProduct, z1: complex, w1: complex, m: int, lam: Sequence[complex] = ()) -> PeriodicOrbit:
    J = orbit_jacobian(f, z1, w1, m)
    A, B = J.dp, J.dQdw
    return PeriodicOrbit(
        complex(z1), complex(w1), m, A, B, bool(abs(B) > 1 and abs(A) > 1), bool(abs(B) > abs(A)), tuple(complex(x) for x in lam)
    )


def base_period_ok(p: Polynomial, z1: complex, m: int, tol: float = 1e-9) -> bool:
    z = z1
    for _ in range(m):
        z = p(z)
    return abs(z - z1) <= tol * (1 + abs(z1))


def return_map_poly(f: SkewProduct, z1: complex, m: int, cap: int = 4096) -> Polynomial:
    """Q^m_{z1} as a polynomial in w (coefficients from composition)."""
    if f.d**m > cap:
        raise DegreeOverflow(f"degree {f.d}**{m} exceeds cap {cap}")
    Q = Polynomial([0, 1])
    z = z1
    for _ in range(m):
        qz = Polynomial([complex(c) for c in f.coeffs_at(z)])
        Q = qz.compose(Q)
        z = f.p(z)
    return Q


def _fiber_newton(f: SkewProduct, z1: complex, w: complex, m: int, tol: float = 1e-14, max_iter: int = 60) -> complex:
    """Newton on Q^m_{z1}(w) - w evaluated by iteration."""
    qw = f.fiber.d_dw()
    for _ in range(max_iter):
        z, x, D = z1, w, 1.0 + 0j
        for _ in range(m):
            D = D * qw(z, x)
            x = f.q(z, x)
            z = f.p(z)
        g = x - w
        if D == 1:
            break
        step = g / (D - 1)
        w = w - step
        if abs(step) <= tol * (1 + abs(w)):
            break
    return complex(w)


def _exact_period(f: SkewProduct, z1: complex, w1: complex, m: int, tol: float) -> bool:
    for k in range(1, m):
        if m % k:
            continue
        if not base_period_ok(f.base, z1, k, tol):
            continue
        z, w = z1, w1
        for _ in range(k):
            z, w = f.p(z), f.q(z, w)
        if abs(w - w1) <= 1e3 * tol * (1 + abs(w1)):
            return False
    return True


def periodic_points_fiber(
    f: SkewProduct, z1: complex, m: int, cap: int = 4096, tol: float = 1e-9, exact: bool = False
) -> list[PeriodicOrbit]:
    """All solutions of Q^m_{z1}(w) = w, refined by Newton on the iterated map.

    With ``exact=True`` points of lower fiber period are dropped.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not base_period_ok(f.base, z1, m, tol):
        raise ValueError("z1 is not p-periodic with period dividing m")
    Q = return_map_poly(f, z1, m, cap)
    G = Q - Polynomial([0, 1])
    rts = roots(G, tol=1.0, extended=G.degree > 64)
    out = []
    for r in rts:
        w = _fiber_newton(f, z1, complex(r), m)
        if exact and not _exact_period(f, z1, w, m, tol):
            continue
        out.append(make_orbit(f, z1, w, m))
    return out


def orbit_separation(f: SkewProduct, orbit: PeriodicOrbit, cap: int = 4096) -> float:
    """Distance from w1 to the nearest other solution of Q^m(w) = w."""
    try:
        pts = periodic_points_fiber(f, orbit.z1, orbit.m, cap)
    except DegreeOverflow:
        return 1.0 / max(abs(orbit.B), 1.0)
    d = sorted(abs(o.w1 - orbit.w1) for o in pts)
    return d[1] if len(d) > 1 else float("inf")


# ---------------------------------------------------------------------------
# Jets over a slice
# ---------------------------------------------------------------------------


def lam_jets(lam: Sequence[complex], mp: bool = False) -> list[Jet1]:
    n = len(lam)
    js = [Jet1.variable(x if isinstance(x, mpmath.mpc) else complex(x), i, n) for i, x in enumerate(lam)]
    return [j.to_mp() for j in js] if mp else js


def fiber_iterate(s: ParameterSlice, lam, z, w, n: int):
    """(z_n, Q^n(w), dQ^n/dw) over a slice; lam and w may be jets."""
    D = 1.0
    for _ in range(n):
        D = D * s.qw(lam, z, w)
        w = s.q(lam, z, w)
        z = eval_poly(s.p, z)
    return z, w, D


def track_w1(s: ParameterSlice, lam: Sequence[complex], z1: complex, w_guess: complex, m: int, tol: float = 1e-14) -> complex:
    f = s.instantiate(lam)
    return _fiber_newton(f, z1, w_guess, m, tol)


def w1_jet(s: ParameterSlice, lam: Sequence[complex], z1: complex, w1: complex, m: int, mp: bool = False) -> Jet1:
    """w1(lam) as a jet: value w1 (already periodic at lam) and partials by the
    implicit function theorem, -d_lam Q^m / (B - 1)."""
    L = lam_jets(lam, mp)
    w = mpmath.mpc(w1) if mp else complex(w1)
    z = mpmath.mpc(z1) if mp else complex(z1)
    _, Qm, B = fiber_iterate(s, L, z, w, m)
    Bv = jet_value(B)
    return Jet1(w, -Qm.partials / (Bv - 1))


def critical_jet(s: ParameterSlice, lam: Sequence[complex], z0: complex, c_guess: complex, mp: bool = False, tol: float = 1e-14) -> Jet1:
    """Critical point c(lam) of q_{lam, z0} near c_guess, with partials -d_lam q_w / q_ww."""
    f = s.instantiate(lam)
    qw = f.fiber.d_dw()
    qww = qw.d_dw()
    c = complex(c_guess)
    for _ in range(60):
        h = qww(z0, c)
        if h == 0:
            break
        step = qw(z0, c) / h
        c -= step
        if abs(step) <= tol * (1 + abs(c)):
            break
    if mp:
        c = mpmath.mpc(c)
        Lv = [mpmath.mpc(x) for x in lam]
        zm = mpmath.mpc(z0)
        eps = mpmath.mpf(10) ** (-(mpmath.mp.dps - 5))
        for _ in range(60):
            step = s.qw(Lv, zm, c) / qww(zm, c)
            c = c - step
            if abs(step) <= eps * (1 + abs(c)):
                break
    L = lam_jets(lam, mp)
    zz = mpmath.mpc(z0) if mp else complex(z0)
    g = s.qw(L, zz, c)
    h = qww(zz, c)
    return Jet1(c, -jet_partials(g, len(lam)) / h)


# ---------------------------------------------------------------------------
# Misiurewicz relations
# ---------------------------------------------------------------------------


@dataclass
class MisiurewiczRelation:
    z0: complex
    c0: complex  # critical point followed, at lam_star
    n0: int
    target: PeriodicOrbit  # at lam_star
    lam_star: tuple
    residual: float
    newton_trace: list = field(default_factory=list)
    dF: tuple = ()
    slice_hash: str = ""
    critical_index: int = 0
    landing: "Landing | None" = None

    def to_dict(self) -> dict:
        out = {
            "z0": _cdump(self.z0),
            "c0": _cdump(self.c0),
            "critical_index": self.critical_index,
            "n0": self.n0,
            "target": self.target.to_dict(),
            "lam_star": [_cdump(x) for x in self.lam_star],
            "residual": self.residual,
            "newton_trace": list(self.newton_trace),
            "dF": [_cdump(x) for x in self.dF],
            "slice_hash": self.slice_hash,
        }
        if self.landing is not None:
            out["landing"] = self.landing.to_dict()
        return out


def critical_points_at(f: SkewProduct, z0: complex) -> list[complex]:
    """Critical points of q_{z0}, in a canonical order (by argument, then modulus)."""
    dq = Polynomial([complex(c) for c in f.fiber.d_dw().coeffs_at(z0)])
    if dq.degree < 1:
        return []
    rts = roots(dq)
    return sorted(rts, key=lambda c: (round(cmath.phase(c), 9) if abs(c) > 1e-12 else -10.0, abs(c)))


@dataclass
class _RelState:
    """Mutable continuation state: current critical point and periodic point."""

    c: complex
    w1: complex


def relation_value(
    s: ParameterSlice, z0: complex, n0: int, z1: complex, m: int, lam: Sequence[complex], st: _RelState, mp: bool = False
) -> Jet1:
    """F(lam) = Q^{n0}_{lam,z0}(c(lam)) - w1(lam) as a jet; updates st in place."""
    st.c = complex(jet_value(critical_jet(s, lam, z0, st.c)))
    st.w1 = track_w1(s, lam, z1, st.w1, m)
    c = critical_jet(s, lam, z0, st.c, mp=mp)
    L = lam_jets(lam, mp)
    zz = mpmath.mpc(z0) if mp else complex(z0)
    _, Qn, _ = fiber_iterate(s, L, zz, c, n0)
    return Qn - w1_jet(s, lam, z1, st.w1, m, mp=mp)


def _check_combinatorics(p: Polynomial, z0: complex, z1: complex, n0: int, tol: float = 1e-8) -> None:
    z = z0
    for _ in range(n0):
        z = p(z)
    if abs(z - z1) > tol * (1 + abs(z1)):
        raise ValueError(f"p^{n0}(z0) = {z} does not reach z1 = {z1}")


def solve_misiurewicz(
    s: ParameterSlice,
    z0: complex,
    critical_index: int | complex,
    n0: int,
    target: PeriodicOrbit,
    lam_init: Sequence[complex],
    direction: Sequence[complex] | None = None,
    tol: float = 1e-12,
    max_iter: int = 60,
    max_step: float | None = None,
) -> MisiurewiczRelation:
    """Newton (or minimal-norm Gauss-Newton for dim > 1) on F(lam) = 0.

    ``critical_index`` indexes ``critical_points_at`` at lam_init, or is a
    complex starting guess. With ``direction`` the solve runs on the line
    lam_init + t * direction.
    """
    _check_combinatorics(s.p, z0, target.z1, n0)
    lam = np.array([complex(x) for x in lam_init])
    f0 = s.instantiate(lam)
    if isinstance(critical_index, (int, np.integer)):
        crit = critical_points_at(f0, z0)
        c_guess = crit[int(critical_index)]
        cidx = int(critical_index)
    else:
        c_guess = complex(critical_index)
        cidx = -1
    w_guess = track_w1(s, lam, target.z1, target.w1, target.m) if not target.lam else _continue_target(s, target, lam)
    st = _RelState(c_guess, w_guess)
    dirv = None if direction is None else np.array([complex(x) for x in direction])
    trace: list[float] = []
    F = None
    for _ in range(max_iter):
        F = relation_value(s, z0, n0, target.z1, target.m, lam, st)
        grad = F.partials
        if dirv is not None:
            g = complex(grad @ dirv)
            if abs(g) < 1e-14 * (1 + abs(F.value)):
                raise PersistentRelation("dF vanishes along the search direction")
            step = -F.value / g * dirv
        else:
            nrm = float(np.vdot(grad, grad).real)
            if nrm < 1e-28:
                raise PersistentRelation("dF vanishes along every slice direction")
            step = -F.value * np.conj(grad) / nrm
        if max_step is not None:
            sn = float(np.linalg.norm(step))
            if sn > max_step:
                step = step * (max_step / sn)
        lam = lam + step
        trace.append(float(np.linalg.norm(step)))
        if abs(F.value) <= tol and trace[-1] <= 1e-9 * (1 + float(np.linalg.norm(lam))):
            break
    else:
        F = relation_value(s, z0, n0, target.z1, target.m, lam, st)
        if abs(F.value) > tol:
            raise NonConvergence(f"Misiurewicz solve stalled at |F| = {abs(F.value):.3e}")
    F = relation_value(s, z0, n0, target.z1, target.m, lam, st)
    if abs(F.value) > max(tol, 1e-9):
        raise NonConvergence(f"Misiurewicz solve ended at |F| = {abs(F.value):.3e}")
    f = s.instantiate(lam)
    tgt = make_orbit(f, target.z1, st.w1, target.m, lam)
    return MisiurewiczRelation(
        complex(z0), st.c, n0, tgt, tuple(complex(x) for x in lam), float(abs(F.value)), trace,
        tuple(complex(x) for x in F.partials), s.digest(), cidx,
    )


def _continue_target(s: ParameterSlice, target: PeriodicOrbit, lam, steps: int = 16) -> complex:
    lam0 = np.array(target.lam, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    if lam0.shape != lam.shape or np.allclose(lam0, lam):
        return target.w1
    w = target.w1
    for t in np.linspace(0, 1, steps + 1)[1:]:
        w = track_w1(s, lam0 + t * (lam - lam0), target.z1, w, target.m)
    return w


def relation_residual(s: ParameterSlice, rel: MisiurewiczRelation, lam: Sequence[complex] | None = None) -> Jet1:
    """F for an existing relation, re-evaluated from scratch at lam (default lam_star)."""
    lam = rel.lam_star if lam is None else lam
    if rel.landing is not None:
        return landing_value(s, rel, lam)
    st = _RelState(rel.c0, _continue_target(s, rel.target, lam))
    return relation_value(s, rel.z0, rel.n0, rel.target.z1, rel.target.m, lam, st)


def relation_tuple_map(s: ParameterSlice, relations: Sequence[MisiurewiczRelation], lam: Sequence[complex]):
    """(F_1(lam), ..., F_k(lam)) and the k x dim Jacobian."""
    vals, rows = [], []
    for rel in relations:
        F = relation_residual(s, rel, lam)
        vals.append(F.value)
        rows.append(F.partials)
    return np.array(vals, dtype=complex), np.array(rows, dtype=complex)


def rank_certificate(J: np.ndarray, rank_tol: float = 1e-6) -> tuple[int, float]:
    """Rank and smallest relevant singular value of a Jacobian with unit-norm rows."""
    J = np.asarray(J, dtype=complex)
    norms = np.linalg.norm(J, axis=1)
    Jn = J / np.where(norms > 0, norms, 1.0)[:, None]
    sv = np.linalg.svd(Jn, compute_uv=False)
    k = min(J.shape)
    smin = float(sv[k - 1]) if k else 0.0
    return int(np.sum(sv > rank_tol)), smin


def independence_rank(s: ParameterSlice, relations: Sequence[MisiurewiczRelation], lam: Sequence[complex], rank_tol: float = 1e-6):
    """(rank, sigma_min, jacobian) of the relation tuple map at lam.

    Rows are scaled to unit norm first, so sigma_min measures the angle between
    the relation hypersurfaces rather than the size of their defining functions.
    """
    _, J = relation_tuple_map(s, relations, lam)
    r, smin = rank_certificate(J, rank_tol)
    return r, smin, J


# ---------------------------------------------------------------------------
# Multipliers and genericity
# ---------------------------------------------------------------------------


def multiplier_jet(s: ParameterSlice, lam: Sequence[complex], z1: complex, w1: complex, m: int, mp: bool = False) -> Jet1:
    """B(lam) = prod q_w along the cycle, with w1(lam) followed implicitly."""
    w = w1_jet(s, lam, z1, w1, m, mp)
    L = lam_jets(lam, mp)
    z = mpmath.mpc(z1) if mp else complex(z1)
    _, _, B = fiber_iterate(s, L, z, w, m)
    return B


def multiplier_map_jacobian(s: ParameterSlice, orbits: Sequence[PeriodicOrbit], lam: Sequence[complex], rank_tol: float = 1e-6):
    """Jacobian of lam -> (B_i(lam)) and its smallest singular value."""
    rows = []
    for o in orbits:
        w = _continue_target(s, o, lam) if o.lam else track_w1(s, lam, o.z1, o.w1, o.m)
        rows.append(multiplier_jet(s, lam, o.z1, w, o.m).partials)
    J = np.array(rows, dtype=complex)
    sv = np.linalg.svd(J, compute_uv=False)
    return J, float(sv[min(J.shape) - 1])


@dataclass
class GoodnessReport:
    g1_dB: tuple
    g1_nonconstant_on_M: bool
    g2_vertical_like: bool
    g3_base_ok: bool
    g4_simple: bool
    g5_angle: float
    g5_ok: bool
    s1: bool
    s2: bool
    s2_distance: float
    repelling: bool

    @property
    def good(self) -> bool:
        return all([self.g1_nonconstant_on_M, self.g2_vertical_like, self.g3_base_ok, self.g4_simple, self.g5_ok, self.repelling])

    @property
    def generic(self) -> bool:
        return self.s1 and self.s2

    def to_dict(self) -> dict:
        return {
            "g1_dB": [_cdump(x) for x in self.g1_dB],
            "g1_nonconstant_on_M": self.g1_nonconstant_on_M,
            "g2_vertical_like": self.g2_vertical_like,
            "g3_base_ok": self.g3_base_ok,
            "g4_simple": self.g4_simple,
            "g5_angle": self.g5_angle,
            "g5_ok": self.g5_ok,
            "s1": self.s1,
            "s2": self.s2,
            "s2_distance": self.s2_distance,
            "repelling": self.repelling,
            "good": self.good,
        }


def line_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in [0, pi/2] between the complex lines spanned by u and v."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    c = abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(math.acos(min(1.0, c)))


def postcritical_tangent(f: SkewProduct, z0: complex, c0: complex, n0: int) -> np.ndarray:
    """Tangent of f^{n0}(Crit) at f^{n0}(z0, c0) from the critical curve w = c(z)."""
    qw = f.fiber.d_dw()
    qww = qw.d_dw()
    qwz = qw.d_dz()
    dc = -qwz(z0, c0) / qww(z0, c0)
    J = orbit_jacobian(f, z0, c0, n0)
    return np.array([J.dp, J.dQdz + J.dQdw * dc], dtype=complex)


def eigen_lines(J) -> list[np.ndarray]:
    """Eigenvectors of the lower-triangular [[A, 0], [C, B]]."""
    A, B, C = J.dp, J.dQdw, J.dQdz
    out = [np.array([0, 1], dtype=complex)]
    if abs(A - B) > 1e-14 * (abs(A) + abs(B)):
        out.append(np.array([A - B, C], dtype=complex))
    return out


def s2_distance(A: complex, B: complex) -> float:
    """min over real t of |log B - t log A| (principal logarithms)."""
    la, lb = cmath.log(A), cmath.log(B)
    return abs((lb * la.conjugate()).imag) / abs(la)


def _cycle(p: Polynomial, z1: complex, m: int) -> list[complex]:
    out = [complex(z1)]
    for _ in range(m - 1):
        out.append(complex(eval_poly(p, out[-1])))
    return out


def goodness_audit(
    s: ParameterSlice, rel: MisiurewiczRelation, angle_tol: float = 1e-3, s2_tol: float = 1e-3, grad_tol: float = 1e-10
) -> GoodnessReport:
    lam = rel.lam_star
    f = s.instantiate(lam)
    t = rel.target
    Bj = multiplier_jet(s, lam, t.z1, t.w1, t.m)
    dB = np.asarray(Bj.partials, dtype=complex)
    # G1 restricted to M: project dB onto the kernel of dF
    dF = np.asarray(rel.dF, dtype=complex)
    if s.dim > 1 and np.linalg.norm(dF) > 0:
        nF = dF / np.linalg.norm(dF)
        tangent_part = dB - np.vdot(np.conj(nF), dB) * np.conj(nF)
        # vectors v with dF.v = 0 are orthogonal to conj(dF)
        g1 = bool(np.linalg.norm(tangent_part) > grad_tol * (1 + abs(Bj.value)))
    else:
        g1 = bool(np.linalg.norm(dB) > grad_tol * (1 + abs(Bj.value)))
    # G3
    if rel.landing is not None:
        # the forward base orbit is only stable when read off the backward chain
        orbit = list(rel.landing.base_refs[::-1])
        orbit += [complex(x) for x in _cycle(f.base, t.z1, t.m)[1:]]
    else:
        orbit = [rel.z0]
        for _ in range(rel.n0 + t.m):
            orbit.append(f.p(orbit[-1]))
    dpn = np.prod([eval_poly(f.base.derivative(), z) for z in orbit[: rel.n0]])
    periodic = any(abs(zz - rel.z0) < 1e-9 * (1 + abs(rel.z0)) for zz in orbit[1:])
    g3 = bool(abs(dpn) > 1e-12 and not periodic)
    # G4
    qww = f.fiber.d_dw().d_dw()
    g4 = bool(abs(qww(rel.z0, rel.c0)) > 1e-10)
    # G5
    if rel.landing is not None:
        tan = _landing_tangent(s, rel)
    else:
        tan = postcritical_tangent(f, rel.z0, rel.c0, rel.n0)
    Jm = orbit_jacobian(f, t.z1, t.w1, t.m)
    angle = min(line_angle(tan, v) for v in eigen_lines(Jm))
    dist = s2_distance(t.A, t.B)
    return GoodnessReport(
        tuple(complex(x) for x in dB), g1, t.vertical_like, g3, g4, angle, bool(angle > angle_tol),
        bool(np.linalg.norm(dB) > grad_tol), bool(dist > s2_tol), float(dist), bool(abs(t.B) >= REPELLING_MARGIN and t.repelling),
    )


# ---------------------------------------------------------------------------
# Continuation of periodic points
# ---------------------------------------------------------------------------


def track_periodic(
    s: ParameterSlice,
    orbit: PeriodicOrbit,
    lam_from: Sequence[complex],
    lam_to: Sequence[complex],
    steps: int = 8,
    max_halvings: int = 6,
    margin: float = REPELLING_MARGIN,
    separation: float | None = None,
) -> PeriodicOrbit:
    """Predictor-corrector continuation of w1 from lam_from to lam_to.

    Each step predicts with dw1/dlam and corrects by Newton; a correction
    larger than a quarter of the orbit separation halves the step, and more
    than ``max_halvings`` halvings raise BranchJumpRisk.
    """
    a = np.array([complex(x) for x in lam_from])
    b = np.array([complex(x) for x in lam_to])
    f = s.instantiate(a)
    if abs(orbit.B) < margin:
        raise LostRepelling(f"|B| = {abs(orbit.B):.4f} below margin {margin}")
    sep = orbit_separation(f, orbit) if separation is None else separation
    w = orbit.w1
    t, h = 0.0, 1.0 / steps
    halvings = 0
    while t < 1.0 - 1e-15:
        h = min(h, 1.0 - t)
        lam_t = a + t * (b - a)
        jet = w1_jet(s, lam_t, orbit.z1, w, orbit.m)
        pred = w + complex(jet.partials @ ((b - a) * h))
        lam_n = a + (t + h) * (b - a)
        corr = track_w1(s, lam_n, orbit.z1, pred, orbit.m)
        if abs(corr - pred) > 0.25 * sep:
            halvings += 1
            if halvings > max_halvings:
                raise BranchJumpRisk(f"corrector moved {abs(corr - pred):.3e} > quarter separation {sep:.3e}")
            h /= 2
            continue
        w, t = corr, t + h
        fn = s.instantiate(lam_n)
        B = orbit_jacobian(fn, orbit.z1, w, orbit.m).dQdw
        if abs(B) < margin:
            raise LostRepelling(f"|B| = {abs(B):.4f} below margin {margin} at t = {t:.3f}")
    return make_orbit(s.instantiate(b), orbit.z1, w, orbit.m, b)


# ---------------------------------------------------------------------------
# Relations in landing form and the second-relation search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Landing:
    """Path data for a relation evaluated in meet-in-the-middle form.

    ``base_refs`` is the backward base chain from the target base point
    (index 0) to the critical fiber (last index); ``fiber_refs`` holds the
    pulled-back target fiber values for the first ``n_back + 1`` entries.
    Both are double-precision references that only select roots: the chain is
    rebuilt at ``dps`` digits on every evaluation. The critical point over the
    last base point lands after ``len(base_refs) - 1 - n_back`` steps on the
    fiber value pulled back ``n_back`` times.
    """

    base_refs: tuple
    fiber_refs: tuple
    n_back: int
    dps: int
    k: int = 0
    m_k: int = 0
    branch: int = 0
    lam_mp: tuple = ()  # lam_star as (re, im) decimal strings beyond double precision

    @property
    def n_forward(self) -> int:
        return len(self.base_refs) - 1 - self.n_back

    def to_dict(self) -> dict:
        return {
            "n_back": self.n_back,
            "n_forward": self.n_forward,
            "dps": self.dps,
            "k": self.k,
            "m_k": self.m_k,
            "branch": self.branch,
            "landing_point": _cdump(self.base_refs[self.n_back]),
            "critical_fiber_approx": _cdump(self.base_refs[-1]),
            "lam_mp": list(self.lam_mp),
        }


def _landing_lam(rel: "MisiurewiczRelation", lam) -> list:
    """lam for a landing evaluation; lam_star resolves to its stored multiprecision value."""
    ld = rel.landing
    if lam is None or (ld.lam_mp and all(complex(a) == complex(b) for a, b in zip(lam, rel.lam_star))):
        if ld.lam_mp:
            return [mpmath.mpc(re, im) for re, im in ld.lam_mp]
        lam = rel.lam_star
    return [x if isinstance(x, mpmath.mpc) else complex(x) for x in lam]


def _mp_newton(g, dg, x0, eps, max_iter: int = 200):
    x = mpmath.mpc(x0)
    for _ in range(max_iter):
        step = g(x) / dg(x)
        x = x - step
        if abs(step) <= eps * (1 + abs(x)):
            return x
    raise NonConvergence("multiprecision Newton did not converge")


def _mp_base_chain(p: Polynomial, z_top, refs: Sequence[complex], eps) -> list:
    dp = p.derivative()
    zs = [z_top]
    for r in refs:
        x = zs[-1]
        zs.append(_mp_newton(lambda y: eval_poly(p, y) - x, lambda y: eval_poly(dp, y), r, eps))
    return zs


def _mp_periodic_base(p: Polynomial, z1: complex, m: int, eps):
    def g(z):
        for _ in range(m):
            z = eval_poly(p, z)
        return z

    def dg(z):
        D = 1
        for _ in range(m):
            D = D * eval_poly(p.derivative(), z)
            z = eval_poly(p, z)
        return D - 1

    return _mp_newton(lambda z: g(z) - z, dg, z1, eps)


def _jet_to_complex(j: Jet1) -> Jet1:
    return Jet1(complex(j.value), np.array([complex(x) for x in j.partials], dtype=complex))


def _landing_eval(s: ParameterSlice, rel: MisiurewiczRelation, lam: Sequence[complex]):
    """Multiprecision evaluation; call inside ``mpmath.workdps(landing.dps)``.

    Returns the forward critical jet phi, the pulled-back target jet W, the
    base chain and the pulled-back fiber values (index j over base point j).
    """
    ld = rel.landing
    t = rel.target
    eps = mpmath.mpf(10) ** (-(ld.dps - 5))
    Lv = [mpmath.mpc(x) for x in lam]
    L = lam_jets(lam, mp=True)
    z1 = _mp_periodic_base(s.p, t.z1, t.m, eps)
    w_guess = _continue_target(s, t, [complex(x) for x in lam]) if t.lam else t.w1

    def ret(w, deriv):
        z, D = z1, 1
        for _ in range(t.m):
            D = D * s.qw(Lv, z, w)
            w = s.q(Lv, z, w)
            z = eval_poly(s.p, z)
        return D - 1 if deriv else w

    w1 = _mp_newton(lambda w: ret(w, False) - w, lambda w: ret(w, True), w_guess, eps)
    W = w1_jet(s, lam, z1, w1, t.m, mp=True)
    zs = _mp_base_chain(s.p, z1, ld.base_refs[1:], eps)
    ws = [W.value]
    for j in range(1, ld.n_back + 1):
        z = zs[j]
        wv = W.value
        y = _mp_newton(lambda y: s.q(Lv, z, y) - wv, lambda y: s.qw(Lv, z, y), ld.fiber_refs[j], eps)
        W = Jet1(y, (W.partials - s.q(L, z, y).partials) / s.qw(Lv, z, y))
        ws.append(y)
    y0 = zs[-1]
    c = critical_jet(s, lam, y0, rel.c0, mp=True)
    _, phi, _ = fiber_iterate(s, L, y0, c, ld.n_forward)
    return phi, W, zs, ws, c


def landing_parts(s: ParameterSlice, rel: MisiurewiczRelation, lam: Sequence[complex]) -> tuple[Jet1, Jet1]:
    """(phi, w): the forward critical value over the landing fiber and the
    pulled-back target value there, both as complex jets in lam."""
    with mpmath.workdps(rel.landing.dps):
        lam = _landing_lam(rel, lam)
        phi, W, _, _, _ = _landing_eval(s, rel, lam)
        return _jet_to_complex(phi), _jet_to_complex(W)


def landing_value(s: ParameterSlice, rel: MisiurewiczRelation, lam: Sequence[complex]) -> Jet1:
    phi, w = landing_parts(s, rel, lam)
    return phi - w


def _push(dp, qz, qw, z, w, u):
    u = [eval_poly(dp, z) * u[0], qz(z, w) * u[0] + qw(z, w) * u[1]]
    nrm = abs(u[0]) + abs(u[1])
    return [u[0] / nrm, u[1] / nrm]


def _landing_tangent(s: ParameterSlice, rel: MisiurewiczRelation) -> np.ndarray:
    """Postcritical tangent pushed to the target: forward along the critical
    orbit up to the landing fiber, then along the exact pulled-back chain."""
    ld = rel.landing
    f = s.instantiate(rel.lam_star)
    qw, qz = f.fiber.d_dw(), f.fiber.d_dz()
    dp = f.base.derivative()
    with mpmath.workdps(ld.dps):
        lam = _landing_lam(rel, None)
        _, _, zs, ws, c = _landing_eval(s, rel, lam)
        y0, c = zs[-1], c.value
        u = [mpmath.mpc(1), -qw.d_dz()(y0, c) / qw.d_dw()(y0, c)]
        z, w = y0, c
        for _ in range(ld.n_forward):
            u = _push(dp, qz, qw, z, w, u)
            z, w = eval_poly(s.p, z), f.q(z, w)
        for j in range(ld.n_back, 0, -1):
            u = _push(dp, qz, qw, zs[j], ws[j], u)
        return np.array([complex(u[0]), complex(u[1])], dtype=complex)


def _target_branches(sys, target: PeriodicOrbit, tol: float = 1e-7) -> tuple[int, list[int]]:
    """Branch fixing the target and the branches sharing its base choice."""
    from .vertical_ifs import periodic_in_limit

    for i in range(sys.m):
        o = periodic_in_limit(sys, [i])
        if abs(o.z1 - target.z1) < tol * (1 + abs(target.z1)) and abs(o.w1 - target.w1) < tol * (1 + abs(target.w1)):
            base = sys.branches[i].base_choice
            return i, [j for j, b in enumerate(sys.branches) if b.base_choice == base]
    raise HypothesisViolated("the target is not the fixed point of any single branch")


def _seed_orbit(sys, g1: int, lam: Sequence[complex], word: Sequence[int] | None = None) -> PeriodicOrbit:
    """Repelling point (z'', w'') of the limit set away from the target."""
    from .vertical_ifs import periodic_in_limit

    if word is None:
        base = sys.branches[g1].base_choice
        word = [next(i for i, b in enumerate(sys.branches) if b.base_choice != base)]
    o = periodic_in_limit(sys, list(word))
    return replace(o, lam=tuple(complex(x) for x in lam))


def _pullback_refs(sys, f: SkewProduct, z: complex, w: complex, word: Sequence[int]) -> tuple[list, list]:
    """Per-step backward chain from (z, w) through the branches of ``word``."""
    bz, bw = [complex(z)], [complex(w)]
    for b in word:
        z2, w2 = sys.apply_branch(b, np.array([z], dtype=complex), np.array([w], dtype=complex))
        z, w = complex(z2[0]), complex(w2[0])
        fw = [(z, w)]
        for _ in range(sys.n - 1):
            zz, ww = fw[-1]
            fw.append((complex(f.p(zz)), complex(f.q(zz, ww))))
        for zz, ww in reversed(fw):
            bz.append(zz)
            bw.append(ww)
    return bz, bw


ANNULUS = (0.5, 2.0)


def landing_candidate(
    s: ParameterSlice, rel: MisiurewiczRelation, sys, seed: PeriodicOrbit, g1: int, branch: int, k: int
) -> MisiurewiczRelation:
    """Unsolved relation: critical point over the fiber near z0 landing on
    G_1^k(H(z'', w'')) after n0 + m * m_k steps, m_k picked in the annulus."""
    f = s.instantiate(rel.lam_star)
    t = rel.target
    bz, bw = _pullback_refs(sys, f, seed.z1, seed.w1, [branch] + [g1] * k)
    dist = abs(bz[-1] - t.z1)
    ratio = abs(t.B) / abs(t.A)
    if ratio <= 1:
        raise HypothesisViolated("target is not vertical-like")
    mk = max(1, math.ceil(math.log(ANNULUS[0] / dist) / math.log(ratio)))
    if not ANNULUS[0] <= dist * ratio**mk <= ANNULUS[1]:
        raise SearchExhausted(f"no m_k puts k = {k} in the annulus", {"k": k, "dist": dist})
    cyc = _cycle(f.base, t.z1, t.m)
    refs = [cyc[(-j) % t.m] for j in range(1, t.m * mk + 1)]
    orb = [complex(rel.z0)]
    for _ in range(rel.n0):
        orb.append(complex(f.p(orb[-1])))
    refs += [orb[rel.n0 - j] for j in range(1, rel.n0 + 1)]
    grow = max(abs(t.A), abs(t.B), abs(seed.A), abs(seed.B), 2.0) ** (1.0 / min(t.m, seed.m))
    dps = 30 + math.ceil((len(bz) + len(refs)) * math.log10(grow))
    # the cycle and z0-orbit entries only select roots; store the actual chain
    with mpmath.workdps(dps):
        eps = mpmath.mpf(10) ** (-(dps - 5))
        zs = _mp_base_chain(f.base, _mp_periodic_base(f.base, seed.z1, seed.m, eps), bz[1:] + refs, eps)
        base_refs = tuple(complex(z) for z in zs)
    ld = Landing(base_refs, tuple(bw), len(bw) - 1, dps, k, mk, branch)
    return MisiurewiczRelation(
        base_refs[-1], rel.c0, len(base_refs) - 1, seed, tuple(rel.lam_star), float("nan"),
        slice_hash=s.digest(), critical_index=rel.critical_index, landing=ld,
    )


def tangent_of_relation(dF: Sequence[complex]) -> np.ndarray:
    """Unit vector v with dF . v = 0 (a tangent of the relation hypersurface)."""
    a = np.asarray(dF, dtype=complex)[None, :]
    if a.shape[1] < 2:
        raise HypothesisViolated("a relation in a 1-dim slice has no tangent direction")
    _, _, vh = np.linalg.svd(a)
    return np.conj(vh[-1])


def as_landing(s: ParameterSlice, rel: MisiurewiczRelation, dps: int) -> MisiurewiczRelation:
    """The same relation with a trivial landing (no pullback), for multiprecision work."""
    f = s.instantiate(rel.lam_star)
    orb = [complex(rel.z0)]
    for _ in range(rel.n0):
        orb.append(complex(f.p(orb[-1])))
    refs = (complex(rel.target.z1),) + tuple(orb[rel.n0 - j] for j in range(1, rel.n0 + 1))
    return replace(rel, landing=Landing(refs, (complex(rel.target.w1),), 0, dps))


def mp_solve(
    s: ParameterSlice, rels: Sequence[MisiurewiczRelation], lam0, dps: int, max_iter: int = 60
) -> tuple[list, list[Jet1]]:
    """Minimal-norm Gauss-Newton on landing-form relations at ``dps`` digits.

    Returns lam as mpc values and the final jets (complex).
    """
    rels = [replace(r, landing=replace(r.landing, dps=dps)) for r in rels]
    with mpmath.workdps(dps):
        lam = [mpmath.mpc(x) for x in lam0]
        eps = mpmath.mpf(10) ** (-(dps - 15))
        for _ in range(max_iter):
            jets = []
            for r in rels:
                phi, W, _, _, _ = _landing_eval(s, r, lam)
                jets.append(phi - W)
            F = mpmath.matrix([j.value for j in jets])
            J = mpmath.matrix([[x for x in j.partials] for j in jets])
            JH = J.transpose_conj()
            step = -(JH * mpmath.lu_solve(J * JH, F))
            lam = [lam[i] + step[i] for i in range(len(lam))]
            if mpmath.norm(step) <= eps * (1 + mpmath.norm(mpmath.matrix(lam))):
                break
        else:
            raise NonConvergence("multiprecision relation solve did not converge")
        jets = []
        for r in rels:
            phi, W, _, _, _ = _landing_eval(s, r, lam)
            jets.append(_jet_to_complex(phi - W))
        return lam, jets


def _mp_strings(lam) -> tuple:
    return tuple((mpmath.nstr(x.real, mpmath.mp.dps), mpmath.nstr(x.imag, mpmath.mp.dps)) for x in lam)


def phi_derivative_growth(
    s: ParameterSlice, rel: MisiurewiczRelation, sys, ks: Sequence[int] = range(4, 13), branch: int | None = None,
    seed_word: Sequence[int] | None = None,
) -> dict:
    """|d phi_k / d lam| along the relation curve at lam_star, against m_k.

    Returns per-k rows and the log-log slope of the derivative against m_k.
    """
    g1, partners = _target_branches(sys, rel.target)
    seed = _seed_orbit(sys, g1, rel.lam_star, seed_word)
    cands = [landing_candidate(s, rel, sys, seed, g1, partners[0] if branch is None else branch, k) for k in ks]
    dps = max(c.landing.dps for c in cands)
    base = as_landing(s, rel, dps)
    lam, _ = mp_solve(s, [base], rel.lam_star, dps)
    rows = []
    with mpmath.workdps(dps):
        # the tangent must be exact to working precision: phi carries B^m_k times
        # the normal component of dF
        phi0, W0, _, _, _ = _landing_eval(s, base, lam)
        a = (phi0 - W0).partials
        v = [mpmath.mpc(x) for x in tangent_of_relation([complex(x) for x in a])]
        av = sum(ai * vi for ai, vi in zip(a, v))
        aa = sum(abs(ai) ** 2 for ai in a)
        v = [vi - av / aa * mpmath.conj(ai) for vi, ai in zip(v, a)]
        nv = mpmath.sqrt(sum(abs(vi) ** 2 for vi in v))
        v = [vi / nv for vi in v]
        for k, cand in zip(ks, cands):
            cand = replace(cand, landing=replace(cand.landing, dps=dps))
            phi, w, _, _, _ = _landing_eval(s, cand, lam)
            ld = cand.landing
            rows.append({
                "k": k,
                "m_k": ld.m_k,
                "dphi": float(abs(sum(x * y for x, y in zip(phi.partials, v)))),
                "dw": float(abs(sum(x * y for x, y in zip(w.partials, v)))),
                "annulus": float(abs(ld.base_refs[ld.n_back] - rel.target.z1) * (abs(rel.target.B) / abs(rel.target.A)) ** ld.m_k),
            })
        v = [complex(x) for x in v]
    mk = np.array([r["m_k"] for r in rows], dtype=float)
    dv = np.array([r["dphi"] for r in rows])
    slope = float(np.polyfit(np.log(mk), np.log(dv), 1)[0]) if len(rows) > 1 else float("nan")
    return {"rows": rows, "slope": slope, "tangent": [_cdump(x) for x in v]}


class _Curve:
    """The relation curve M of a landing-form relation in a 2-dim slice,
    parametrized near lam0 by t -> lam0 + t v + s(t) n with F(lam) = 0."""

    def __init__(self, s: ParameterSlice, base: MisiurewiczRelation, lam0, dps: int):
        self.s, self.base, self.dps = s, base, dps
        self.lam0 = [mpmath.mpc(x) for x in lam0]
        _, _, a = self._F([mpmath.mpc(x) for x in lam0])
        na = mpmath.sqrt(sum(abs(x) ** 2 for x in a))
        self.n = [mpmath.conj(x) / na for x in a]
        self.v = [-a[1] / na, a[0] / na]
        self.eps = mpmath.mpf(10) ** (-(dps - 10))

    def _F(self, lam):
        phi, W, _, _, _ = _landing_eval(self.s, self.base, lam)
        F = phi - W
        return lam, F.value, F.partials

    def point(self, t, s0=0):
        """(lam, s, dlam/dt) on M at parameter t."""
        sn = mpmath.mpc(s0)
        for _ in range(60):
            lam = [l + t * v + sn * n for l, v, n in zip(self.lam0, self.v, self.n)]
            _, F, a = self._F(lam)
            dn = sum(x * y for x, y in zip(a, self.n))
            step = F / dn
            sn -= step
            if abs(step) <= self.eps * (1 + abs(sn)):
                break
        else:
            raise NonConvergence("projection onto the relation curve failed")
        lam = [l + t * v + sn * n for l, v, n in zip(self.lam0, self.v, self.n)]
        ds = -sum(x * y for x, y in zip(a, self.v)) / dn
        return lam, sn, [v + ds * n for v, n in zip(self.v, self.n)]


def _zeros_on_curve(
    s: ParameterSlice, curve: _Curve, cand: MisiurewiczRelation, radius: float, max_iter: int = 40
) -> list:
    """Zeros t of F_cand restricted to the curve with |t| < radius, from a
    deterministic set of starting points (nearest first)."""

    def g(t, s0):
        lam, sn, dl = curve.point(t, s0)
        phi, W, _, _, _ = _landing_eval(s, cand, lam)
        F = phi - W
        return F.value, sum(x * y for x, y in zip(F.partials, dl)), sn, lam

    starts = [mpmath.mpc(0)]
    try:
        g0, d0, _, _ = g(mpmath.mpc(0), 0)
        t_lin = -g0 / d0
        if abs(t_lin) < radius:
            starts.append(t_lin)
    except (NonConvergence, ZeroDivisionError):
        pass
    for r in (0.35, 0.7):
        starts += [mpmath.mpc(r * radius * math.cos(2 * math.pi * j / 8), r * radius * math.sin(2 * math.pi * j / 8)) for j in range(8)]
    cap = radius / 6
    found = []
    for t in starts:
        sn = 0
        try:
            for _ in range(max_iter):
                val, der, sn, lam = g(t, sn)
                if abs(val) <= curve.eps * 1e5:
                    # F_cand already vanishes here, possibly identically on M
                    if all(abs(t - u) > 1e-8 for u, _ in found):
                        found.append((t, lam))
                    break
                if abs(der) * radius < 1e-6 * abs(val):
                    break  # F_cand is nearly constant along M
                step = val / der
                if abs(step) > cap:
                    step *= cap / abs(step)
                t -= step
                if abs(t) > 1.5 * radius:
                    break
                if abs(step) <= curve.eps * 1e5 * (1 + abs(t)):
                    if abs(t) < radius and all(abs(t - u) > 1e-8 for u, _ in found):
                        found.append((t, lam))
                    break
        except (NonConvergence, ZeroDivisionError):
            continue
    return sorted(found, key=lambda x: abs(x[0]))


def second_relation_search(
    s: ParameterSlice,
    rel: MisiurewiczRelation,
    sys,
    eps: float = 0.5,
    ks: Sequence[int] = range(0, 13),
    seed_word: Sequence[int] | None = None,
    tol: float = 1e-10,
    rank_tol: float = 1e-6,
    max_iter: int = 60,
    require_good: bool = True,
) -> MisiurewiczRelation:
    """A second relation near lam_star, independent of ``rel``.

    For k in ``ks`` (and each branch sharing the target's base choice) the
    critical point over the fiber near z0 is made to land, after n0 + m m_k
    steps, on G_1^k H(z'', w''), where G_1 fixes the target and (z'', w'')
    is a repelling point of the IFS limit set. Both relations are solved
    jointly at multiprecision; the first solution within ``eps`` of
    lam_star that passes G2-G5 and has independence rank 2 is returned.
    With ``require_good`` the seed relation must pass G1-G5 and S1-S2.
    """
    if require_good:
        rep = goodness_audit(s, rel)
        if not (rep.good and rep.generic):
            raise HypothesisViolated(f"seed relation is not good and generic: {rep.to_dict()}")
    g1, partners = _target_branches(sys, rel.target)
    seed = _seed_orbit(sys, g1, rel.lam_star, seed_word)
    lam0 = np.array(rel.lam_star, dtype=complex)
    tried = []
    for k in ks:
        for b in partners:
            try:
                cand = landing_candidate(s, rel, sys, seed, g1, b, k)
            except SearchExhausted:
                tried.append({"k": k, "branch": b, "outcome": "annulus"})
                continue
            dps = cand.landing.dps
            base = as_landing(s, rel, dps)
            with mpmath.workdps(dps):
                try:
                    zeros = _zeros_on_curve(s, _Curve(s, base, rel.lam_star, dps), cand, eps, max_iter)
                except (NonConvergence, ZeroDivisionError):
                    zeros = []
            if not zeros:
                tried.append({"k": k, "branch": b, "outcome": "no zero within eps"})
            for _, lam in zeros:
                try:
                    lam, jets = mp_solve(s, [base, cand], lam, dps, max_iter)
                except (NonConvergence, ZeroDivisionError):
                    r, smin = _rank_at(s, [base, cand], lam, dps, rank_tol)
                    tried.append({"k": k, "branch": b, "outcome": "polish failed", "rank": r, "sigma_min": smin})
                    continue
                lam_c = np.array([complex(x) for x in lam])
                if np.linalg.norm(lam_c - lam0) >= eps:
                    tried.append({"k": k, "branch": b, "outcome": "outside eps"})
                    continue
                if max(abs(jets[0].value), abs(jets[1].value)) > tol:
                    tried.append({"k": k, "branch": b, "outcome": "residual"})
                    continue
                with mpmath.workdps(dps):
                    lam_s = _mp_strings(lam)
                found = _finish_landing(s, cand, lam_c, lam_s, jets[1])
                r, smin, _ = independence_rank(s, [rel, found], lam_c, rank_tol)
                rep = goodness_audit(s, found)
                if not (rep.g2_vertical_like and rep.g3_base_ok and rep.g4_simple and rep.g5_ok):
                    tried.append({"k": k, "branch": b, "outcome": "goodness", "rank": r, "sigma_min": smin})
                    continue
                if r < 2:
                    tried.append({"k": k, "branch": b, "outcome": "rank", "rank": r, "sigma_min": smin})
                    continue
                return found
    diag: dict = {"tried": tried}
    try:
        diag["growth"] = phi_derivative_growth(s, rel, sys, [k for k in ks if k >= 1] or [1], seed_word=seed_word)
    except (HypothesisViolated, SearchExhausted, NonConvergence) as exc:
        diag["growth"] = str(exc)
    raise SearchExhausted(f"no independent second relation for k in {list(ks)}", diag)


def _rank_at(s: ParameterSlice, rels: Sequence[MisiurewiczRelation], lam, dps: int, rank_tol: float) -> tuple[int, float]:
    with mpmath.workdps(dps):
        J = np.array([[complex(x) for x in landing_value(s, r, lam).partials] for r in rels])
    return rank_certificate(J, rank_tol)


def _finish_landing(s: ParameterSlice, cand: MisiurewiczRelation, lam_c: np.ndarray, lam_s: tuple, jet: Jet1) -> MisiurewiczRelation:
    t = cand.target
    w = _continue_target(s, t, lam_c)
    f = s.instantiate(lam_c)
    tgt = make_orbit(f, t.z1, w, t.m, tuple(lam_c))
    ld = replace(cand.landing, lam_mp=lam_s)
    c0 = complex(jet_value(critical_jet(s, lam_c, cand.z0, cand.c0)))
    return replace(
        cand, target=tgt, lam_star=tuple(complex(x) for x in lam_c), residual=float(abs(jet.value)),
        dF=tuple(complex(x) for x in jet.partials), c0=c0, landing=ld,
    )


# ---------------------------------------------------------------------------
# Unicritical asymptotics along rays
# ---------------------------------------------------------------------------

ASYMPTOTIC_QUANTITIES = ("fiber_modulus", "u2", "v2", "multiplier")


@dataclass(frozen=True)
class UnicriticalRay:
    """Rays lam = t lam_inf + mu e in U_d over p, with a(z) given by coefficients.

    Away from ``fiber_modulus`` the correction mu is solved so that the
    critical point over z0 lands on a period-m point over z1 = p^n(z0).
    """

    p: Polynomial
    lam_inf: tuple
    z0: complex
    n: int = 2
    m: int = 1
    correction: tuple = (1.0,)

    @property
    def d(self) -> int:
        return self.p.degree

    @property
    def z1(self) -> complex:
        z = complex(self.z0)
        for _ in range(self.n):
            z = complex(self.p(z))
        return z

    def a_inf(self) -> Polynomial:
        return Polynomial([complex(x) for x in self.lam_inf])

    def coeffs(self, t: float, mu: complex = 0) -> np.ndarray:
        c = np.zeros(self.d + 1, dtype=complex)
        c[: len(self.lam_inf)] += t * np.asarray(self.lam_inf, dtype=complex)
        c[: len(self.correction)] += mu * np.asarray(self.correction, dtype=complex)
        return c


@dataclass
class AsymptoticFit:
    quantity: str
    slope: float
    expected: float
    magnitudes: list
    values: list
    params: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "slope": self.slope,
            "expected": self.expected,
            "magnitudes": list(self.magnitudes),
            "values": list(self.values),
            "params": [[_cdump(x) for x in lam] for lam in self.params],
            "checks": self.checks,
        }


def expected_exponent(quantity: str, d: int, n: int, m: int) -> float:
    if quantity == "fiber_modulus":
        return 1 / d
    if quantity == "u2":
        return (n * (d - 1) + 1) / d
    if quantity == "v2":
        return 1 / d  # an upper bound
    if quantity == "multiplier":
        return m * (d - 1) / d
    raise ValueError(f"unknown quantity {quantity!r}")


def _check_ray(ray: UnicriticalRay, quantity: str, tol: float = 1e-9) -> None:
    a = ray.a_inf()
    da = a.derivative()
    scale = float(np.max(np.abs(ray.lam_inf)))
    orbit = [complex(ray.z0)]
    for _ in range(ray.n + ray.m):
        orbit.append(complex(ray.p(orbit[-1])))
    if quantity == "fiber_modulus":
        if abs(a(ray.z0)) <= tol * scale:
            raise HypothesisViolated("fiber_modulus needs a_inf(z0) != 0")
        return
    if abs(a(ray.z0)) > tol * scale:
        raise HypothesisViolated("relation points accumulate only on rays with a_inf(z0) = 0")
    if abs(complex(ray.p.derivative()(ray.z0))) < tol:
        raise HypothesisViolated("z0 is critical for p")
    if quantity == "u2":
        bad = [i for i in range(ray.n) if abs(da(orbit[i])) <= tol * scale]
    elif quantity == "v2":
        if any(abs(orbit[0] - orbit[i]) < 1e-9 for i in range(ray.n, ray.n + ray.m)):
            raise HypothesisViolated("z0 lies on the cycle of z1")
        bad = [i for i in range(ray.n, ray.n + ray.m) if abs(da(orbit[i])) <= tol * scale]
    else:
        bad = [i for i in range(ray.n, ray.n + ray.m + 1) if abs(a(orbit[i])) <= tol * scale]
    if bad:
        raise HypothesisViolated(f"degenerate ray for {quantity}: vanishing at orbit indices {bad}")


def _ray_slice(ray: UnicriticalRay, t: float) -> ParameterSlice:
    from .skew_dynamics import unicritical_slice

    return unicritical_slice(ray.p, list(ray.coeffs(t)), [list(ray.correction)])


def _ray_relation(ray: UnicriticalRay, t: float, mu0: complex, w_guess: complex | None) -> MisiurewiczRelation:
    s = _ray_slice(ray, t)
    f = s.instantiate([mu0])
    if w_guess is None:
        pts = periodic_points_fiber(f, ray.z1, ray.m, exact=True)
        w_guess = max(pts, key=lambda o: abs(o.B)).w1
    w1 = track_w1(s, [mu0], ray.z1, w_guess, ray.m)
    target = make_orbit(f, ray.z1, w1, ray.m)
    scale = 1 + math.sqrt(t)
    return solve_misiurewicz(s, ray.z0, 0, ray.n, target, [mu0], tol=1e-11 * scale**ray.d, max_step=0.25 * scale)


def solve_on_ray(ray: UnicriticalRay, ts: Sequence[float], starts: int = 24, seed: int = 0) -> list[tuple[complex, complex]]:
    """(mu, w1) on the relation locus for each t, continued in t.

    The first t is solved from a ring of starts scaled by sqrt(t); later ones
    start from mu sqrt(t'/t), the scaling of points of K_{z0}.
    """
    rng = np.random.default_rng(seed)
    out = []
    mu = w = None
    t_prev = None
    for t in ts:
        if mu is None:
            rel = None
            for _ in range(starts):
                r = math.sqrt(t) * (0.2 + 2.8 * rng.random())
                mu0 = r * cmath.exp(2j * math.pi * rng.random())
                try:
                    rel = _ray_relation(ray, t, mu0, None)
                    break
                except (NonConvergence, PersistentRelation, LostRepelling, ZeroDivisionError, OverflowError):
                    continue
            if rel is None:
                raise NonConvergence(f"no relation point found at t = {t:g}")
        else:
            k = math.sqrt(t / t_prev)
            rel = _ray_relation(ray, t, mu * k, w * k)
        mu, w, t_prev = rel.lam_star[0], rel.target.w1, t
        out.append((mu, w))
    return out


def _quantity(ray: UnicriticalRay, f: SkewProduct, w1: complex, quantity: str, cfg) -> float:
    if quantity == "fiber_modulus":
        from .measures_lyapunov import sample_fiber_julia

        return float(np.max(np.abs(sample_fiber_julia(f, ray.z0, cfg))))
    if quantity == "u2":
        J = orbit_jacobian(f, ray.z0, 0, ray.n)
        return abs(J.dQdz / J.dp)
    J = orbit_jacobian(f, ray.z1, w1, ray.m)
    if quantity == "v2":
        return abs(J.dQdz / (J.dQdw - J.dp))
    return abs(J.dQdw)


def eigen_direction_v(f: SkewProduct, z1: complex, w1: complex, m: int) -> np.ndarray:
    """(1, dQ/dz / (dQ/dw - A)): the non-vertical eigenline of df^m at a periodic point."""
    J = orbit_jacobian(f, z1, w1, m)
    return np.array([1, J.dQdz / (J.dQdw - J.dp)], dtype=complex)


def image_direction_u(f: SkewProduct, z0: complex, c0: complex, n: int) -> np.ndarray:
    """(1, dQ^n/dz / (p^n)'): the image line of df^n at a critical point."""
    J = orbit_jacobian(f, z0, c0, n)
    return np.array([1, J.dQdz / J.dp], dtype=complex)


def unicritical_asymptotics(ray: UnicriticalRay, quantity: str, magnitudes: Sequence[float], cfg=None) -> AsymptoticFit:
    """Log-log slope of a quantity against |lam| along a ray of U_d.

    ``magnitudes`` are the values of t; |lam| is the Euclidean norm of the
    actual coefficient vector. For quantities tied to a relation the ratio
    |a(z0)| / |lam| is reported: it tends to 0 as the relation locus
    accumulates on the hyperplane a_inf(z0) = 0.
    """
    if quantity not in ASYMPTOTIC_QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}")
    _check_ray(ray, quantity)
    ts = [float(t) for t in magnitudes]
    if quantity == "fiber_modulus":
        from .measures_lyapunov import SamplerConfig

        cfg = cfg or SamplerConfig(n_samples=512, depth=24)
        pts = [(0j, None) for _ in ts]
    else:
        pts = solve_on_ray(ray, ts)
    mags, vals, params, ratios = [], [], [], []
    for t, (mu, w1) in zip(ts, pts):
        lam = ray.coeffs(t, mu)
        f = _ray_slice(ray, t).instantiate([mu])
        mags.append(float(np.linalg.norm(lam)))
        vals.append(_quantity(ray, f, w1, quantity, cfg))
        params.append(tuple(complex(x) for x in lam))
        ratios.append(abs(complex(Polynomial(list(lam))(ray.z0))) / mags[-1])
    slope = float(np.polyfit(np.log(mags), np.log(vals), 1)[0])
    checks = {}
    if quantity != "fiber_modulus":
        checks = {"a_z0_ratio": ratios, "accumulates": bool(ratios[-1] < ratios[0])}
    return AsymptoticFit(quantity, slope, expected_exponent(quantity, ray.d, ray.n, ray.m), mags, vals, params, checks)


# ---------------------------------------------------------------------------
# Injectivity of the composition differential
# ---------------------------------------------------------------------------


def composition_derivative(d: int, m: int) -> dict[int, list[Fraction]]:
    """d/d eps of (w^d + eps r_m) o ... o (w^d + eps r_1) at eps = 0, exactly.

    Each r_j has degree <= d - 2 with symbolic coefficients r_{j,k}; the result
    maps an exponent of w to the vector of integer weights of the r_{j,k}
    (ordered j-major). Built from the recursion
    D_1 = r_1,  D_j = r_j(w^(d^(j-1))) + d w^(d^(j-1)(d-1)) D_{j-1}.
    """
    if d < 2 or m < 1:
        raise ValueError("need d >= 2 and m >= 1")
    nvar = m * (d - 1)

    def unit(j: int, k: int) -> list[Fraction]:
        v = [Fraction(0)] * nvar
        v[j * (d - 1) + k] = Fraction(1)
        return v

    D: dict[int, list[Fraction]] = {}
    for j in range(m):
        step = d**j
        new: dict[int, list[Fraction]] = {}
        shift = step * (d - 1)
        for e, v in D.items():
            new[e + shift] = [d * x for x in v]
        for k in range(d - 1):
            e = k * step
            cur = new.get(e, [Fraction(0)] * nvar)
            new[e] = [a + b for a, b in zip(cur, unit(j, k))]
        D = new
    return D


def exact_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    M = [list(r) for r in rows]
    rank, ncol = 0, len(M[0]) if M else 0
    for c in range(ncol):
        piv = next((i for i in range(rank, len(M)) if M[i][c] != 0), None)
        if piv is None:
            continue
        M[rank], M[piv] = M[piv], M[rank]
        for i in range(len(M)):
            if i != rank and M[i][c] != 0:
                fac = M[i][c] / M[rank][c]
                M[i] = [a - fac * b for a, b in zip(M[i], M[rank])]
        rank += 1
    return rank


def composition_injective(d: int, m: int) -> tuple[bool, int, dict]:
    """Whether r -> dQ_m/d eps is injective on tuples of degree <= d - 2 polynomials.

    Injective exactly when the exponent-by-variable matrix has full column
    rank, i.e. no nonzero tuple gives the zero polynomial.
    """
    D = composition_derivative(d, m)
    nvar = m * (d - 1)
    r = exact_rank([D[e] for e in sorted(D)])
    return r == nvar, r, D
