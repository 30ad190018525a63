"""Documented configurations: slices, inverse branch systems and search settings."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .misiurewicz_lab import MisiurewiczRelation, PeriodicOrbit, make_orbit, solve_misiurewicz
from .poly_core import Polynomial
from .skew_dynamics import Bivariate, ParameterSlice, SkewProduct, unicritical_slice
from .vertical_ifs import Branch, FibredBox, InverseBranchSystem

BETA = (1 + math.sqrt(5)) / 2  # fixed point of z^2 - 1 in J_p
BASE_QUADRATIC = Polynomial([-1, 0, 1])

# unicritical slice: fiber w^2 + c + kappa (z^2 - z - 1) + lam_0 + lam_1 z
SLICE_C = -5 + 1j
SLICE_ROOT = 1
SLICE_FIBER_RADIUS = 3.8
SLICE_ALPHA = 0.9
SEARCH_EPS = 8.0
SEARCH_KS = tuple(range(0, 13))
GROWTH_KS = tuple(range(4, 13))

# shifted fiber used for the audit example: w^2 - 6 + 0.1 z
AUDIT_FIBER = (-6.0, 0.1)
AUDIT_ALPHA = 0.5
AUDIT_FIBER_RADIUS = 3.5

# degenerate family: fiber w^3 + a w z^2 + b z^3, semi-conjugate to W^3 + a W + b
DEGENERATE_W1 = 2.16
DEGENERATE_A_GUESS = -4.36
DEGENERATE_FIBER_RADIUS = 1.8
DEGENERATE_BASE_RADIUS = 0.08
DEGENERATE_ALPHA = 0.95
# fibers z0 = exp(2 pi i t) over which g^2(c) = w1 is read, as (t, n0)
DEGENERATE_SEEDS = ((1 / 3, 2), (1 / 9, 2), (1 / 27, 3))

QUADRATIC_BRANCHES = (
    Branch((0, 0), (0, 0)),
    Branch((0, 0), (1, 1)),
    Branch((1, 0), (0, 0)),
    Branch((1, 0), (1, 1)),
)
# fiber choices picked so that no chain passes through the critical value of g
DEGENERATE_BRANCHES = (
    Branch((1, 1, 1), (1, 1, 1)),
    Branch((1, 1, 1), (0, 1, 1)),
    Branch((2, 1, 1), (2, 2, 2)),
    Branch((2, 1, 1), (1, 1, 2)),
)


@dataclass
class Setup:
    slice: ParameterSlice
    system: InverseBranchSystem
    target: PeriodicOrbit
    relation: MisiurewiczRelation | None = None
    notes: dict = field(default_factory=dict)

    @property
    def f(self) -> SkewProduct:
        return self.slice.base


def tube_centers(rounds: int = 7) -> np.ndarray:
    """Points of J_p for p = z^2 - 1 near beta and alpha.

    Generated by the two inverse branches that fix beta and alpha, so the
    hull of the disks around them is mapped into itself by both branches.
    """

    def gb(z):
        return np.sqrt(1 + np.sqrt(1 + z))

    def ga(z):
        return -np.sqrt(1 - np.sqrt(1 + z))

    pts = np.array([BETA + 0j])
    for _ in range(rounds):
        pts = np.unique(np.round(np.concatenate([gb(pts), ga(pts)]), 12))
    return pts


def _quadratic_system(f: SkewProduct, radius: float, alpha: float) -> InverseBranchSystem:
    pts = tube_centers()
    anchor = int(np.argmin(np.abs(pts - BETA)))
    box = FibredBox(pts, 0.15, 0, radius, label="tube")
    return InverseBranchSystem(f, 2, list(QUADRATIC_BRANCHES), box, alpha=alpha, anchor=anchor)


def slice_kappa(c: complex = SLICE_C, root: int = SLICE_ROOT) -> complex:
    """kappa making the critical value over z0 land on w1 over beta after two steps.

    Over z0 = sqrt(1 - beta) the critical value a(z0) = c + kappa u is mapped to
    (a(z0))^2 + a(-beta) = (a(z0))^2 + c + kappa (beta^2 + beta - 1); the base
    point -beta goes to beta. The quadratic in kappa below expresses landing on
    the fixed point w1 of w^2 + c.
    """
    z0 = complex(np.sqrt(1 - BETA + 0j))
    u = z0 * z0 - z0 - 1
    w1 = (1 + np.sqrt(1 - 4 * c + 0j)) / 2
    ks = np.roots([u * u, 2 * c * u + 2 * BETA, c * c + c - w1])
    return complex(ks[root])


def unicritical_setup(c: complex = SLICE_C, root: int = SLICE_ROOT, solve: bool = True) -> Setup:
    """Two-parameter unicritical slice over z^2 - 1 seeded by a good relation.

    Fiber w^2 + c + kappa (z^2 - z - 1) + lam_0 + lam_1 z. At lam = 0 the
    critical point over z0 = sqrt(1 - beta) lands on the vertical-like fixed
    point (beta, w1) after two steps.
    """
    kappa = slice_kappa(c, root)
    s = unicritical_slice(BASE_QUADRATIC, [c - kappa, -kappa, kappa], [[1], [0, 1]])
    f = s.base
    w1 = complex((1 + np.sqrt(1 - 4 * c + 0j)) / 2)
    target = make_orbit(f, BETA + 0j, w1, 1, (0, 0))
    sys = _quadratic_system(f, SLICE_FIBER_RADIUS, SLICE_ALPHA)
    z0 = complex(np.sqrt(1 - BETA + 0j))
    rel = solve_misiurewicz(s, z0, 0, 2, target, [0, 0]) if solve else None
    notes = {"c": c, "kappa": kappa, "z0": z0, "n0": 2, "eps": SEARCH_EPS, "ks": SEARCH_KS, "growth_ks": GROWTH_KS}
    return Setup(s, sys, target, rel, notes)


def audit_setup(radius: float = AUDIT_FIBER_RADIUS) -> Setup:
    """Fiber w^2 - 6 + 0.1 z over z^2 - 1: vertical-like over the tube around beta and alpha."""
    c0, c1 = AUDIT_FIBER
    fib = Bivariate([Polynomial([c0, c1]), Polynomial([0]), Polynomial([1])])
    f = SkewProduct(BASE_QUADRATIC, fib)
    s = ParameterSlice(f, ())
    sys = _quadratic_system(f, radius, AUDIT_ALPHA)
    w1 = complex(sys.center()[1])
    target = make_orbit(f, BETA + 0j, w1, 1)
    return Setup(s, sys, target, None, {"fiber": AUDIT_FIBER})


def degenerate_g_params(w1: float = DEGENERATE_W1, a_guess: float = DEGENERATE_A_GUESS) -> tuple[float, float]:
    """(a, b) with g(W) = W^3 + a W + b fixing w1 and g^2(sqrt(-a/3)) = w1."""

    def rel(a):
        b = w1 - w1**3 - a * w1
        c = mpmath.sqrt(-a / 3)
        v = c**3 + a * c + b
        return v**3 + a * v + b - w1

    a = float(mpmath.findroot(rel, a_guess))
    return a, w1 - w1**3 - a * w1


def degenerate_map(a: complex, b: complex) -> SkewProduct:
    """f_{a,b}(z, w) = (z^3, w^3 + a w z^2 + b z^3)."""
    fib = Bivariate([Polynomial([0, 0, 0, b]), Polynomial([0, 0, a]), Polynomial([0]), Polynomial([1])])
    return SkewProduct(Polynomial([0, 0, 0, 1]), fib)


def degenerate_base_centers(levels: int = 3) -> np.ndarray:
    """Points exp(2 pi i t) with t in the Cantor set of base-27 digits {0, 1}."""
    t = np.array([0.0])
    for _ in range(levels):
        t = np.concatenate([t / 27, t / 27 + 1 / 27])
    return np.exp(2j * np.pi * np.unique(t))


def degenerate_setup(solve: bool = True) -> Setup:
    """Slice (a, b) -> f_{a,b} around a parameter with g^2(c) = w1 fixed and repelling.

    The IFS uses depth-3 branches over the base Cantor arc near 1; in the
    quotient coordinate W = w / z its fiber part is a pair of contractions
    of g^{-3} near w1.
    """
    a, b = degenerate_g_params()
    f = degenerate_map(a, b)
    s = ParameterSlice(f, (Bivariate([Polynomial([0]), Polynomial([0, 0, 1])]), Bivariate([Polynomial([0, 0, 0, 1])])))
    zc = degenerate_base_centers()
    box = FibredBox(zc, DEGENERATE_BASE_RADIUS, zc * DEGENERATE_W1, DEGENERATE_FIBER_RADIUS * np.abs(zc), label="cantor-arc")
    sys = InverseBranchSystem(f, 3, list(DEGENERATE_BRANCHES), box, alpha=DEGENERATE_ALPHA, anchor=0)
    target = make_orbit(f, 1 + 0j, DEGENERATE_W1 + 0j, 1, (0, 0))
    crit = math.sqrt(-a / 3)
    notes = {"a": a, "b": b, "critical_W": crit, "eps": SEARCH_EPS, "seeds": DEGENERATE_SEEDS}
    out = Setup(s, sys, target, None, notes)
    if solve:
        t, n0 = DEGENERATE_SEEDS[0]
        out.relation = degenerate_relation(out, cmath.exp(2j * math.pi * t), n0)
    return out


def degenerate_relation(setup: Setup, z0: complex, n0: int) -> MisiurewiczRelation:
    """The relation g^2(c) = w1 read in the fiber over z0, where z0^(3^n0) = 1."""
    crit = setup.notes["critical_W"]
    return solve_misiurewicz(setup.slice, z0, z0 * crit, n0, setup.target, [0, 0])


def degenerate_seed_relations(setup: Setup) -> list[MisiurewiczRelation]:
    """One relation per documented fiber; all descend from the same relation of g."""
    return [degenerate_relation(setup, cmath.exp(2j * math.pi * t), n0) for t, n0 in setup.notes["seeds"]]
