"""Vertical-like iterated function systems built from inverse branches of f^n."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .misiurewicz_lab import PeriodicOrbit, make_orbit
from .poly_core import NonConvergence, batched_roots
from .skew_dynamics import GreenConfig, SkewProduct, green_fiber_batch, orbit_jacobian


LIMIT_GREEN_TOL = 1e-6  # "G = 0" at double-precision limit samples; see limit_green


class RootAmbiguity(ArithmeticError):
    pass


class NonVerticalLike(ValueError):
    pass


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------


@dataclass
class FibredBox:
    """Union of base disks of radius ``base_radius`` around ``base_centers``,
    each carrying a fiber disk; fiber data is interpolated between centers."""

    base_centers: np.ndarray
    base_radius: float
    fiber_centers: np.ndarray
    fiber_radii: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.base_centers = np.asarray(self.base_centers, dtype=complex).ravel()
        n = self.base_centers.size
        self.fiber_centers = np.broadcast_to(np.asarray(self.fiber_centers, dtype=complex), (n,)).copy()
        self.fiber_radii = np.broadcast_to(np.asarray(self.fiber_radii, dtype=float), (n,)).copy()

    def base_distance(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        d = np.abs(z[:, None] - self.base_centers[None, :])
        j = np.argmin(d, axis=1)
        return d[np.arange(z.size), j], j

    def fiber_at(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        d = np.abs(z[:, None] - self.base_centers[None, :])
        wts = np.clip(1.0 - d / (2 * self.base_radius), 0.0, None) ** 2
        tot = wts.sum(axis=1)
        j = np.argmin(d, axis=1)
        safe = tot > 0
        c = np.where(safe, (wts * self.fiber_centers[None, :]).sum(axis=1) / np.where(safe, tot, 1), self.fiber_centers[j])
        r = np.where(safe, (wts * self.fiber_radii[None, :]).sum(axis=1) / np.where(safe, tot, 1), self.fiber_radii[j])
        return c, r

    def contains(self, z, w, margin: float = 0.0) -> np.ndarray:
        """Membership with a relative margin (fraction of the local radii)."""
        db, _ = self.base_distance(z)
        c, r = self.fiber_at(z)
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        return (db < self.base_radius * (1 - margin)) & (np.abs(w - c) < r * (1 - margin))

    def depth(self, z, w) -> np.ndarray:
        """How far inside the box a point sits: min of base and fiber slack, relative."""
        db, _ = self.base_distance(z)
        c, r = self.fiber_at(z)
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        return np.minimum(1 - db / self.base_radius, 1 - np.abs(w - c) / r)

    def boundary_samples(self, n_angle: int = 16, n_fiber: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Points on the box boundary: base boundary times fiber disk, and base
        interior times fiber circle."""
        th = np.exp(2j * np.pi * np.arange(n_angle) / n_angle)
        zb = (self.base_centers[:, None] + self.base_radius * 0.999 * th[None, :]).ravel()
        db, _ = self.base_distance(zb)
        zb = zb[db >= self.base_radius * 0.99]
        phi = np.exp(2j * np.pi * np.arange(n_fiber) / n_fiber)
        c, r = self.fiber_at(zb)
        Z1 = np.repeat(zb, n_fiber)
        W1 = (c[:, None] + 0.999 * r[:, None] * phi[None, :]).ravel()
        c2, r2 = self.fiber_at(self.base_centers)
        Z2 = np.repeat(self.base_centers, n_fiber)
        W2 = (c2[:, None] + 0.999 * r2[:, None] * phi[None, :]).ravel()
        return np.concatenate([Z1, Z2]), np.concatenate([W1, W2])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "base_radius": self.base_radius,
            "n_base_centers": int(self.base_centers.size),
            "base_centers": [[z.real, z.imag] for z in self.base_centers.tolist()],
            "fiber_centers": [[w.real, w.imag] for w in self.fiber_centers.tolist()],
            "fiber_radii": self.fiber_radii.tolist(),
        }


def _spanning_order(points: np.ndarray, root: int) -> tuple[np.ndarray, np.ndarray]:
    """Prim's order over the complete graph: returns (order, parent)."""
    n = points.size
    parent = np.full(n, -1)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.full(n, -1)
    order = []
    cur = root
    best[root] = 0
    for _ in range(n):
        cand = np.where(in_tree, np.inf, best)
        cur = int(np.argmin(cand))
        in_tree[cur] = True
        parent[cur] = best_from[cur]
        order.append(cur)
        d = np.abs(points - points[cur])
        upd = (~in_tree) & (d < best)
        best[upd] = d[upd]
        best_from[upd] = cur
    return np.array(order), parent


def _canonical(rts: np.ndarray) -> np.ndarray:
    """Order roots by argument, ties broken by modulus."""
    key = np.lexsort((np.abs(rts), np.round(np.angle(rts), 10)))
    return rts[key]


# ---------------------------------------------------------------------------
# Branch systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    base_choice: tuple[int, ...]
    fiber_choice: tuple[int, ...]


@dataclass
class InverseBranchSystem:
    """Branches g_i of f^{-n} on a fibred box.

    A branch is a sequence of root indices, read at the box anchor (the base
    center ``anchor`` and its fiber center) in canonical root order. Away from
    the anchor the roots are continued along a spanning tree of the base
    centers; any point then follows the anchors of its nearest center.
    """

    f: SkewProduct
    n: int
    branches: list[Branch]
    box: FibredBox
    alpha: float = 0.5
    anchor: int = 0
    _bz: list = field(default_factory=list, repr=False)
    _bw: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        for b in self.branches:
            if len(b.base_choice) != self.n or len(b.fiber_choice) != self.n:
                raise ValueError("choice sequences must have length n")
        order, parent = _spanning_order(self.box.base_centers, self.anchor)
        self._bz, self._bw = [], []
        for b in self.branches:
            Z = self.box.base_centers.copy()
            W, _ = self.box.fiber_at(Z)
            bz, bw = [], []
            for k in range(self.n):
                zr = self._base_roots(Z)
                Zn = _continue(zr, order, parent, b.base_choice[k])
                wr = self._fiber_roots(Zn, W)
                Wn = _continue(wr, order, parent, b.fiber_choice[k])
                bz.append(Zn)
                bw.append(Wn)
                Z, W = Zn, Wn
            self._bz.append(bz)
            self._bw.append(bw)

    @property
    def m(self) -> int:
        return len(self.branches)

    def _base_roots(self, z: np.ndarray) -> np.ndarray:
        c = np.array(self.f.base.coeffs, dtype=complex)
        stack = np.broadcast_to(c, z.shape + c.shape).copy()
        stack[..., 0] = c[0] - z
        return batched_roots(stack)

    def _fiber_roots(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        cz = [np.broadcast_to(np.asarray(c, dtype=complex), x.shape) for c in self.f.coeffs_at(x)]
        stack = np.stack(cz, axis=-1).copy()
        stack[..., 0] = stack[..., 0] - w
        return batched_roots(stack)

    def apply_branch(self, i: int, z, w, ambiguity_tol: float = 1e-8):
        """Image of (z, w) under branch i; arrays are processed elementwise."""
        z = np.atleast_1d(np.asarray(z, dtype=complex)).copy()
        w = np.atleast_1d(np.asarray(w, dtype=complex)).copy()
        _, j = self.box.base_distance(z)
        for k in range(self.n):
            zr = self._base_roots(z)
            z = _pick(zr, self._bz[i][k][j], ambiguity_tol)
            wr = self._fiber_roots(z, w)
            w = _pick(wr, self._bw[i][k][j], ambiguity_tol)
        return z, w

    def apply_word(self, word: Sequence[int], z, w):
        """g_{word[0]} o ... o g_{word[-1]} applied to (z, w)."""
        for i in reversed(list(word)):
            z, w = self.apply_branch(i, z, w)
        return z, w

    def forward(self, z, w, times: int = 1):
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        for _ in range(self.n * times):
            z, w = self.f.p(z), self.f.q(z, w)
        return z, w

    def nesting_margin(self, n_angle: int = 16, n_fiber: int = 16) -> float:
        """min over branches and boundary samples of the image depth in the box."""
        Z, W = self.box.boundary_samples(n_angle, n_fiber)
        worst = np.inf
        for i in range(self.m):
            zi, wi = self.apply_branch(i, Z, W)
            worst = min(worst, float(self.box.depth(zi, wi).min()))
        return worst

    def center(self) -> tuple[complex, complex]:
        z = self.box.base_centers[self.anchor]
        c, _ = self.box.fiber_at(z)
        return complex(z), complex(c[0])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "branches": [{"base_choice": list(b.base_choice), "fiber_choice": list(b.fiber_choice)} for b in self.branches],
            "box": self.box.to_dict(),
        }


def _continue(rts: np.ndarray, order: np.ndarray, parent: np.ndarray, index: int) -> np.ndarray:
    out = np.empty(rts.shape[0], dtype=complex)
    root = order[0]
    out[root] = _canonical(rts[root])[index]
    for j in order[1:]:
        ref = out[parent[j]]
        out[j] = rts[j][np.argmin(np.abs(rts[j] - ref))]
    return out


def _pick(rts: np.ndarray, ref: np.ndarray, tol: float) -> np.ndarray:
    d = np.abs(rts - ref[:, None])
    k = np.argmin(d, axis=1)
    if rts.shape[1] > 1:
        srt = np.sort(np.abs(rts - rts[np.arange(rts.shape[0]), k][:, None]), axis=1)
        if np.any(srt[:, 1] < tol):
            raise RootAmbiguity("two roots closer than the ambiguity tolerance")
    return rts[np.arange(rts.shape[0]), k]


# ---------------------------------------------------------------------------
# Cone condition and audit
# ---------------------------------------------------------------------------


def cone_margin(A, B, C, alpha: float) -> np.ndarray:
    """Vertical-fraction gain of df = [[A, 0], [C, B]] on the cone boundary.

    The cone is |u2| > alpha |u|; the image of its boundary has vertical
    fraction at least alpha'. The margin is alpha' - alpha.
    """
    A, B, C = (np.abs(np.asarray(x, dtype=complex)) for x in (A, B, C))
    t0 = alpha / math.sqrt(1 - alpha * alpha)
    sl = (B * t0 - C) / np.where(A > 0, A, 1e-300)
    frac = np.where(sl > 0, sl / np.sqrt(1 + sl * sl), sl)
    return frac - alpha


def check_cone(f: SkewProduct, n: int, z, w, alpha: float, delta: float = 0.0) -> tuple[bool, float]:
    """Strict invariance of the vertical cone under df^n at each point."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    margins = []
    for zi, wi in zip(z, w):
        J = orbit_jacobian(f, complex(zi), complex(wi), n)
        margins.append(float(cone_margin(J.dp, J.dQdw, J.dQdz, alpha)))
    mm = min(margins)
    return bool(mm > delta), mm


def limit_points(sys: InverseBranchSystem, word_length: int = 16, count: int = 256, seed: int = 0):
    """Images of the box anchor under random words of the given length."""
    rng = np.random.default_rng(seed)
    z0, w0 = sys.center()
    z = np.full(count, z0, dtype=complex)
    w = np.full(count, w0, dtype=complex)
    words = rng.integers(0, sys.m, size=(count, word_length))
    for t in range(word_length):
        for i in range(sys.m):
            sel = words[:, t] == i
            if sel.any():
                z[sel], w[sel] = sys.apply_branch(i, z[sel], w[sel])
    return z, w


def limit_green(sys: InverseBranchSystem, word_length: int, z, w, gcfg: GreenConfig = GreenConfig()) -> tuple[np.ndarray, float]:
    """G at limit samples, and G(center) / d^(n * word_length).

    The second number is G at the exact preimages of the center. A sample
    stored in double precision sits about 1e-16 away from its preimage, which
    moves G by roughly (1e-16)^(log d / log E) for a fiber expansion rate E,
    so measured values of order 1e-7 are expected.
    """
    f = sys.f
    vals, _ = green_fiber_batch(lambda zz, _i: f.coeffs_at(zz), f.base, f.d, z, w, gcfg)
    g0, _ = green_fiber_batch(lambda zz, _i: f.coeffs_at(zz), f.base, f.d, *(np.array([x]) for x in sys.center()), gcfg)
    return vals, float(g0[0]) / float(f.d) ** (sys.n * word_length)


def periodic_in_limit(sys: InverseBranchSystem, word: Sequence[int], tol: float = 1e-13) -> PeriodicOrbit:
    """Fixed point of the word's composition, refined by Newton on f^{n |word|}."""
    z0, w0 = sys.center()
    z, w = np.array([z0]), np.array([w0])
    for _ in range(60):
        z, w = sys.apply_word(word, z, w)
    z, w = complex(z[0]), complex(w[0])
    N = sys.n * len(word)
    f = sys.f
    for _ in range(30):
        zn, wn = z, w
        for _ in range(N):
            zn, wn = f.p(zn), f.q(zn, wn)
        J = orbit_jacobian(f, z, w, N)
        gz, gw = zn - z, wn - w
        dz = gz / (J.dp - 1)
        dw = (gw - J.dQdz * dz) / (J.dQdw - 1)
        z, w = z - dz, w - dw
        if abs(dz) + abs(dw) < tol * (1 + abs(z) + abs(w)):
            break
    else:
        raise NonConvergence("periodic point refinement did not converge")
    orb = make_orbit(f, z, w, N)
    if not orb.vertical_like:
        raise NonVerticalLike(f"|B| = {abs(orb.B):.4f} <= |A| = {abs(orb.A):.4f}")
    return orb


def audit_V123(sys: InverseBranchSystem, n_limit: int = 256, word_length: int = 12, seed: int = 0, delta: float = 0.0) -> dict:
    """Checks of the three defining conditions of a vertical-like IFS.

    V1: cone invariance and fiber expansion at sampled limit points, and
    |B| > |A| for df^n there. V2: each branch has a partner with the same base
    choices. V3: some pair of branches has different base choices, with
    disjoint sampled base projections. Nesting of the box and the largest
    Green value at the limit samples are reported too; see limit_green.
    """
    z, w = limit_points(sys, word_length, n_limit, seed)
    green, green_bound = limit_green(sys, word_length, z, w)
    ok_cone, cmargin = check_cone(sys.f, sys.n, z, w, sys.alpha, delta)
    Bs, As = [], []
    for zi, wi in zip(z, w):
        J = orbit_jacobian(sys.f, complex(zi), complex(wi), sys.n)
        Bs.append(abs(J.dQdw))
        As.append(abs(J.dp))
    Bs, As = np.array(Bs), np.array(As)
    expansion = float(Bs.min())
    vratio = float((Bs / As).min())
    v1 = bool(ok_cone and expansion > 1 and vratio > 1)
    bases = [b.base_choice for b in sys.branches]
    v2 = all(any(j != i and bases[j] == bases[i] for j in range(sys.m)) for i in range(sys.m))
    pairs = [(i, j) for i in range(sys.m) for j in range(i + 1, sys.m) if bases[i] != bases[j]]
    v3_disjoint = False
    sep = 0.0
    if pairs:
        zb = sys.box.base_centers
        wb, _ = sys.box.fiber_at(zb)
        for i, j in pairs:
            zi, _ = sys.apply_branch(i, zb, wb)
            zj, _ = sys.apply_branch(j, zb, wb)
            dmin = float(np.min(np.abs(zi[:, None] - zj[None, :])))
            if dmin > 0:
                v3_disjoint = True
                sep = max(sep, dmin)
    v3 = bool(pairs) and v3_disjoint
    nest = sys.nesting_margin()
    return {
        "V1": v1,
        "V2": bool(v2),
        "V3": v3,
        "cone_margin": cmargin,
        "alpha": sys.alpha,
        "min_fiber_expansion": expansion,
        "min_vertical_ratio": vratio,
        "nesting_margin": nest,
        "max_limit_green": float(green.max()),
        "limit_green_ideal": green_bound,
        "limit_green_ok": bool(green.max() <= LIMIT_GREEN_TOL),
        "nested": bool(nest > 0),
        "v3_separation": sep,
        "n_limit": n_limit,
        "word_length": word_length,
        "seed": seed,
        "base_set": sys.box.label,
    }
