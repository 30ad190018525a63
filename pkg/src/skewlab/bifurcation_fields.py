"""Parameter-space potentials on 1- and 2-dimensional slices and their discrete dd^c masses.

Normalization: masses are raw finite-difference Laplacians (dim 1) or complex
Hessian pairings (dim 2) times the cell volume, with no 1/(2 pi) factors. The
complex Hessian is h_{j k-bar} = (1/4)(d_xj d_xk + d_yj d_yk + i(d_xj d_yk - d_yj d_xk)) h,
so |lambda|^2 has h_{1 1-bar} = 1.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measures_lyapunov import (
    SamplerConfig,
    critical_green_sums_slice,
    lyapunov_p,
    lyapunov_vertical,
    orbit_length,
    sample_mu_p_orbits,
)
from .poly_core import Polynomial, roots
from .skew_dynamics import UNDECIDED, GreenConfig, ParameterSlice, green_slice_batch

KINDS = ("Lv", "fiber", "Lp", "Ltotal", "custom")


@dataclass(frozen=True)
class FieldConfig:
    sampler: SamplerConfig = SamplerConfig(n_samples=128, depth=40, seed=0)
    green: GreenConfig = GreenConfig()
    z: complex | None = None  # fiber for kind="fiber"
    chunk: int = 1 << 18

    def digest(self) -> str:
        blob = json.dumps(
            {
                "sampler": [self.sampler.n_samples, self.sampler.depth, self.sampler.seed, self.sampler.burn_in],
                "green": [self.green.max_iter, self.green.escape_radius, self.green.extra_iter],
                "z": None if self.z is None else [complex(self.z).real, complex(self.z).imag],
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


Window = tuple[float, float, float, float]  # re_min, re_max, im_min, im_max


@dataclass
class GridField:
    """Values of a potential or mass on a rectangular parameter grid.

    dim 1: ``values`` has shape (n_im, n_re). dim 2: shape (n_x1, n_y1, n_x2, n_y2)
    where lambda_k = x_k + i y_k. Cells that could not be evaluated hold NaN.
    """

    slice: ParameterSlice | None
    windows: tuple[Window, ...]
    resolution: tuple[int, ...]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.windows)

    def axes(self) -> list[np.ndarray]:
        """Real coordinate axes in array order."""
        if self.dim == 1:
            (w,) = self.windows
            n_re, n_im = self.resolution
            return [np.linspace(w[2], w[3], n_im), np.linspace(w[0], w[1], n_re)]
        out = []
        for w, n in zip(self.windows, (self.resolution[0], self.resolution[1])):
            out += [np.linspace(w[0], w[1], n), np.linspace(w[2], w[3], n)]
        return out

    def spacings(self) -> list[float]:
        return [float(a[1] - a[0]) for a in self.axes()]

    def cell_volume(self) -> float:
        return float(np.prod(self.spacings()))

    def lambdas(self) -> list[np.ndarray]:
        """Complex parameter arrays with the shape of ``values``."""
        ax = self.axes()
        if self.dim == 1:
            Y, X = np.meshgrid(ax[0], ax[1], indexing="ij")
            return [X + 1j * Y]
        X1, Y1, X2, Y2 = np.meshgrid(*ax, indexing="ij")
        return [X1 + 1j * Y1, X2 + 1j * Y2]

    def total(self) -> float:
        return float(np.nansum(self.values))

    def support(self, tau: float | None = None) -> np.ndarray:
        """Cells with mass above tau (default 1e-3 times the mean cell mass)."""
        if tau is None:
            tau = support_threshold(self)
        return np.nan_to_num(self.values, nan=0.0) > tau


def support_threshold(field: GridField, factor: float = 1e-3) -> float:
    v = np.nan_to_num(field.values, nan=0.0)
    return factor * float(np.abs(v).sum()) / max(np.isfinite(field.values).sum(), 1)


def _resolution(dim: int, resolution) -> tuple[int, ...]:
    if isinstance(resolution, int):
        return (resolution, resolution)
    r = tuple(int(x) for x in resolution)
    if len(r) != 2:
        raise ValueError("resolution is an int or a pair")
    if dim == 2 and r[0] != r[1]:
        # dim 2 uses one resolution per complex axis, the same for its real and imaginary part
        pass
    return r


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


def fiber_potential(
    s: ParameterSlice, z: complex, lam: Sequence[complex], cfg: FieldConfig = FieldConfig(), z_orbit=None
) -> float:
    """Sum of G_lambda(z, c) over critical points c of q_{lambda, z}, with multiplicity.

    Scalar path: critical points come from the general root finder.
    """
    f = s.instantiate(lam)
    dq = Polynomial([j * complex(c) for j, c in enumerate(f.coeffs_at(complex(z)))][1:])
    crit = np.array(roots(dq), dtype=complex)
    orb = None if z_orbit is None else np.broadcast_to(np.asarray(z_orbit, dtype=complex), crit.shape + np.shape(z_orbit))
    vals, _ = green_slice_batch(s, [np.full(crit.shape, complex(l)) for l in lam], np.full(crit.shape, complex(z)), crit, cfg.green, orb)
    return float(vals.sum())


def _flat_lambdas(windows, resolution) -> tuple[list[np.ndarray], tuple[int, ...]]:
    tmp = GridField(None, tuple(windows), resolution, np.zeros(0))
    lams = tmp.lambdas()
    return [l.ravel() for l in lams], lams[0].shape


def potential_field(
    s: ParameterSlice | None,
    windows: Sequence[Window] | Window,
    resolution,
    kind: str = "Lv",
    cfg: FieldConfig = FieldConfig(),
    func: Callable | None = None,
) -> GridField:
    """Evaluate a potential on a grid over a 1- or 2-dimensional slice.

    kind is one of Lv, fiber (needs cfg.z), Lp, Ltotal, or custom (``func``
    maps the list of complex parameter arrays to values; used for testing).
    Lv uses one set of base orbits for every cell.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if isinstance(windows[0], (int, float)):
        windows = (tuple(windows),)
    windows = tuple(tuple(float(x) for x in w) for w in windows)
    dim = len(windows)
    if dim not in (1, 2):
        raise ValueError("slices must have complex dimension 1 or 2")
    if s is not None and s.dim != dim:
        raise ValueError("window count differs from slice dimension")
    res = _resolution(dim, resolution)
    flat, shape = _flat_lambdas(windows, res)
    meta = {"kind": kind, "cfg_hash": cfg.digest(), "undecided": 0}
    if s is not None:
        meta["slice_hash"] = s.digest()
    if kind == "custom":
        if func is None:
            raise ValueError("custom kind needs func")
        vals = np.asarray(func([l.reshape(shape) for l in flat]), dtype=float)
        return GridField(s, windows, res, vals, meta)
    if s is None:
        raise ValueError("slice required")
    d = s.d
    if kind == "Lp":
        vals = np.full(shape, lyapunov_p(s.p, cfg.green))
        return GridField(s, windows, res, vals, meta)
    if kind == "fiber":
        if cfg.z is None:
            raise ValueError("fiber kind needs cfg.z")
        orbits = np.array([_fiber_orbit(s.p, cfg.z, orbit_length(cfg.green))])
    else:
        orbits = sample_mu_p_orbits(s.p, cfg.sampler, orbit_length(cfg.green))
    n = orbits.shape[0]
    ncell = flat[0].size
    step = max(1, cfg.chunk // (n * max(d - 1, 1)))
    out = np.empty(ncell)
    und = 0
    for a in range(0, ncell, step):
        b = min(ncell, a + step)
        sums, u = critical_green_sums_slice(s, [l[a:b] for l in flat], orbits, cfg.green)
        out[a:b] = sums.mean(axis=-1)
        und += u
    meta["undecided"] = und
    if kind in ("Lv", "Ltotal"):
        out = out + math.log(d)
    if kind == "Ltotal":
        out = out + lyapunov_p(s.p, cfg.green)
    return GridField(s, windows, res, out.reshape(shape), meta)


def _fiber_orbit(p: Polynomial, z: complex, n: int) -> np.ndarray:
    out = np.empty(n, dtype=complex)
    out[0] = z
    for k in range(1, n):
        out[k] = p(out[k - 1])
        if not abs(out[k]) < 1e150:
            return out[:k]
    return out


# ---------------------------------------------------------------------------
# Masses
# ---------------------------------------------------------------------------


def _clip(mass: np.ndarray, scale: float, eps_rel: float = 1e-9) -> np.ndarray:
    eps = eps_rel * max(scale, 1e-300)
    return np.where((mass < 0) & (mass > -eps), 0.0, mass)


def _laplacian_1(v: np.ndarray, hy: float, hx: float) -> np.ndarray:
    out = np.full(v.shape, np.nan)
    out[1:-1, 1:-1] = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hy**2 + (
        v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]
    ) / hx**2
    return out


def _second(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered second difference along one axis, NaN on that axis' edges."""
    out = np.full(v.shape, np.nan)
    c = [slice(None)] * v.ndim
    lo, mid, hi = list(c), list(c), list(c)
    lo[axis], mid[axis], hi[axis] = slice(None, -2), slice(1, -1), slice(2, None)
    out[tuple(mid)] = (v[tuple(hi)] - 2 * v[tuple(mid)] + v[tuple(lo)]) / h**2
    return out


def _mixed(v: np.ndarray, a: int, b: int, ha: float, hb: float) -> np.ndarray:
    out = np.full(v.shape, np.nan)

    def sl(da, db):
        s = [slice(1, -1)] * v.ndim
        s = [slice(None)] * v.ndim
        s[a] = slice(1 + da, v.shape[a] - 1 + da)
        s[b] = slice(1 + db, v.shape[b] - 1 + db)
        return tuple(s)

    tgt = [slice(None)] * v.ndim
    tgt[a] = slice(1, -1)
    tgt[b] = slice(1, -1)
    out[tuple(tgt)] = (v[sl(1, 1)] - v[sl(1, -1)] - v[sl(-1, 1)] + v[sl(-1, -1)]) / (4 * ha * hb)
    return out


def ddc_mass(field: GridField) -> GridField:
    """Discrete dd^c mass per cell.

    dim 1: five-point Laplacian times cell area. dim 2: the trace measure
    (sum of the Laplacians in both complex directions) times cell volume.
    Edge cells are NaN.
    """
    v = np.asarray(field.values, dtype=float)
    h = field.spacings()
    if field.dim == 1:
        if min(v.shape) < 8:
            raise ValueError("resolution must be >= 8 per axis")
        lap = _laplacian_1(v, h[0], h[1])
    else:
        lap = sum(_second(v, k, h[k]) for k in range(4))
        edge = np.zeros(v.shape, dtype=bool)
        for k in range(4):
            idx = [slice(None)] * 4
            idx[k] = [0, -1]
            edge[tuple(idx)] = True
        lap[edge] = np.nan
    mass = lap * field.cell_volume()
    scale = float(np.nanmax(np.abs(v))) if np.isfinite(v).any() else 1.0
    mass = _clip(mass, scale * field.cell_volume() / min(h) ** 2)
    meta = dict(field.meta, op="ddc_mass")
    return GridField(field.slice, field.windows, field.resolution, mass, meta)


def complex_hessian_2(v: np.ndarray, h: Sequence[float]):
    """(h_11, h_22, h_12) complex Hessian entries of a dim-2 field, NaN on edges."""
    hx1, hy1, hx2, hy2 = h
    h11 = 0.25 * (_second(v, 0, hx1) + _second(v, 1, hy1))
    h22 = 0.25 * (_second(v, 2, hx2) + _second(v, 3, hy2))
    re = _mixed(v, 0, 2, hx1, hx2) + _mixed(v, 1, 3, hy1, hy2)
    im = _mixed(v, 0, 3, hx1, hy2) - _mixed(v, 1, 2, hy1, hx2)
    return h11, h22, 0.25 * (re + 1j * im)


def _edges4(shape) -> np.ndarray:
    edge = np.zeros(shape, dtype=bool)
    for k in range(4):
        idx = [slice(None)] * 4
        idx[k] = [0, -1]
        edge[tuple(idx)] = True
    return edge


def wedge_mass_2(field1: GridField, field2: GridField) -> GridField:
    """Mixed pairing dd^c h1 ^ dd^c h2 per cell on a dim-2 grid.

    Density h1_11 h2_22 + h1_22 h2_11 - 2 Re(h1_12 conj(h2_12)) times cell
    volume; exact for quadratic potentials. Edge cells and cells touching NaN
    input are NaN.
    """
    if field1.dim != 2 or field2.dim != 2:
        raise ValueError("wedge_mass_2 needs dim-2 fields")
    if field1.windows != field2.windows or field1.values.shape != field2.values.shape:
        raise ValueError("fields must share one grid")
    h = field1.spacings()
    v1 = np.asarray(field1.values, dtype=float)
    v2 = np.asarray(field2.values, dtype=float)
    out = np.full(v1.shape, np.nan)
    # slab over the first axis to bound memory; each slab keeps one ghost layer
    n0 = v1.shape[0]
    slab = max(3, int(2**22 // max(1, int(np.prod(v1.shape[1:])))) + 2)
    start = 1
    while start < n0 - 1:
        stop = min(n0 - 1, start + slab - 2)
        s1 = v1[start - 1 : stop + 1]
        s2 = v2[start - 1 : stop + 1]
        a11, a22, a12 = complex_hessian_2(s1, h)
        b11, b22, b12 = complex_hessian_2(s2, h)
        dens = a11 * b22 + a22 * b11 - 2 * np.real(a12 * np.conj(b12))
        out[start:stop] = dens[1:-1]
        start = stop
    out[_edges4(out.shape)] = np.nan
    mass = out * field1.cell_volume()
    meta = {"op": "wedge_mass_2", "kinds": [field1.meta.get("kind"), field2.meta.get("kind")]}
    return GridField(field1.slice, field1.windows, field1.resolution, mass, meta)


# ---------------------------------------------------------------------------
# Consistency check
# ---------------------------------------------------------------------------


def decomposition_residual(s: ParameterSlice, lam: Sequence[complex], cfg: FieldConfig = FieldConfig()) -> tuple[float, float]:
    """|L_v - log d - mean_z fiber_potential| on one shared sample, and the SE of L_v."""
    orbits = sample_mu_p_orbits(s.p, cfg.sampler, orbit_length(cfg.green))
    est = lyapunov_vertical(s.instantiate(lam), cfg.sampler, cfg.green, orbits=orbits)
    pots = [fiber_potential(s, orb[0], lam, cfg, z_orbit=orb) for orb in orbits]
    resid = abs(est.value - math.log(s.d) - float(np.mean(pots)))
    return resid, est.stderr


# ---------------------------------------------------------------------------
# Support comparison
# ---------------------------------------------------------------------------


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Cells within Chebyshev distance ``radius`` of a True cell."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(radius):
        # one-cell growth along each axis in turn gives the 3^ndim box
        for ax in range(out.ndim):
            n = out.shape[ax]
            lo = [slice(None)] * out.ndim
            hi = [slice(None)] * out.ndim
            lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
            grown = out.copy()
            grown[tuple(lo)] |= out[tuple(hi)]
            grown[tuple(hi)] |= out[tuple(lo)]
            out = grown
    return out


def support_inclusion(inner: np.ndarray, outer: np.ndarray, radius: int = 2) -> tuple[bool, int]:
    """Whether every True cell of ``inner`` is within ``radius`` cells of ``outer``;
    also the number of offending cells."""
    bad = np.asarray(inner, dtype=bool) & ~dilate(outer, radius)
    return not bad.any(), int(bad.sum())
