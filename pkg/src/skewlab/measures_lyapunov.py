"""Sampling of the equilibrium measure of p and of fiber Julia sets, and Lyapunov exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .poly_core import Polynomial, batched_roots, cauchy_radius, eval_poly, root_clusters, roots
from .skew_dynamics import (
    UNDECIDED,
    GreenConfig,
    ParameterSlice,
    SkewProduct,
    fiber_bound,
    green_base_batch,
    green_fiber_batch,
    green_slice_batch,
)


class ExceptionalStart(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 2048
    depth: int = 40
    seed: int = 0
    burn_in: int = 0

    def __post_init__(self):
        if self.depth < 8:
            raise ValueError("depth must be >= 8")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    @property
    def steps(self) -> int:
        return self.burn_in + self.depth


class LyapunovEstimate(NamedTuple):
    value: float
    stderr: float
    undecided: int


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(seed % 2**64))


def _is_exceptional(p: Polynomial, z0: complex) -> bool:
    # a point with a single preimage equal to itself has a finite backward orbit
    pre = roots(Polynomial([p.coeffs[0] - z0] + list(p.coeffs[1:])))
    cl = root_clusters(pre)
    return len(cl) == 1 and abs(cl[0][0] - z0) <= 1e-8 * (1 + abs(z0))


def _start_point(p: Polynomial, rng: np.random.Generator) -> complex:
    """Most repelling fixed point of p: it lies in J_p, so whole chains do."""
    fixed = np.array(roots(p - Polynomial([0, 1])), dtype=complex)
    mult = np.abs(eval_poly(p.derivative(), fixed))
    z0 = complex(fixed[int(np.argmax(mult))])
    if not _is_exceptional(p, z0):
        return z0
    radius = 1.0 + cauchy_radius(p.coeffs)
    for _ in range(8):
        z0 = radius * np.exp(2j * np.pi * rng.random())
        if not _is_exceptional(p, z0):
            return z0
    raise ExceptionalStart("could not find a non-exceptional start point")


def _pick_choice(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return rng.integers(0, d, size=n)


def sample_mu_p_orbits(p: Polynomial, cfg: SamplerConfig = SamplerConfig(), length: int = 0) -> np.ndarray:
    """Samples of mu_p together with their forward orbits.

    Row i holds z_i, p(z_i), ..., p^L(z_i) with L = max(length, burn_in + depth),
    read off the backward chain. Such orbits are backward-stable, whereas a
    forward iteration of z_i in floating point drifts off J_p.
    """
    d = p.degree
    if d < 2:
        raise ValueError("degree must be >= 2")
    rng = _rng(cfg.seed)
    z0 = _start_point(p, rng)
    steps = max(cfg.steps, length)
    n = cfg.n_samples
    chain = np.empty((n, steps + 1), dtype=complex)
    chain[:, 0] = z0
    base = np.asarray(p.coeffs, dtype=complex)
    stack = np.broadcast_to(base, (n, d + 1)).copy()
    rows = np.arange(n)
    for k in range(steps):
        stack[:, 0] = base[0] - chain[:, k]
        pre = batched_roots(stack)
        chain[:, k + 1] = pre[rows, _pick_choice(rng, n, d)]
    return chain[:, ::-1]


def sample_mu_p(p: Polynomial, cfg: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Points distributed approximately by the maximal entropy measure of p.

    Each of ``n_samples`` chains starts at the most repelling fixed point of p
    and is pulled back ``burn_in + depth`` times through uniformly random inverse
    branches.
    """
    return sample_mu_p_orbits(p, cfg)[:, 0].copy()


def forward_orbit(p: Polynomial, z: complex, n: int) -> list[complex]:
    out = [complex(z)]
    for _ in range(n):
        out.append(complex(eval_poly(p, out[-1])))
    return out


def sample_fiber_julia(f: SkewProduct, z: complex, cfg: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Points near the fiber Julia set J_z.

    The base orbit z_0 = z, ..., z_N is computed forward; chains start well
    outside the escape disk over z_N and are pulled back through random roots
    of q_{z_k}(x) = w. Each pullback divides the Green function by d, so the
    returned points have G(z, w) <= log(2R) / d**N.
    """
    d = f.d
    rng = _rng(cfg.seed)
    N = cfg.steps
    zs = forward_orbit(f.base, z, N)
    coeffs_N = f.coeffs_at(zs[N])
    R = 2.0 * float(max(fiber_bound(coeffs_N), 2.0))
    w = R * np.exp(2j * np.pi * rng.random(cfg.n_samples))
    rows = np.arange(cfg.n_samples)
    for k in range(N - 1, -1, -1):
        ck = np.array(f.coeffs_at(zs[k]), dtype=complex)
        stack = np.broadcast_to(ck, (cfg.n_samples, d + 1)).copy()
        stack[:, 0] = ck[0] - w
        pre = batched_roots(stack)
        w = pre[rows, _pick_choice(rng, cfg.n_samples, d)]
    return w


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------


def lyapunov_p_detail(p: Polynomial, gcfg: GreenConfig = GreenConfig()) -> tuple[float, int]:
    """log d + sum of G_p over critical points, and the undecided count."""
    d = p.degree
    if d < 2:
        raise ValueError("degree must be >= 2")
    crit = np.array(roots(p.derivative()), dtype=complex)
    vals, status = green_base_batch(p, crit, gcfg)
    return math.log(d) + float(vals.sum()), int((status == UNDECIDED).sum())


def lyapunov_p(p: Polynomial, gcfg: GreenConfig = GreenConfig()) -> float:
    return lyapunov_p_detail(p, gcfg)[0]


def birkhoff_lyapunov(p: Polynomial, cfg: SamplerConfig = SamplerConfig()) -> float:
    """Mean of log|p'| over a sample of the equilibrium measure."""
    zs = sample_mu_p(p, cfg)
    return float(np.mean(np.log(np.abs(eval_poly(p.derivative(), zs)))))


def batch_means_stderr(x: np.ndarray, n_batches: int = 16) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float("nan")
    if x.size < 2 * n_batches:
        return float(np.std(x, ddof=1) / math.sqrt(x.size))
    means = np.array([b.mean() for b in np.array_split(x, n_batches)])
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def critical_points_from_coeffs(cz: list) -> np.ndarray:
    """Roots of dq/dw for stacked coefficient arrays; last axis has d-1 entries."""
    d = len(cz) - 1
    dstack = np.stack([j * cz[j] for j in range(1, d + 1)], axis=-1)
    return batched_roots(dstack)


def orbit_length(gcfg: GreenConfig) -> int:
    return gcfg.max_iter + gcfg.extra_iter + 1


def critical_green_sums(f: SkewProduct, orbits: np.ndarray, gcfg: GreenConfig = GreenConfig()):
    """Per-sample sum of G(z, c) over critical points c of q_z (with multiplicity).

    ``orbits`` has shape (n, L): row i is a base orbit starting at z_i, as
    returned by ``sample_mu_p_orbits``. A 1-D array is taken as bare points.
    """
    orbits = np.asarray(orbits, dtype=complex)
    if orbits.ndim == 1:
        orbits = orbits[:, None]
    zs = orbits[:, 0]
    cz = [np.broadcast_to(np.asarray(c, dtype=complex), zs.shape) for c in f.coeffs_at(zs)]
    crit = critical_points_from_coeffs(cz)
    zz = np.broadcast_to(zs[:, None], crit.shape)
    orb = np.broadcast_to(orbits[:, None, :], crit.shape + orbits.shape[-1:])
    vals, status = green_fiber_batch(lambda zsub, _i: f.coeffs_at(zsub), f.base, f.d, zz, crit, gcfg, orb)
    return vals.sum(axis=-1), int((status == UNDECIDED).sum())


def critical_green_sums_slice(s: ParameterSlice, lam, orbits: np.ndarray, gcfg: GreenConfig = GreenConfig()):
    """Critical Green sums for a grid of slice parameters.

    ``lam`` entries share a shape S and ``orbits`` has shape (n, L); the result
    has shape S + (n,). Reusing the same orbits across parameters gives
    common random numbers, so neighbouring grid values are strongly correlated.
    """
    orbits = np.asarray(orbits, dtype=complex)
    if orbits.ndim == 1:
        orbits = orbits[:, None]
    zs = orbits[:, 0]
    lam = [np.asarray(l, dtype=complex) for l in lam]
    S = np.broadcast_shapes(*[l.shape for l in lam]) if lam else ()
    lam_b = [np.broadcast_to(l.reshape(l.shape + (1,)), S + zs.shape) for l in lam]
    zb = np.broadcast_to(zs, S + zs.shape)
    cz = [np.broadcast_to(np.asarray(c, dtype=complex), zb.shape) for c in s.coeffs_at(lam_b, zb)]
    crit = critical_points_from_coeffs(cz)
    lam_c = [np.broadcast_to(l[..., None], crit.shape) for l in lam_b]
    orb = orbits[:, None, :]
    vals, status = green_slice_batch(s, lam_c, zb[..., None], crit, gcfg, orb)
    return vals.sum(axis=-1), int((status == UNDECIDED).sum())


def lyapunov_vertical(
    f: SkewProduct,
    cfg: SamplerConfig = SamplerConfig(),
    gcfg: GreenConfig = GreenConfig(),
    orbits: np.ndarray | None = None,
) -> LyapunovEstimate:
    """log d + the mu_p-average of the critical Green sum over fibers.

    Returns the estimate, a 16-batch-means standard error and the number of
    undecided critical orbits (counted as G = 0).
    """
    d = f.d
    if d < 2:
        raise ValueError("degree must be >= 2")
    if orbits is None:
        orbits = sample_mu_p_orbits(f.base, cfg, orbit_length(gcfg))
    sums, und = critical_green_sums(f, orbits, gcfg)
    return LyapunovEstimate(math.log(d) + float(sums.mean()), batch_means_stderr(sums), und)
