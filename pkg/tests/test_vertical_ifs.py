import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skewlab.poly_core import Polynomial
from skewlab.presets import BETA, QUADRATIC_BRANCHES, audit_setup, tube_centers
from skewlab.skew_dynamics import green_vertical, orbit_jacobian, product_map
from skewlab.vertical_ifs import (
    Branch,
    FibredBox,
    InverseBranchSystem,
    NonVerticalLike,
    RootAmbiguity,
    audit_V123,
    check_cone,
    cone_margin,
    LIMIT_GREEN_TOL,
    limit_green,
    limit_points,
    periodic_in_limit,
)

P = Polynomial
mod = st.floats(0.05, 20)


@pytest.fixture(scope="module")
def audit_sys():
    return audit_setup().system


def brute_margin(A, B, C, alpha, n=4000):
    """Smallest vertical fraction of df applied to the cone boundary, minus alpha."""
    t0 = alpha / math.sqrt(1 - alpha * alpha)
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    v2 = C + B * t0 * np.exp(1j * th)
    return float(np.min(np.abs(v2) / np.sqrt(abs(A) ** 2 + np.abs(v2) ** 2))) - alpha


@given(mod, mod, st.floats(0, 5), st.floats(0.05, 0.95), st.floats(0, 2 * np.pi))
def test_cone_margin_matches_phase_sweep(a, b, c, alpha, phase):
    t0 = alpha / math.sqrt(1 - alpha * alpha)
    if b * t0 - c <= 1e-3 * (1 + c):
        return
    A, B, C = a * np.exp(1j * phase), b, c * np.exp(-2j * phase)
    assert float(cone_margin(A, B, C, alpha)) == pytest.approx(brute_margin(A, B, C, alpha), abs=1e-5)


def test_cone_margin_sign():
    assert cone_margin(1.0, 3.0, 0.0, 0.5) > 0
    assert cone_margin(3.0, 1.0, 0.0, 0.5) < 0
    assert cone_margin(1.0, 1.0, 5.0, 0.5) < 0


def test_branches_invert_forward_map(audit_sys):
    z, w = limit_points(audit_sys, word_length=6, count=32, seed=3)
    for i in range(audit_sys.m):
        zi, wi = audit_sys.apply_branch(i, z, w)
        zf, wf = audit_sys.forward(zi, wi)
        assert np.allclose(zf, z, atol=1e-9) and np.allclose(wf, w, atol=1e-8)


def test_branch_images_are_distinct(audit_sys):
    z0, w0 = audit_sys.center()
    imgs = [audit_sys.apply_branch(i, z0, w0) for i in range(audit_sys.m)]
    pts = np.array([[complex(a[0]), complex(b[0])] for a, b in imgs])
    d = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=-1)
    assert np.all(d[~np.eye(len(pts), dtype=bool)] > 1e-3)


def test_audit_system_passes(audit_sys):
    rep = audit_V123(audit_sys)
    assert rep["V1"] and rep["V2"] and rep["V3"]
    assert rep["alpha"] == 0.5 and rep["cone_margin"] > 0
    assert rep["min_vertical_ratio"] > 1 and rep["nested"]
    assert rep["limit_green_ok"]


def test_limit_points_in_fiber_julia(audit_sys):
    z, w = limit_points(audit_sys, word_length=16, count=64, seed=1)
    assert audit_sys.box.contains(z, w).all()
    g = np.array([green_vertical(audit_sys.f, zi, wi) for zi, wi in zip(z, w)])
    vals, ideal = limit_green(audit_sys, 16, z, w)
    assert np.allclose(vals, g, atol=1e-15)
    assert g.max() <= LIMIT_GREEN_TOL
    # the ideal value G(center) / 2^32 is far below the tolerance
    assert 0 < ideal < 1e-3 * LIMIT_GREEN_TOL


def test_limit_points_seeded(audit_sys):
    a = limit_points(audit_sys, 8, 16, seed=5)
    b = limit_points(audit_sys, 8, 16, seed=5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("word", [[0], [1], [2], [3], [0, 3], [1, 2], [2, 3, 1]])
def test_word_fixed_points_vertical_like(audit_sys, word):
    orb = periodic_in_limit(audit_sys, word)
    assert abs(orb.B) > abs(orb.A)
    assert orb.m == audit_sys.n * len(word)
    J = orbit_jacobian(audit_sys.f, orb.z1, orb.w1, orb.m)
    assert abs(J.dQdw - orb.B) < 1e-6 * abs(orb.B)


def test_check_cone_rejects_tilted_product():
    # base expands by 2 beta > 2 = fiber expansion at (beta, 1)
    f = product_map(P([-1, 0, 1]), P([0, 0, 1]))
    ok, m = check_cone(f, 1, [BETA], [1.0], 0.9)
    assert not ok and m < 0


def test_non_vertical_like_raises():
    f = product_map(P([-1, 0, 1]), P([-1, 0, 1]))
    pts = tube_centers()
    anchor = int(np.argmin(np.abs(pts - BETA)))
    box = FibredBox(pts, 0.15, BETA, 0.4)
    sys = InverseBranchSystem(f, 2, [QUADRATIC_BRANCHES[0]], box, anchor=anchor)
    with pytest.raises(NonVerticalLike):
        periodic_in_limit(sys, [0])


def test_root_ambiguity_detected(audit_sys):
    z0, w0 = audit_sys.center()
    with pytest.raises(RootAmbiguity):
        audit_sys.apply_branch(0, z0, w0, ambiguity_tol=1e6)


def test_branch_length_validated(audit_sys):
    with pytest.raises(ValueError):
        InverseBranchSystem(audit_sys.f, 2, [Branch((0,), (0, 0))], audit_sys.box)


def test_box_geometry():
    box = FibredBox([0, 1], 0.2, [0, 1j], [1.0, 2.0])
    assert box.contains([0.05, 1.1], [0.5, 1j + 1.5]).all()
    assert not box.contains([0.5], [0]).any()
    Z, W = box.boundary_samples(8, 8)
    assert np.all(np.abs(box.depth(Z, W)) < 0.02)
