import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from skewlab.misiurewicz_lab import (
    HypothesisViolated,
    MisiurewiczRelation,
    PersistentRelation,
    UnicriticalRay,
    composition_derivative,
    composition_injective,
    critical_points_at,
    eigen_lines,
    exact_rank,
    expected_exponent,
    goodness_audit,
    independence_rank,
    line_angle,
    make_orbit,
    multiplier_jet,
    periodic_points_fiber,
    postcritical_tangent,
    rank_certificate,
    relation_residual,
    return_map_poly,
    s2_distance,
    second_relation_search,
    solve_misiurewicz,
    track_periodic,
    unicritical_asymptotics,
)
from skewlab.poly_core import Polynomial
from skewlab.presets import BETA, degenerate_seed_relations, degenerate_setup, unicritical_setup
from skewlab.skew_dynamics import iterate, orbit_jacobian, unicritical_slice

P = Polynomial


@pytest.fixture(scope="module")
def uni():
    return unicritical_setup()


@pytest.fixture(scope="module")
def deg():
    return degenerate_setup()


def product_relation(start):
    s = unicritical_slice(P([-1, 0, 1]), [0], [[1]])
    w1 = (1 + cmath.sqrt(1 - 4 * start)) / 2
    t = make_orbit(s.instantiate([start]), BETA, w1, 1, (start,))
    return s, solve_misiurewicz(s, -BETA, 0, 2, t, [start])


def test_product_family_oracle():
    # (z^2 - 1, w^2 + lam): 0 -> lam -> lam^2 + lam lands on the fixed point 2 at lam = -2
    s, rel = product_relation(-1.9)
    assert abs(rel.lam_star[0] + 2) < 1e-10
    assert abs(rel.target.w1 - 2) < 1e-10
    assert rel.residual < 1e-10


def test_persistent_relation_detected():
    # the direction z^2 - beta^2 vanishes on the base orbit -beta -> beta,
    # so the relation of w^2 - 2 holds along the whole slice
    s = unicritical_slice(P([-1, 0, 1]), [-2], [[-BETA**2, 0, 1]])
    t = make_orbit(s.instantiate([0.1]), BETA, 2, 1, (0.1,))
    with pytest.raises(PersistentRelation):
        solve_misiurewicz(s, -BETA, 0, 2, t, [0.1])


def _random_relation(rng):
    a0 = list(rng.normal(size=3) * 0.5 + 1j * rng.normal(size=3) * 0.5)
    dirs = [list(rng.normal(size=2) + 1j * rng.normal(size=2)), list(rng.normal(size=3))]
    s = unicritical_slice(P([-1, 0, 1]), a0, dirs)
    lam = tuple(rng.normal(size=2) * 0.3 + 1j * rng.normal(size=2) * 0.3)
    f = s.instantiate(lam)
    pts = periodic_points_fiber(f, BETA, 1)
    w1 = max(pts, key=lambda o: abs(o.B)).w1
    z0 = -BETA if rng.random() < 0.5 else cmath.sqrt(1 - BETA)
    n0 = 1 if abs(z0 + BETA) < 1e-12 else 2
    c0 = critical_points_at(f, z0)[0]
    return s, MisiurewiczRelation(z0, c0, n0, make_orbit(f, BETA, w1, 1, lam), lam, float("nan"))


def test_relation_jacobian_matches_finite_differences(rng):
    checked = 0
    for _ in range(50):
        s, rel = _random_relation(rng)
        lam = np.array(rel.lam_star, dtype=complex)
        F = relation_residual(s, rel, lam)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2, complex)
            e[k] = h
            fd = (relation_residual(s, rel, lam + e).value - relation_residual(s, rel, lam - e).value) / (2 * h)
            assert abs(F.partials[k] - fd) <= 1e-5 * (1 + abs(fd))
            # holomorphic: the i h step gives i times the same derivative
            fdi = (relation_residual(s, rel, lam + 1j * e).value - relation_residual(s, rel, lam - 1j * e).value) / (2 * h)
            assert abs(1j * F.partials[k] - fdi) <= 1e-5 * (1 + abs(fd))
        checked += 1
    assert checked == 50


def test_solved_relation_is_a_zero(uni):
    rel = uni.relation
    F = relation_residual(uni.slice, rel)
    assert abs(F.value) < 1e-10
    z, w = iterate(uni.f, rel.z0, rel.c0, rel.n0)
    assert abs(z - rel.target.z1) < 1e-9 and abs(w - rel.target.w1) < 1e-9


def test_periodic_points_fiber_counts():
    f = unicritical_slice(P([-1, 0, 1]), [-3, 0.5], [[1]]).instantiate([0.2j])
    for m in (1, 2):
        z1 = BETA
        pts = periodic_points_fiber(f, z1, m)
        assert len(pts) == 2**m
        Q = return_map_poly(f, z1, m)
        for o in pts:
            assert abs(Q(o.w1) - o.w1) < 1e-8 * (1 + abs(o.w1))
    assert len(periodic_points_fiber(f, BETA, 2, exact=True)) == 2
    with pytest.raises(ValueError):
        periodic_points_fiber(f, 0.3, 1)


def test_multiplier_jet_against_finite_differences(uni):
    s, rel = uni.slice, uni.relation
    lam = np.array(rel.lam_star, dtype=complex)
    t = rel.target
    Bj = multiplier_jet(s, lam, t.z1, t.w1, t.m)
    assert abs(Bj.value - t.B) < 1e-9 * abs(t.B)
    h = 1e-6
    from skewlab.misiurewicz_lab import track_w1

    for k in range(2):
        e = np.zeros(2, complex)
        e[k] = h
        Bp = multiplier_jet(s, lam + e, t.z1, track_w1(s, lam + e, t.z1, t.w1, t.m), t.m).value
        Bm = multiplier_jet(s, lam - e, t.z1, track_w1(s, lam - e, t.z1, t.w1, t.m), t.m).value
        assert abs(Bj.partials[k] - (Bp - Bm) / (2 * h)) < 1e-5 * (1 + abs(Bj.partials[k]))


def test_goodness_of_documented_seed(uni):
    rep = goodness_audit(uni.slice, uni.relation)
    assert rep.good and rep.generic
    assert rep.to_dict()["good"] is True


def test_goodness_flags_match_oracles(uni):
    rep = goodness_audit(uni.slice, uni.relation)
    rel, f = uni.relation, uni.f
    # g5: tangent of f^n0 applied to the critical curve, by finite differences
    h = 1e-6

    def crit_image(z):
        c = critical_points_at(f, z)[0]
        return np.array(iterate(f, z, c, rel.n0))

    fd = (crit_image(rel.z0 + h) - crit_image(rel.z0 - h)) / (2 * h)
    tan = postcritical_tangent(f, rel.z0, rel.c0, rel.n0)
    assert line_angle(fd, tan) < 1e-4
    Jm = orbit_jacobian(f, rel.target.z1, rel.target.w1, rel.target.m)
    assert rep.g5_angle == pytest.approx(min(line_angle(fd, v) for v in eigen_lines(Jm)), abs=1e-4)
    # s2 oracle: distance of log B to the real line through log A
    la, lb = cmath.log(rel.target.A), cmath.log(rel.target.B)
    ts = np.linspace(-10, 10, 200001)
    assert rep.s2_distance == pytest.approx(np.min(np.abs(lb - ts * la)), abs=1e-3)


def test_degenerate_family_flags(deg):
    # the postcritical graph is the A-eigenline and A, B are real
    rep = goodness_audit(deg.slice, deg.relation)
    assert rep.g5_angle < 1e-8 and not rep.g5_ok
    assert not rep.s2 and rep.s2_distance < 1e-12
    with pytest.raises(HypothesisViolated):
        second_relation_search(deg.slice, deg.relation, deg.system)


def test_degenerate_seed_relations_are_dependent(deg):
    rels = degenerate_seed_relations(deg)
    for rel in rels:
        assert rel.residual < 1e-10
    r, smin, _ = independence_rank(deg.slice, rels[:2], rels[0].lam_star)
    assert r == 1 and smin < 1e-10


def test_eigen_lines_are_eigenvectors(rng):
    for _ in range(10):
        A, B, C = rng.normal(size=3) + 1j * rng.normal(size=3)
        from skewlab.skew_dynamics import OrbitJacobian

        J = OrbitJacobian(A, B, C)
        M = np.array([[A, 0], [C, B]])
        for v in eigen_lines(J):
            Mv = M @ v
            assert abs(Mv[0] * v[1] - Mv[1] * v[0]) < 1e-12 * (1 + np.abs(Mv).max())


@given(st.floats(0.1, 5), st.floats(-3, 3), st.floats(-3, 3))
def test_s2_distance_zero_on_real_powers(r, t, phase):
    A = r * cmath.exp(1j * phase * 0.3) + 1.5
    B = cmath.exp(t * cmath.log(A))
    if abs(t * cmath.log(A).imag) >= math.pi:
        return
    assert s2_distance(A, B) < 1e-9


def test_rank_certificate_oracles():
    assert rank_certificate(np.array([[1, 0], [0, 2]]))[0] == 2
    r, smin = rank_certificate(np.array([[1, 1j], [2, 2j]]))
    assert r == 1 and smin < 1e-12
    # unit rows at angle theta: sigma_min = sqrt(1 - cos theta) for real rows
    th = 0.3
    r, smin = rank_certificate(np.array([[1, 0], [math.cos(th), math.sin(th)]]) * [[5], [0.01]])
    assert smin == pytest.approx(math.sqrt(1 - math.cos(th)), rel=1e-9)


def test_track_periodic_follows_fixed_point():
    s = unicritical_slice(P([-1, 0, 1]), [-3], [[1]])
    f0 = s.instantiate([0])
    o = max(periodic_points_fiber(f0, BETA, 1), key=lambda x: abs(x.B))
    o2 = track_periodic(s, o, [0], [0.5 + 0.5j])
    f1 = s.instantiate([0.5 + 0.5j])
    assert abs(f1.q(BETA, o2.w1) - o2.w1) < 1e-10
    c = -3 + 0.5 + 0.5j
    assert abs(o2.w1 - (1 + cmath.sqrt(1 - 4 * c)) / 2) < 1e-10


def test_composition_derivative_against_sympy():
    w, e = sympy.symbols("w e")
    for d, m in [(2, 3), (3, 2), (2, 2)]:
        r = [[sympy.Symbol(f"r{j}_{k}") for k in range(d - 1)] for j in range(m)]
        Q = w
        for j in range(m):
            Q = Q**d + e * sum(r[j][k] * Q**k for k in range(d - 1))
        dQ = sympy.Poly(sympy.expand(sympy.diff(Q, e).subs(e, 0)), w)
        D = composition_derivative(d, m)
        flat = [x for row in r for x in row]
        for (e_pow,), coeff in dQ.terms():
            vec = [Fraction(int(sympy.Poly(coeff, *flat).coeff_monomial(x))) for x in flat]
            assert D.get(e_pow) == vec
        assert len(D) == len(dQ.terms())


def test_composition_injective_claim():
    ok, rank, _ = composition_injective(2, 3)
    assert ok and rank == 3
    assert composition_injective(3, 2)[0]
    assert exact_rank([[Fraction(1), Fraction(2)], [Fraction(2), Fraction(4)]]) == 1


def test_expected_exponents():
    assert expected_exponent("u2", 2, 2, 1) == 1.5
    assert expected_exponent("u2", 2, 3, 1) == 2.0
    assert expected_exponent("v2", 2, 2, 1) == 0.5
    assert expected_exponent("multiplier", 2, 2, 3) == 1.5
    assert expected_exponent("fiber_modulus", 3, 0, 0) == pytest.approx(1 / 3)


def test_ray_guards():
    p = P([-1, 0, 1])
    z0 = cmath.sqrt(1 - BETA)
    with pytest.raises(HypothesisViolated):
        unicritical_asymptotics(UnicriticalRay(p, (1, 0, 1), z0, 2), "u2", [1e2, 1e3])
    with pytest.raises(HypothesisViolated):
        unicritical_asymptotics(UnicriticalRay(p, (0, 0, 1), 0.0, 1), "fiber_modulus", [1e2, 1e3])
    with pytest.raises(HypothesisViolated):
        # z0 = beta lies on its own cycle
        unicritical_asymptotics(UnicriticalRay(p, (-BETA * 3, -(BETA + 3), 1), BETA, 2), "v2", [1e2, 1e3])


def _ray(n, m=1):
    p = P([-1, 0, 1])
    z0 = cmath.sqrt(1 - BETA) if n == 2 else cmath.sqrt(1 + cmath.sqrt(1 - BETA))
    return UnicriticalRay(p, (3 * z0, -(z0 + 3), 1), z0, n, m)


@pytest.mark.parametrize("n", [2, 3])
def test_u2_slope(n):
    fit = unicritical_asymptotics(_ray(n), "u2", np.logspace(2, 6, 9))
    assert abs(fit.slope - fit.expected) <= 0.05 * fit.expected
    assert fit.checks["accumulates"]


def test_multiplier_period_two_slope():
    fit = unicritical_asymptotics(_ray(2, m=2), "multiplier", np.logspace(2, 6, 9))
    assert fit.expected == 1.0
    assert abs(fit.slope - 1.0) <= 0.05


def test_ray_relations_are_zeros():
    ray = _ray(2)
    fit = unicritical_asymptotics(ray, "v2", np.logspace(2, 4, 3))
    from skewlab.misiurewicz_lab import _ray_slice

    for t, lam in zip(np.logspace(2, 4, 3), fit.params):
        f = _ray_slice(ray, 0).instantiate([0])
        a = P(list(lam))
        c = 0j
        z, w = ray.z0, c
        for _ in range(ray.n):
            z, w = z * z - 1, w * w + a(z)
        # lands on a fixed point of w^2 + a(z1)
        assert abs(w * w + a(ray.z1) - w) < 1e-7 * abs(w) ** 2
