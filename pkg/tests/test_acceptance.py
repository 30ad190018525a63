"""Acceptance suite: one test per criterion; verdicts are summarized at the end of the run."""

import cmath
import json
import math
import time

import numpy as np
import pytest

from skewlab.bifurcation_fields import FieldConfig, ddc_mass, potential_field, wedge_mass_2
from skewlab.cli_runner import COMMANDS, ExperimentConfig, run
from skewlab.measures_lyapunov import SamplerConfig, lyapunov_p, lyapunov_vertical
from skewlab.misiurewicz_lab import (
    HypothesisViolated,
    SearchExhausted,
    UnicriticalRay,
    composition_injective,
    critical_points_at,
    eigen_lines,
    goodness_audit,
    independence_rank,
    line_angle,
    make_orbit,
    multiplier_jet,
    phi_derivative_growth,
    postcritical_tangent,
    relation_residual,
    second_relation_search,
    solve_misiurewicz,
    track_w1,
    unicritical_asymptotics,
)
from skewlab.poly_core import Polynomial
from skewlab.presets import (
    BETA,
    GROWTH_KS,
    SEARCH_EPS,
    audit_setup,
    degenerate_seed_relations,
    degenerate_setup,
    unicritical_setup,
)
from skewlab.skew_dynamics import iterate, orbit_jacobian, product_map, unicritical_slice
from skewlab.vertical_ifs import LIMIT_GREEN_TOL, audit_V123, limit_green, limit_points, periodic_in_limit

P = Polynomial
LOG2 = math.log(2)
MAGS = np.logspace(2, 6, 9)
Z0_N2 = cmath.sqrt(1 - BETA)
Z0_N3 = cmath.sqrt(1 + cmath.sqrt(1 - BETA))


def ray(n: int, m: int = 1) -> UnicriticalRay:
    """a_inf(z) = (z - z0)(z - 3): vanishes at z0 only, so the ray is generic."""
    z0 = Z0_N2 if n == 2 else Z0_N3
    return UnicriticalRay(P([-1, 0, 1]), (3 * z0, -(z0 + 3), 1), z0, n, m)


def test_criterion_1_closed_form_lyapunov(detail):
    t = time.perf_counter()
    est = lyapunov_vertical(product_map(P([-1, 0, 1]), P([0, 0, 1])), SamplerConfig(n_samples=2048, seed=0))
    lp = [lyapunov_p(P([0, 0, 1])), lyapunov_p(P([-2, 0, 1]))]
    el = time.perf_counter() - t
    detail(f"L_v={est.value:.6f} (SE {est.stderr:.1e}), L_p={lp[0]:.10f},{lp[1]:.10f}, {el:.1f}s")
    assert abs(est.value - LOG2) < 1e-3 and math.isfinite(est.stderr)
    assert all(abs(x - LOG2) < 1e-8 for x in lp)
    assert el < 10


def test_criterion_2_fiber_modulus_exponent(detail):
    t = time.perf_counter()
    fit = unicritical_asymptotics(UnicriticalRay(P([-1, 0, 1]), (1, 0.5, 1), BETA, 0), "fiber_modulus", MAGS)
    el = time.perf_counter() - t
    detail(f"slope {fit.slope:.4f} vs 0.5, {el:.1f}s")
    assert abs(fit.slope - 0.5) <= 0.05
    assert el < 60


def test_criterion_3_u2_v2_exponents(detail):
    t = time.perf_counter()
    u = {n: unicritical_asymptotics(ray(n), "u2", MAGS) for n in (2, 3)}
    v = {n: unicritical_asymptotics(ray(n), "v2", MAGS) for n in (2, 3)}
    el = time.perf_counter() - t
    detail(
        "u2 slopes " + ", ".join(f"n={n}: {u[n].slope:.4f}/{u[n].expected}" for n in u)
        + "; v2 slopes " + ", ".join(f"{v[n].slope:.4f}" for n in v) + f", {el:.1f}s"
    )
    for n in (2, 3):
        assert abs(u[n].slope - u[n].expected) <= 0.05 * u[n].expected
        assert v[n].slope <= 0.5 + 0.05
    assert el < 60


def test_criterion_4_multiplier_exponent(detail):
    fits = {m: unicritical_asymptotics(ray(2, m), "multiplier", MAGS) for m in (1, 2)}
    detail(", ".join(f"m={m}: {f.slope:.4f}/{f.expected}" for m, f in fits.items()))
    for f in fits.values():
        assert abs(f.slope - f.expected) <= 0.05 * f.expected


def test_criterion_5_phi_derivative_growth(detail):
    st = unicritical_setup()
    g = phi_derivative_growth(st.slice, st.relation, st.system, ks=GROWTH_KS)
    detail(f"slope {g['slope']:.3f} over k={GROWTH_KS[0]}..{GROWTH_KS[-1]}, m_k {g['rows'][0]['m_k']}..{g['rows'][-1]['m_k']}")
    assert [r["k"] for r in g["rows"]] == list(range(4, 13))
    assert abs(g["slope"] - 1.0) <= 0.2


def test_criterion_6_misiurewicz_solver(detail):
    t = time.perf_counter()
    s = unicritical_slice(P([-1, 0, 1]), [0], [[1]])
    start = -1.9
    w1 = (1 + cmath.sqrt(1 - 4 * start)) / 2
    rel = solve_misiurewicz(s, -BETA, 0, 2, make_orbit(s.instantiate([start]), BETA, w1, 1, (start,)), [start])
    err = abs(rel.lam_star[0] + 2)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        a0 = list(rng.normal(size=3) * 0.5 + 1j * rng.normal(size=3) * 0.5)
        s2 = unicritical_slice(P([-1, 0, 1]), a0, [list(rng.normal(size=2) + 1j * rng.normal(size=2)), list(rng.normal(size=3))])
        lam = np.array(rng.normal(size=2) * 0.3 + 1j * rng.normal(size=2) * 0.3)
        f = s2.instantiate(lam)
        from skewlab.misiurewicz_lab import MisiurewiczRelation, periodic_points_fiber

        w = max(periodic_points_fiber(f, BETA, 1), key=lambda o: abs(o.B)).w1
        r = MisiurewiczRelation(Z0_N2, critical_points_at(f, Z0_N2)[0], 2, make_orbit(f, BETA, w, 1, tuple(lam)), tuple(lam), float("nan"))
        F = relation_residual(s2, r, lam)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2, complex)
            e[k] = h
            fd = (relation_residual(s2, r, lam + e).value - relation_residual(s2, r, lam - e).value) / (2 * h)
            worst = max(worst, abs(F.partials[k] - fd) / (1 + abs(fd)))
    el = time.perf_counter() - t
    detail(f"|lam+2|={err:.1e}, worst relative Jacobian error {worst:.1e} over 50 instances, {el:.1f}s")
    assert err < 1e-10
    assert worst < 1e-5
    assert el < 30


def test_criterion_7_independence_pipeline(detail):
    t = time.perf_counter()
    st = unicritical_setup()
    new = second_relation_search(st.slice, st.relation, st.system, eps=SEARCH_EPS, ks=range(0, 4))
    rank, smin, _ = independence_rank(st.slice, [st.relation, new], new.lam_star)
    dg = degenerate_setup()
    with pytest.raises(HypothesisViolated):
        second_relation_search(dg.slice, dg.relation, dg.system, eps=SEARCH_EPS)
    sig = []
    for rel in degenerate_seed_relations(dg):
        try:
            found = second_relation_search(dg.slice, rel, dg.system, eps=SEARCH_EPS, ks=range(0, 1), require_good=False)
            sig.append(independence_rank(dg.slice, [rel, found], found.lam_star)[1])
        except SearchExhausted as exc:
            sig += [x["sigma_min"] for x in exc.diagnostic["tried"] if "sigma_min" in x]
    el = time.perf_counter() - t
    detail(f"unicritical rank {rank}, sigma_min {smin:.3g}; degenerate max sigma_min {max(sig):.1e} over {len(sig)} candidates; {el:.0f}s")
    assert rank == 2 and smin > 1e-6
    assert sig and max(sig) <= 1e-6
    assert el < 600


def test_criterion_8_goodness_audit(detail):
    st = unicritical_setup()
    rel, f, s = st.relation, st.f, st.slice
    rep = goodness_audit(s, rel)
    rep2 = goodness_audit(s, rel)
    h = 1e-6

    def crit_image(z):
        return np.array(iterate(f, z, critical_points_at(f, z)[0], rel.n0))

    fd_tan = (crit_image(rel.z0 + h) - crit_image(rel.z0 - h)) / (2 * h)
    tan_err = line_angle(fd_tan, postcritical_tangent(f, rel.z0, rel.c0, rel.n0))
    Jm = orbit_jacobian(f, rel.target.z1, rel.target.w1, rel.target.m)
    g5_fd = min(line_angle(fd_tan, v) for v in eigen_lines(Jm))
    lam = np.array(rel.lam_star)
    t = rel.target
    dB = []
    for k in range(2):
        e = np.zeros(2, complex)
        e[k] = h
        b = [multiplier_jet(s, lam + sg * e, t.z1, track_w1(s, lam + sg * e, t.z1, t.w1, t.m), t.m).value for sg in (1, -1)]
        dB.append((b[0] - b[1]) / (2 * h))
    dB_err = float(np.max(np.abs(np.array(rep.g1_dB) - dB)) / (1 + np.max(np.abs(dB))))
    ok, r, _ = composition_injective(2, 3)
    detail(f"good={rep.good} generic={rep.generic}, tangent error {tan_err:.1e}, dB error {dB_err:.1e}, injective rank {r}/3")
    assert rep.to_dict() == rep2.to_dict()
    assert rep.good and rep.generic
    assert tan_err < 1e-4 and abs(rep.g5_angle - g5_fd) < 1e-4
    assert dB_err < 1e-5
    assert ok and r == 3


def test_criterion_9_ifs_audit(detail):
    t = time.perf_counter()
    sys = audit_setup().system
    rep = audit_V123(sys)
    z, w = limit_points(sys, 12, 256, seed=0)
    g, _ = limit_green(sys, 12, z, w)
    words = [[i] for i in range(sys.m)] + [[i, j] for i in range(sys.m) for j in range(sys.m) if i != j]
    ratios = [abs(o.B) / abs(o.A) for o in (periodic_in_limit(sys, wd) for wd in words)]
    el = time.perf_counter() - t
    detail(
        f"n={sys.n}, {sys.m} branches, V1={rep['V1']} (margin {rep['cone_margin']:.3f} at alpha={sys.alpha}) V2={rep['V2']} V3={rep['V3']}, "
        f"max G {g.max():.1e}, min |B|/|A| {min(ratios):.2f} over {len(words)} words, {el:.1f}s"
    )
    assert sys.n == 2 and sys.m == 4 and sys.alpha == 0.5
    assert rep["V1"] and rep["cone_margin"] > 0 and rep["V2"] and rep["V3"]
    assert g.max() <= LIMIT_GREEN_TOL
    assert min(ratios) > 1
    assert el < 60


def test_criterion_10_field_operators(detail):
    t = time.perf_counter()
    W1 = (-1.0, 1.5, -1.2, 0.8)
    f = potential_field(None, W1, 256, "custom", FieldConfig(), func=lambda l: np.real(l[0] ** 3 + 2 * l[0] ** 2))
    harm = float(np.nanmax(np.abs(ddc_mass(f).values)))
    scale = float(np.abs(f.values).max())
    W2 = ((-1.0, 1.0, -1.0, 1.0), (-1.0, 1.0, -1.0, 1.0))
    a = potential_field(None, W2, 64, "custom", FieldConfig(), func=lambda l: np.abs(l[0]) ** 2)
    b = potential_field(None, W2, 64, "custom", FieldConfig(), func=lambda l: np.abs(l[1]) ** 2)
    wv = wedge_mass_2(a, b).values
    wv = wv[np.isfinite(wv)]
    spread = float((wv.max() - wv.min()) / wv.mean())
    s = unicritical_slice(P([-1, 0, 1]), [0, 0.3], [[1]])
    cfg = FieldConfig(sampler=SamplerConfig(n_samples=32, depth=40, seed=0))
    tot = [ddc_mass(potential_field(s, (-3, 2, -2.5, 2.5), r, "Lv", cfg)).total() for r in (128, 256)]
    el = time.perf_counter() - t
    detail(f"harmonic max {harm:.1e} (scale {scale:.1f}), wedge spread {spread:.1e}, L_v mass {tot[0]:.5f} -> {tot[1]:.5f}, {el:.0f}s")
    assert harm <= 1e-6 * scale
    assert spread <= 0.05
    assert abs(tot[1] - tot[0]) <= 0.1 * abs(tot[0])
    assert el < 300


def test_criterion_11_equality_experiment(tmp_path, detail):
    cfg = ExperimentConfig(command="equality-experiment")
    cfg.grid.resolution = 12
    cfg.output.dir = str(tmp_path)
    code, body = run(cfg)
    res = body["result"]
    detail(
        f"wedge cells {res['wedge_support_cells']} within {res['inclusion_radius']} cells of dd^c support "
        f"({res['offending_cells']} offending); certificate in support: {res['certificate_in_support']}"
    )
    assert code == 0
    assert res["wedge_within_radius_of_ddc"] and res["inclusion_radius"] == 2
    assert res["certificate_in_support"]
    assert "not a reproduction" in res["statement"]


def test_criterion_12_determinism(tmp_path, detail):
    mismatched = []
    for cmd in COMMANDS:
        cfg = ExperimentConfig(command=cmd)
        cfg.grid.resolution = 8
        cfg.output.dir = str(tmp_path / cmd)
        snaps = []
        for _ in range(2):
            code, _ = run(cfg)
            assert code == 0, cmd
            snaps.append({p.name: p.read_bytes() for p in sorted((tmp_path / cmd).iterdir())})
        if snaps[0] != snaps[1]:
            mismatched.append(cmd)
    detail(f"{len(COMMANDS) - len(mismatched)}/{len(COMMANDS)} commands bit-identical")
    assert not mismatched
