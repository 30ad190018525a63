"""Command-line front end: configuration, experiments and bit-stable artifacts."""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bifurcation_fields import FieldConfig, GridField, ddc_mass, potential_field, support_inclusion, support_threshold, wedge_mass_2
from .measures_lyapunov import SamplerConfig, lyapunov_p_detail, lyapunov_vertical
from .misiurewicz_lab import (
    ASYMPTOTIC_QUANTITIES,
    HypothesisViolated,
    LostRepelling,
    PersistentRelation,
    SearchExhausted,
    UnicriticalRay,
    goodness_audit,
    independence_rank,
    make_orbit,
    relation_residual,
    second_relation_search,
    solve_misiurewicz,
    unicritical_asymptotics,
)
from .poly_core import NonConvergence, Polynomial, roots
from .skew_dynamics import Bivariate, GreenConfig, ParameterSlice, SkewProduct
from .vertical_ifs import NonVerticalLike, RootAmbiguity, audit_V123

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EXHAUSTED = 0, 2, 3, 4
COMMANDS = ("render", "lyap", "mis-search", "second-relation", "asymptotics", "ifs-audit", "equality-experiment")
PRESETS = ("unicritical", "degenerate", "audit", "custom")
NUMERIC_ERRORS = (NonConvergence, PersistentRelation, LostRepelling, RootAmbiguity, NonVerticalLike, HypothesisViolated, ArithmeticError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class FamilySpec:
    preset: str = "unicritical"
    base: str = "-1, 0, 1"
    fiber: str = ""  # rows of z-coefficients per power of w, separated by ';'
    directions: str = ""  # directions in the fiber format, separated by '/'
    lam: str = ""


@dataclass
class GridSpec:
    windows: str = ""  # re_min, re_max, im_min, im_max per complex axis, separated by ';'
    resolution: int = 16
    kind: str = "Lv"
    test_potential: str = ""
    half_width: float = 1.0
    z: str = ""


@dataclass
class SamplerSpec:
    n_samples: int = 64
    depth: int = 40
    seed: int = 0
    burn_in: int = 0


@dataclass
class GreenSpec:
    max_iter: int = 200
    escape_radius: float = 10.0
    extra_iter: int = 3


@dataclass
class Tolerances:
    newton: float = 1e-12
    residual: float = 1e-10
    rank: float = 1e-6
    support_factor: float = 1e-3
    inclusion_radius: int = 2


@dataclass
class RelationSpec:
    z0: str = ""
    n0: int = 0
    critical_index: int = 0
    z1: str = ""
    w1: str = ""
    m: int = 1
    lam_init: str = ""


@dataclass
class SearchSpec:
    eps: float = 8.0
    k_min: int = 0
    k_max: int = 12


@dataclass
class AsymptoticsSpec:
    quantity: str = "u2"
    base: str = "-1, 0, 1"
    lam_inf: str = ""
    z0: str = ""
    n: int = 2
    m: int = 1
    mag_min: float = 1e2
    mag_max: float = 1e6
    count: int = 9


@dataclass
class OutputSpec:
    dir: str = "out"


@dataclass
class ExperimentConfig:
    command: str = "lyap"
    family: FamilySpec = field(default_factory=FamilySpec)
    grid: GridSpec = field(default_factory=GridSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    green: GreenSpec = field(default_factory=GreenSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    relation: RelationSpec = field(default_factory=RelationSpec)
    search: SearchSpec = field(default_factory=SearchSpec)
    asymptotics: AsymptoticsSpec = field(default_factory=AsymptoticsSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.family.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.family.preset!r}")
        for f in fields(Tolerances):
            if not getattr(self.tolerances, f.name) > 0:
                raise ConfigError(f"tolerance {f.name} must be positive")
        if self.grid.resolution < 3:
            raise ConfigError("resolution must be >= 3")
        if self.asymptotics.quantity not in ASYMPTOTIC_QUANTITIES:
            raise ConfigError(f"unknown quantity {self.asymptotics.quantity!r}")
        if self.search.k_max < self.search.k_min or self.search.k_min < 0:
            raise ConfigError("need 0 <= k_min <= k_max")
        if self.search.eps <= 0:
            raise ConfigError("search eps must be positive")
        return self

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {"command": self.command}
        for f in fields(self):
            sec = getattr(self, f.name)
            if is_dataclass(sec):
                cp[f.name] = {g.name: _fmt(getattr(sec, g.name)) for g in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls()
        known = {f.name for f in fields(cls)} | {"experiment"}
        for name in cp.sections():
            if name not in known:
                raise ConfigError(f"unknown section [{name}]")
        if cp.has_section("experiment"):
            cfg.command = cp["experiment"].get("command", cfg.command).strip()
        for f in fields(cls):
            sec = getattr(cfg, f.name)
            if not is_dataclass(sec) or not cp.has_section(f.name):
                continue
            types = {g.name: type(getattr(sec, g.name)) for g in fields(sec)}
            for key, raw in cp[f.name].items():
                if key not in types:
                    raise ConfigError(f"unknown key {f.name}.{key}")
                setattr(sec, key, _parse(types[key], raw, f"{f.name}.{key}"))
        return cfg.validate()

    def digest(self) -> str:
        """Hash of everything except the output location."""
        text = self.to_ini()
        text = text[: text.index("[output]")]
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse(tp, raw: str, key: str):
    raw = raw.strip()
    try:
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def complex_list(text: str, key: str = "") -> list[complex]:
    text = text.strip()
    if not text:
        return []
    try:
        return [complex(x.strip().replace(" ", "")) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: bad complex list {text!r}") from exc


def _bivariate(text: str, key: str) -> Bivariate:
    rows = [complex_list(r, key) or [0j] for r in text.split(";")]
    return Bivariate([Polynomial(r) for r in rows])


def parse_windows(text: str) -> tuple:
    out = []
    for part in text.split(";"):
        vals = [float(x) for x in part.split(",")]
        if len(vals) != 4 or vals[0] >= vals[1] or vals[2] >= vals[3]:
            raise ConfigError(f"bad window {part!r}")
        out.append(tuple(vals))
    return tuple(out)


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


def build_family(cfg: ExperimentConfig):
    """(slice, setup or None) for the configured family."""
    from . import presets

    fam = cfg.family
    if fam.preset == "unicritical":
        st = presets.unicritical_setup(solve=False)
        return st.slice, st
    if fam.preset == "degenerate":
        st = presets.degenerate_setup(solve=False)
        return st.slice, st
    if fam.preset == "audit":
        st = presets.audit_setup()
        return st.slice, st
    p = Polynomial(complex_list(fam.base, "family.base"))
    if not fam.fiber:
        raise ConfigError("custom family needs family.fiber")
    try:
        f = SkewProduct(p, _bivariate(fam.fiber, "family.fiber"))
        dirs = tuple(_bivariate(d, "family.directions") for d in fam.directions.split("/")) if fam.directions.strip() else ()
        return ParameterSlice(f, dirs), None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _lam(cfg: ExperimentConfig, s: ParameterSlice) -> list[complex]:
    lam = complex_list(cfg.family.lam, "family.lam") or [0j] * s.dim
    if len(lam) != s.dim:
        raise ConfigError(f"family.lam needs {s.dim} entries")
    return lam


def _field_cfg(cfg: ExperimentConfig) -> FieldConfig:
    sc = cfg.sampler
    g = cfg.green
    z = complex_list(cfg.grid.z, "grid.z")
    return FieldConfig(
        sampler=SamplerConfig(n_samples=sc.n_samples, depth=sc.depth, seed=sc.seed, burn_in=sc.burn_in),
        green=GreenConfig(g.max_iter, g.escape_radius, g.extra_iter),
        z=z[0] if z else None,
    )


TEST_POTENTIALS = {
    "re_lam_sq": lambda lams: np.real(lams[0] ** 2),
    "abs_sq": lambda lams: sum(np.abs(l) ** 2 for l in lams),
    "wedge_product": lambda lams: np.abs(lams[0]) ** 2 + np.abs(lams[1]) ** 2 if len(lams) > 1 else np.abs(lams[0]) ** 2,
}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def to_jsonable(x):
    if is_dataclass(x) and not isinstance(x, type):
        return to_jsonable(x.to_dict() if hasattr(x, "to_dict") else asdict(x))
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [to_jsonable(float(x.real)), to_jsonable(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if x is None or isinstance(x, str):
        return x
    return str(x)


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "version": __version__, "tolerances": asdict(cfg.tolerances), "command": cfg.command}


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence], cfg: ExperimentConfig) -> None:
    prov = provenance(cfg)
    tol = json.dumps(prov["tolerances"], sort_keys=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(list(header) + ["config_hash", "version", "tolerances"])
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r] + [prov["config_hash"], prov["version"], tol])
    path.write_bytes(buf.getvalue().encode())


def _scale16(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    fin = np.isfinite(a)
    out = np.zeros(a.shape, dtype=">u2")
    if fin.any():
        lo, hi = float(a[fin].min()), float(a[fin].max())
        span = hi - lo if hi > lo else 1.0
        out[fin] = np.round((a[fin] - lo) / span * 65535).astype(">u2")
    return out


def write_pgm16(path: Path, a: np.ndarray, cfg: ExperimentConfig, note: str = "") -> None:
    """16-bit binary PGM, first array axis drawn top to bottom."""
    data = _scale16(a)
    h, w = data.shape
    a = np.asarray(a, dtype=float)
    fin = a[np.isfinite(a)]
    lo, hi = (float(fin.min()), float(fin.max())) if fin.size else (0.0, 0.0)
    head = f"P5\n# {json.dumps(provenance(cfg), sort_keys=True)}\n# range {lo!r} {hi!r} {note}\n{w} {h}\n65535\n"
    path.write_bytes(head.encode() + data.tobytes())


def palette(a: np.ndarray) -> np.ndarray:
    """Map a field to 8-bit RGB (dark blue through yellow); NaN is black."""
    t = _scale16(a).astype(float) / 65535
    rgb = np.stack([np.clip(1.5 * t - 0.2, 0, 1), np.clip(1.4 * t, 0, 1) ** 1.5, np.clip(0.6 - t, 0, 1) + 0.2 * t], axis=-1)
    rgb[~np.isfinite(np.asarray(a, dtype=float))] = 0
    return np.round(rgb * 255).astype(np.uint8)


def write_ppm(path: Path, rgb: np.ndarray, cfg: ExperimentConfig) -> None:
    h, w, _ = rgb.shape
    head = f"P6\n# {json.dumps(provenance(cfg), sort_keys=True)}\n{w} {h}\n255\n"
    path.write_bytes(head.encode() + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def _image(field: GridField) -> np.ndarray:
    """dim 1: the grid itself (imaginary axis down). dim 2: max over the second parameter."""
    v = np.asarray(field.values, dtype=float)
    if field.dim == 1:
        return v[::-1]
    with np.errstate(all="ignore"):
        m = np.where(np.isfinite(v), v, -np.inf).max(axis=(2, 3))
    m[~np.isfinite(m)] = np.nan
    return m.T[::-1]


def _write_field(out: Path, stem: str, field: GridField, cfg: ExperimentConfig) -> dict:
    write_pgm16(out / f"{stem}.pgm", _image(field), cfg, stem)
    write_ppm(out / f"{stem}.ppm", palette(_image(field)), cfg)
    axes = field.axes()
    idx = np.indices(field.values.shape).reshape(field.values.ndim, -1).T
    header = ["im", "re"] if field.dim == 1 else ["re1", "im1", "re2", "im2"]
    rows = [[float(axes[k][i[k]]) for k in range(len(i))] + [float(field.values[tuple(i)])] for i in idx]
    write_csv(out / f"{stem}.csv", header + ["value"], rows, cfg)
    return {"total": field.total(), "files": [f"{stem}.pgm", f"{stem}.ppm", f"{stem}.csv"]}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _windows(cfg: ExperimentConfig, dim: int, center: Sequence[complex] | None = None) -> tuple:
    if cfg.grid.windows.strip():
        w = parse_windows(cfg.grid.windows)
    else:
        c = list(center) if center is not None else [0j] * dim
        h = cfg.grid.half_width
        w = tuple((x.real - h, x.real + h, x.imag - h, x.imag + h) for x in c)
    if len(w) != dim:
        raise ConfigError(f"need {dim} windows, got {len(w)}")
    return w


def cmd_render(cfg: ExperimentConfig, out: Path) -> dict:
    s, _ = build_family(cfg)
    fc = _field_cfg(cfg)
    if cfg.grid.test_potential:
        fn = TEST_POTENTIALS.get(cfg.grid.test_potential)
        if fn is None:
            raise ConfigError(f"unknown test potential {cfg.grid.test_potential!r}")
        dim = len(parse_windows(cfg.grid.windows)) if cfg.grid.windows.strip() else s.dim
        fld = potential_field(None, _windows(cfg, dim), cfg.grid.resolution, "custom", fc, func=fn)
    else:
        fld = potential_field(s, _windows(cfg, s.dim, _lam(cfg, s)), cfg.grid.resolution, cfg.grid.kind, fc)
    mass = ddc_mass(fld) if fld.dim == 1 else wedge_mass_2(fld, fld)
    res = {"potential": _write_field(out, "potential", fld, cfg), "mass": _write_field(out, "mass", mass, cfg)}
    res["mass"]["abs_total"] = float(np.nansum(np.abs(mass.values)))
    res["undecided"] = fld.meta.get("undecided", 0)
    res["dim"] = fld.dim
    return res


def cmd_lyap(cfg: ExperimentConfig, out: Path) -> dict:
    s, _ = build_family(cfg)
    fc = _field_cfg(cfg)
    f = s.instantiate(_lam(cfg, s))
    lp, und_p = lyapunov_p_detail(f.base, fc.green)
    est = lyapunov_vertical(f, fc.sampler, fc.green)
    return {"L_p": lp, "L_v": est.value, "SE": est.stderr, "undecided_count": est.undecided + und_p}


def _relation_from_config(cfg: ExperimentConfig, s: ParameterSlice, setup):
    r = cfg.relation
    lam0 = complex_list(r.lam_init, "relation.lam_init") or [0j] * s.dim
    if setup is not None and not r.z0:
        if setup.relation is None:
            from . import presets

            setup = presets.unicritical_setup() if cfg.family.preset == "unicritical" else presets.degenerate_setup()
        rel = setup.relation
        if not r.lam_init:
            return rel
        return solve_misiurewicz(s, rel.z0, rel.c0, rel.n0, rel.target, lam0, tol=cfg.tolerances.newton)
    z0 = complex_list(r.z0, "relation.z0")
    z1 = complex_list(r.z1, "relation.z1")
    w1 = complex_list(r.w1, "relation.w1")
    if not (z0 and z1 and w1 and r.n0 > 0):
        raise ConfigError("relation needs z0, n0 > 0, z1 and w1")
    f = s.instantiate(lam0)
    target = make_orbit(f, z1[0], w1[0], r.m, tuple(lam0))
    return solve_misiurewicz(s, z0[0], r.critical_index, r.n0, target, lam0, tol=cfg.tolerances.newton)


def cmd_mis_search(cfg: ExperimentConfig, out: Path) -> dict:
    s, setup = build_family(cfg)
    if s.dim == 0:
        raise ConfigError("mis-search needs a slice of dimension >= 1")
    rel = _relation_from_config(cfg, s, setup)
    rep = goodness_audit(s, rel)
    check = relation_residual(s, rel)
    return {"relation": rel, "goodness": rep, "good": rep.good, "generic": rep.generic, "recheck_residual": abs(complex(check.value))}


def _search_ks(cfg: ExperimentConfig) -> range:
    return range(cfg.search.k_min, cfg.search.k_max + 1)


def second_relation_pair(cfg: ExperimentConfig) -> dict:
    """Pair certificate on the configured family, or a dependence report."""
    from . import presets

    tol = cfg.tolerances
    if cfg.family.preset == "degenerate":
        st = presets.degenerate_setup(solve=False)
        report = []
        for rel in presets.degenerate_seed_relations(st):
            try:
                new = second_relation_search(
                    st.slice, rel, st.system, eps=cfg.search.eps, ks=_search_ks(cfg), tol=tol.residual, rank_tol=tol.rank, require_good=False
                )
                r, smin, _ = independence_rank(st.slice, [rel, new], new.lam_star, tol.rank)
                report.append({"z0": rel.z0, "n0": rel.n0, "outcome": "found", "rank": r, "sigma_min": smin})
            except SearchExhausted as exc:
                tried = exc.diagnostic["tried"]
                sig = [t["sigma_min"] for t in tried if "sigma_min" in t]
                report.append({"z0": rel.z0, "n0": rel.n0, "outcome": "exhausted", "max_sigma_min": max(sig) if sig else None, "tried": tried})
        return {"family": "degenerate", "seeds": report, "rank2_found": any(x["outcome"] == "found" and x["rank"] == 2 for x in report)}
    if cfg.family.preset != "unicritical":
        raise ConfigError("second-relation supports the unicritical and degenerate presets")
    st = presets.unicritical_setup()
    new = second_relation_search(st.slice, st.relation, st.system, eps=cfg.search.eps, ks=_search_ks(cfg), tol=tol.residual, rank_tol=tol.rank)
    r, smin, J = independence_rank(st.slice, [st.relation, new], new.lam_star, tol.rank)
    return {
        "family": "unicritical",
        "relations": [st.relation, new],
        "lam": new.lam_star,
        "rank": r,
        "sigma_min": smin,
        "jacobian": J,
        "residuals": [abs(complex(relation_residual(st.slice, x, new.lam_star).value)) for x in (st.relation, new)],
        "goodness": [goodness_audit(st.slice, st.relation), goodness_audit(st.slice, new)],
    }


def cmd_second_relation(cfg: ExperimentConfig, out: Path) -> dict:
    res = second_relation_pair(cfg)
    if res["family"] == "degenerate" and not res["rank2_found"]:
        raise SearchExhausted("no rank-2 pair on the degenerate family", res)
    return res


def _default_z0(p: Polynomial, n: int) -> complex:
    """A point with p^n(z0) on the most repelling fixed point, off its cycle."""
    fixed = np.array(roots(p - Polynomial([0, 1])), dtype=complex)
    z1 = complex(fixed[int(np.argmax(np.abs([complex(p.derivative()(x)) for x in fixed])))])
    z = z1
    for k in range(n):
        pre = np.array(roots(Polynomial([p.coeffs[0] - z] + list(p.coeffs[1:]))), dtype=complex)
        z = complex(pre[int(np.argmax(np.abs(pre - z1)))]) if k == 0 else complex(pre[0])
    return z


def asymptotics_ray(cfg: ExperimentConfig) -> UnicriticalRay:
    a = cfg.asymptotics
    p = Polynomial(complex_list(a.base, "asymptotics.base"))
    d = p.degree
    z0s = complex_list(a.z0, "asymptotics.z0")
    if a.quantity == "fiber_modulus":
        z0 = z0s[0] if z0s else _default_z0(p, 0)
        lam = complex_list(a.lam_inf, "asymptotics.lam_inf") or [1.0] + [0.5] * (d - 1) + [1.0]
    else:
        z0 = z0s[0] if z0s else _default_z0(p, a.n)
        # default direction: a_inf(z) = (z - z0)(z - 3)^(d - 1), vanishing at z0 only
        poly = Polynomial([-z0, 1])
        for _ in range(d - 1):
            poly = poly * Polynomial([-3, 1])
        lam = complex_list(a.lam_inf, "asymptotics.lam_inf") or [complex(c) for c in poly.coeffs]
    return UnicriticalRay(p, tuple(lam), z0, a.n, a.m)


def cmd_asymptotics(cfg: ExperimentConfig, out: Path) -> dict:
    a = cfg.asymptotics
    ray = asymptotics_ray(cfg)
    mags = np.logspace(math.log10(a.mag_min), math.log10(a.mag_max), a.count)
    sc = cfg.sampler
    fit = unicritical_asymptotics(ray, a.quantity, mags, SamplerConfig(n_samples=sc.n_samples, depth=sc.depth, seed=sc.seed))
    write_csv(out / "asymptotics.csv", ["lam_norm", a.quantity], list(zip(fit.magnitudes, fit.values)), cfg)
    return {"fit": fit, "ray": {"lam_inf": ray.lam_inf, "z0": ray.z0, "n": ray.n, "m": ray.m}, "files": ["asymptotics.csv"]}


def cmd_ifs_audit(cfg: ExperimentConfig, out: Path) -> dict:
    _, setup = build_family(cfg)
    if setup is None:
        raise ConfigError("ifs-audit needs a preset family")
    rep = audit_V123(setup.system, seed=cfg.sampler.seed)
    return {"audit": rep, "system": setup.system.to_dict()}


def cmd_equality_experiment(cfg: ExperimentConfig, out: Path) -> dict:
    """Discrete supports of dd^c L_v and of its wedge square, with rank-2 certificates."""
    if cfg.family.preset != "unicritical":
        raise ConfigError("equality-experiment runs on the unicritical preset")
    pair = second_relation_pair(cfg)
    certs = [pair["lam"]] if pair["rank"] == 2 else []
    s, _ = build_family(cfg)
    fc = _field_cfg(cfg)
    fld = potential_field(s, _windows(cfg, 2, certs[0] if certs else None), cfg.grid.resolution, "Lv", fc)
    ddc = ddc_mass(fld)
    wedge = wedge_mass_2(fld, fld)
    sm = ddc.support(support_threshold(ddc, cfg.tolerances.support_factor))
    sw = wedge.support(support_threshold(wedge, cfg.tolerances.support_factor))
    ok, bad = support_inclusion(sw, sm, cfg.tolerances.inclusion_radius)
    axes = fld.axes()
    cells = []
    for lam in certs:
        coords = [lam[0].real, lam[0].imag, lam[1].real, lam[1].imag]
        inside = all(a[0] <= c <= a[-1] for a, c in zip(axes, coords))
        idx = tuple(int(np.argmin(np.abs(a - c))) for a, c in zip(axes, coords))
        cells.append({"lam": lam, "cell": idx, "in_window": inside, "in_ddc_support": bool(inside and sm[idx])})
    files = {"ddc": _write_field(out, "ddc", ddc, cfg), "wedge": _write_field(out, "wedge", wedge, cfg)}
    overlay = np.zeros(_image(ddc).shape + (3,), dtype=np.uint8)
    overlay[..., 0] = np.where(sm.any(axis=(2, 3)).T[::-1], 200, 0)
    overlay[..., 1] = np.where(sw.any(axis=(2, 3)).T[::-1], 200, 0)
    n = overlay.shape[0]
    for c in cells:
        if c["in_window"]:
            i, j = c["cell"][0], c["cell"][1]
            overlay[n - 1 - j, i] = (255, 255, 255)
    write_ppm(out / "overlay.ppm", overlay, cfg)
    return {
        "statement": "consistency check of discrete supports on a finite grid; not a reproduction of any proof",
        "windows": fld.windows,
        "resolution": fld.resolution,
        "ddc_support_cells": int(sm.sum()),
        "wedge_support_cells": int(sw.sum()),
        "wedge_within_radius_of_ddc": ok,
        "offending_cells": bad,
        "inclusion_radius": cfg.tolerances.inclusion_radius,
        "certificates": cells,
        "certificate_in_support": any(c["in_ddc_support"] for c in cells),
        "undecided": fld.meta.get("undecided", 0),
        "sigma_min": pair["sigma_min"],
        "files": {**files, "overlay": ["overlay.ppm"]},
    }


HANDLERS = {
    "render": cmd_render,
    "lyap": cmd_lyap,
    "mis-search": cmd_mis_search,
    "second-relation": cmd_second_relation,
    "asymptotics": cmd_asymptotics,
    "ifs-audit": cmd_ifs_audit,
    "equality-experiment": cmd_equality_experiment,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def load_config(path: str | None, command: str) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = ExperimentConfig.from_ini(text)
    cfg.command = command
    return cfg


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.window is not None:
        parse_windows(args.window)
        cfg.grid.windows = args.window
    if args.res is not None:
        cfg.grid.resolution = args.res
    if args.seed is not None:
        cfg.sampler.seed = args.seed
    if args.out is not None:
        cfg.output.dir = args.out
    return cfg.validate()


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    status, body = EXIT_OK, {}
    try:
        body = {"result": HANDLERS[cfg.command](cfg, out), "status": "ok"}
    except ConfigError as exc:
        status, body = EXIT_CONFIG, {"status": "config error", "error": str(exc)}
    except SearchExhausted as exc:
        status, body = EXIT_EXHAUSTED, {"status": "search exhausted", "error": str(exc), "diagnostic": exc.diagnostic}
    except NUMERIC_ERRORS as exc:
        status, body = EXIT_NUMERIC, {"status": "numerical failure", "error": f"{type(exc).__name__}: {exc}"}
    body["meta"] = provenance(cfg)
    (out / f"{cfg.command}.json").write_text(dumps(body))
    return status, body


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skewlab", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI file with [family], [grid], [sampler], ... sections")
    ap.add_argument("--window", help="re_min,re_max,im_min,im_max per complex axis, ';' between axes")
    ap.add_argument("--res", type=int, help="grid points per real axis")
    ap.add_argument("--seed", type=int, help="sampler seed")
    ap.add_argument("--out", help="output directory")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config, args.command), args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, body = run(cfg)
    print(json.dumps({"status": body["status"], "exit": status, "out": cfg.output.dir, "config_hash": body["meta"]["config_hash"]}, sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
