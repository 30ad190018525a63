import json
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skewlab.cli_runner import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    complex_list,
    dumps,
    main,
    palette,
    parse_windows,
    write_pgm16,
)

text = st.text(alphabet="abcxyz0123456789.,-+ j", max_size=20).map(str.strip)


@given(
    st.sampled_from(["lyap", "render", "asymptotics"]),
    st.integers(3, 300),
    st.integers(0, 2**31),
    st.floats(1e-15, 1.0),
    st.floats(0.1, 50),
    text,
)
def test_config_round_trip(cmd, res, seed, tol, eps, windows):
    cfg = ExperimentConfig(command=cmd)
    cfg.grid.resolution = res
    cfg.sampler.seed = seed
    cfg.tolerances.rank = tol
    cfg.search.eps = eps
    cfg.family.lam = windows
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[tolerances]\nrank = 0\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[grid]\nnope = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[grid]\nresolution = many\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[asymptotics]\nquantity = speed\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[search]\nk_min = 5\nk_max = 2\n")


def test_parsers():
    assert complex_list("1, -2+3j, 0.5j") == [1, -2 + 3j, 0.5j]
    assert complex_list(" ") == []
    with pytest.raises(ConfigError):
        complex_list("1, x")
    assert parse_windows("-1,1,-2,2;0,1,0,1") == ((-1, 1, -2, 2), (0, 1, 0, 1))
    with pytest.raises(ConfigError):
        parse_windows("1,0,0,1")


def test_json_is_canonical():
    s = dumps({"b": 1 + 2j, "a": np.float64(0.5), "c": [np.int64(3), float("nan")]})
    assert json.loads(s) == {"a": 0.5, "b": [1.0, 2.0], "c": [3, "nan"]}
    assert s.index('"a"') < s.index('"b"')


def test_pgm16_format(tmp_path):
    cfg = ExperimentConfig()
    a = np.array([[0.0, 1.0], [2.0, np.nan]])
    write_pgm16(tmp_path / "x.pgm", a, cfg)
    raw = (tmp_path / "x.pgm").read_bytes()
    head = raw[: raw.index(b"65535\n") + 6].decode()
    assert head.startswith("P5\n#") and cfg.digest() in head
    assert re.search(r"\n2 2\n65535\n$", head)
    data = np.frombuffer(raw[len(head) :], dtype=">u2").reshape(2, 2)
    assert data[0, 0] == 0 and data[1, 0] == 65535 and data[1, 1] == 0
    assert palette(a).shape == (2, 2, 3)


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_lyap_command(tmp_path):
    code, out = _run(tmp_path, "l", "lyap")
    assert code == EXIT_OK
    body = json.loads((out / "lyap.json").read_text())
    assert body["result"]["L_p"] == pytest.approx(np.log(2), abs=1e-8)
    assert body["meta"]["config_hash"] == ExperimentConfig.from_ini((out / "config.ini").read_text()).digest()
    assert set(body["meta"]) >= {"version", "tolerances", "config_hash"}


def test_config_error_exit(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[tolerances]\nnewton = -1\n")
    assert main(["lyap", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["lyap", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["render", "--window", "2,1,0,1", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_render_test_potential_has_zero_mass(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[grid]\ntest_potential = re_lam_sq\nwindows = -1,1,-1,1\nresolution = 24\n")
    code, out = _run(tmp_path, "r", "render", "--config", str(cfg))
    assert code == EXIT_OK
    res = json.loads((out / "render.json").read_text())["result"]
    assert res["mass"]["abs_total"] < 1e-9
    rows = (out / "mass.csv").read_text().splitlines()
    assert rows[0] == "im,re,value,config_hash,version,tolerances"
    assert len(rows) == 1 + 24 * 24


def test_render_unknown_test_potential(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[grid]\ntest_potential = nope\nwindows = -1,1,-1,1\n")
    code, out = _run(tmp_path, "r", "render", "--config", str(cfg))
    assert code == EXIT_CONFIG
    assert json.loads((out / "render.json").read_text())["status"] == "config error"


def test_numerical_failure_exit(tmp_path):
    cfg = tmp_path / "c.ini"
    # a ray whose a_inf vanishes at z0 is invalid for fiber_modulus
    cfg.write_text("[asymptotics]\nquantity = fiber_modulus\nlam_inf = 0, 0, 1\nz0 = 0\n")
    code, out = _run(tmp_path, "a", "asymptotics", "--config", str(cfg))
    assert code == 3
    body = json.loads((out / "asymptotics.json").read_text())
    assert "HypothesisViolated" in body["error"]


@pytest.mark.parametrize("cmd", ["lyap", "mis-search", "ifs-audit", "asymptotics"])
def test_commands_are_deterministic(tmp_path, cmd):
    _, out = _run(tmp_path, "a", cmd, "--seed", "3")
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    _, out = _run(tmp_path, "a", cmd, "--seed", "3")
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_hash_ignores_output_location():
    a, b = ExperimentConfig(), ExperimentConfig()
    b.output.dir = "elsewhere"
    assert a.digest() == b.digest()
    b.sampler.seed = 1
    assert a.digest() != b.digest()
