import json

import pytest

from navslip.config import ConfigError, load_config, output_dir, resolve_config, sim_params


def test_defaults_and_required():
    cfg = resolve_config({"params": {"Ra": 100}})
    assert cfg["grid"]["n2"] == 64 and cfg["params"]["Pr"] == 1.0
    assert sim_params(cfg).Ra == 100.0
    with pytest.raises(ConfigError, match="params.Ra: required key is missing"):
        resolve_config({})
    nd = resolve_config({"params": {"mode": "non_diffusive"}})
    assert nd["params"]["Ra"] == 1.0
    sw = resolve_config({"sweep": {"Ra": [1e3, 1e4]}})
    assert sw["params"]["Ra"] == 1e3


@pytest.mark.parametrize("raw, fragment", [
    ({"params": {"Ra": 1, "bogus": 1}}, "params.bogus: unknown key"),
    ({"params": {"Ra": 1}, "grid": {"n2": 4}}, "grid.n2"),
    ({"params": {"Ra": 1}, "grid": {"n1": 15}}, "grid.n1"),
    ({"params": {"Ra": 0.5}}, "params"),
    ({"params": {"Ra": 1, "slip": {"alpha": -1}}}, "params"),
    ({"params": {"Ra": 1}, "identities": {"resolutions": [4, 8]}}, "identities.resolutions"),
    ({"sweep": {"Ra": [1e4, 1e3]}}, "strictly increasing"),
    ({"sweep": {"Ra": [0.5, 1e3]}}, ">= 1"),
    ({"params": "x"}, "params: expected an object"),
])
def test_rejections(raw, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.").replace("(", r"\(")):
        resolve_config(raw)


def test_load_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "params": {"Ra": 1,}\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)
    p.write_text("[1]")
    with pytest.raises(ConfigError, match="top level"):
        load_config(p)


def test_roundtrip(tmp_path):
    cfg = resolve_config({"params": {"Ra": 1e3}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert load_config(p) == cfg


def test_output_root(monkeypatch, tmp_path):
    cfg = resolve_config({"params": {"Ra": 1}})
    monkeypatch.setenv("NAVSLIP_OUTPUT_ROOT", str(tmp_path))
    assert output_dir(cfg) == tmp_path / "output"
    assert output_dir(cfg, "/abs/x").as_posix() == "/abs/x"
