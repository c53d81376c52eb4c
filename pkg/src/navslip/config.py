"""JSON run configuration with strict validation and defaults."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .dynamics import SimParams
from .geometry import SlipSpec

OUTPUT_ROOT_ENV = "NAVSLIP_OUTPUT_ROOT"
MIN_N2 = 8


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "geometry": {"period": 2.0, "h_minus": 0.0, "h_plus": 1.0, "normalize": False},
    "grid": {"n1": 64, "n2": 64, "dealias": True},
    "params": {"Ra": None, "Pr": 1.0, "mode": "diffusive", "slip": {"alpha": 1.0}, "dt": None,
               "cfl": 0.5, "dt_max": 1e-2, "T": 1.0, "coupling": "influence", "K": 2,
               "coupling_tol": 1e-6, "coupling_max_sweeps": 50, "mean_flux": 0.0, "nu_h": 0.0,
               "seed": 0, "solver": "auto", "solver_tol": 1e-11},
    "initial": {"kind": "conduction_perturbed", "amplitude": 1e-2, "blob": None,
                "stratification": [1.0, 0.0], "snapshot": None},
    "diagnostics": {"cadence": 10, "window_fraction": 0.6, "deltas": [0.05, 0.1], "delta_bg": 0.1,
                    "reference": [1.0, 0.0], "max_principle_eps": 1e-3},
    "output": {"directory": "output", "formats": ["csv", "json"], "figures": True,
               "checkpoint": True},
    "sweep": None,
    "identities": None,
    "nd": None,
}

SWEEP_DEFAULTS: dict = {
    "Ra": [], "Pr": [1.0], "slip": [{"alpha": 1.0}], "geometry_id": "config",
    "resolution": {"policy": "ra_quarter", "factor": 8.0, "n2_min": 32, "n1_ratio": 1.0, "round_to": 8},
    "horizon": 10.0, "transient_fraction": 0.4, "seed_policy": "fixed", "exponent": 0.5,
    "fit_range": None, "rows_file": None, "bound_tol": 0.05, "workers": 1,
}

IDENTITY_DEFAULTS: dict = {
    "geometries": ["flat", "curved"], "resolutions": [64, 128, 256], "n1": 32, "fields": 20,
    "seed": 0, "alphas": [0.1, 1.0, 10.0], "ensemble": 100, "coercivity_resolutions": [32, 64],
    "min_order": 1.8, "round_off_floor": 1e-11, "corrupt_metric": False,
    "manufactured_resolutions": [32, 64, 128],
}

ND_DEFAULTS: dict = {
    "conservation_T": 5.0, "conservation_tol": 5e-3, "early_window": [0.0, 10.0],
    "late_window": [40.0, 50.0], "residual_times": [5.0, 50.0], "ratio": 0.2, "eps": None, "eps_rel": 0.05,
}

REQUIRED = {("params", "Ra")}


def _merge(defaults, given, path: str):
    if defaults is None:
        return copy.deepcopy(given)
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key")
        d = defaults[key]
        if isinstance(d, dict) and key not in ("slip",) and value is not None:
            out[key] = _merge(d, value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def read_raw(path) -> dict:
    """Parsed JSON without defaults; syntax errors carry line and column."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def load_config(path) -> dict:
    return resolve_config(read_raw(path))


def resolve_config(raw: dict) -> dict:
    cfg = _merge(DEFAULTS, raw, "")
    for section, defaults in (("sweep", SWEEP_DEFAULTS), ("identities", IDENTITY_DEFAULTS),
                              ("nd", ND_DEFAULTS)):
        if cfg[section] is not None:
            cfg[section] = _merge(defaults, cfg[section], section)
    params = cfg["params"]
    if params["mode"] == "non_diffusive":
        for key in ("Ra", "Pr"):
            if params.get(key) is None:
                params[key] = 1.0
    for section, key in REQUIRED:
        if cfg[section][key] is None and not (cfg["sweep"] and key == "Ra" and cfg["sweep"]["Ra"]):
            raise ConfigError(f"{section}.{key}: required key is missing")
    if cfg["params"]["Ra"] is None:
        cfg["params"]["Ra"] = float(cfg["sweep"]["Ra"][0])
    grid = cfg["grid"]
    if int(grid["n2"]) < MIN_N2:
        raise ConfigError(f"grid.n2: {grid['n2']} is below the minimum {MIN_N2}")
    if int(grid["n1"]) < 8 or int(grid["n1"]) % 2:
        raise ConfigError(f"grid.n1: {grid['n1']} must be even and at least 8")
    if cfg["identities"] is not None:
        for n2 in cfg["identities"]["resolutions"]:
            if int(n2) < MIN_N2:
                raise ConfigError(f"identities.resolutions: {n2} is below the minimum {MIN_N2}")
    if cfg["sweep"] is not None:
        ra = [float(r) for r in cfg["sweep"]["Ra"]]
        if any(b <= a for a, b in zip(ra, ra[1:])):
            raise ConfigError("sweep.Ra: values must be strictly increasing")
        if any(r < 1 for r in ra):
            raise ConfigError("sweep.Ra: values must be >= 1")
    sim_params(cfg)  # validates the parameter block
    return cfg


def sim_params(cfg: dict) -> SimParams:
    p = cfg["params"]
    try:
        slip = SlipSpec.from_config(p["slip"], float(cfg["geometry"]["period"]))
        return SimParams(Ra=float(p["Ra"]), Pr=float(p["Pr"]), mode=p["mode"], slip=slip,
                         dt=None if p["dt"] is None else float(p["dt"]), cfl=float(p["cfl"]),
                         dt_max=float(p["dt_max"]), T=float(p["T"]), coupling=p["coupling"],
                         K=int(p["K"]), coupling_tol=float(p["coupling_tol"]),
                         coupling_max_sweeps=int(p["coupling_max_sweeps"]),
                         mean_flux=float(p["mean_flux"]), nu_h=float(p["nu_h"]), seed=int(p["seed"]),
                         solver=p["solver"], solver_tol=float(p["solver_tol"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"params: {exc}") from exc


def output_dir(cfg: dict, override=None) -> Path:
    path = Path(override or cfg["output"]["directory"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path
