"""Scenario files: schema validation, defaults and canonical report output."""
from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from .constraints import TAU_PROJ, constraint_from_dict
from .drivers import EXPONENTIAL
from .errors import InvalidArgument
from .market import MarketModel
from .pipeline import LIABILITY_RULE, Problem, liability_from_dict, utility_from_dict

DEFAULTS = {
    "grid": {"T": 1.0, "steps": 64},
    "mc": {"paths": 100_000, "seed": 0},
    "liability": {"payoff": "zero"},
    "solver": {"method": "lsmc", "basis": None, "z_cap": None, "tau_proj": TAU_PROJ, "pde": {"M": 401, "N": None}},
    "verification": {},
    "output": {"report": "report.json", "series": "series.csv", "field": None},
}


def load_schema() -> dict:
    return json.loads(resources.files("utilbsde").joinpath("data/scenario.schema.json").read_text())


def validate(cfg: dict) -> None:
    """Raise InvalidArgument listing every schema or cross-field problem."""
    if not isinstance(cfg, dict):
        raise InvalidArgument("scenario must be a JSON object")
    validator = jsonschema.Draft202012Validator(load_schema())
    messages = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(e.path)):
        where = "/".join(str(p) for p in err.path) or "<root>"
        if err.validator == "additionalProperties":
            allowed = set(err.schema.get("properties", {}))
            extra = sorted(k for k in err.instance if k not in allowed)
            messages.append(f"{where}: unknown keys {', '.join(extra)}")
        else:
            messages.append(f"{where}: {err.message}")
    if messages:
        raise InvalidArgument("invalid scenario: " + "; ".join(messages))
    util = cfg["utility"]
    if util["kind"] == "exponential" and "alpha" not in util:
        raise InvalidArgument("invalid scenario: exponential utility needs alpha")
    if util["kind"] == "power" and "gamma" not in util:
        raise InvalidArgument("invalid scenario: power utility needs gamma")
    if util["kind"] != EXPONENTIAL and cfg.get("liability", {}).get("payoff", "zero") != "zero":
        raise InvalidArgument(f"invalid scenario: {LIABILITY_RULE}")
    method = cfg.get("solver", {}).get("method", "lsmc")
    if method in ("pde", "both") and cfg["market"]["m"] != 1:
        raise InvalidArgument("invalid scenario: the pde solver needs m = 1")


def resolve(cfg: dict, seed: int | None = None) -> dict:
    """Validated config with defaults filled in; ``seed`` overrides mc.seed."""
    validate(cfg)
    out = copy.deepcopy(cfg)
    for block, defaults in DEFAULTS.items():
        merged = copy.deepcopy(defaults)
        merged.update(out.get(block, {}))
        out[block] = merged
    if out["solver"].get("pde") is not None:
        pde = dict(DEFAULTS["solver"]["pde"])
        pde.update(out["solver"]["pde"])
        out["solver"]["pde"] = pde
    out["utility"].setdefault("x", 0.0 if out["utility"]["kind"] == EXPONENTIAL else 1.0)
    if seed is not None:
        out["mc"]["seed"] = int(seed)
    return out


def build_problem(cfg: dict) -> Problem:
    mk = cfg["market"]
    model = MarketModel.from_dict(mk)
    return Problem(model=model, constraint=constraint_from_dict(cfg["constraint"]),
                   utility=utility_from_dict(cfg["utility"]), liability=liability_from_dict(cfg["liability"]),
                   x=float(cfg["utility"]["x"]), T=float(cfg["grid"]["T"]), steps=int(cfg["grid"]["steps"]))


def canonical(obj):
    """JSON-ready copy: arrays to lists, floats to 12 significant digits, non-finite to strings."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    return obj


def dumps(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n"
