"""Run configuration: JSON schema, loading, and model construction from a config.

Keys starting with an underscore (``_note``) are comments and are ignored.
"""
from __future__ import annotations

import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import POTENTIAL_KINDS, Potential, SimConfig, simulate_em, subsample
from .effective import CVAssignment
from .errors import ConfigurationError
from .fixtures import FIXTURE_NAMES, fixture
from .operators import Grid, TransitionModel, build_analytic_em, build_counts, reversible_part
from .tpt import SetPair


def _obj(properties: dict, required=()) -> dict:
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "patternProperties": {"^_": {}},
        "additionalProperties": False,
    }


_INT_LIST = {"type": "array", "items": {"type": "integer"}, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

_POTENTIAL = _obj(
    {"kind": {"enum": list(POTENTIAL_KINDS)}, "params": {"type": "object", "additionalProperties": {"type": "number"}}},
    ["kind"],
)
_GRID = _obj(
    {
        "axes": {
            "type": "array",
            "minItems": 1,
            "maxItems": 2,
            "items": _obj({"lo": {"type": "number"}, "hi": {"type": "number"}, "n": {"type": "integer", "minimum": 2}}, ["lo", "hi", "n"]),
        }
    },
    ["axes"],
)

CONFIG_SCHEMA = _obj(
    {
        "seed": {"type": "integer", "minimum": 0},
        "system": {
            "oneOf": [
                _obj({"fixture": {"enum": [n for n in FIXTURE_NAMES if n != "dw2d"]}}, ["fixture"]),
                _obj({"potential": _POTENTIAL, "beta": _POS, "dt": _POS, "gamma": _POS}, ["potential", "beta", "dt"]),
            ]
        },
        "grid": _GRID,
        "operator": _obj(
            {
                "source": {"enum": ["fixture", "analytic", "counts"]},
                "n_steps": _COUNT,
                "lag": _COUNT,
                "reversible": {"type": "boolean"},
                "reversible_part": {"type": "boolean"},
            }
        ),
        "sets": _obj({"A": _INT_LIST, "B": _INT_LIST}, ["A", "B"]),
        "cv": _obj(
            {
                "kind": {"enum": ["identity", "lumps", "linear-angle-2d", "coordinate"]},
                "lumps": {"type": "array", "items": _INT_LIST, "minItems": 1},
                "theta": {"type": "number"},
                "axis": {"type": "integer", "minimum": 0},
                "k": _COUNT,
            },
            ["kind"],
        ),
        "cv_family": _obj(
            {
                "kind": {"enum": ["linear-angle-2d", "coordinate", "explicit-list"]},
                "n_angles": _COUNT,
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "members": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _INT_LIST}},
                "k": _COUNT,
            },
            ["kind"],
        ),
        "objective": _obj(
            {"kind": {"enum": ["timescale", "kl"]}, "m": _COUNT, "weights": {"type": "array", "items": _POS}},
            ["kind"],
        ),
        "rate_bins": _obj({"A": _INT_LIST, "B": _INT_LIST}, ["A", "B"]),
        "spectrum": _obj({"m": {"type": "integer", "minimum": 0}}),
        "rates": _obj({"n_steps": _COUNT, "n_batches": {"type": "integer", "minimum": 2}}),
        "langevin": _obj(
            {
                "potential": _POTENTIAL,
                "beta": _POS,
                "gamma": _POS,
                "dt": _POS,
                "n_steps": _COUNT,
                "lag": _COUNT,
                "grid": _GRID,
                "n_batches": {"type": "integer", "minimum": 2},
            },
            ["potential", "beta", "gamma", "dt", "n_steps", "lag", "grid"],
        ),
        "verify": _obj({"n_instances": _COUNT, "n_steps": _COUNT}),
    }
)


def default_config_path():
    return resources.files("effdyn").joinpath("data/default_config.json")


def load_config(path=None) -> dict:
    """Read and validate a config; ``None`` loads the shipped default."""
    try:
        if path is None:
            text = default_config_path().read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        cfg = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def potential_from_dict(block: dict) -> Potential:
    return Potential(block["kind"], dict(block.get("params", {})))


def require(cfg: dict, key: str, command: str):
    if key not in cfg:
        raise ConfigurationError(f"{command} needs a '{key}' block in the config")
    return cfg[key]


def build_model(cfg: dict, seed: int) -> TransitionModel:
    system = require(cfg, "system", "this command")
    op = cfg.get("operator", {})
    if "fixture" in system:
        model = fixture(system["fixture"])
    else:
        grid = Grid.from_dict(require(cfg, "grid", "a potential system"))
        pot = potential_from_dict(system["potential"])
        if pot.dim != grid.dim:
            raise ConfigurationError(f"potential is {pot.dim}-dimensional, grid is {grid.dim}-dimensional")
        source = op.get("source", "analytic")
        if source == "analytic":
            model = build_analytic_em(pot, system["beta"], system["dt"], grid)
        elif source == "counts":
            sim = SimConfig(system["beta"], system["dt"], op.get("n_steps", 100_000), seed=seed, extent=grid.extent)
            traj = subsample(simulate_em(pot, sim), op.get("lag", 1))
            model = build_counts(traj, grid, reversible=op.get("reversible", False))
        else:
            raise ConfigurationError("source 'fixture' needs a fixture system")
    if op.get("reversible_part", False):
        model = reversible_part(model)
    return model


def build_sets(cfg: dict, n: int) -> SetPair:
    block = require(cfg, "sets", "committor/rates")
    return SetPair(tuple(i % n for i in block["A"]), tuple(i % n for i in block["B"]), n)


def build_cv(cfg: dict, model: TransitionModel) -> CVAssignment:
    block = require(cfg, "cv", "this command")
    kind = block["kind"]
    if kind == "identity":
        return CVAssignment.identity(model.n)
    if kind == "lumps":
        if "lumps" not in block:
            raise ConfigurationError("cv kind 'lumps' needs a 'lumps' list")
        return CVAssignment.from_lumps(block["lumps"], model.n)
    grid = model.grid
    if grid is None or model.states is not None:
        raise ConfigurationError(f"cv kind {kind!r} needs an unpruned grid model")
    k = block.get("k", 10)
    if kind == "linear-angle-2d":
        return CVAssignment.linear_angle(grid, block.get("theta", 0.0), k)
    return CVAssignment.coordinate(grid, block.get("axis", 0), k)


def family_params(block: dict) -> tuple:
    kind = block["kind"]
    if kind == "linear-angle-2d":
        n = block.get("n_angles", 12)
        return tuple(np.arange(n) * math.pi / n)
    if kind == "coordinate":
        return tuple(block.get("axes", [0]))
    return tuple(range(len(block.get("members", []))))
