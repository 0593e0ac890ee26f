"""Run configuration: TOML files, presets, flag overrides and validation."""

from __future__ import annotations

import copy
import os
import platform
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ValidationError
from .experiments import SWEEP_AXES, IPCSettings, config_hash
from .ipc import WindowPolicy
from .reservoir import ObservableSet, ReservoirConfig

OUT_ENV = "QRCIPC_OUT"
MANIFEST_SCHEMA = "qrcipc.manifest/1"
SUBCOMMANDS = ("converge", "ipc", "sweep", "memory-curve", "oracle")

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "preset": "paper",
    "reservoir": {
        "n_qubits": 5,
        "field_h": 1.0,
        "coupling_scale": 1.0,
        "dt": 10.0,
        "virtual_nodes": 1,
        "observables": "z",
    },
    "run": {
        "length": 100_000,
        "washout": 10_000,
        "realizations": 10,
        "workers": 1,
    },
    "ipc": {
        "d_max": 9,
        "n_surrogates": 10,
        "samples_per_degree": 50,
        "threshold_factor": 1.2,
        "estimator": "leverage",
        "coverage": 0.1,
        "delay_start": 0,
        "linear_block": 25,
        "extend_linear": True,
        "windows": {"1": [150, 1], "2": [30, 2], "3": [15, 3], "4": [15, 4]},
        "fallback": [8, 4],
    },
    "sweep": {
        "axis": "dt",
        "values": [0.01, 0.1, 1.0, 4.0, 10.0, 20.0],
    },
    "converge": {
        "dt_values": [0.1, 1.0, 4.0, 10.0, 20.0],
        "n_inputs": 200,
    },
}

PRESETS = {
    "paper": {"length": 100_000, "washout": 10_000},
    "desk": {"length": 20_000, "washout": 1_000},
}

# (section, key) -> predicate, message
_RANGES = {
    ("reservoir", "n_qubits"): (lambda v: 1 <= v <= 12, "must be an integer in [1, 12]"),
    ("reservoir", "dt"): (lambda v: v > 0, "must be > 0"),
    ("reservoir", "virtual_nodes"): (lambda v: v >= 1, "must be >= 1"),
    ("reservoir", "coupling_scale"): (lambda v: v >= 0, "must be >= 0"),
    ("run", "length"): (lambda v: v >= 1, "must be >= 1"),
    ("run", "washout"): (lambda v: v >= 0, "must be >= 0"),
    ("run", "realizations"): (lambda v: v >= 1, "must be >= 1"),
    ("run", "workers"): (lambda v: v >= 1, "must be >= 1"),
    ("ipc", "d_max"): (lambda v: 1 <= v <= 20, "must be in [1, 20]"),
    ("ipc", "n_surrogates"): (lambda v: v >= 1, "must be >= 1"),
    ("ipc", "samples_per_degree"): (lambda v: v >= 1, "must be >= 1"),
    ("ipc", "threshold_factor"): (lambda v: v > 0, "must be > 0"),
    ("ipc", "delay_start"): (lambda v: v in (0, 1), "must be 0 or 1"),
    ("ipc", "estimator"): (lambda v: v in ("leverage", "raw"), "must be 'leverage' or 'raw'"),
    ("ipc", "coverage"): (lambda v: 0 <= v <= 1, "must be in [0, 1]"),
    ("ipc", "linear_block"): (lambda v: v >= 1, "must be >= 1"),
    ("converge", "n_inputs"): (lambda v: v >= 1, "must be >= 1"),
}


def _check_type(name: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ValidationError(f"config key `{name}` has the wrong type: {value!r}")
    return value


def _merge(base: dict, layer: dict, prefix: str = "") -> None:
    for key, value in layer.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ValidationError(f"unknown config key `{name}`")
        default = base[key]
        if isinstance(default, dict) and key != "windows":
            if not isinstance(value, dict):
                raise ValidationError(f"config key `{name}` must be a section")
            _merge(default, value, prefix=f"{name}.")
        elif default is None:
            base[key] = value
        else:
            base[key] = _check_type(name, value, default)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    out_dir: str
    versions: dict = field(default_factory=dict)
    config_hash: str = ""
    status: str = "pending"
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "versions": self.versions,
            "config_hash": self.config_hash,
            "status": self.status,
            "error": self.error,
        }

    def reservoir_config(self, coupling_seed: int = 0) -> ReservoirConfig:
        r = self.config["reservoir"]
        return ReservoirConfig(
            n_qubits=r["n_qubits"],
            field_h=r["field_h"],
            coupling_scale=r["coupling_scale"],
            dt=r["dt"],
            virtual_nodes=r["virtual_nodes"],
            coupling_seed=coupling_seed,
            observables=ObservableSet.parse(r["observables"]),
        )

    def ipc_settings(self) -> IPCSettings:
        c = self.config["ipc"]
        policy = WindowPolicy(
            windows={int(d): tuple(w) for d, w in c["windows"].items()},
            fallback=tuple(c["fallback"]),
            delay_start=c["delay_start"],
            linear_block=c["linear_block"],
            extend_linear=c["extend_linear"],
        )
        return IPCSettings(
            d_max=c["d_max"],
            policy=policy,
            n_surrogates=c["n_surrogates"],
            samples_per_degree=c["samples_per_degree"],
            threshold_factor=c["threshold_factor"],
            estimator=c["estimator"],
            coverage=c["coverage"],
        )


def load_file(path) -> dict:
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"cannot parse {path}: {exc}") from exc


def parse_config(
    path=None,
    overrides: Optional[dict] = None,
    subcommand: str = "ipc",
    out_dir: Optional[str] = None,
) -> RunManifest:
    """Resolve defaults, preset, config file and flag overrides into a manifest.

    ``overrides`` uses the same nested layout as the file. Run lengths come
    from the preset unless the file or the overrides set them explicitly.
    """
    if subcommand not in SUBCOMMANDS:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    cfg = copy.deepcopy(DEFAULTS)
    explicit_run = set()
    for layer in (load_file(path) if path else {}, overrides or {}):
        explicit_run |= set(layer.get("run", {}) or {}) & {"length", "washout"}
        _merge(cfg, layer)
    if cfg["preset"] not in PRESETS:
        raise ValidationError(f"config key `preset` must be one of {sorted(PRESETS)}, got {cfg['preset']!r}")
    for key, value in PRESETS[cfg["preset"]].items():
        if key not in explicit_run:
            cfg["run"][key] = value
    _validate(cfg)
    versions = {
        "qrcipc": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
    out = out_dir or os.environ.get(OUT_ENV) or "qrcipc-out"
    return RunManifest(
        subcommand=subcommand,
        config=cfg,
        seed=int(cfg["seed"]),
        out_dir=str(out),
        versions=versions,
        config_hash=config_hash({"subcommand": subcommand, "config": cfg}),
    )


def _validate(cfg: dict) -> None:
    for (section, key), (pred, msg) in _RANGES.items():
        value = cfg[section][key]
        if not pred(value):
            raise ValidationError(f"config key `{key}` {msg}, got {value!r}")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ValidationError(f"config key `seed` must be in [0, 2^64), got {cfg['seed']}")
    if cfg["run"]["washout"] >= cfg["run"]["length"] + cfg["run"]["washout"]:
        raise ValidationError("config key `washout` leaves no evaluation steps")
    try:
        ObservableSet.parse(cfg["reservoir"]["observables"])
    except ValidationError as exc:
        raise ValidationError(f"config key `observables`: {exc}") from exc
    try:
        WindowPolicy(
            windows={int(d): tuple(w) for d, w in cfg["ipc"]["windows"].items()},
            fallback=tuple(cfg["ipc"]["fallback"]),
            delay_start=cfg["ipc"]["delay_start"],
        )
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"config key `windows`: {exc}") from exc
    if cfg["sweep"]["axis"] not in SWEEP_AXES:
        raise ValidationError(f"config key `axis` must be one of {sorted(SWEEP_AXES)}, got {cfg['sweep']['axis']!r}")
    if not cfg["sweep"]["values"]:
        raise ValidationError("config key `values` must be non-empty")
    if not cfg["converge"]["dt_values"] or any(not d > 0 for d in cfg["converge"]["dt_values"]):
        raise ValidationError("config key `dt_values` must be a non-empty list of positive numbers")
