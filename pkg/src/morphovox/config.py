"""Run configuration: shipped profiles, TOML files, flag overrides, manifests.

Precedence is flags > file > profile.  A config file is TOML with these
top-level keys and tables::

    profile = "desk"
    master_seed = 7
    seeds = 5
    population = 20
    threads = 1
    output_dir = "results"
    frame_stride = 0
    bootstrap_resamples = 5000
    [generations]   pre, post
    [body]          torso, leg
    [experiment]    scenarios, options, size_factor
    [sim]           any SimParams field

A JSON manifest written by :func:`write_manifest` is accepted as well.
"""

from __future__ import annotations

import copy
import datetime as _dt
import json
import os
import platform
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .morphology import DAMAGE_SCENARIOS, DamageScenario, QuadrupedSpec
from .physics import SimParams

TOOL_NAME = "morphovox"
TOOL_VERSION = "0.1.0"
RECOVERY_OPTIONS = ("controller_readaptation", "shapeshifting")

_ALL_SCENARIOS = [s.value for s in DAMAGE_SCENARIOS]

PROFILES = {
    "paper": {
        "profile": "paper",
        "master_seed": 0,
        "seeds": 20,
        "population": 50,
        "threads": 0,
        "output_dir": "results",
        "frame_stride": 0,
        "bootstrap_resamples": 5000,
        "generations": {"pre": 1500, "post": 500},
        "body": {"torso": [6, 6, 3], "leg": [2, 2, 2]},
        "experiment": {"scenarios": _ALL_SCENARIOS, "options": list(RECOVERY_OPTIONS),
                       "size_factor": 2.0},
        "sim": SimParams().to_dict(),
    },
    "desk": {
        "profile": "desk",
        "master_seed": 0,
        "seeds": 5,
        "population": 20,
        "threads": 0,
        "output_dir": "results",
        "frame_stride": 0,
        "bootstrap_resamples": 5000,
        "generations": {"pre": 30, "post": 20},
        "body": {"torso": [4, 4, 2], "leg": [2, 2, 1]},
        "experiment": {"scenarios": _ALL_SCENARIOS, "options": list(RECOVERY_OPTIONS),
                       "size_factor": 2.0},
        "sim": SimParams(dt=5e-4, eval_duration=2.0, youngs_modulus=5e3,
                         ground_stiffness=1e2).to_dict(),
    },
}


def _check_type(key: str, value, template):
    if isinstance(template, bool):
        ok = isinstance(value, bool)
    elif isinstance(template, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(template, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(template, str):
        ok = isinstance(value, str)
    elif isinstance(template, list):
        ok = isinstance(value, (list, tuple))
        value = list(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(template).__name__}, got {type(value).__name__}")
    return value


def _merge(base: dict, update: Mapping, prefix: str = "") -> None:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(path, "expected a table")
            _merge(base[key], value, path + ".")
        else:
            base[key] = _check_type(path, value, base[key])


def _nest(dotted: Mapping) -> dict:
    out: dict = {}
    for key, value in dotted.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    profile: str
    master_seed: int
    seeds: int
    population: int
    threads: int
    output_dir: str
    frame_stride: int
    bootstrap_resamples: int
    generations_pre: int
    generations_post: int
    torso: tuple
    leg: tuple
    scenarios: tuple
    options: tuple
    size_factor: float
    sim: SimParams

    @property
    def body(self) -> QuadrupedSpec:
        return QuadrupedSpec(self.torso, self.leg)

    @property
    def n_threads(self) -> int:
        """Effective worker count (0 means all available cores)."""
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "master_seed": self.master_seed,
            "seeds": self.seeds,
            "population": self.population,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "frame_stride": self.frame_stride,
            "bootstrap_resamples": self.bootstrap_resamples,
            "generations": {"pre": self.generations_pre, "post": self.generations_post},
            "body": {"torso": list(self.torso), "leg": list(self.leg)},
            "experiment": {"scenarios": list(self.scenarios), "options": list(self.options),
                           "size_factor": self.size_factor},
            "sim": self.sim.to_dict(),
        }


def _from_tree(tree: dict) -> RunConfig:
    for key in ("seeds", "population"):
        if tree[key] < 1:
            raise ConfigError(key, "must be at least 1")
    for key in ("pre", "post"):
        if tree["generations"][key] < 0:
            raise ConfigError(f"generations.{key}", "must be non-negative")
    for key in ("threads", "frame_stride"):
        if tree[key] < 0:
            raise ConfigError(key, "must be non-negative")
    if tree["bootstrap_resamples"] < 1:
        raise ConfigError("bootstrap_resamples", "must be at least 1")
    for k, tag in enumerate(tree["experiment"]["scenarios"]):
        try:
            DamageScenario.parse(tag)
        except DomainError as exc:
            raise ConfigError(f"experiment.scenarios[{k}]", str(exc)) from None
    for k, tag in enumerate(tree["experiment"]["options"]):
        if tag not in RECOVERY_OPTIONS:
            raise ConfigError(f"experiment.options[{k}]", f"unknown recovery option {tag!r}")
    body = tree["body"]
    for part in ("torso", "leg"):
        dims = body[part]
        if len(dims) != 3 or not all(isinstance(d, int) and d >= 1 for d in dims):
            raise ConfigError(f"body.{part}", "expected three positive integers")
    try:
        QuadrupedSpec(tuple(body["torso"]), tuple(body["leg"]))
        sim = SimParams(**tree["sim"])
    except DomainError as exc:
        raise ConfigError("sim" if "sim" in str(exc) else "body", str(exc)) from None
    return RunConfig(
        profile=tree["profile"],
        master_seed=tree["master_seed"],
        seeds=tree["seeds"],
        population=tree["population"],
        threads=tree["threads"],
        output_dir=tree["output_dir"],
        frame_stride=tree["frame_stride"],
        bootstrap_resamples=tree["bootstrap_resamples"],
        generations_pre=tree["generations"]["pre"],
        generations_post=tree["generations"]["post"],
        torso=tuple(body["torso"]),
        leg=tuple(body["leg"]),
        scenarios=tuple(tree["experiment"]["scenarios"]),
        options=tuple(tree["experiment"]["options"]),
        size_factor=tree["experiment"]["size_factor"],
        sim=sim,
    )


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return doc.get("config", doc)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"{path}: {exc}") from None


def parse_config(path=None, profile: Optional[str] = None,
                 overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge profile defaults, an optional file and dotted-key overrides.

    ``overrides`` maps dotted keys (``"sim.dt"``, ``"generations.pre"``) to
    values; ``None`` values are ignored so unset CLI flags can pass through.
    """
    file_tree = read_config_file(path) if path is not None else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = profile or overrides.get("profile") or file_tree.get("profile") or "desk"
    if name not in PROFILES:
        raise ConfigError("profile", f"unknown profile {name!r} (expected paper or desk)")
    tree = copy.deepcopy(PROFILES[name])
    _merge(tree, file_tree)
    _merge(tree, _nest(overrides))
    tree["profile"] = name
    env = os.environ.get("MORPHOVOX_THREADS")
    if env is not None and "threads" not in overrides:
        try:
            tree["threads"] = int(env)
        except ValueError:
            raise ConfigError("MORPHOVOX_THREADS", f"expected an integer, got {env!r}") from None
    return _from_tree(tree)


def _versions() -> dict:
    import numba
    import numpy
    return {TOOL_NAME: TOOL_VERSION, "python": platform.python_version(),
            "numpy": numpy.__version__, "numba": numba.__version__}


def manifest_document(config: RunConfig, extra: Optional[Mapping] = None) -> dict:
    doc = {
        "tool": TOOL_NAME,
        "versions": _versions(),
        "master_seed": config.master_seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": config.to_dict(),
    }
    if extra:
        doc["run"] = dict(extra)
    return doc


def write_manifest(config: RunConfig, directory=None, extra: Optional[Mapping] = None) -> Path:
    """Write ``manifest.json`` into ``directory`` (default: the output dir)."""
    directory = Path(directory if directory is not None else config.output_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest_document(config, extra), indent=2, sort_keys=True))
    except OSError as exc:
        raise ConfigError("output_dir", f"cannot write manifest in {directory}: {exc}") from None
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())
