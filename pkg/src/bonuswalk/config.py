"""Run configuration and manifests.

A run config file uses the same ``key = value`` grammar as BMS rule files.
Values given on the command line override the file; anything neither
given nor in the file takes the default, and the manifest records which
of the three each parameter came from.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bms import PRESETS, BmsSpec, load_preset, parse_bms_spec, parse_kv_text
from .errors import ConfigError
from .estimators import SCHEMES

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

DEFAULTS = {
    "system": "hungarian",
    "spec_file": None,
    "alpha": 1.2,
    "beta": 19.0,
    "n": 10_000,
    "years": 15,
    "seed": 0,
    "nodes": 256,
    "scheme": "gauss-jacobi",
    "tenure": "fixed",
}

_CONVERTERS = {
    "system": str,
    "spec_file": str,
    "alpha": float,
    "beta": float,
    "n": int,
    "years": int,
    "seed": int,
    "nodes": int,
    "scheme": str,
    "tenure": str,
}


@dataclass(frozen=True)
class ResolvedConfig:
    params: dict
    sources: dict
    overrides: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.params[key]

    def load_spec(self) -> BmsSpec:
        if self.params["spec_file"]:
            return parse_bms_spec(Path(self.params["spec_file"]).read_text())
        return load_preset(self.params["system"])


def _convert(key: str, value):
    try:
        return _CONVERTERS[key](value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r}") from None


def _validate(p: dict) -> None:
    for key in ("alpha", "beta"):
        if not (math.isfinite(p[key]) and p[key] > 0):
            raise ConfigError(f"{key} must be > 0, got {p[key]}")
    for key in ("n", "years"):
        if p[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {p[key]}")
    if not 0 <= p["seed"] < 2**64:
        raise ConfigError(f"seed must be in [0, 2**64), got {p['seed']}")
    if p["nodes"] < 16:
        raise ConfigError(f"nodes must be >= 16, got {p['nodes']}")
    if p["scheme"] not in SCHEMES:
        raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}")
    if p["tenure"] not in ("fixed", "mixed"):
        raise ConfigError(f"tenure must be 'fixed' or 'mixed', got {p['tenure']!r}")
    if p["spec_file"] is None and p["system"] not in PRESETS:
        raise ConfigError(f"unknown system {p['system']!r}; choose from {', '.join(PRESETS)}")


def resolve_config(cli: dict, config_path=None) -> ResolvedConfig:
    """Merge CLI values (``None`` = not given), an optional file and defaults."""
    unknown = set(cli) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown parameters: {', '.join(sorted(unknown))}")
    file_values = {}
    if config_path is not None:
        fields = parse_kv_text(Path(config_path).read_text())
        bad = set(fields) - set(DEFAULTS)
        if bad:
            raise ConfigError(f"{config_path}: unknown keys {', '.join(sorted(bad))}")
        file_values = {k: _convert(k, v) for k, v in fields.items()}

    given = {k: _convert(k, v) for k, v in cli.items() if v is not None}
    if given.get("spec_file") or file_values.get("spec_file"):
        if "system" in given or "system" in file_values:
            raise ConfigError("give either a preset system or a custom spec file, not both")

    params, sources, overrides = {}, {}, []
    for key, default in DEFAULTS.items():
        if key in given:
            params[key], sources[key] = given[key], "cli"
            if key in file_values and file_values[key] != given[key]:
                overrides.append({"key": key, "file": file_values[key], "cli": given[key]})
        elif key in file_values:
            params[key], sources[key] = file_values[key], "file"
        else:
            params[key], sources[key] = default, "default"
    if params["spec_file"]:
        params["system"] = None
    _validate(params)
    return ResolvedConfig(params, sources, overrides)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def make_run_id(subcommand: str, params: dict, inputs: dict) -> str:
    """Content hash of what determines the outputs, so replays reuse the id."""
    blob = json.dumps(
        {"subcommand": subcommand, "params": params, "inputs": inputs, "version": __version__},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    parameter_sources: dict
    overrides: list
    seed: int | None
    inputs: dict
    run_id: str
    outputs: list = field(default_factory=list)
    duration_seconds: float = 0.0
    status: str = "ok"
    exit_code: int = 0
    error: str | None = None
    tool_version: str = __version__
    schema_version: int = MANIFEST_SCHEMA_VERSION


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc}") from exc
    return path


def read_manifest(path) -> RunManifest:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported manifest schema {data.get('schema_version')!r}")
    return RunManifest(**data)


def check_inputs(manifest: RunManifest, base_dir=None) -> list[str]:
    """Re-hash the manifest's inputs; return (and log) a warning per mismatch."""
    warnings = []
    for name, digest in manifest.inputs.items():
        path = Path(name)
        if not path.is_absolute() and base_dir is not None and not path.exists():
            path = Path(base_dir) / path
        if not path.exists():
            msg = f"input {name} is missing"
        elif file_digest(path) != digest:
            msg = f"input {name} changed since the recorded run (digest mismatch)"
        else:
            continue
        log.warning(msg)
        warnings.append(msg)
    return warnings
