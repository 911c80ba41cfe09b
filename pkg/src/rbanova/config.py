"""Flat ``dotted.key = value`` experiment configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

MODES = ("full", "prior", "adaptive")

# key -> (type, default)
SCHEMA = {
    "grid.n": (int, 17),  # nodes per side
    "kl.alpha": (float, 5.0),
    "kl.sigma": (float, 0.25),
    "kl.fraction": (float, 0.95),
    "kl.mean": (float, 1.0),
    "kl.eigen_nodes": (int, 0),  # 0: nested refinement to >= 257 nodes
    "noise.sigma": (float, 0.001),
    "proposal.step": (float, 0.03),
    "mcmc.n": (int, 50000),
    "mcmc.seed": (int, 7),
    "mcmc.mode": (str, "full"),
    "mcmc.burn": (int, 0),
    "surrogate.tol_anova": (float, 1e-4),
    "surrogate.tol_rb": (float, 1e-4),
    "surrogate.tol_pod": (float, 1e-4),
    "surrogate.n_model": (int, 500),
    "surrogate.order_cap": (int, 3),
    "sensors.per_side": (int, 3),
    "data.truth_seed": (int, 2024),
    "data.noise_seed": (int, 2025),
    "data.refine": (int, 1),  # >1 generates data on a finer grid
    "paths.out": (str, "out"),
    "paths.data": (str, ""),
    "paths.model": (str, ""),
    "paths.reference": (str, ""),
}


def _coerce(key, raw):
    kind = SCHEMA[key][0]
    raw = raw.strip() if isinstance(raw, str) else raw
    try:
        if kind is int:
            value = int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
        elif kind is float:
            value = float(raw)
        else:
            value = str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc
    return value


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __post_init__(self):
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def with_updates(self, updates: dict) -> "ExperimentConfig":
        values = dict(self.values)
        for key, raw in updates.items():
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            values[key] = _coerce(key, raw)
        return ExperimentConfig(values)

    def validate(self):
        v = self.values
        if v["mcmc.mode"] not in MODES:
            raise ConfigurationError(f"mcmc.mode must be one of {MODES}, got {v['mcmc.mode']!r}")
        for key in ("surrogate.tol_anova", "surrogate.tol_rb", "surrogate.tol_pod",
                    "proposal.step", "kl.sigma", "kl.alpha"):
            if not v[key] > 0:
                raise ConfigurationError(f"{key} must be positive")
        # zero noise is allowed for data generation; sampling needs it positive
        if not v["noise.sigma"] >= 0:
            raise ConfigurationError("noise.sigma must be nonnegative")
        if not 0 < v["kl.fraction"] <= 1:
            raise ConfigurationError("kl.fraction must lie in (0, 1]")
        if v["grid.n"] < 3 or v["mcmc.n"] < 1 or v["surrogate.n_model"] < 2:
            raise ConfigurationError("grid.n >= 3, mcmc.n >= 1 and surrogate.n_model >= 2 required")
        if v["data.refine"] < 1 or v["sensors.per_side"] < 1 or v["surrogate.order_cap"] < 1:
            raise ConfigurationError("data.refine, sensors.per_side and order_cap must be >= 1")
        if not 0 <= v["mcmc.burn"] < v["mcmc.n"]:
            raise ConfigurationError("mcmc.burn must lie in [0, mcmc.n)")

    @property
    def out_dir(self) -> Path:
        return Path(self["paths.out"])

    def path(self, key: str, default_name: str) -> Path:
        return Path(self[key]) if self[key] else self.out_dir / default_name

    def canonical(self, include_paths: bool = False) -> str:
        lines = []
        for key in sorted(self.values):
            if key.startswith("paths.") and not include_paths:
                continue
            value = self.values[key]
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Hash of the semantic content (paths excluded), stable under reformatting."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return self.canonical(include_paths=True)


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {n}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        cfg = cfg.with_updates(parse_config_text(Path(path).read_text()))
    if overrides:
        cfg = cfg.with_updates(overrides)
    return cfg
