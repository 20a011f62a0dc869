"""Pipeline configuration: one TOML file, environment overrides for the service table."""

from __future__ import annotations

import copy
import datetime as dt
import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .jsonl import canonical_json

ENV_PREFIX = "CASHFLOW_UW_SERVICE_"

DEFAULTS = {
    "paths": {"data_dir": "data", "store_dir": "store", "registry_dir": "registry", "reports_dir": "reports"},
    "run": {"seed": 0, "reference_time": ""},
    "synth": {},
    "split": {"train_fraction": 0.6, "fold_count": 5, "stratified": True},
    "binning": {"k_init": 10, "min_bin_count": 5, "epsilon": 1e-6, "clamp": 5.0},
    "model": {"lambda": 1.0, "tol": 1e-8, "max_iter": 100, "thresholds": [0.05, 0.15]},
    "experiments": {
        "kinds": ["LR", "RF", "GB", "AB"],
        "feature_sets": ["application_only", "bank_only", "combined"],
        "trials": 50,
        "inner_folds": 5,
        "spaces": {},
    },
    "service": {
        "host": "127.0.0.1",
        "port": 8000,
        "t_low": 0.05,
        "t_high": 0.15,
        "promote_after": 3,
        "psi_alert": 0.2,
        "psi_epsilon": 1e-6,
        "schedule_interval_days": 30,
        "canary_fraction": 0.0,
        "min_outcomes_per_class": 5,
        "drift_window": 500,
        "decision_log": "decisions.jsonl",
    },
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base and where not in ("synth", "experiments.spaces"):
            raise ConfigError("CONFIG_INVALID", f"unknown config key {where + '.' if where else ''}{k}")
        if isinstance(v, dict) and isinstance(base.get(k), dict) and where != "experiments.spaces":
            out[k] = _merge(base[k], v, f"{where}.{k}" if where else k)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    t_low: float = 0.05
    t_high: float = 0.15
    promote_after: int = 3
    psi_alert: float = 0.2
    psi_epsilon: float = 1e-6
    schedule_interval_days: int = 30
    canary_fraction: float = 0.0
    min_outcomes_per_class: int = 5
    drift_window: int = 500
    decision_log: str = "decisions.jsonl"
    registry_dir: str = "registry"
    store_dir: str = "store"
    reference_time: str = ""
    binning: dict = field(default_factory=lambda: dict(DEFAULTS["binning"]))
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.t_low < self.t_high <= 1:
            raise ConfigError("CONFIG_INVALID", "need 0 <= t_low < t_high <= 1")
        if self.promote_after < 1:
            raise ConfigError("CONFIG_INVALID", "promote_after must be >= 1")
        if not 0 <= self.canary_fraction <= 1:
            raise ConfigError("CONFIG_INVALID", "canary_fraction must be in [0, 1]")
        if self.psi_alert <= 0 or self.psi_epsilon <= 0:
            raise ConfigError("CONFIG_INVALID", "psi_alert and psi_epsilon must be > 0")

    @property
    def thresholds(self) -> tuple[float, float]:
        return (self.t_low, self.t_high)

    def now(self) -> str:
        return reference_now(self.reference_time)


def reference_now(reference_time: str = "") -> str:
    """Timestamp honouring SOURCE_DATE_EPOCH, then a fixed reference time, then the clock."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc).isoformat(timespec="seconds")
    if reference_time:
        return reference_time
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class PipelineConfig:
    """Effective configuration (defaults < file < CLI/env overrides)."""

    def __init__(self, data: Optional[dict] = None, root: str | Path = ".", source: str = "<defaults>"):
        self.data = _merge(DEFAULTS, data or {})
        self.root = Path(root)
        self.source = source
        self._validate()

    @classmethod
    def load(cls, path: Optional[str | Path] = None, root: str | Path = ".",
             env: Optional[dict] = None) -> "PipelineConfig":
        data = {}
        source = "<defaults>"
        if path is not None:
            p = Path(path)
            try:
                data = tomllib.loads(p.read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError("CONFIG_INVALID", f"config file not found: {p}")
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError("CONFIG_INVALID", f"bad TOML in {p}: {exc}")
            source = str(p)
        cfg = cls(data, root, source)
        cfg.apply_env(os.environ if env is None else env)
        return cfg

    def apply_env(self, env) -> None:
        svc = self.data["service"]
        for k, default in DEFAULTS["service"].items():
            v = env.get(ENV_PREFIX + k.upper())
            if v is not None:
                try:
                    svc[k] = _coerce(v, default)
                except ValueError:
                    raise ConfigError("CONFIG_INVALID", f"bad value for {ENV_PREFIX + k.upper()}: {v!r}")
        self._validate()

    def _validate(self) -> None:
        d = self.data
        if not isinstance(d["run"]["seed"], int) or d["run"]["seed"] < 0:
            raise ConfigError("CONFIG_INVALID", "run.seed must be a non-negative integer")
        if not 0 < d["split"]["train_fraction"] < 1:
            raise ConfigError("CONFIG_INVALID", "split.train_fraction must be in (0, 1)")
        if d["split"]["fold_count"] < 2:
            raise ConfigError("CONFIG_INVALID", "split.fold_count must be >= 2")
        b = d["binning"]
        if b["k_init"] < 1 or b["min_bin_count"] < 0 or not b["epsilon"] > 0:
            raise ConfigError("CONFIG_INVALID", "bad binning parameters")
        m = d["model"]
        if m["lambda"] < 0 or m["max_iter"] < 1:
            raise ConfigError("CONFIG_INVALID", "model.lambda must be >= 0 and model.max_iter >= 1")
        t = m["thresholds"]
        if len(t) != 2 or not 0 <= t[0] < t[1] <= 1:
            raise ConfigError("CONFIG_INVALID", "model.thresholds must be [t_low, t_high] with t_low < t_high")
        self.service()

    def set_seed(self, seed: int) -> None:
        self.data["run"]["seed"] = int(seed)
        self._validate()

    @property
    def seed(self) -> int:
        return self.data["run"]["seed"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def path(self, key: str) -> Path:
        return self.root / self.data["paths"][key]

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()[:16]

    def provenance(self, command: str) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, "command": command}

    def service(self) -> ServiceConfig:
        s = dict(self.data["service"])
        return ServiceConfig(
            **s,
            registry_dir=str(self.path("registry_dir")),
            store_dir=str(self.path("store_dir")),
            reference_time=self.data["run"]["reference_time"],
            binning=dict(self.data["binning"]),
            lam=float(self.data["model"]["lambda"]),
            seed=self.seed,
        )
