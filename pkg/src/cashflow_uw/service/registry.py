"""Append-only model registry.

State lives in ``events.jsonl``; artifacts are stored once per content hash
under ``artifacts/<sha256>.json``. Opening a registry replays the event log,
so a restarted process (or one that crashed mid-append) reaches exactly the
state implied by the complete records on disk.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from ..errors import ServiceError
from ..jsonl import JsonlLog, canonical_json, read_jsonl
from ..scorecard import ScorecardModel

STATUSES = ("candidate", "challenger", "champion", "retired")
TRANSITIONS = {("candidate", "challenger"), ("challenger", "champion"), ("champion", "retired"),
               ("candidate", "retired")}


def _schema() -> dict:
    text = resources.files("cashflow_uw").joinpath("data/model.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


_VALIDATOR = jsonschema.Draft202012Validator(_schema())


def validate_document(doc) -> ScorecardModel:
    if not isinstance(doc, dict):
        raise ServiceError("SCHEMA_INVALID", "model document must be a JSON object")
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise ServiceError("SCHEMA_INVALID", f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}")
    try:
        return ScorecardModel.from_document(doc)
    except Exception as exc:
        raise ServiceError("SCHEMA_INVALID", str(exc))


def document_hash(doc: dict) -> str:
    return hashlib.sha256((canonical_json(doc) + "\n").encode()).hexdigest()


@dataclass(frozen=True)
class ModelRegistryEntry:
    version: str
    artifact_hash: str
    created_at: str
    status: str
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"version": self.version, "artifact_hash": self.artifact_hash, "created_at": self.created_at,
                "status": self.status, "metrics": dict(self.metrics)}


class Registry:
    """Single-writer registry; readers get immutable snapshots."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "artifacts").mkdir(parents=True, exist_ok=True)
        self._log = JsonlLog(self.root / "events.jsonl")
        self._lock = threading.RLock()
        self._models: dict[str, ScorecardModel] = {}
        self._entries: dict[str, ModelRegistryEntry] = {}
        self.replay()

    # -- state

    def replay(self) -> None:
        entries: dict[str, ModelRegistryEntry] = {}
        for ev in read_jsonl(self._log.path):
            self._apply(entries, ev)
        with self._lock:
            self._entries = entries

    @staticmethod
    def _apply(entries: dict, ev: dict) -> None:
        kind = ev["event"]
        if kind == "register":
            entries[ev["version"]] = ModelRegistryEntry(ev["version"], ev["artifact_hash"], ev["created_at"],
                                                        "candidate", dict(ev.get("metrics", {})))
        elif kind == "transition":
            for step in ev["steps"]:
                e = entries[step["version"]]
                if e.status != step["from"] or (step["from"], step["to"]) not in TRANSITIONS:
                    raise ServiceError("CORRUPT_LOG", f"illegal transition in log for {step['version']}")
                entries[step["version"]] = replace(e, status=step["to"])
        else:
            raise ServiceError("CORRUPT_LOG", f"unknown registry event {kind!r}")

    def entries(self) -> list[ModelRegistryEntry]:
        with self._lock:
            return list(self._entries.values())

    def state(self) -> dict:
        return {v: e.to_dict() for v, e in sorted(self._entries.items())}

    def get(self, version: str) -> ModelRegistryEntry:
        try:
            return self._entries[version]
        except KeyError:
            raise ServiceError("NOT_FOUND", f"no model version {version!r}")

    def _with_status(self, status: str) -> Optional[ModelRegistryEntry]:
        for e in self._entries.values():
            if e.status == status:
                return e
        return None

    @property
    def champion(self) -> Optional[ModelRegistryEntry]:
        return self._with_status("champion")

    @property
    def challenger(self) -> Optional[ModelRegistryEntry]:
        return self._with_status("challenger")

    def load_model(self, version: str) -> ScorecardModel:
        e = self.get(version)
        m = self._models.get(e.artifact_hash)
        if m is None:
            doc = json.loads((self.root / "artifacts" / f"{e.artifact_hash}.json").read_text(encoding="utf-8"))
            m = ScorecardModel.from_document(doc)
            self._models[e.artifact_hash] = m
        return m

    def find_hash(self, artifact_hash: str) -> Optional[ModelRegistryEntry]:
        for e in self._entries.values():
            if e.artifact_hash == artifact_hash:
                return e
        return None

    # -- mutations

    def register(self, doc: dict, created_at: str, metrics: Optional[dict] = None) -> ModelRegistryEntry:
        model = validate_document(doc)
        h = document_hash(doc)
        with self._lock:
            if self.find_hash(h) is not None:
                raise ServiceError("DUPLICATE_ARTIFACT", f"artifact {h[:12]} already registered", artifact_hash=h)
            if model.version in self._entries:
                raise ServiceError("DUPLICATE_ARTIFACT", f"version {model.version!r} already registered")
            path = self.root / "artifacts" / f"{h}.json"
            tmp = path.with_suffix(".tmp")
            tmp.write_text(canonical_json(doc) + "\n", encoding="utf-8")
            os.replace(tmp, path)
            ev = {"event": "register", "version": model.version, "artifact_hash": h, "created_at": created_at,
                  "metrics": dict(metrics if metrics is not None else model.training_metrics)}
            self._commit(ev)
            self._models[h] = model
            return self._entries[model.version]

    def _commit(self, ev: dict) -> None:
        staged = dict(self._entries)
        self._apply(staged, ev)
        self._log.append(ev)
        self._entries = staged

    def _transition(self, steps: list[tuple[str, str, str]], at: str) -> None:
        ev = {"event": "transition", "at": at,
              "steps": [{"version": v, "from": a, "to": b} for v, a, b in steps]}
        try:
            self._commit(ev)
        except KeyError as exc:
            raise ServiceError("NOT_FOUND", f"no model version {exc.args[0]!r}")
        except ServiceError as exc:
            raise ServiceError("INVALID_TRANSITION", exc.message)

    def bootstrap(self, version: str, at: str) -> ModelRegistryEntry:
        """Make the first champion (candidate -> challenger -> champion in one record)."""
        with self._lock:
            if self.champion is not None:
                raise ServiceError("ALREADY_BOOTSTRAPPED", "registry already has a champion")
            if self.challenger is not None:
                raise ServiceError("CHALLENGER_EXISTS", "a challenger is already designated")
            self._transition([(version, self.get(version).status, "challenger"),
                              (version, "challenger", "champion")], at)
            return self._entries[version]

    def designate_challenger(self, version: str, at: str) -> ModelRegistryEntry:
        with self._lock:
            if self.challenger is not None:
                raise ServiceError("CHALLENGER_EXISTS", "a challenger is already designated")
            self._transition([(version, self.get(version).status, "challenger")], at)
            return self._entries[version]

    def promote(self, version: str, at: str) -> ModelRegistryEntry:
        """Swap champion and challenger atomically (one log record); bootstrap if no champion."""
        with self._lock:
            champ = self.champion
            if champ is None:
                return self.bootstrap(version, at)
            if self.get(version).status != "challenger":
                raise ServiceError("INVALID_TRANSITION", f"{version!r} is {self.get(version).status}, "
                                   "only the challenger can be promoted")
            self._transition([(champ.version, "champion", "retired"), (version, "challenger", "champion")], at)
            return self._entries[version]

    def retire(self, version: str, at: str) -> ModelRegistryEntry:
        with self._lock:
            e = self.get(version)
            if e.status == "champion":
                raise ServiceError("INVALID_TRANSITION", "the champion is retired only by a promotion")
            self._transition([(version, e.status, "retired")], at)
            return self._entries[version]
