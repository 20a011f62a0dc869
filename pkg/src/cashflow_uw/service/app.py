"""Local HTTP API for scoring, the model registry, drift and retraining."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse

from ..config import ServiceConfig
from ..errors import ServiceError, UnderwritingError
from ..features import FeatureStore
from .decision import DecisionEngine, ScoreRequest, StatementFile
from .monitor import drift_check
from .registry import Registry
from .retrain import ci_retrain

logger = logging.getLogger(__name__)

STATUS = {
    "NO_CHAMPION": 503,
    "NOT_FOUND": 404,
    "DUPLICATE_ARTIFACT": 409,
    "CHALLENGER_EXISTS": 409,
    "ALREADY_BOOTSTRAPPED": 409,
    "INVALID_TRANSITION": 409,
}


class ServiceState:
    """Registry, decision engine and feature store shared by all requests."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.registry = Registry(config.registry_dir)
        log_path = Path(config.decision_log)
        if not log_path.is_absolute():
            log_path = Path(config.registry_dir) / log_path
        self.engine = DecisionEngine(self.registry, log_path, config.thresholds, clock=config.now)
        self.store_path = Path(config.store_dir) / "features.jsonl"
        self.write_lock = threading.Lock()
        if config.canary_fraction:
            logger.info("canary_fraction=%s parsed; traffic splitting across replicas is not performed",
                        config.canary_fraction)

    def drift(self):
        champ = self.engine.champion
        if champ is None:
            raise ServiceError("NO_CHAMPION", "no champion model registered")
        window = self.engine.window(self.config.drift_window, champ.version)
        return drift_check(champ.woe_table, window, self.config.psi_alert, self.config.psi_epsilon, champ.version)

    def retrain(self, trigger: str) -> dict:
        store = FeatureStore(self.store_path)
        entries = [e for e in store.entries() if e.label is not None]
        with self.write_lock:
            res = ci_retrain(trigger, [e.vector for e in entries], [e.label for e in entries], self.registry,
                             at=self.config.now(), seed=self.config.seed, binning=self.config.binning,
                             lam=self.config.lam, thresholds=self.config.thresholds,
                             min_per_class=self.config.min_outcomes_per_class)
            self.engine.refresh()
        return res.to_dict()


def _error(exc: UnderwritingError) -> JSONResponse:
    return JSONResponse({"error": exc.to_dict()}, status_code=STATUS.get(exc.code, 422))


def create_app(config: ServiceConfig, state: Optional[ServiceState] = None) -> FastAPI:
    state = state or ServiceState(config)
    app = FastAPI(title="cashflow-uw decision service", version="1")
    app.state.service = state

    @app.exception_handler(UnderwritingError)
    async def _handle(request: Request, exc: UnderwritingError):
        return _error(exc)

    # scoring is CPU-bound; plain ``def`` endpoints run in the threadpool
    @app.post("/v1/score")
    def score(form: str = Form(...), statements: list[UploadFile] = File(...)):
        try:
            payload = json.loads(form)
        except json.JSONDecodeError as exc:
            raise ServiceError("INVALID_FORM", f"form is not JSON: {exc}")
        if not isinstance(payload, dict):
            raise ServiceError("INVALID_FORM", "form must be a JSON object")
        files = [StatementFile(f.filename or "statement.csv", f.file.read()) for f in statements]
        req = ScoreRequest(
            form=payload.get("form", payload),
            statements=files,
            applicant_id=payload.get("applicant_id"),
            account_id=payload.get("account_id", "unknown"),
            bureau_rating=payload.get("bureau_rating"),
        )
        return state.engine.score(req).to_dict()

    @app.get("/v1/models")
    def list_models():
        reg = state.registry
        return {"models": [e.to_dict() for e in reg.entries()],
                "champion": reg.champion.version if reg.champion else None,
                "challenger": reg.challenger.version if reg.challenger else None}

    @app.post("/v1/models", status_code=201)
    async def register(request: Request):
        try:
            doc = await request.json()
        except Exception:
            raise ServiceError("SCHEMA_INVALID", "body must be a JSON model document")
        with state.write_lock:
            entry = state.registry.register(doc, config.now())
        return entry.to_dict()

    @app.post("/v1/models/{version}/promote")
    def promote(version: str):
        with state.write_lock:
            reg = state.registry
            if reg.champion is not None and reg.get(version).status == "candidate" and reg.challenger is None:
                reg.designate_challenger(version, config.now())
            entry = reg.promote(version, config.now())
            state.engine.refresh()
        return entry.to_dict()

    @app.get("/v1/drift")
    def drift():
        return state.drift().to_dict()

    @app.post("/v1/retrain")
    def retrain(body: Optional[dict] = Body(default=None)):
        return state.retrain((body or {}).get("trigger", "scheduled"))

    return app
