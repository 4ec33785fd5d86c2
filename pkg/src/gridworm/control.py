"""HTTP control plane for a live or replayed run.

Endpoints: GET /status, GET /metrics?since=, GET /resources,
POST /contract, POST /migrate, POST /pause, POST /resume.  Every mutation is
converted to a command and queued to the engine; commands take effect only
at quantum boundaries, so no quantum mixes old and new parameters.  The same
read surface can also serve a recorded scenario log read-only.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import classad
from .contract import ContractParams
from .migrator import RunStatus
from .resources import derive_clique_ad
from .sim import (
    Engine,
    MetricsRecord,
    MigrateCommand,
    PauseCommand,
    ResumeCommand,
    SetContractCommand,
)


class ContractBody(BaseModel):
    quantumSeconds: float = Field(gt=0)
    degradationThreshold: float = Field(gt=0, lt=1)
    consecutiveRequired: int = Field(ge=1)


class MigrateBody(BaseModel):
    target: Optional[str] = None


def _metric_dict(r: MetricsRecord) -> dict:
    return json.loads(r.to_json())


def create_app(engine: Engine) -> FastAPI:
    """Control surface bound to a live engine."""
    app = FastAPI(title="gridworm control")

    @app.get("/status")
    def get_status():
        record = engine.record
        if record is None:
            return {}
        params = engine.contract_params
        return {
            "runId": record.run_id,
            "status": record.status.value,
            "clique": engine.current_clique,
            "iteration": engine.state.iteration if engine.state is not None else None,
            "contract": {
                "quantumSeconds": params.quantum_seconds,
                "degradationThreshold": params.degradation_threshold,
                "consecutiveRequired": params.consecutive_required,
            },
            "consecutiveViolations": (
                engine.contract_state.consecutive_violations
                if engine.contract_state is not None
                else 0
            ),
        }

    @app.get("/metrics")
    def get_metrics(since: int = 0):
        return [_metric_dict(r) for r in engine.metrics[since:]]

    @app.get("/events")
    def get_events(since: int = 0):
        return [
            {"time": e.time, "tag": e.tag, "detail": e.detail}
            for e in engine.eventlog[since:]
        ]

    @app.get("/resources")
    def get_resources():
        out = []
        for clique in engine.directory.live(engine.t):
            ad = derive_clique_ad(clique, engine.t)
            rank = 0.0
            if classad.check_requirements(engine.request_ad, ad):
                rank = classad.compute_rank(engine.request_ad, ad)
            out.append(
                {
                    "name": clique.name,
                    "ad": classad.print_ad(ad),
                    "rank": rank,
                    "current": clique.name == engine.current_clique,
                }
            )
        return out

    @app.post("/contract")
    def post_contract(body: ContractBody):
        try:
            params = ContractParams(
                quantum_seconds=body.quantumSeconds,
                degradation_threshold=body.degradationThreshold,
                consecutive_required=body.consecutiveRequired,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        engine.submit(SetContractCommand(params))
        return {"accepted": True}

    @app.post("/migrate")
    def post_migrate(body: MigrateBody):
        if engine.status is not RunStatus.RUNNING:
            raise HTTPException(status_code=409, detail="run is not RUNNING")
        if body.target is not None:
            clique = engine.directory.get(body.target, engine.t)
            if clique is None:
                raise HTTPException(
                    status_code=400, detail=f"unknown or stale clique {body.target!r}"
                )
            ad = derive_clique_ad(clique, engine.t)
            if not classad.check_requirements(engine.request_ad, ad):
                raise HTTPException(
                    status_code=400,
                    detail=f"clique {body.target!r} fails requirements",
                )
        elif not list(engine.directory.live(engine.t)):
            raise HTTPException(status_code=400, detail="no live resources")
        engine.submit(MigrateCommand(body.target))
        return {"accepted": True}

    @app.post("/pause")
    def post_pause():
        engine.submit(PauseCommand())
        return {"accepted": True}

    @app.post("/resume")
    def post_resume():
        engine.submit(ResumeCommand())
        return {"accepted": True}

    return app


def create_replay_app(metrics_path: Path, events_path: Optional[Path] = None) -> FastAPI:
    """Read-only control surface over recorded scenario logs."""
    app = FastAPI(title="gridworm replay")
    metrics: List[dict] = [
        json.loads(line)
        for line in Path(metrics_path).read_text().splitlines()
        if line.strip()
    ]
    events: List[dict] = []
    if events_path is not None and Path(events_path).exists():
        events = [
            json.loads(line)
            for line in Path(events_path).read_text().splitlines()
            if line.strip()
        ]

    @app.get("/status")
    def get_status():
        return {"status": "REPLAY", "records": len(metrics)}

    @app.get("/metrics")
    def get_metrics(since: int = 0):
        return metrics[since:]

    @app.get("/events")
    def get_events(since: int = 0):
        return events[since:]

    @app.get("/resources")
    def get_resources():
        return []

    @app.post("/contract")
    @app.post("/migrate")
    @app.post("/pause")
    @app.post("/resume")
    def reject():
        raise HTTPException(status_code=405, detail="replay server is read-only")

    return app


class LiveRunner:
    """Drives an engine in a background thread, one quantum per wall-clock
    quantum interval (or as fast as possible when ``fast`` is set)."""

    def __init__(self, engine: Engine, fast: bool = False):
        self.engine = engine
        self.fast = fast
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self):
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while not self._stop.is_set():
            if not self.engine.step():
                break
            if not self.fast:
                time.sleep(self.engine.contract_params.quantum_seconds)

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
