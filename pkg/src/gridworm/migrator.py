"""External Migrator service: checkpoint tracking, staging and restart.

The service owns one state machine per run.  Every migration attempt ends in
exactly one of RUNNING-on-target, HIBERNATING-with-checkpoint, or LOST, so
migration appears atomic to the operator.  Checkpoint files live under a
site-per-directory layout::

    <root>/<site>/<runId>/ckpt-<iteration>.cwck
    <root>/store/<runId>/ckpt-<iteration>.cwck   (safe storage)
"""

from __future__ import annotations

import dataclasses
import shutil
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from .worm import (
    CheckpointMeta,
    ResourceProfile,
    SolverState,
    checkpoint_filename,
    read_checkpoint,
    write_checkpoint,
)

STORE_SITE = "store"


class RunStatus(Enum):
    RUNNING = "RUNNING"
    MIGRATING = "MIGRATING"
    HIBERNATING = "HIBERNATING"
    LOST = "LOST"
    DONE = "DONE"


class Trigger(Enum):
    CONTRACT_VIOLATION = "CONTRACT_VIOLATION"
    MANUAL = "MANUAL"
    BETTER_RESOURCE = "BETTER_RESOURCE"
    SOURCE_SHUTDOWN = "SOURCE_SHUTDOWN"


@dataclass
class TrackedCheckpoint:
    meta: CheckpointMeta
    site: str
    purge_deadline: Optional[float] = None


@dataclass
class RunEvent:
    time: float
    tag: str
    detail: str = ""


@dataclass
class SimulationRecord:
    run_id: str
    status: RunStatus
    current_clique: Optional[str] = None
    checkpoints: List[TrackedCheckpoint] = field(default_factory=list)
    output_files: List[str] = field(default_factory=list)
    profile: Optional[ResourceProfile] = None
    events: List[RunEvent] = field(default_factory=list)
    token: Optional[str] = None


@dataclass(frozen=True)
class TransferModel:
    """Closed-form cost model for moving checkpoint data between sites."""

    default_bandwidth_mbps: float = 1.0
    bandwidth_mbps: Mapping[Tuple[str, str], float] = field(default_factory=dict)
    per_hop_overhead_seconds: float = 2.0
    disk_write_mbps: float = 20.0
    restart_latency_seconds: float = 5.0
    disk_touches_per_hop: int = 2  # one read, one write

    def bandwidth(self, src: str, dst: str) -> float:
        return self.bandwidth_mbps.get((src, dst), self.default_bandwidth_mbps)

    def hop_seconds(self, size_mb: float, src: str, dst: str) -> float:
        return size_mb / self.bandwidth(src, dst) + self.per_hop_overhead_seconds

    def checkpoint_write_seconds(self, size_mb: float) -> float:
        return size_mb / self.disk_write_mbps

    def migration_seconds(self, size_mb: float, hops: List[Tuple[str, str]]) -> float:
        total = self.checkpoint_write_seconds(size_mb)
        for src, dst in hops:
            total += self.hop_seconds(size_mb, src, dst)
        return total + self.restart_latency_seconds


@dataclass(frozen=True)
class MigrationPlan:
    run_id: str
    source: Optional[str]
    target: str
    checkpoint: Optional[TrackedCheckpoint]
    hops: Tuple[Tuple[str, str], ...]
    trigger: Trigger


@dataclass(frozen=True)
class MigrationReport:
    duration_seconds: float
    disk_touches: int
    checkpoint: CheckpointMeta


class MigrationFailed(Exception):
    pass


class Unrecoverable(Exception):
    pass


class MigratorService:
    """Central tracking service contacted by migrating runs."""

    def __init__(self, root: Path, model: TransferModel):
        self.root = Path(root)
        self.model = model
        self.records: Dict[str, SimulationRecord] = {}
        # injectable fault for tests: clique names whose job starts fail
        self.failing_targets: set[str] = set()

    # -- paths ------------------------------------------------------------

    def site_dir(self, site: str, run_id: str) -> Path:
        return self.root / site / run_id

    def _ckpt_path(self, site: str, run_id: str, iteration: int) -> Path:
        return self.site_dir(site, run_id) / checkpoint_filename(iteration)

    # -- tracking ---------------------------------------------------------

    def register_run(
        self,
        run_id: str,
        clique: Optional[str],
        profile: Optional[ResourceProfile] = None,
        token: Optional[str] = None,
        now: float = 0.0,
    ) -> SimulationRecord:
        record = SimulationRecord(
            run_id=run_id,
            status=RunStatus.RUNNING,
            current_clique=clique,
            profile=profile,
            token=token,
        )
        record.events.append(RunEvent(now, "STARTED", f"on {clique}"))
        self.records[run_id] = record
        return record

    def record(self, run_id: str) -> SimulationRecord:
        if run_id not in self.records:
            raise KeyError(f"unknown run {run_id!r}")
        return self.records[run_id]

    def check_token(self, run_id: str, token: Optional[str]):
        record = self.record(run_id)
        if record.token is not None and record.token != token:
            raise PermissionError(f"bad token for run {run_id!r}")

    def track_checkpoint(
        self,
        run_id: str,
        meta: CheckpointMeta,
        site: str,
        purge_deadline: Optional[float] = None,
    ) -> TrackedCheckpoint:
        tracked = TrackedCheckpoint(meta, site, purge_deadline)
        self.record(run_id).checkpoints.append(tracked)
        return tracked

    def newest_checkpoint(
        self, run_id: str, site: Optional[str] = None
    ) -> Optional[TrackedCheckpoint]:
        best = None
        for ck in self.record(run_id).checkpoints:
            if site is not None and ck.site != site:
                continue
            if not Path(ck.meta.location).exists():
                continue
            if best is None or ck.meta.iteration >= best.meta.iteration:
                best = ck
        return best

    # -- migration --------------------------------------------------------

    def migrate(
        self,
        run_id: str,
        state: SolverState,
        target: str,
        trigger: Trigger,
        now: float,
        direct: bool = False,
    ) -> Tuple[SolverState, MigrationReport]:
        """Move a running simulation to a new clique.

        Staged (default) data path: fresh checkpoint on the source site, copy
        to the migrator store, copy to the target site, restart there; six
        disk touches in total.  Direct mode streams the state memory-to-memory
        and only touches disk for the landing checkpoint and the restart read.
        """
        record = self.record(run_id)
        source = record.current_clique
        if source is None:
            raise MigrationFailed(f"run {run_id!r} has no current clique")
        record.status = RunStatus.MIGRATING
        size_mb = _size_mb(state)
        touches = 0

        if direct:
            hops = ((source, target),)
            target_path = self._ckpt_path(target, run_id, state.iteration)
            meta = write_checkpoint(state, target_path, now)
            touches += 1  # landing write at the target
            duration = (
                self.model.hop_seconds(size_mb, source, target)
                + self.model.restart_latency_seconds
            )
        else:
            hops = ((source, STORE_SITE), (STORE_SITE, target))
            src_path = self._ckpt_path(source, run_id, state.iteration)
            meta = write_checkpoint(state, src_path, now)
            touches += 1  # checkpoint write on the source
            self.track_checkpoint(run_id, meta, source)
            path = src_path
            for hop_src, hop_dst in hops:
                dst_path = self._ckpt_path(hop_dst, run_id, state.iteration)
                _copy(path, dst_path)
                touches += 2  # read at hop source, write at hop destination
                self.track_checkpoint(
                    run_id,
                    dataclasses.replace(meta, location=str(dst_path)),
                    hop_dst,
                )
                path = dst_path
            target_path = path
            duration = self.model.migration_seconds(size_mb, list(hops))

        if target in self.failing_targets:
            # target start failed: the run is parked, never lost
            record.status = RunStatus.HIBERNATING
            self._ensure_in_store(run_id, now)
            record.events.append(RunEvent(now, "HIBERNATING", f"start on {target} failed"))
            raise MigrationFailed(f"job start on {target!r} failed")

        restored = read_checkpoint(target_path)
        touches += 1  # restart read at the target
        record.status = RunStatus.RUNNING
        record.current_clique = target
        self.announce(run_id, target, now + duration)
        report = MigrationReport(duration, touches, meta)
        return restored, report

    def announce(self, run_id: str, location: str, now: float):
        """Restarted runs announce themselves; duplicates are idempotent."""
        record = self.record(run_id)
        record.status = RunStatus.RUNNING
        record.current_clique = location
        last = record.events[-1] if record.events else None
        if last and last.tag == "RELOCATED" and last.detail == f"to {location}":
            return
        record.events.append(RunEvent(now, "RELOCATED", f"to {location}"))

    # -- hibernation ------------------------------------------------------

    def hibernate(self, run_id: str, now: float) -> SimulationRecord:
        """Park a run with no viable target; idempotent."""
        record = self.record(run_id)
        if record.status is RunStatus.HIBERNATING:
            return record
        moved = self._ensure_in_store(run_id, now)
        if moved is None:
            record.status = RunStatus.LOST
            record.events.append(RunEvent(now, "LOST", "no checkpoint anywhere"))
            return record
        record.status = RunStatus.HIBERNATING
        record.current_clique = None
        record.events.append(RunEvent(now, "HIBERNATING", f"checkpoint at {moved.meta.location}"))
        return record

    def _ensure_in_store(self, run_id: str, now: float) -> Optional[TrackedCheckpoint]:
        stored = self.newest_checkpoint(run_id, site=STORE_SITE)
        newest = self.newest_checkpoint(run_id)
        if newest is None:
            return stored
        if stored is not None and stored.meta.iteration >= newest.meta.iteration:
            return stored
        dst = self._ckpt_path(STORE_SITE, run_id, newest.meta.iteration)
        _copy(Path(newest.meta.location), dst)
        meta = dataclasses.replace(newest.meta, location=str(dst))
        return self.track_checkpoint(run_id, meta, STORE_SITE)

    def wake(self, run_id: str, target: str, now: float) -> Tuple[SolverState, MigrationReport]:
        """Restart a hibernating run from safe storage on a new target."""
        record = self.record(run_id)
        stored = self.newest_checkpoint(run_id, site=STORE_SITE)
        if stored is None:
            raise Unrecoverable(f"run {run_id!r} has no checkpoint in safe storage")
        size_mb = stored.meta.size_bytes / 2**20
        dst = self._ckpt_path(target, run_id, stored.meta.iteration)
        _copy(Path(stored.meta.location), dst)
        restored = read_checkpoint(dst)
        duration = (
            self.model.hop_seconds(size_mb, STORE_SITE, target)
            + self.model.restart_latency_seconds
        )
        record.status = RunStatus.RUNNING
        record.current_clique = target
        self.announce(run_id, target, now + duration)
        return restored, MigrationReport(duration, 2, stored.meta)

    # -- purge evacuation -------------------------------------------------

    def evacuation_start_time(
        self, checkpoint: TrackedCheckpoint, margin_seconds: float
    ) -> float:
        """Latest safe start so the copy lands in the store before the purge."""
        if checkpoint.purge_deadline is None:
            raise ValueError("checkpoint has no purge deadline")
        size_mb = checkpoint.meta.size_bytes / 2**20
        transfer = size_mb / self.model.bandwidth(checkpoint.site, STORE_SITE)
        return checkpoint.purge_deadline - transfer - margin_seconds

    def evacuate_before_purge(
        self, run_id: str, now: float, margin_seconds: float = 10.0, eager: bool = False
    ) -> List[TrackedCheckpoint]:
        """Copy deadline-threatened checkpoints into safe storage.

        With ``eager`` the copy happens immediately; otherwise only once the
        latest safe start time has been reached.
        """
        record = self.record(run_id)
        evacuated = []
        for ck in list(record.checkpoints):
            if ck.purge_deadline is None or ck.site == STORE_SITE:
                continue
            if not eager and now < self.evacuation_start_time(ck, margin_seconds):
                continue
            dst = self._ckpt_path(STORE_SITE, run_id, ck.meta.iteration)
            _copy(Path(ck.meta.location), dst)
            meta = dataclasses.replace(ck.meta, location=str(dst))
            tracked = self.track_checkpoint(run_id, meta, STORE_SITE)
            ck.purge_deadline = None
            record.events.append(
                RunEvent(now, "EVACUATED", f"{ck.meta.location} -> {dst}")
            )
            evacuated.append(tracked)
        return evacuated

    # -- crash recovery ---------------------------------------------------

    def mark_lost(self, run_id: str, now: float) -> SimulationRecord:
        record = self.record(run_id)
        record.status = RunStatus.LOST
        record.current_clique = None
        record.events.append(RunEvent(now, "SOURCE_LOST", "shut down without warning"))
        return record

    def recover_plan(self, run_id: str, target: str, now: float) -> MigrationPlan:
        """Plan a restart from the newest surviving backup checkpoint."""
        record = self.record(run_id)
        newest = self.newest_checkpoint(run_id, site=STORE_SITE) or self.newest_checkpoint(run_id)
        if newest is None:
            record.status = RunStatus.DONE
            record.events.append(RunEvent(now, "UNRECOVERABLE", "no tracked checkpoint"))
            raise Unrecoverable(f"run {run_id!r} has no tracked checkpoint")
        return MigrationPlan(
            run_id=run_id,
            source=None,
            target=target,
            checkpoint=newest,
            hops=((newest.site, target),),
            trigger=Trigger.SOURCE_SHUTDOWN,
        )

    def recover(self, run_id: str, target: str, now: float) -> Tuple[SolverState, MigrationReport]:
        plan = self.recover_plan(run_id, target, now)
        record = self.record(run_id)
        ck = plan.checkpoint
        size_mb = ck.meta.size_bytes / 2**20
        dst = self._ckpt_path(target, run_id, ck.meta.iteration)
        _copy(Path(ck.meta.location), dst)
        restored = read_checkpoint(dst)
        duration = (
            self.model.hop_seconds(size_mb, ck.site, target)
            + self.model.restart_latency_seconds
        )
        record.status = RunStatus.RUNNING
        record.current_clique = target
        record.events.append(RunEvent(now + duration, "RECOVERED", f"on {target} from iteration {ck.meta.iteration}"))
        return restored, MigrationReport(duration, 2, ck.meta)

    # -- notification -----------------------------------------------------

    def notify_user(self, run_id: str, new_location: str, now: float) -> RunEvent:
        record = self.record(run_id)
        event = RunEvent(now, "NOTIFIED", f"simulation relocated to {new_location}")
        record.events.append(event)
        return event


def _size_mb(state: SolverState) -> float:
    return state.field.nbytes / 2**20


def _copy(src: Path, dst: Path):
    dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, dst)
