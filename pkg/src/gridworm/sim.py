"""Deterministic discrete-event engine and scenario scripting.

Scenarios are line-oriented structured text (see ``parse_scenario``) that
define cliques, contract parameters, the workload, a transfer-cost model and
a timed event script.  Replays are fully deterministic: the same scenario
always produces byte-identical metrics and event logs.

Scenario file format (``#`` starts a comment; blank lines ignored)::

    version 1
    seed 42

    [workload]
    dims 8 8 8
    alpha 0.1
    runId run-1

    [contract]
    quantumSeconds 1.0
    degradationThreshold 0.10
    consecutiveRequired 3

    [backup]
    intervalSeconds 5
    retention 3

    [transfer]
    defaultBandwidthMBps 1.0
    perHopOverheadSeconds 2.0
    diskWriteMBps 20.0
    restartLatencySeconds 5.0
    bandwidth <src> <dst> <MBps>      # repeatable

    [clique <name>]
    linkBandwidthMBps 100
    wanBandwidthMBps 10
    machine <name> domain=<d> opSys=<os> cpuCount=<n> cpuSpeedMHz=<f> \
            memBytes=<n> baseLoad=<f> iterRateFactor=<f>

    [request]
    [  ... a ClassAd, closed by a line holding only "]" ... ]

    [run]
    maxQuanta 20
    notifyRunning false
    directTransfer false

    [events]
    <time> <Kind> <args...>           # in nondecreasing time order
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import tempfile
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, List, Optional, Tuple

from . import classad, contract, selector, worm
from .classad import ClassAd, parse_ad
from .contract import ContractParams, ContractState
from .migrator import (
    MigrationFailed,
    MigratorService,
    RunStatus,
    TransferModel,
    Trigger,
    Unrecoverable,
)
from .resources import (
    Clique,
    Directory,
    MachineSpec,
    apply_load_to_clique,
    derive_clique_ad,
)
from .selector import Failure, SelectionRequest, Success, exclude_current, select
from .worm import BackupManager, SolverState

SCENARIO_VERSION = 1

DEFAULT_REQUEST_AD = """[
  Type = "request";
  Owner = "operator";
  requirements = "other.CPUCount >= 1";
  rank = other.minCPUSpeed * other.CPUCount / (other.maxCPULoad + 1);
]"""


class EventKind(Enum):
    REGISTER_CLIQUE = "RegisterClique"
    DEREGISTER_CLIQUE = "DeregisterClique"
    INJECT_LOAD = "InjectLoad"
    START_RUN = "StartRun"
    KILL_SOURCE = "KillSource"
    PURGE_DEADLINE = "PurgeDeadline"
    MANUAL_MIGRATE = "ManualMigrate"
    SET_CONTRACT_PARAMS = "SetContractParams"
    ANNOTATION = "Annotation"


@dataclass(frozen=True)
class Event:
    time: float
    kind: EventKind
    payload: Tuple[str, ...] = ()


@dataclass
class Scenario:
    version: int
    seed: int
    cliques: List[Tuple[Clique, float]]  # clique + registration TTL (from events)
    contract_params: ContractParams
    dims: Tuple[int, int, int]
    alpha: float
    run_id: str
    transfer: TransferModel
    request_ad_text: str
    events: List[Event]
    backup_interval: float = 25.0
    backup_retention: int = 3
    max_quanta: int = 50
    notify_running: bool = False
    direct_transfer: bool = False

    def clique(self, name: str) -> Clique:
        for c, _ in self.cliques:
            if c.name == name:
                return c
        raise ScenarioError(f"unknown clique {name!r}")


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class MetricsRecord:
    time: float
    quantum_index: Optional[int]
    clique_name: Optional[str]
    rate: Optional[float]
    average: Optional[float]
    degradation: Optional[float]
    violation: Optional[bool]
    event_tag: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "quantumIndex": self.quantum_index,
                "clique": self.clique_name,
                "rate": self.rate,
                "average": self.average,
                "degradation": self.degradation,
                "violation": self.violation,
                "eventTag": self.event_tag,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "MetricsRecord":
        d = json.loads(line)
        return MetricsRecord(
            time=d["time"],
            quantum_index=d["quantumIndex"],
            clique_name=d["clique"],
            rate=d["rate"],
            average=d["average"],
            degradation=d["degradation"],
            violation=d["violation"],
            event_tag=d["eventTag"],
        )


@dataclass(frozen=True)
class LogEntry:
    time: float
    tag: str
    detail: str

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "tag": self.tag, "detail": self.detail},
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# Scenario parsing


_SIZE_SUFFIX = {"K": 2**10, "M": 2**20, "G": 2**30}


def _parse_size(text: str) -> int:
    if text and text[-1].upper() in _SIZE_SUFFIX:
        return int(text[:-1]) * _SIZE_SUFFIX[text[-1].upper()]
    return int(text)


def _parse_machine(args: List[str], lineno: int) -> MachineSpec:
    if not args:
        raise ScenarioError(f"line {lineno}: machine needs a name")
    name, fields = args[0], {}
    for part in args[1:]:
        if "=" not in part:
            raise ScenarioError(f"line {lineno}: expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        fields[k] = v
    try:
        return MachineSpec(
            name=name,
            domain=fields["domain"],
            op_sys=fields["opSys"],
            cpu_count=int(fields["cpuCount"]),
            cpu_speed_mhz=float(fields["cpuSpeedMHz"]),
            mem_bytes=_parse_size(fields["memBytes"]),
            base_load=float(fields.get("baseLoad", "0")),
            iter_rate_factor=float(fields.get("iterRateFactor", "1")),
        )
    except KeyError as exc:
        raise ScenarioError(f"line {lineno}: machine {name!r} missing {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"line {lineno}: machine {name!r}: {exc}") from exc


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document before any execution."""
    lines = text.splitlines()
    version: Optional[int] = None
    seed = 0
    section: Optional[str] = None
    section_arg: Optional[str] = None
    cliques: Dict[str, Dict] = {}
    contract_kv: Dict[str, str] = {}
    workload_kv: Dict[str, str] = {}
    backup_kv: Dict[str, str] = {}
    run_kv: Dict[str, str] = {}
    transfer_kv: Dict[str, str] = {}
    hop_bandwidths: Dict[Tuple[str, str], float] = {}
    request_lines: List[str] = []
    in_request_ad = False
    events: List[Event] = []
    errors: List[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip() if not in_request_ad else raw.rstrip()
        if not line.strip():
            continue
        if in_request_ad:
            request_lines.append(line)
            if line.strip() == "]":
                in_request_ad = False
            continue
        if line.startswith("[") and line.endswith("]"):
            inner = line[1:-1].strip()
            parts = inner.split(None, 1)
            section = parts[0].lower()
            section_arg = parts[1] if len(parts) > 1 else None
            if section == "clique":
                if not section_arg:
                    errors.append(f"line {lineno}: clique section needs a name")
                elif section_arg in cliques:
                    errors.append(f"line {lineno}: duplicate clique {section_arg!r}")
                else:
                    cliques[section_arg] = {"machines": []}
            elif section == "request":
                in_request_ad = True
                request_lines = []
            elif section not in ("workload", "contract", "backup", "transfer", "run", "events"):
                errors.append(f"line {lineno}: unknown section {inner!r}")
            continue
        tokens = line.split()
        try:
            if section is None:
                if tokens[0] == "version":
                    version = int(tokens[1])
                elif tokens[0] == "seed":
                    seed = int(tokens[1])
                else:
                    errors.append(f"line {lineno}: unknown top-level key {tokens[0]!r}")
            elif section == "clique":
                spec = cliques.get(section_arg)
                if spec is None:
                    continue
                if tokens[0] == "machine":
                    spec["machines"].append(_parse_machine(tokens[1:], lineno))
                else:
                    spec[tokens[0]] = tokens[1]
            elif section in ("workload", "contract", "backup", "run"):
                target = {
                    "workload": workload_kv,
                    "contract": contract_kv,
                    "backup": backup_kv,
                    "run": run_kv,
                }[section]
                target[tokens[0]] = " ".join(tokens[1:])
            elif section == "transfer":
                if tokens[0] == "bandwidth":
                    hop_bandwidths[(tokens[1], tokens[2])] = float(tokens[3])
                else:
                    transfer_kv[tokens[0]] = tokens[1]
            elif section == "events":
                time_s = float(tokens[0])
                try:
                    kind = EventKind(tokens[1])
                except ValueError:
                    errors.append(f"line {lineno}: unknown event kind {tokens[1]!r}")
                    continue
                events.append(Event(time_s, kind, tuple(tokens[2:])))
        except (IndexError, ValueError, ScenarioError) as exc:
            errors.append(f"line {lineno}: {exc}")

    if in_request_ad:
        errors.append("request ad not terminated by a ']' line")
    if version is None:
        errors.append("missing 'version'")
    elif version != SCENARIO_VERSION:
        errors.append(f"unsupported scenario version {version}")

    built_cliques: List[Tuple[Clique, float]] = []
    for name, spec in cliques.items():
        try:
            built_cliques.append(
                (
                    Clique(
                        name=name,
                        members=tuple(spec["machines"]),
                        link_bandwidth_mbps=float(spec.get("linkBandwidthMBps", "100")),
                        wan_bandwidth_mbps=float(spec.get("wanBandwidthMBps", "10")),
                    ),
                    0.0,
                )
            )
        except (ValueError, KeyError) as exc:
            errors.append(f"clique {name!r}: {exc}")

    try:
        params = ContractParams(
            quantum_seconds=float(contract_kv.get("quantumSeconds", "1.0")),
            degradation_threshold=float(contract_kv.get("degradationThreshold", "0.10")),
            consecutive_required=int(contract_kv.get("consecutiveRequired", "3")),
        )
    except ValueError as exc:
        errors.append(f"contract: {exc}")
        params = ContractParams(1.0, 0.10, 3)

    dims_text = workload_kv.get("dims", "8 8 8").split()
    if len(dims_text) != 3:
        errors.append("workload dims must have three axes")
        dims: Tuple[int, int, int] = (8, 8, 8)
    else:
        dims = tuple(int(x) for x in dims_text)  # type: ignore[assignment]

    transfer = TransferModel(
        default_bandwidth_mbps=float(transfer_kv.get("defaultBandwidthMBps", "1.0")),
        bandwidth_mbps=hop_bandwidths,
        per_hop_overhead_seconds=float(transfer_kv.get("perHopOverheadSeconds", "2.0")),
        disk_write_mbps=float(transfer_kv.get("diskWriteMBps", "20.0")),
        restart_latency_seconds=float(transfer_kv.get("restartLatencySeconds", "5.0")),
    )

    request_text = "\n".join(request_lines) if request_lines else DEFAULT_REQUEST_AD
    try:
        ad = parse_ad(request_text)
        if "requirements" not in ad:
            errors.append("request ad has no requirements attribute")
    except classad.ClassAdError as exc:
        errors.append(f"request ad: {exc}")

    for event in events:
        if event.kind in (EventKind.REGISTER_CLIQUE, EventKind.DEREGISTER_CLIQUE):
            if not event.payload:
                errors.append(f"event {event.kind.value} needs a clique name")
            elif event.payload[0] not in cliques:
                errors.append(f"event references unknown clique {event.payload[0]!r}")

    if errors:
        raise ScenarioError("; ".join(errors))

    return Scenario(
        version=version,
        seed=seed,
        cliques=built_cliques,
        contract_params=params,
        dims=dims,
        alpha=float(workload_kv.get("alpha", "0.1")),
        run_id=workload_kv.get("runId", "run-1"),
        transfer=transfer,
        request_ad_text=request_text,
        events=events,
        backup_interval=float(backup_kv.get("intervalSeconds", "25")),
        backup_retention=int(backup_kv.get("retention", "3")),
        max_quanta=int(run_kv.get("maxQuanta", "50")),
        notify_running=run_kv.get("notifyRunning", "false").lower() == "true",
        direct_transfer=run_kv.get("directTransfer", "false").lower() == "true",
    )


def load_scenario(path: Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


# ---------------------------------------------------------------------------
# Control commands (injected by the HTTP control plane, applied at quantum
# boundaries)


@dataclass(frozen=True)
class SetContractCommand:
    params: ContractParams


@dataclass(frozen=True)
class MigrateCommand:
    target: Optional[str] = None


@dataclass(frozen=True)
class PauseCommand:
    pass


@dataclass(frozen=True)
class ResumeCommand:
    pass


# ---------------------------------------------------------------------------
# Engine


class Engine:
    """Single-owner event loop driving the worm, contract, selector and
    migrator on a simulated clock."""

    def __init__(self, scenario: Scenario, root: Optional[Path] = None):
        self.scenario = scenario
        if root is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="gridworm-")
            root = Path(self._tmp.name)
        self.root = Path(root)
        self.t = 0.0
        self.quantum_no = 0
        self.directory = Directory()
        self.migrator = MigratorService(self.root, scenario.transfer)
        self.metrics: List[MetricsRecord] = []
        self.eventlog: List[LogEntry] = []
        self.commands: Deque[object] = deque()
        self.paused = False
        self.state: Optional[SolverState] = None
        self.contract_state: Optional[ContractState] = None
        self.contract_params = scenario.contract_params
        self.current_clique: Optional[str] = None
        self.current_machine: Optional[MachineSpec] = None
        self.backup = BackupManager(
            self.root / "store",
            scenario.backup_interval,
            scenario.backup_retention,
        )
        self.request_ad = parse_ad(scenario.request_ad_text)
        # background transfers whose completion entries are flushed once the
        # clock catches up: (completion time, tag, detail)
        self._deferred_log: List[Tuple[float, str, str]] = []
        self._pending = deque(
            sorted(enumerate(scenario.events), key=lambda p: (p[1].time, p[0]))
        )

    # -- logging ----------------------------------------------------------

    def _log(self, tag: str, detail: str = ""):
        self.eventlog.append(LogEntry(self.t, tag, detail))

    def _metric_event(self, tag: str):
        self.metrics.append(
            MetricsRecord(self.t, None, self.current_clique, None, None, None, None, tag)
        )

    # -- run record helpers ----------------------------------------------

    @property
    def record(self):
        try:
            return self.migrator.record(self.scenario.run_id)
        except KeyError:
            return None

    @property
    def status(self) -> Optional[RunStatus]:
        record = self.record
        return record.status if record else None

    def _request(self) -> SelectionRequest:
        return SelectionRequest(self.request_ad, request_id=self.scenario.run_id)

    # -- event processing -------------------------------------------------

    def _process_due_events(self):
        while self._pending and self._pending[0][1].time <= self.t:
            _, event = self._pending.popleft()
            self._apply_event(event)

    def _apply_event(self, event: Event):
        kind, args = event.kind, event.payload
        if kind is EventKind.REGISTER_CLIQUE:
            name = args[0]
            ttl = 10**9
            for part in args[1:]:
                if part.startswith("ttl="):
                    ttl = float(part[4:])
            clique = self._live_or_scenario_clique(name)
            self.directory = self.directory.register(clique, ttl, event.time)
            self._log("REGISTERED", name)
            self._on_directory_change(name)
        elif kind is EventKind.DEREGISTER_CLIQUE:
            self.directory = self.directory.deregister(args[0])
            self._log("DEREGISTERED", args[0])
        elif kind is EventKind.INJECT_LOAD:
            clique_name, machine_name, delta = args[0], args[1], float(args[2])
            clique = self.directory.get(clique_name, self.t)
            if clique is None:
                clique = self.scenario.clique(clique_name)
                updated = apply_load_to_clique(clique, machine_name, delta)
            else:
                updated = apply_load_to_clique(clique, machine_name, delta)
                self.directory = self.directory.replace_clique(updated)
            if self.current_machine and self.current_machine.name == machine_name:
                self.current_machine = updated.member(machine_name)
            self._log("LOAD_INJECTED", f"{clique_name}/{machine_name} {delta:+g}")
        elif kind is EventKind.START_RUN:
            self._start_run()
        elif kind is EventKind.KILL_SOURCE:
            self._kill_source()
        elif kind is EventKind.PURGE_DEADLINE:
            self._purge_deadline(args)
        elif kind is EventKind.MANUAL_MIGRATE:
            target = args[0] if args else None
            self._attempt_migration(Trigger.MANUAL, explicit_target=target)
        elif kind is EventKind.SET_CONTRACT_PARAMS:
            params = ContractParams(
                quantum_seconds=float(args[0]),
                degradation_threshold=float(args[1]),
                consecutive_required=int(args[2]),
            )
            self._set_contract_params(params)
        elif kind is EventKind.ANNOTATION:
            self._log("ANNOTATION", " ".join(args))
            self._metric_event("ANNOTATION")

    def _live_or_scenario_clique(self, name: str) -> Clique:
        live = self.directory.registrations.get(name)
        return live.clique if live else self.scenario.clique(name)

    def _on_directory_change(self, new_clique: str):
        record = self.record
        if record is None:
            return
        if record.status is RunStatus.HIBERNATING:
            # hibernation watcher: retry selection whenever resources appear
            resp = select(self._request(), self.directory, self.t)
            if isinstance(resp, Success):
                self._wake(resp.clique_name)
        elif record.status is RunStatus.RUNNING and self.scenario.notify_running:
            current = self.directory.get(self.current_clique, self.t)
            if current is None:
                return
            current_rank = classad.compute_rank(
                self.request_ad, derive_clique_ad(current, self.t)
            )
            candidate = self.directory.get(new_clique, self.t)
            if candidate is None or new_clique == self.current_clique:
                return
            ad = derive_clique_ad(candidate, self.t)
            if (
                classad.check_requirements(self.request_ad, ad)
                and classad.compute_rank(self.request_ad, ad) > current_rank
            ):
                self._attempt_migration(Trigger.BETTER_RESOURCE, explicit_target=new_clique)

    # -- run lifecycle -----------------------------------------------------

    def _start_run(self):
        resp = select(self._request(), self.directory, self.t)
        if isinstance(resp, Failure):
            raise ScenarioError(f"StartRun: {resp.reason}")
        self.state = worm.make_state(
            self.scenario.dims,
            self.scenario.alpha,
            self.scenario.run_id,
            seed=self.scenario.seed,
        )
        self._place_on(resp.clique_name)
        self.migrator.register_run(
            self.scenario.run_id,
            resp.clique_name,
            profile=worm.profile_of(self.state),
            now=self.t,
        )
        self.contract_state = None
        self._log("RUN_STARTED", f"on {resp.clique_name} rank={resp.rank:g}")
        self._metric_event("RUN_STARTED")

    def _place_on(self, clique_name: str):
        clique = self.directory.get(clique_name, self.t) or self.scenario.clique(clique_name)
        self.current_clique = clique_name
        # the run executes on the clique's fastest member
        self.current_machine = max(
            clique.members, key=lambda m: (m.iter_rate_factor, m.name)
        )

    def _refresh_current_machine(self):
        clique = self.directory.get(self.current_clique, self.t)
        if clique is not None and self.current_machine is not None:
            try:
                self.current_machine = clique.member(self.current_machine.name)
            except KeyError:
                pass

    def _run_quantum(self):
        assert self.state is not None and self.current_machine is not None
        self._refresh_current_machine()
        q = self.contract_params.quantum_seconds
        self.state, iterations = worm.run_quantum(self.state, self.current_machine, q)
        self.t += q
        self.quantum_no += 1
        rate = iterations / q
        if self.contract_state is None:
            # first quantum on this resource: the baseline measures itself
            self.contract_state = contract.init(max(rate, 1e-9), self.contract_params)
            verdict = self.contract_state.history[0]
        else:
            self.contract_state, verdict = contract.observe(
                self.contract_state, iterations, q
            )
        self.metrics.append(
            MetricsRecord(
                time=self.t,
                quantum_index=self.quantum_no,
                clique_name=self.current_clique,
                rate=rate,
                average=verdict.average,
                degradation=verdict.degradation,
                violation=verdict.violation,
            )
        )
        if verdict.violation:
            self._log("VIOLATION", f"quantum {self.quantum_no} degradation {verdict.degradation:.3f}")
        meta = self.backup.tick(self.state, self.t)
        if meta is not None:
            self.migrator.track_checkpoint(self.scenario.run_id, meta, "store")
        if verdict.trigger:
            self._log("TRIGGER", f"{self.contract_state.consecutive_violations} consecutive violations")
            self._attempt_migration(Trigger.CONTRACT_VIOLATION)

    def _attempt_migration(self, trigger: Trigger, explicit_target: Optional[str] = None):
        record = self.record
        if record is None or record.status is not RunStatus.RUNNING:
            return
        if explicit_target is not None:
            target_clique = self.directory.get(explicit_target, self.t)
            if target_clique is None:
                self._log("MIGRATE_REJECTED", f"unknown or stale target {explicit_target!r}")
                return
            ad = derive_clique_ad(target_clique, self.t)
            if not classad.check_requirements(self.request_ad, ad):
                self._log("MIGRATE_REJECTED", f"target {explicit_target!r} fails requirements")
                return
            target = explicit_target
        else:
            request = exclude_current(
                self._request(), self.current_clique, self.directory, self.t
            )
            if trigger is Trigger.MANUAL:
                # the operator just wants to move; any matching clique will do
                request = dataclasses.replace(request, min_rank=None)
            resp = select(request, self.directory, self.t)
            if isinstance(resp, Failure):
                if trigger is Trigger.MANUAL:
                    # the current resource is still fine; stay put
                    self._log("MIGRATE_REJECTED", resp.reason)
                else:
                    self._hibernate(resp.reason)
                return
            target = resp.clique_name
        try:
            self.state, report = self.migrator.migrate(
                self.scenario.run_id,
                self.state,
                target,
                trigger,
                self.t,
                direct=self.scenario.direct_transfer,
            )
        except MigrationFailed as exc:
            self.t += self.scenario.transfer.per_hop_overhead_seconds
            self.contract_state = None
            self._log("MIGRATION_FAILED", str(exc))
            self._metric_event("HIBERNATING")
            return
        self.t += report.duration_seconds
        self._place_on(target)
        self.contract_state = None  # fresh contract on the new resource
        self.migrator.notify_user(self.scenario.run_id, target, self.t)
        self._log(
            "MIGRATED",
            f"to {target} trigger={trigger.value} duration={report.duration_seconds:.1f}s"
            f" diskTouches={report.disk_touches}",
        )
        self._metric_event("MIGRATED")

    def _hibernate(self, reason: str):
        if self.state is not None:
            # the worm is still alive: park a fresh checkpoint in safe storage
            path = self.migrator.site_dir("store", self.scenario.run_id) / worm.checkpoint_filename(
                self.state.iteration
            )
            meta = worm.write_checkpoint(self.state, path, self.t)
            self.migrator.track_checkpoint(self.scenario.run_id, meta, "store")
        record = self.migrator.hibernate(self.scenario.run_id, self.t)
        self.contract_state = None
        self.current_clique = None
        self.current_machine = None
        if record.status is RunStatus.LOST:
            self._log("LOST", reason)
        else:
            self._log("HIBERNATING", reason)
            self._metric_event("HIBERNATING")

    def _wake(self, target: str):
        try:
            self.state, report = self.migrator.wake(self.scenario.run_id, target, self.t)
        except Unrecoverable as exc:
            self._log("LOST", str(exc))
            return
        self.t += report.duration_seconds
        self._place_on(target)
        self.contract_state = None
        self._log("RESTARTED", f"on {target} from hibernation")
        self._metric_event("RESTARTED")

    def _kill_source(self):
        record = self.record
        if record is None or record.status is not RunStatus.RUNNING:
            return
        self.migrator.mark_lost(self.scenario.run_id, self.t)
        self.state = None
        self.current_clique = None
        self.current_machine = None
        self._log("SOURCE_LOST", "")
        self._metric_event("SOURCE_LOST")
        resp = select(self._request(), self.directory, self.t)
        if isinstance(resp, Failure):
            try:
                plan = self.migrator.recover_plan(self.scenario.run_id, "", self.t)
            except Unrecoverable:
                self._log("UNRECOVERABLE", "no tracked checkpoint")
                return
            record.status = RunStatus.HIBERNATING
            self._log("HIBERNATING", "no resources for recovery")
            return
        try:
            self.state, report = self.migrator.recover(
                self.scenario.run_id, resp.clique_name, self.t
            )
        except Unrecoverable:
            self._log("UNRECOVERABLE", "no tracked checkpoint")
            return
        self.t += report.duration_seconds
        self._place_on(resp.clique_name)
        self.contract_state = None
        self._log("RECOVERED", f"on {resp.clique_name} at iteration {self.state.iteration}")
        self._metric_event("RECOVERED")

    def _purge_deadline(self, args: Tuple[str, ...]):
        # payload: <site> <deadline> [margin]
        site, deadline = args[0], float(args[1])
        margin = float(args[2]) if len(args) > 2 else 10.0
        record = self.record
        if record is None:
            return
        newest = self.migrator.newest_checkpoint(self.scenario.run_id, site=site)
        if newest is None:
            return
        newest.purge_deadline = deadline
        latest_start = self.migrator.evacuation_start_time(newest, margin)
        self._log("PURGE_DEADLINE", f"{site} at {deadline:g}, evacuation due by {latest_start:g}")
        if self.t > latest_start:
            self._log("EVACUATION_ALERT", f"deadline {deadline:g} may be unmeetable; copying best-effort")
        # evacuate as soon as the threat is known; the copy runs in the
        # background alongside computation
        size_mb = newest.meta.size_bytes / 2**20
        transfer = size_mb / self.scenario.transfer.bandwidth(site, "store")
        moved = self.migrator.evacuate_before_purge(
            self.scenario.run_id, self.t, margin, eager=True
        )
        for ck in moved:
            self._log("EVACUATION_STARTED", f"{site} at {self.t:g}")
            # log the root-relative path so replays are byte-identical
            rel = Path(ck.meta.location).relative_to(self.root)
            self._deferred_log.append(
                (self.t + transfer, "EVACUATED", f"to {rel}")
            )

    def _flush_deferred(self, force: bool = False):
        remaining = []
        for when, tag, detail in sorted(self._deferred_log):
            if force or when <= self.t:
                self.eventlog.append(LogEntry(when, tag, detail))
            else:
                remaining.append((when, tag, detail))
        self._deferred_log = remaining

    # -- control commands --------------------------------------------------

    def submit(self, command: object):
        self.commands.append(command)

    def _drain_commands(self):
        while self.commands:
            cmd = self.commands.popleft()
            if isinstance(cmd, SetContractCommand):
                self._set_contract_params(cmd.params)
            elif isinstance(cmd, MigrateCommand):
                if cmd.target is not None:
                    self._attempt_migration(Trigger.MANUAL, explicit_target=cmd.target)
                else:
                    self._attempt_migration(Trigger.MANUAL)
            elif isinstance(cmd, PauseCommand):
                self.paused = True
                self._log("PAUSED", "")
            elif isinstance(cmd, ResumeCommand):
                self.paused = False
                self._log("RESUMED", "")

    def _set_contract_params(self, params: ContractParams):
        self.contract_params = params
        if self.contract_state is not None:
            self.contract_state = contract.set_params(self.contract_state, params)
        self._log(
            "CONTRACT_PARAMS",
            f"quantum={params.quantum_seconds:g}"
            f" threshold={params.degradation_threshold:g}"
            f" consecutive={params.consecutive_required}",
        )

    # -- main loop ---------------------------------------------------------

    def done(self) -> bool:
        if self._pending:
            return False
        status = self.status
        if status is RunStatus.RUNNING:
            return self.quantum_no >= self.scenario.max_quanta
        return True

    def step(self) -> bool:
        """Advance the simulation by one quantum or to the next event.

        Returns False once the scenario has finished.
        """
        if self.done():
            self._finish()
            return False
        self._flush_deferred()
        self._process_due_events()
        self._drain_commands()
        if self.status is RunStatus.RUNNING and not self.paused:
            if self.quantum_no >= self.scenario.max_quanta:
                self._finish()
                return False
            self._run_quantum()
        elif self._pending:
            self.t = max(self.t, self._pending[0][1].time)
            self._flush_deferred()
            self._process_due_events()
        else:
            self._finish()
            return False
        return True

    def _finish(self):
        self._flush_deferred(force=True)
        record = self.record
        if record is not None and record.status is RunStatus.RUNNING:
            record.status = RunStatus.DONE
            if not self.eventlog or self.eventlog[-1].tag != "COMPLETED":
                self._log("COMPLETED", f"after {self.quantum_no} quanta")
                self._metric_event("COMPLETED")

    def run(self):
        while self.step():
            pass
        self._finish()


@dataclass
class SimResult:
    metrics: List[MetricsRecord]
    eventlog: List[LogEntry]
    final_status: Optional[RunStatus]


def run_scenario(scenario: Scenario, out_dir: Optional[Path] = None) -> SimResult:
    """Execute a scenario deterministically; optionally write the logs."""
    engine = Engine(scenario)
    engine.run()
    result = SimResult(engine.metrics, engine.eventlog, engine.status)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.jsonl").write_text(
            "".join(r.to_json() + "\n" for r in result.metrics)
        )
        (out_dir / "events.jsonl").write_text(
            "".join(e.to_json() + "\n" for e in result.eventlog)
        )
    return result


def export_plot_data(metrics: List[MetricsRecord], path: Path):
    """Columnar throughput trace: time, rate, violation flag, migration marker."""
    if not metrics:
        raise ValueError("metrics log is empty")
    lines = ["time,rate,violation,migration"]
    for r in metrics:
        if r.quantum_index is not None:
            lines.append(f"{r.time:g},{r.rate:g},{int(bool(r.violation))},0")
        elif r.event_tag == "MIGRATED":
            lines.append(f"{r.time:g},,,1")
    Path(path).write_text("\n".join(lines) + "\n")
