"""The migrating application: a deterministic iterative stencil solver.

The workload is a 7-point Jacobi heat-equation update on a 3-D grid with
fixed boundary values.  It stands in for a real scientific code: all the
migration machinery needs is a deterministic, checkpointable iteration.

Checkpoint file layout (all integers little-endian):

    offset  size  field
    0       4     magic "CWCK"
    4       4     format version (u32)
    8       4     run id length L (u32)
    12      L     run id (UTF-8)
    12+L    8     iteration (u64)
    20+L    12    grid dims (3 x u32)
    32+L    8     diffusion coefficient (f64)
    40+L    8     payload length in bytes (u64)
    48+L    ...   field values (f64 little-endian, row-major)
    ...     4     CRC-32 of payload (u32)
"""

from __future__ import annotations

import math
import os
import struct
import time
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .resources import MachineSpec

MAGIC = b"CWCK"
FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".cwck"


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class SolverState:
    dims: Tuple[int, int, int]
    field: np.ndarray  # float64, shape == dims
    iteration: int
    alpha: float
    run_id: str

    def __post_init__(self):
        if self.field.shape != self.dims:
            raise ValueError("field shape does not match dims")
        if not np.all(np.isfinite(self.field)):
            raise ValueError("field contains non-finite values")

    def __eq__(self, other):
        if not isinstance(other, SolverState):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.iteration == other.iteration
            and self.alpha == other.alpha
            and self.run_id == other.run_id
            and np.array_equal(self.field, other.field)
        )


def make_state(
    dims: Tuple[int, int, int],
    alpha: float,
    run_id: str,
    seed: Optional[int] = None,
) -> SolverState:
    if any(d < 1 for d in dims):
        raise ValueError("all dims must be >= 1")
    if seed is None:
        field = np.zeros(dims, dtype=np.float64)
    else:
        field = np.random.default_rng(seed).random(dims, dtype=np.float64)
    return SolverState(dims=tuple(dims), field=field, iteration=0, alpha=alpha, run_id=run_id)


def step(state: SolverState) -> SolverState:
    """One Jacobi update of the interior; boundary values stay fixed.

    The update is a single vectorized expression with a fixed evaluation
    order, so results are bit-identical for identical inputs.
    """
    u = state.field
    new = u.copy()
    if all(d >= 3 for d in state.dims):
        center = u[1:-1, 1:-1, 1:-1]
        neighbors = (
            u[:-2, 1:-1, 1:-1]
            + u[2:, 1:-1, 1:-1]
            + u[1:-1, :-2, 1:-1]
            + u[1:-1, 2:, 1:-1]
            + u[1:-1, 1:-1, :-2]
            + u[1:-1, 1:-1, 2:]
        )
        new[1:-1, 1:-1, 1:-1] = center + state.alpha * (neighbors - 6.0 * center)
    return replace(state, field=new, iteration=state.iteration + 1)


def run_quantum(
    state: SolverState, machine: MachineSpec, quantum_seconds: float
) -> Tuple[SolverState, int]:
    """Advance the solver for one monitoring quantum on a machine.

    Simulation-mode compute model: the achievable iteration rate is the
    machine's rate factor shared with external load, so
    iterations = floor(quantum * factor / (1 + load)).
    """
    if quantum_seconds <= 0:
        raise ValueError("quantum_seconds must be > 0")
    iterations = math.floor(
        quantum_seconds * machine.iter_rate_factor / (1.0 + machine.base_load)
    )
    for _ in range(iterations):
        state = step(state)
    return state, iterations


@dataclass(frozen=True)
class ResourceProfile:
    memory_bytes_required: int
    flops_per_iteration: int
    checkpoint_size_bytes: int
    io_pattern: str = "bulk-sequential"


def profile_of(state: SolverState) -> ResourceProfile:
    cells = int(np.prod(state.dims))
    # field + scratch copy per step
    return ResourceProfile(
        memory_bytes_required=16 * cells,
        flops_per_iteration=8 * cells,
        checkpoint_size_bytes=len(encode_checkpoint(state)),
    )


@dataclass(frozen=True)
class CheckpointMeta:
    location: str
    size_bytes: int
    written_at: float
    run_id: str
    iteration: int


# ---------------------------------------------------------------------------
# Checkpoint encoding


def encode_checkpoint(state: SolverState) -> bytes:
    run_id = state.run_id.encode("utf-8")
    payload = state.field.astype("<f8", copy=False).tobytes(order="C")
    header = MAGIC + struct.pack(
        "<II", FORMAT_VERSION, len(run_id)
    ) + run_id + struct.pack(
        "<QIIIdQ",
        state.iteration,
        *state.dims,
        state.alpha,
        len(payload),
    )
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def decode_checkpoint(blob: bytes) -> SolverState:
    try:
        if blob[:4] != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        version, id_len = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        pos = 12
        run_id = blob[pos : pos + id_len].decode("utf-8")
        pos += id_len
        iteration, dx, dy, dz, alpha, payload_len = struct.unpack_from("<QIIIdQ", blob, pos)
        pos += struct.calcsize("<QIIIdQ")
        payload = blob[pos : pos + payload_len]
        if len(payload) != payload_len:
            raise CheckpointError("truncated checkpoint payload")
        (crc,) = struct.unpack_from("<I", blob, pos + payload_len)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint header: {exc}") from exc
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint payload checksum mismatch")
    field = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape((dx, dy, dz))
    return SolverState(
        dims=(dx, dy, dz), field=field, iteration=iteration, alpha=alpha, run_id=run_id
    )


def write_checkpoint(
    state: SolverState, destination: Path, now: float = 0.0
) -> CheckpointMeta:
    """Write a checkpoint atomically; partial files never remain on failure."""
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(state)
    tmp = destination.with_name(destination.name + ".tmp")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, destination)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise
    return CheckpointMeta(
        location=str(destination),
        size_bytes=len(blob),
        written_at=now,
        run_id=state.run_id,
        iteration=state.iteration,
    )


def read_checkpoint(path: Path) -> SolverState:
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_filename(iteration: int) -> str:
    return f"ckpt-{iteration}{CHECKPOINT_SUFFIX}"


# ---------------------------------------------------------------------------
# Periodic backups


class BackupManager:
    """Writes backup checkpoints whenever the clock crosses an interval
    boundary, keeping only the newest ``retention`` files."""

    def __init__(self, directory: Path, interval_seconds: float, retention: int = 3):
        if interval_seconds <= 0:
            raise ValueError("interval_seconds must be > 0")
        if retention < 1:
            raise ValueError("retention must be >= 1")
        self.directory = Path(directory)
        self.interval = interval_seconds
        self.retention = retention
        self._next_due = interval_seconds
        self.backups: List[CheckpointMeta] = []

    def tick(self, state: SolverState, now: float) -> Optional[CheckpointMeta]:
        if now < self._next_due:
            return None
        self._next_due = (math.floor(now / self.interval) + 1) * self.interval
        run_dir = self.directory / state.run_id
        meta = write_checkpoint(state, run_dir / checkpoint_filename(state.iteration), now)
        self.backups.append(meta)
        while len(self.backups) > self.retention:
            old = self.backups.pop(0)
            Path(old.location).unlink(missing_ok=True)
        return meta

    def newest(self) -> Optional[CheckpointMeta]:
        return self.backups[-1] if self.backups else None


def announce(
    run_id: str,
    endpoint: Callable[[str], object],
    attempts: int = 3,
    backoff_seconds: float = 0.1,
    sleep: Callable[[float], None] = time.sleep,
):
    """Report to the tracking service that the run is online again.

    Retries with backoff on an unreachable endpoint; idempotent on the
    service side, so duplicate announcements are harmless.
    """
    delay = backoff_seconds
    for attempt in range(attempts):
        try:
            return endpoint(run_id)
        except ConnectionError:
            if attempt == attempts - 1:
                raise
            sleep(delay)
            delay *= 2
