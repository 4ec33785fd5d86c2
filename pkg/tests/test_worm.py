import hashlib
import math
import random
import struct

import numpy as np
import pytest

from gridworm.resources import MachineSpec
from gridworm.worm import (
    BackupManager,
    CheckpointError,
    SolverState,
    announce,
    checkpoint_filename,
    decode_checkpoint,
    encode_checkpoint,
    make_state,
    profile_of,
    read_checkpoint,
    run_quantum,
    step,
    write_checkpoint,
)

# Digest of the field after 10 steps from an 8x8x8 grid (seed 42, alpha 0.1),
# frozen from a plain triple-loop reference implementation with the same
# neighbor summation order.
GOLDEN_DIGEST = "4c461747d48320eb76bdba906f19611effe7af675e368b06e94d0adf66fb2304"


def machine(factor=10.0, load=0.0):
    return MachineSpec(
        name="m",
        domain="d.edu",
        op_sys="LINUX",
        cpu_count=1,
        cpu_speed_mhz=500.0,
        mem_bytes=2**30,
        base_load=load,
        iter_rate_factor=factor,
    )


class TestSolver:
    def test_golden_digest(self):
        state = make_state((8, 8, 8), alpha=0.1, run_id="golden", seed=42)
        for _ in range(10):
            state = step(state)
        digest = hashlib.sha256(state.field.tobytes(order="C")).hexdigest()
        assert digest == GOLDEN_DIGEST

    def test_boundary_fixed(self):
        state = make_state((6, 6, 6), alpha=0.2, run_id="r", seed=1)
        before = state.field.copy()
        after = step(step(state)).field
        for axis in range(3):
            lo = np.take(after, 0, axis=axis)
            hi = np.take(after, -1, axis=axis)
            assert np.array_equal(lo, np.take(before, 0, axis=axis))
            assert np.array_equal(hi, np.take(before, -1, axis=axis))

    def test_uniform_field_is_fixed_point(self):
        state = make_state((5, 5, 5), alpha=0.1, run_id="r")
        stepped = step(state)
        assert np.array_equal(stepped.field, state.field)
        assert stepped.iteration == 1

    def test_tiny_grid_has_no_interior(self):
        state = make_state((2, 2, 2), alpha=0.1, run_id="r", seed=3)
        assert np.array_equal(step(state).field, state.field)

    def test_determinism_across_instances(self):
        a = make_state((7, 5, 9), alpha=0.15, run_id="r", seed=99)
        b = make_state((7, 5, 9), alpha=0.15, run_id="r", seed=99)
        for _ in range(20):
            a, b = step(a), step(b)
        assert a == b

    def test_run_quantum_iteration_formula(self):
        state = make_state((4, 4, 4), alpha=0.1, run_id="r")
        _, n = run_quantum(state, machine(factor=10, load=0.0), 1.0)
        assert n == 10
        _, n = run_quantum(state, machine(factor=10, load=1.0), 1.0)
        assert n == 5
        _, n = run_quantum(state, machine(factor=7, load=0.5), 1.0)
        assert n == math.floor(7 / 1.5)

    def test_profile_scales_with_cells(self):
        small = profile_of(make_state((4, 4, 4), 0.1, "r"))
        big = profile_of(make_state((8, 8, 8), 0.1, "r"))
        assert big.memory_bytes_required == 8 * small.memory_bytes_required
        assert big.flops_per_iteration == 8 * small.flops_per_iteration


class TestCheckpoint:
    def test_round_trip(self):
        state = make_state((6, 7, 8), alpha=0.3, run_id="run-42", seed=5)
        state = step(step(state))
        assert decode_checkpoint(encode_checkpoint(state)) == state

    def test_layout_offsets(self):
        state = make_state((8, 8, 8), alpha=0.5, run_id="ab", seed=0)
        blob = encode_checkpoint(state)
        assert blob[:4] == b"CWCK"
        assert struct.unpack_from("<I", blob, 4)[0] == 1  # version
        assert struct.unpack_from("<I", blob, 8)[0] == 2  # run id length
        assert blob[12:14] == b"ab"
        # 8x8x8 grid of f64: exactly 4096 payload bytes
        payload_len = struct.unpack_from("<Q", blob, 14 + 8 + 12 + 8)[0]
        assert payload_len == 4096
        assert len(blob) == 14 + 8 + 12 + 8 + 8 + 4096 + 4

    def test_file_round_trip(self, tmp_path):
        state = make_state((5, 5, 5), alpha=0.1, run_id="r", seed=9)
        meta = write_checkpoint(state, tmp_path / "a.cwck", now=17.0)
        assert meta.size_bytes == (tmp_path / "a.cwck").stat().st_size
        assert meta.iteration == 0 and meta.written_at == 17.0
        assert read_checkpoint(tmp_path / "a.cwck") == state

    def test_corrupted_payload_rejected(self, tmp_path):
        state = make_state((5, 5, 5), alpha=0.1, run_id="r", seed=9)
        blob = bytearray(encode_checkpoint(state))
        blob[60] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            decode_checkpoint(bytes(blob))

    def test_bad_magic_rejected(self):
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"NOPE" + b"\0" * 60)

    def test_truncation_rejected(self):
        state = make_state((5, 5, 5), alpha=0.1, run_id="r", seed=9)
        blob = encode_checkpoint(state)
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob[: len(blob) // 2])

    def test_unknown_version_rejected(self):
        state = make_state((3, 3, 3), alpha=0.1, run_id="r")
        blob = bytearray(encode_checkpoint(state))
        struct.pack_into("<I", blob, 4, 99)
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(blob))

    def test_no_tmp_file_left_behind(self, tmp_path):
        state = make_state((3, 3, 3), alpha=0.1, run_id="r")
        write_checkpoint(state, tmp_path / "x.cwck")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["x.cwck"]

    def test_split_run_equals_straight_run(self, tmp_path):
        """Running n+m steps equals running n, checkpointing, restoring
        elsewhere and running m -- bit for bit."""
        rng = random.Random(1234)
        for trial in range(10):
            dims = tuple(rng.randint(3, 12) for _ in range(3))
            n, m = rng.randint(1, 8), rng.randint(1, 8)
            straight = make_state(dims, alpha=0.1, run_id=f"t{trial}", seed=trial)
            for _ in range(n + m):
                straight = step(straight)
            first = make_state(dims, alpha=0.1, run_id=f"t{trial}", seed=trial)
            for _ in range(n):
                first = step(first)
            path = tmp_path / f"t{trial}.cwck"
            write_checkpoint(first, path)
            resumed = read_checkpoint(path)
            for _ in range(m):
                resumed = step(resumed)
            assert resumed == straight


class TestBackups:
    def test_interval_boundaries(self, tmp_path):
        mgr = BackupManager(tmp_path, interval_seconds=10, retention=5)
        state = make_state((3, 3, 3), alpha=0.1, run_id="r")
        assert mgr.tick(state, now=5) is None
        assert mgr.tick(state, now=10) is not None
        assert mgr.tick(state, now=12) is None  # next due at 20
        state = step(state)
        assert mgr.tick(state, now=25) is not None
        assert mgr.newest().iteration == 1

    def test_retention_prunes_oldest_files(self, tmp_path):
        mgr = BackupManager(tmp_path, interval_seconds=1, retention=2)
        state = make_state((3, 3, 3), alpha=0.1, run_id="r")
        for t in range(1, 6):
            state = step(state)
            assert mgr.tick(state, now=float(t)) is not None
        files = sorted(p.name for p in (tmp_path / "r").iterdir())
        assert files == [checkpoint_filename(4), checkpoint_filename(5)]
        assert len(mgr.backups) == 2


class TestAnnounce:
    def test_retries_then_succeeds(self):
        calls = []
        sleeps = []

        def endpoint(run_id):
            calls.append(run_id)
            if len(calls) < 3:
                raise ConnectionError("unreachable")
            return "ok"

        assert announce("r1", endpoint, attempts=3, backoff_seconds=0.1, sleep=sleeps.append) == "ok"
        assert calls == ["r1"] * 3
        assert sleeps == [0.1, 0.2]

    def test_gives_up_after_attempts(self):
        def endpoint(run_id):
            raise ConnectionError("down")

        with pytest.raises(ConnectionError):
            announce("r1", endpoint, attempts=2, sleep=lambda _: None)
