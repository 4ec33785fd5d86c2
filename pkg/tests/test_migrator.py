import dataclasses
import random

import pytest

from gridworm.migrator import (
    STORE_SITE,
    MigrationFailed,
    MigratorService,
    RunStatus,
    TransferModel,
    Trigger,
    Unrecoverable,
)
from gridworm.worm import CheckpointMeta, make_state, profile_of, step, write_checkpoint

MODEL = TransferModel()  # calibrated defaults


@pytest.fixture
def svc(tmp_path):
    return MigratorService(tmp_path, MODEL)


def running_run(svc, run_id="run-1", clique="uc", dims=(6, 6, 6)):
    state = make_state(dims, alpha=0.1, run_id=run_id, seed=11)
    for _ in range(4):
        state = step(state)
    svc.register_run(run_id, clique, profile=profile_of(state))
    return state


class TestTransferModel:
    def test_calibration_96mb_single_hop(self):
        # 96 MB over the default path: write 4.8s + hop 98s + restart 5s,
        # about three and a half minutes end to end for the staged path
        staged = MODEL.migration_seconds(96.0, [("a", STORE_SITE), (STORE_SITE, "b")])
        assert staged == pytest.approx(96 / 20 + 2 * (96 / 1 + 2) + 5)
        assert abs(staged - 200.0) / 200.0 < 0.5

    def test_per_link_bandwidth_override(self):
        model = TransferModel(bandwidth_mbps={("a", "b"): 10.0})
        assert model.hop_seconds(100, "a", "b") == pytest.approx(100 / 10 + 2)
        assert model.hop_seconds(100, "b", "a") == pytest.approx(100 / 1 + 2)

    def test_duration_monotone_in_size(self):
        hops = [("a", STORE_SITE), (STORE_SITE, "b")]
        sizes = [1, 10, 100, 500]
        durations = [MODEL.migration_seconds(s, hops) for s in sizes]
        assert durations == sorted(durations)
        assert len(set(durations)) == len(durations)


class TestMigrate:
    def test_staged_migration_six_disk_touches(self, svc):
        state = running_run(svc)
        restored, report = svc.migrate("run-1", state, "uiuc", Trigger.CONTRACT_VIOLATION, now=10.0)
        assert report.disk_touches == 6
        assert restored == state
        record = svc.record("run-1")
        assert record.status is RunStatus.RUNNING
        assert record.current_clique == "uiuc"

    def test_staged_leaves_copy_in_store(self, svc):
        state = running_run(svc)
        svc.migrate("run-1", state, "uiuc", Trigger.MANUAL, now=1.0)
        stored = svc.newest_checkpoint("run-1", site=STORE_SITE)
        assert stored is not None
        assert stored.meta.iteration == state.iteration

    def test_direct_migration_two_touches_and_faster(self, svc):
        state = running_run(svc)
        _, direct = svc.migrate("run-1", state, "uiuc", Trigger.MANUAL, now=1.0, direct=True)
        assert direct.disk_touches == 2

        svc2 = MigratorService(svc.root / "again", MODEL)
        state2 = running_run(svc2)
        _, staged = svc2.migrate("run-1", state2, "uiuc", Trigger.MANUAL, now=1.0)
        assert direct.duration_seconds < staged.duration_seconds

    def test_duration_matches_closed_form(self, svc):
        state = running_run(svc, dims=(8, 8, 8))
        size_mb = state.field.nbytes / 2**20
        _, report = svc.migrate("run-1", state, "uiuc", Trigger.MANUAL, now=0.0)
        want = MODEL.migration_seconds(size_mb, [("uc", STORE_SITE), (STORE_SITE, "uiuc")])
        assert report.duration_seconds == pytest.approx(want)

    def test_failed_target_start_hibernates_not_loses(self, svc):
        state = running_run(svc)
        svc.failing_targets.add("uiuc")
        with pytest.raises(MigrationFailed):
            svc.migrate("run-1", state, "uiuc", Trigger.CONTRACT_VIOLATION, now=5.0)
        record = svc.record("run-1")
        assert record.status is RunStatus.HIBERNATING
        assert svc.newest_checkpoint("run-1", site=STORE_SITE) is not None

    def test_announce_is_idempotent(self, svc):
        running_run(svc)
        svc.announce("run-1", "uiuc", now=3.0)
        svc.announce("run-1", "uiuc", now=3.5)
        tags = [e.tag for e in svc.record("run-1").events]
        assert tags.count("RELOCATED") == 1

    def test_token_mismatch_rejected(self, svc):
        svc.register_run("run-t", "uc", token="secret")
        with pytest.raises(PermissionError):
            svc.check_token("run-t", "wrong")
        svc.check_token("run-t", "secret")  # no raise


class TestHibernation:
    def test_hibernate_and_wake(self, svc):
        state = running_run(svc)
        src = svc.site_dir("uc", "run-1") / "ckpt-4.cwck"
        meta = write_checkpoint(state, src, now=2.0)
        svc.track_checkpoint("run-1", meta, "uc")

        record = svc.hibernate("run-1", now=3.0)
        assert record.status is RunStatus.HIBERNATING
        assert record.current_clique is None

        restored, report = svc.wake("run-1", "uiuc", now=30.0)
        assert restored == state
        assert report.disk_touches == 2
        assert svc.record("run-1").current_clique == "uiuc"

    def test_hibernate_is_idempotent(self, svc):
        state = running_run(svc)
        meta = write_checkpoint(state, svc.site_dir("uc", "run-1") / "ckpt-4.cwck")
        svc.track_checkpoint("run-1", meta, "uc")
        svc.hibernate("run-1", now=1.0)
        svc.hibernate("run-1", now=2.0)
        tags = [e.tag for e in svc.record("run-1").events]
        assert tags.count("HIBERNATING") == 1

    def test_hibernate_without_any_checkpoint_is_lost(self, svc):
        running_run(svc)
        record = svc.hibernate("run-1", now=1.0)
        assert record.status is RunStatus.LOST

    def test_wake_without_store_checkpoint_raises(self, svc):
        running_run(svc)
        with pytest.raises(Unrecoverable):
            svc.wake("run-1", "uiuc", now=1.0)


class TestEvacuation:
    def test_latest_start_hand_value(self, svc):
        # 96 MB at 1 MB/s with a 10 s margin against a deadline of 1000
        state = running_run(svc)
        meta = CheckpointMeta("x", 96 * 2**20, 0.0, "run-1", 4)
        ck = svc.track_checkpoint("run-1", meta, "uc", purge_deadline=1000.0)
        assert svc.evacuation_start_time(ck, margin_seconds=10.0) == pytest.approx(894.0)

    def test_not_yet_due_is_noop(self, svc):
        state = running_run(svc)
        path = svc.site_dir("uc", "run-1") / "ckpt-4.cwck"
        meta = write_checkpoint(state, path)
        svc.track_checkpoint("run-1", meta, "uc", purge_deadline=10_000.0)
        assert svc.evacuate_before_purge("run-1", now=0.0) == []

    def test_due_checkpoint_is_copied_once(self, svc):
        state = running_run(svc)
        path = svc.site_dir("uc", "run-1") / "ckpt-4.cwck"
        meta = write_checkpoint(state, path)
        svc.track_checkpoint("run-1", meta, "uc", purge_deadline=20.0)
        moved = svc.evacuate_before_purge("run-1", now=15.0)
        assert len(moved) == 1
        assert moved[0].site == STORE_SITE
        # second sweep finds nothing left to do
        assert svc.evacuate_before_purge("run-1", now=16.0) == []

    def test_eager_mode_ignores_start_time(self, svc):
        state = running_run(svc)
        path = svc.site_dir("uc", "run-1") / "ckpt-4.cwck"
        meta = write_checkpoint(state, path)
        svc.track_checkpoint("run-1", meta, "uc", purge_deadline=10_000.0)
        assert len(svc.evacuate_before_purge("run-1", now=0.0, eager=True)) == 1


class TestRecovery:
    def test_recover_from_newest_backup(self, svc):
        state = running_run(svc)
        older = state
        newer = step(step(state))
        for s, t in ((older, 1.0), (newer, 2.0)):
            path = svc.site_dir(STORE_SITE, "run-1") / f"ckpt-{s.iteration}.cwck"
            svc.track_checkpoint("run-1", write_checkpoint(s, path, t), STORE_SITE)

        svc.mark_lost("run-1", now=5.0)
        assert svc.record("run-1").status is RunStatus.LOST

        restored, report = svc.recover("run-1", "uiuc", now=6.0)
        assert restored == newer  # at-least-once: newest backup wins
        assert svc.record("run-1").status is RunStatus.RUNNING
        assert report.disk_touches == 2

    def test_recover_plan_without_checkpoints_unrecoverable(self, svc):
        running_run(svc)
        svc.mark_lost("run-1", now=1.0)
        with pytest.raises(Unrecoverable):
            svc.recover_plan("run-1", "uiuc", now=2.0)
        tags = [e.tag for e in svc.record("run-1").events]
        assert "UNRECOVERABLE" in tags

    def test_missing_files_are_skipped(self, svc):
        state = running_run(svc)
        path = svc.site_dir(STORE_SITE, "run-1") / "ckpt-4.cwck"
        meta = write_checkpoint(state, path)
        svc.track_checkpoint("run-1", meta, STORE_SITE)
        # a newer checkpoint whose file was purged must not be chosen
        ghost = dataclasses.replace(meta, iteration=99, location=str(path.with_name("gone.cwck")))
        svc.track_checkpoint("run-1", ghost, STORE_SITE)
        assert svc.newest_checkpoint("run-1").meta.iteration == 4

    def test_notify_user(self, svc):
        running_run(svc)
        event = svc.notify_user("run-1", "uiuc", now=9.0)
        assert event.tag == "NOTIFIED"
        assert "uiuc" in event.detail


def test_random_migration_chains_preserve_state(svc):
    """State survives any sequence of staged/direct migrations bit-for-bit."""
    rng = random.Random(5)
    state = running_run(svc, dims=(5, 7, 6))
    sites = ["uc", "uiuc", "ucsd", "anl"]
    current = "uc"
    for i in range(12):
        state = step(state)
        target = rng.choice([s for s in sites if s != current])
        restored, _ = svc.migrate(
            "run-1", state, target, Trigger.MANUAL, now=float(i), direct=rng.random() < 0.5
        )
        assert restored == state
        state = restored
        current = target
