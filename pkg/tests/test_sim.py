import json

import pytest

from gridworm.migrator import RunStatus
from gridworm.sim import (
    Engine,
    EventKind,
    MetricsRecord,
    Scenario,
    ScenarioError,
    export_plot_data,
    load_scenario,
    parse_scenario,
    run_scenario,
)

from conftest import SCENARIO_DIR

MINIMAL = """\
version 1
seed 1

[clique solo]
machine n1 domain=d.edu opSys=LINUX cpuCount=8 cpuSpeedMHz=500 memBytes=1G iterRateFactor=10

[run]
maxQuanta 3

[events]
0.0 RegisterClique solo ttl=1000
0.0 StartRun
"""


def tags(result):
    return [e.tag for e in result.eventlog]


class TestParse:
    def test_minimal_scenario(self):
        s = parse_scenario(MINIMAL)
        assert s.version == 1
        assert [c.name for c, _ in s.cliques] == ["solo"]
        assert s.max_quanta == 3
        assert len(s.events) == 2

    def test_missing_version_rejected(self):
        with pytest.raises(ScenarioError, match="version"):
            parse_scenario("[run]\nmaxQuanta 3\n")

    def test_unknown_event_kind_rejected(self):
        with pytest.raises(ScenarioError, match="Teleport"):
            parse_scenario(MINIMAL + "1.0 Teleport solo\n")

    def test_event_referencing_unknown_clique_rejected(self):
        with pytest.raises(ScenarioError, match="nowhere"):
            parse_scenario(MINIMAL + "1.0 RegisterClique nowhere\n")

    def test_errors_are_accumulated(self):
        bad = MINIMAL + "1.0 Teleport x\n2.0 RegisterClique nowhere\n"
        with pytest.raises(ScenarioError) as exc:
            parse_scenario(bad)
        assert "Teleport" in str(exc.value) and "nowhere" in str(exc.value)

    def test_bad_machine_line_rejected(self):
        bad = MINIMAL.replace("cpuCount=8", "cpuCount=lots")
        with pytest.raises(ScenarioError, match="n1"):
            parse_scenario(bad)

    def test_request_ad_without_requirements_rejected(self):
        bad = MINIMAL + "\n[request]\n[\n  Rank = 1;\n]\n"
        with pytest.raises(ScenarioError, match="requirements"):
            parse_scenario(bad)

    def test_inline_request_ad_is_used(self):
        text = MINIMAL + '\n[request]\n[\n  requirements = "other.CPUCount >= 4";\n]\n'
        s = parse_scenario(text)
        assert "CPUCount >= 4" in s.request_ad_text

    def test_all_shipped_scenarios_parse(self):
        for path in sorted(SCENARIO_DIR.glob("*.scenario")):
            s = load_scenario(path)
            assert isinstance(s, Scenario)


@pytest.fixture(scope="module")
def loadspike_result():
    return run_scenario(load_scenario(SCENARIO_DIR / "loadspike.scenario"))

@pytest.fixture(scope="module")
def hibernate_result():
    return run_scenario(load_scenario(SCENARIO_DIR / "hibernate.scenario"))

@pytest.fixture(scope="module")
def purge_result():
    return run_scenario(load_scenario(SCENARIO_DIR / "purge.scenario"))

@pytest.fixture(scope="module")
def daylong_result():
    return run_scenario(load_scenario(SCENARIO_DIR / "daylong.scenario"))


class TestLoadspike:
    def test_three_violations_then_trigger(self, loadspike_result):
        result = loadspike_result
        quanta = [m for m in result.metrics if m.quantum_index is not None]
        violating = [m.quantum_index for m in quanta if m.violation]
        assert violating[:3] == [8, 9, 10]
        assert "TRIGGER" in tags(result)

    def test_migrates_to_surviving_clique(self, loadspike_result):
        result = loadspike_result
        migrated = [e for e in result.eventlog if e.tag == "MIGRATED"]
        assert len(migrated) == 1
        assert "to uiuc" in migrated[0].detail
        assert "diskTouches=6" in migrated[0].detail

    def test_rate_drops_then_partially_recovers(self, loadspike_result):
        result = loadspike_result
        by_index = {m.quantum_index: m for m in result.metrics if m.quantum_index}
        assert by_index[7].rate == 10.0   # healthy on uc
        assert by_index[8].rate == 5.0    # load doubled the denominator
        assert by_index[11].rate == 8.0   # slower but unloaded clique
        assert by_index[11].clique_name == "uiuc"

    def test_operator_is_notified(self, loadspike_result):
        result = loadspike_result
        assert result.final_status is RunStatus.DONE
        assert tags(result)[-1] == "COMPLETED"


class TestHibernate:
    def test_parks_then_wakes(self, hibernate_result):
        result = hibernate_result
        t = tags(result)
        assert "HIBERNATING" in t
        assert "RESTARTED" in t
        assert t.index("HIBERNATING") < t.index("RESTARTED")
        assert "LOST" not in t

    def test_resumes_on_late_registration(self, hibernate_result):
        result = hibernate_result
        restarted = next(e for e in result.eventlog if e.tag == "RESTARTED")
        assert "uiuc" in restarted.detail
        assert restarted.time >= 30.0


class TestPurge:
    def test_evacuation_completes_before_deadline(self, purge_result):
        result = purge_result
        t = tags(result)
        assert "EVACUATION_STARTED" in t
        evacuated = [e for e in result.eventlog if e.tag == "EVACUATED"]
        assert evacuated
        assert all(e.time < 1000.0 for e in evacuated)

    def test_starts_before_latest_safe_time(self, purge_result):
        result = purge_result
        started = next(e for e in result.eventlog if e.tag == "EVACUATION_STARTED")
        # 2 MB checkpoint at 1 MB/s against deadline 1000 with margin 10
        assert started.time <= 1000.0 - 2.0 - 10.0


class TestDaylong:
    def test_timeline_order(self, daylong_result):
        result = daylong_result
        t = tags(result)
        for earlier, later in [
            ("RUN_STARTED", "MIGRATED"),
            ("MIGRATED", "SOURCE_LOST"),
            ("SOURCE_LOST", "RECOVERED"),
            ("RECOVERED", "ANNOTATION"),
        ]:
            assert t.index(earlier) < t.index(later), (earlier, later)

    def test_upgrades_to_better_cluster(self, daylong_result):
        result = daylong_result
        first = next(e for e in result.eventlog if e.tag == "MIGRATED")
        assert "to big-cluster" in first.detail
        assert "BETTER_RESOURCE" in first.detail

    def test_recovers_after_unannounced_shutdown(self, daylong_result):
        result = daylong_result
        recovered = next(e for e in result.eventlog if e.tag == "RECOVERED")
        assert "tri-site" in recovered.detail or "site-a" in recovered.detail

    def test_overload_triggers_second_migration(self, daylong_result):
        result = daylong_result
        migrations = [e for e in result.eventlog if e.tag == "MIGRATED"]
        assert len(migrations) >= 2
        assert "CONTRACT_VIOLATION" in migrations[-1].detail


class TestDeterminism:
    @pytest.mark.parametrize(
        "name", ["loadspike", "hibernate", "purge", "daylong"]
    )
    def test_replay_is_byte_identical(self, name, tmp_path):
        scenario = load_scenario(SCENARIO_DIR / f"{name}.scenario")
        run_scenario(scenario, tmp_path / "a")
        run_scenario(load_scenario(SCENARIO_DIR / f"{name}.scenario"), tmp_path / "b")
        for fname in ("metrics.jsonl", "events.jsonl"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_metrics_round_trip_json(self, tmp_path):
        result = run_scenario(parse_scenario(MINIMAL), tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        parsed = [MetricsRecord.from_json(line) for line in lines]
        assert parsed == result.metrics

    def test_events_are_valid_json(self, tmp_path):
        run_scenario(parse_scenario(MINIMAL), tmp_path)
        for line in (tmp_path / "events.jsonl").read_text().splitlines():
            entry = json.loads(line)
            assert set(entry) == {"time", "tag", "detail"}


class TestEngineStepwise:
    def test_step_returns_false_at_end(self):
        engine = Engine(parse_scenario(MINIMAL))
        steps = 0
        while engine.step():
            steps += 1
            assert steps < 100
        assert engine.status is RunStatus.DONE

    def test_clock_never_goes_backwards(self):
        engine = Engine(load_scenario(SCENARIO_DIR / "daylong.scenario"))
        last = 0.0
        while engine.step():
            assert engine.t >= last
            last = engine.t

    def test_metrics_times_nondecreasing(self):
        result = run_scenario(load_scenario(SCENARIO_DIR / "loadspike.scenario"))
        times = [m.time for m in result.metrics]
        assert times == sorted(times)


class TestPlotExport:
    def test_columns_and_markers(self, tmp_path):
        result = run_scenario(load_scenario(SCENARIO_DIR / "loadspike.scenario"))
        out = tmp_path / "trace.csv"
        export_plot_data(result.metrics, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "time,rate,violation,migration"
        assert any(line.endswith(",1") for line in lines[1:])  # migration marker
        assert any(line.split(",")[2] == "1" for line in lines[1:] if line.split(",")[1])

    def test_empty_metrics_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_plot_data([], tmp_path / "x.csv")
