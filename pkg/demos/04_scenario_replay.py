"""
Replaying the load-spike scenario
=================================

Everything so far composes into a deterministic discrete-event engine: a
scripted scenario registers cliques, starts the run, injects external load,
and the contract monitor / selector / migrator react.  The same scenario
always produces byte-identical metrics and event logs, so an interesting
run can be replayed and inspected offline.
"""

import tempfile
from pathlib import Path

from gridworm.sim import export_plot_data, load_scenario, run_scenario

scenario_path = Path(__file__).resolve().parent.parent / "scenarios" / "loadspike.scenario"
scenario = load_scenario(scenario_path)

out = Path(tempfile.mkdtemp(prefix="demo-"))
result = run_scenario(scenario, out_dir=out)

# The event log tells the story: seven healthy quanta, the load injection at
# t=7, three violations, the trigger, and one migration to the surviving
# clique.
print("event log:")
for entry in result.eventlog:
    print(f"  {entry.time:7.1f}  {entry.tag:<20} {entry.detail}")

# The per-quantum throughput trace shows the rate drop and the partial
# recovery -- the new clique is slower than the original unloaded one, but
# much faster than the overloaded one.
print("\nthroughput trace:")
for m in result.metrics:
    if m.quantum_index is None:
        continue
    bar = "#" * int(m.rate)
    flag = " VIOLATION" if m.violation else ""
    print(f"  q{m.quantum_index:<3} {m.clique_name:<6} {m.rate:5.1f} {bar}{flag}")

# Columnar CSV for plotting (time, rate, violation flag, migration marker),
# plus the raw JSONL logs the replay HTTP server consumes.
export_plot_data(result.metrics, out / "throughput.csv")
print(f"\nlogs written to {out}/ (metrics.jsonl, events.jsonl, throughput.csv)")
print("serve them read-only with: gridworm replay "
      f"{out}/metrics.jsonl --events {out}/events.jsonl")
