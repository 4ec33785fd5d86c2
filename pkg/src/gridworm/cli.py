"""Command-line entry points.

    gridworm run <scenario> [--out DIR] [--live] [--port N]
    gridworm match <request.ad> <clique.ad>...
    gridworm replay <metrics.jsonl> [--events FILE] [--port N]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import classad, sim
from .classad import parse_ad


def _cmd_run(args) -> int:
    scenario = sim.load_scenario(Path(args.scenario))
    if args.live:
        import uvicorn

        from .control import LiveRunner, create_app

        engine = sim.Engine(scenario)
        runner = LiveRunner(engine)
        runner.start()
        try:
            uvicorn.run(create_app(engine), host="127.0.0.1", port=args.port)
        finally:
            runner.stop()
        return 0
    out_dir = Path(args.out) if args.out else None
    result = sim.run_scenario(scenario, out_dir)
    for entry in result.eventlog:
        print(f"{entry.time:10.1f}  {entry.tag:<20} {entry.detail}")
    print(f"final status: {result.final_status.value if result.final_status else 'none'}")
    if out_dir:
        sim.export_plot_data(result.metrics, out_dir / "throughput.csv")
        print(f"logs written to {out_dir}/")
    return 0


def _cmd_match(args) -> int:
    request = parse_ad(Path(args.request).read_text())
    best = None
    for path in args.cliques:
        resource = parse_ad(Path(path).read_text())
        name_expr = resource.get("name")
        name = (
            name_expr.value
            if isinstance(name_expr, classad.Literal) and isinstance(name_expr.value, str)
            else path
        )
        if not classad.check_requirements(request, resource):
            print(f"{name}: no match")
            continue
        rank = classad.compute_rank(request, resource)
        print(f"{name}: match, rank {rank:g}")
        if best is None or rank > best[1]:
            best = (name, rank)
    if best is None:
        print("result: no matching resources")
        return 1
    print(f"result: {best[0]} (rank {best[1]:g})")
    return 0


def _cmd_replay(args) -> int:
    import uvicorn

    from .control import create_replay_app

    app = create_replay_app(Path(args.metrics), Path(args.events) if args.events else None)
    uvicorn.run(app, host="127.0.0.1", port=args.port)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridworm")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", help="directory for metrics/event logs")
    p_run.add_argument("--live", action="store_true", help="wall-clock mode with HTTP control")
    p_run.add_argument("--port", type=int, default=8642)
    p_run.set_defaults(func=_cmd_run)

    p_match = sub.add_parser("match", help="match a request ad against clique ads")
    p_match.add_argument("request")
    p_match.add_argument("cliques", nargs="+")
    p_match.set_defaults(func=_cmd_match)

    p_replay = sub.add_parser("replay", help="serve a recorded metrics log read-only")
    p_replay.add_argument("metrics")
    p_replay.add_argument("--events")
    p_replay.add_argument("--port", type=int, default=8642)
    p_replay.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
