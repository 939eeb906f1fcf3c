"""Command-line interface: serve, host controls, simulate, and ona analysis."""

from __future__ import annotations

import argparse
import asyncio
import fnmatch
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .model import validate_config
from .modes import Mode
from .ona import (
    CodeRegistry,
    accumulate,
    aggregate,
    compare,
    ingest,
    network_to_dot,
    networks_to_json,
    normalize,
    project,
    projection_to_csv,
)


def _parse_seeds(spec: str) -> List[int]:
    """Accept '0..99', '0-99', or comma-separated seed lists."""
    spec = spec.strip()
    for sep in ("..", "-"):
        if sep in spec and not spec.startswith("-"):
            lo, hi = spec.split(sep, 1)
            return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s.strip()]


def _load_registry(path: Optional[str]) -> CodeRegistry:
    return CodeRegistry.load(path) if path else CodeRegistry.default()


def cmd_simulate_run(args: argparse.Namespace) -> int:
    from .simulator import Scenario, run_scenario

    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    trace = run_scenario(scenario)
    if args.out:
        Path(args.out).write_text(trace.to_jsonl())
    print(f"entries={len(trace.entries)} violations={len(trace.violations)} scriptErrors={len(trace.script_errors)}")
    for violation in trace.violations:
        print(f"  violation {violation.invariant_id} t={violation.t}: {violation.detail}")
    for err in trace.script_errors:
        print(f"  script error: {err}")
    return 1 if trace.violations else 0


def cmd_simulate_fuzz(args: argparse.Namespace) -> int:
    from .simulator import fuzz

    seeds = _parse_seeds(args.seeds)
    report = fuzz(seeds, Mode(args.mode))
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    print(f"mode={args.mode} seeds={len(seeds)} violations={report.total_violations}")
    for seed, violations in report.violations.items():
        for violation in violations:
            print(f"  seed {seed}: {violation.invariant_id} t={violation.t}: {violation.detail}")
    return 1 if report.total_violations else 0


def cmd_ona_accumulate(args: argparse.Namespace) -> int:
    registry = _load_registry(args.registry)
    turns = ingest(args.infile, registry)
    networks = accumulate(turns, args.window, registry, binary=args.binary)
    if args.normalize:
        networks = {uid: normalize(n) for uid, n in networks.items()}
    payload = networks_to_json(networks, registry, args.window, args.binary)
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {args.out}: {len(networks)} conversation networks")
    if args.figures or args.dot:
        from .figures import render_network

        for uid, network in networks.items():
            safe = uid.replace("/", "_")
            if args.figures:
                fig_dir = Path(args.figures)
                fig_dir.mkdir(parents=True, exist_ok=True)
                path = render_network(network, registry, fig_dir / f"network-{safe}.svg", title=uid)
                print(f"figure {path}")
            if args.dot:
                dot_dir = Path(args.dot)
                dot_dir.mkdir(parents=True, exist_ok=True)
                path = dot_dir / f"network-{safe}.dot"
                path.write_text(network_to_dot(network, registry))
                print(f"dot {path}")
    return 0


def _match_groups(conversation_ids: List[str], selectors: List[str]) -> Dict[str, List[str]]:
    """Each selector is LABEL=PATTERN; a conversation matches by glob or substring."""
    groups: Dict[str, List[str]] = {}
    for selector in selectors:
        if "=" in selector:
            _, pattern = selector.split("=", 1)
        else:
            pattern = selector
        matched = [
            cid
            for cid in conversation_ids
            if fnmatch.fnmatch(cid, pattern) or fnmatch.fnmatch(cid, f"*{pattern}*") or pattern in cid
        ]
        groups[selector] = matched
    return groups


def cmd_ona_compare(args: argparse.Namespace) -> int:
    registry = _load_registry(args.registry)
    turns = ingest(args.infile, registry)
    networks = accumulate(turns, args.window, registry, binary=args.binary)
    normalized = {uid: normalize(n) for uid, n in networks.items()}
    selectors = [s.strip() for s in args.groups.split(",") if s.strip()]
    if len(selectors) != 2:
        print("exactly two --groups selectors are required", file=sys.stderr)
        return 2
    matched = _match_groups(list(networks), selectors)
    for label, ids in matched.items():
        if len(ids) < 2:
            print(f"group {label!r} matched {len(ids)} conversations; need >= 2", file=sys.stderr)
            return 2
    overlap = set(matched[selectors[0]]) & set(matched[selectors[1]])
    if overlap:
        print(f"groups overlap on {sorted(overlap)}", file=sys.stderr)
        return 2

    ordered = [normalized[cid] for label in selectors for cid in matched[label]]
    labels = [label for label in selectors for _ in matched[label]]
    projection = project(ordered, labels)
    xs = {label: [projection.points[cid][0] for cid in matched[label] if cid in projection.points] for label in selectors}
    result = compare(xs[selectors[0]], xs[selectors[1]])

    stats = {
        "groups": {label: matched[label] for label in selectors},
        "comparison": result.to_json(),
        "degenerateMeans": projection.degenerate,
        "window": args.window,
        "binary": args.binary,
    }
    Path(args.out).write_text(json.dumps(stats, indent=2) + "\n")
    print(
        f"t({result.df:.1f})={result.t:.4f}, p={result.p:.4g}, Cohen's d={result.cohen_d:.2f} -> {args.out}"
    )
    if args.projection_csv:
        Path(args.projection_csv).write_text(projection_to_csv(projection))
        print(f"projection {args.projection_csv}")
    if args.figures:
        from .figures import render_network, render_projection

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        path = render_projection(projection, fig_dir / "projection.svg", title="means-rotation projection")
        print(f"figure {path}")
        for label in selectors:
            group_net = aggregate([normalized[cid] for cid in matched[label]], unit_id=label)
            safe = label.replace("/", "_").replace("=", "-")
            path = render_network(group_net, registry, fig_dir / f"group-{safe}.svg", title=label)
            print(f"figure {path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import ServerConfig, serve_forever

    config = ServerConfig.load(args.config) if args.config else ServerConfig()
    errors = validate_config(config.protocol)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        asyncio.run(serve_forever(config, host=args.host, port=args.port))
    except KeyboardInterrupt:
        pass
    return 0


async def _host_request(url: str, hello_extra: dict, message: dict, wait_type: str) -> dict:
    from websockets.asyncio.client import connect

    async with connect(url) as ws:
        await ws.send(json.dumps({"type": "client_hello", "participant": "host", "kind": "host", **hello_extra}))
        await ws.recv()  # snapshot ack
        await ws.send(json.dumps(message))
        while True:
            reply = json.loads(await ws.recv())
            if reply.get("type") in (wait_type, "error"):
                return reply


def cmd_host(args: argparse.Namespace) -> int:
    hello = {"session": args.session} if args.session else {}
    if args.host_cmd == "create-session":
        message = {"type": "create_session", "session": args.session, "mode": args.mode}
        reply = asyncio.run(_host_request(args.url, {}, message, "session_created"))
    elif args.host_cmd == "move":
        message = {"type": "host_move", "participant": args.participant, "room": args.room}
        reply = asyncio.run(_host_request(args.url, hello, message, "moved"))
    elif args.host_cmd == "set-mode":
        message = {"type": "set_mode", "room": args.room, "mode": args.mode}
        reply = asyncio.run(_host_request(args.url, hello, message, "mode_set"))
    else:  # pragma: no cover
        return 2
    print(json.dumps(reply))
    return 1 if reply.get("type") == "error" else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parley", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="run the live session server")
    serve_p.add_argument("--config", help="server config JSON")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8750)
    serve_p.set_defaults(func=cmd_serve)

    host_p = sub.add_parser("host", help="host controls against a running server")
    host_sub = host_p.add_subparsers(dest="host_cmd", required=True)
    create_p = host_sub.add_parser("create-session")
    create_p.add_argument("--url", default="ws://127.0.0.1:8750")
    create_p.add_argument("--session", required=True)
    create_p.add_argument("--mode", default="roundtable", choices=[m.value for m in Mode])
    create_p.set_defaults(func=cmd_host)
    move_p = host_sub.add_parser("move")
    move_p.add_argument("--url", default="ws://127.0.0.1:8750")
    move_p.add_argument("--session")
    move_p.add_argument("--participant", required=True)
    move_p.add_argument("--room", required=True)
    move_p.set_defaults(func=cmd_host)
    setmode_p = host_sub.add_parser("set-mode")
    setmode_p.add_argument("--url", default="ws://127.0.0.1:8750")
    setmode_p.add_argument("--session")
    setmode_p.add_argument("--room", required=True)
    setmode_p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    setmode_p.set_defaults(func=cmd_host)

    sim_p = sub.add_parser("simulate", help="run or fuzz scripted scenarios on a virtual clock")
    sim_sub = sim_p.add_subparsers(dest="sim_cmd", required=True)
    run_p = sim_sub.add_parser("run")
    run_p.add_argument("scenario", help="scenario JSON file")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", help="trace JSONL output path")
    run_p.set_defaults(func=cmd_simulate_run)
    fuzz_p = sim_sub.add_parser("fuzz")
    fuzz_p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    fuzz_p.add_argument("--seeds", default="0..99", help="e.g. 0..99 or 1,2,3")
    fuzz_p.add_argument("--out", help="report JSON output path")
    fuzz_p.set_defaults(func=cmd_simulate_fuzz)

    ona_p = sub.add_parser("ona", help="ordered network analysis of coded transcripts")
    ona_sub = ona_p.add_subparsers(dest="ona_cmd", required=True)
    acc_p = ona_sub.add_parser("accumulate")
    acc_p.add_argument("--in", dest="infile", required=True, help="coded-turn CSV")
    acc_p.add_argument("--out", required=True, help="network JSON output")
    acc_p.add_argument("--window", type=int, default=4)
    acc_p.add_argument("--binary", action="store_true", help="count each pair at most once per window")
    acc_p.add_argument("--normalize", action="store_true", help="unit-sphere normalize the vectors")
    acc_p.add_argument("--registry", help="code registry JSON (default registry otherwise)")
    acc_p.add_argument("--figures", help="directory for per-conversation network SVGs")
    acc_p.add_argument("--dot", help="directory for Graphviz exports")
    acc_p.set_defaults(func=cmd_ona_accumulate)
    cmp_p = ona_sub.add_parser("compare")
    cmp_p.add_argument("--in", dest="infile", required=True)
    cmp_p.add_argument("--groups", required=True, help="two selectors, e.g. mode=roundtable,mode=breakout")
    cmp_p.add_argument("--out", default="comparison.json")
    cmp_p.add_argument("--window", type=int, default=4)
    cmp_p.add_argument("--binary", action="store_true")
    cmp_p.add_argument("--registry")
    cmp_p.add_argument("--projection-csv", dest="projection_csv")
    cmp_p.add_argument("--figures", help="directory for projection and group network SVGs")
    cmp_p.set_defaults(func=cmd_ona_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
