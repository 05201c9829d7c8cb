"""Command-line front end.

Subcommands: ``reduce`` (run the pipeline), ``flops`` (cost report), ``synth``
(write a workload), ``trace`` (render a trace as grid/CSV text and track
tokens). Exit codes: 0 success, 1 runtime stage error, 2 usage/config error.
With ``--json``, stdout is a single machine-parseable JSON document. Errors
always go to stderr as one JSON object with an ``error`` key.

The ``FICOCO_THREADS`` environment variable caps internal parallelism
(0 = auto). The current engine executes sequentially, which satisfies any
cap; the value is still validated so scripts fail fast on typos.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigError, EngineError
from .flops import LayerCostParams, delta_report, layer_flops, overhead_flops, pipeline_cost
from .pipeline import attention_workload_from_manifest, run
from .synth import gen_workload, plant_redundancy, read_workload, write_workload
from .tensor_io import read_config, read_trace, write_tensor, write_trace

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _emit_error(exc: EngineError) -> None:
    payload = {"error": {"class": exc.error_class, "message": str(exc)}}
    print(json.dumps(payload), file=sys.stderr)


def _thread_cap() -> int:
    raw = os.environ.get("FICOCO_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"FICOCO_THREADS must be an integer, got {raw!r}")
    if cap < 0:
        raise ConfigError(f"FICOCO_THREADS must be >= 0, got {cap}")
    return cap


# ---------------------------------------------------------------------------
# reduce
# ---------------------------------------------------------------------------


def _cmd_reduce(args: argparse.Namespace) -> int:
    config = read_config(args.config)
    if args.workload is not None:
        manifest = Path(args.workload)
        try:
            with open(manifest, "r", encoding="utf-8") as fh:
                kind = json.load(fh).get("kind")
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read workload manifest {manifest}: {exc}")
        if kind == "synthetic":
            workload = read_workload(manifest)
        else:
            workload = attention_workload_from_manifest(manifest)
    else:
        workload = gen_workload(
            n_visual=config.initial_visual,
            m_text=args.synth_text,
            width=args.synth_width,
            num_layers=config.num_layers,
            seed=config.seed,
            grid=(config.grid_rows, config.grid_cols),
            include_cls=not args.no_cls,
        )
    final_ws, trace, summary = run(workload, config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(out_dir / "embeddings.npy", final_ws.embeddings.astype(np.float32))
    write_trace(out_dir / "trace.json", trace)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    if args.json:
        print(json.dumps(summary))
    else:
        counts = summary["final"]
        pct = summary["flops"]["percent_reduction"]
        print(
            f"reduced to {counts['visual']} visual tokens "
            f"({counts['total']} total); flops down {pct:.1f}%"
        )
        print(f"artifacts written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flops
# ---------------------------------------------------------------------------


def _load_params(raw: str) -> dict[str, Any]:
    text = raw.strip()
    if not text.startswith("{"):
        try:
            with open(raw, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read params {raw}: {exc}")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"params are not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError("params must be a JSON object")
    return obj


def _cmd_flops(args: argparse.Namespace) -> int:
    obj = _load_params(args.params)
    known = {"variant", "d", "h_ffn", "n_visual", "n_discard", "m_text", "schedule"}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown params keys: {', '.join(unknown)}")
    try:
        variant = obj["variant"]
        d = int(obj["d"])
        h_ffn = int(obj["h_ffn"])
        n_visual = int(obj["n_visual"])
        m_text = int(obj.get("m_text", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"params must set variant/d/h_ffn/n_visual: {exc}")

    if "schedule" in obj:
        cost = pipeline_cost(
            [int(v) for v in obj["schedule"]],
            n_visual=n_visual,
            m_text=m_text,
            d=d,
            h_ffn=h_ffn,
            variant=variant,
        )
        report = cost.to_json_dict()
        if args.json:
            print(json.dumps(report))
        else:
            print(
                f"before={report['total_before']} after={report['total_after']} "
                f"reduction={report['percent_reduction']:.1f}% "
                f"overhead={report['total_overhead']}"
            )
            for w in report["closed_form_warnings"]:
                print(
                    f"warning: layer {w['layer']} printed closed form gives "
                    f"{w['printed_delta']}, true delta is {w['true_delta']}"
                )
        return EXIT_OK

    params = LayerCostParams(
        d=d, h_ffn=h_ffn, n_visual=n_visual,
        n_discard=int(obj.get("n_discard", 0)), m_text=m_text,
    )
    extra = m_text if variant == "L" else 0
    before = layer_flops(params.n_visual + extra, d, h_ffn)
    after = layer_flops(params.n_target + extra, d, h_ffn)
    rep = delta_report(params, variant)
    overhead = overhead_flops(params, variant)
    report = {
        "variant": variant,
        "before": before,
        "after": after,
        "delta": rep.true_delta,
        "printed_delta": rep.printed,
        "closed_form_matches": rep.matches,
        "overhead": overhead,
    }
    if args.json:
        print(json.dumps(report))
    else:
        print(f"before={before} after={after} delta={rep.true_delta} overhead={overhead}")
        if not rep.matches:
            print(
                f"warning: printed closed form gives {rep.printed}, "
                f"true delta is {rep.true_delta}"
            )
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ConfigError(f"grid must look like ROWSxCOLS, got {text!r}")


def _cmd_synth(args: argparse.Namespace) -> int:
    grid = _parse_grid(args.grid)
    workload = gen_workload(
        n_visual=grid[0] * grid[1],
        m_text=args.text,
        width=args.width,
        num_layers=args.layers,
        seed=args.seed,
        grid=grid,
        include_cls=not args.no_cls,
    )
    if args.plant:
        workload = plant_redundancy(workload, args.plant, args.noise, args.seed)
    manifest = write_workload(args.out, workload)
    if args.json:
        print(json.dumps({"manifest": str(manifest), "planted": list(workload.planted)}))
    else:
        print(f"workload manifest written to {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace rendering
# ---------------------------------------------------------------------------


def _grid_context(args: argparse.Namespace) -> tuple[int, int, int]:
    if args.summary:
        try:
            with open(args.summary, "r", encoding="utf-8") as fh:
                summary = json.load(fh)
            rows, cols = summary["grid"]
            return int(rows), int(cols), int(summary["first_visual_index"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot take grid from summary {args.summary}: {exc}")
    if args.grid:
        rows, cols = _parse_grid(args.grid)
        return rows, cols, args.first_visual
    raise ConfigError("trace rendering needs --grid ROWSxCOLS or --summary PATH")


def _render_grid(dead: set[int], rows: int, cols: int, first_visual: int) -> str:
    lines = []
    for r in range(rows):
        cells = []
        for c in range(cols):
            token = first_visual + r * cols + c
            cells.append("x" if token in dead else ".")
        lines.append("".join(cells))
    return "\n".join(lines)


def _cmd_trace(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    rows, cols, first_visual = _grid_context(args)
    n_visual = rows * cols

    if args.token is not None:
        token = args.token
        lo, hi = first_visual, first_visual + n_visual - 1
        if not lo <= token <= hi:
            raise ConfigError(f"token {token} outside the visual range {lo}..{hi}")
        events = []
        for rec in trace.layers:
            for a in rec.assignments:
                if a.source == token:
                    events.append(
                        {"layer": rec.layer, "targets": list(a.targets),
                         "weights": list(a.weights)}
                    )
        if args.json:
            print(json.dumps({"token": token, "events": events}))
        elif not events:
            print(f"token {token} survives all {len(trace.layers)} layers")
        else:
            for ev in events:
                pairs = ", ".join(
                    f"{t}:{w:.6f}" for t, w in zip(ev["targets"], ev["weights"])
                )
                print(
                    f"layer {ev['layer']}: token {token} discarded -> "
                    f"targets [{pairs}] (weight sum {sum(ev['weights']):.9f})"
                )
        return EXIT_OK

    dead: set[int] = set()
    wanted = None if args.layer is None else {args.layer}
    out_lines: list[str] = []
    layers_json = []
    for rec in trace.layers:
        dead.update(rec.discarded)
        if wanted is not None and rec.layer not in wanted:
            continue
        if args.json:
            layers_json.append(
                {"layer": rec.layer, "dead": sorted(dead),
                 "grid": _render_grid(dead, rows, cols, first_visual).split("\n")}
            )
        elif args.format == "grid":
            out_lines.append(f"layer {rec.layer} ({len(dead)} dead)")
            out_lines.append(_render_grid(dead, rows, cols, first_visual))
        else:
            for token in sorted(dead):
                k = token - first_visual
                out_lines.append(f"{rec.layer},{k // cols},{k % cols},{token},dead")
    if args.json:
        print(json.dumps({"layers": layers_json}))
        return EXIT_OK
    if args.format == "csv":
        out_lines.insert(0, "layer,row,col,token,state")
    print("\n".join(out_lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokreduce",
        description="filter / correlate / compress token reduction over attention maps",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_reduce = sub.add_parser("reduce", help="run a reduction and write artifacts")
    p_reduce.add_argument("--config", required=True, help="path to config JSON")
    source = p_reduce.add_mutually_exclusive_group(required=True)
    source.add_argument("--workload", help="workload manifest JSON")
    source.add_argument("--synth", action="store_true", help="generate a seeded workload")
    p_reduce.add_argument("--synth-width", type=int, default=64, help="embedding width for --synth")
    p_reduce.add_argument("--synth-text", type=int, default=0, help="text token count for --synth")
    p_reduce.add_argument("--no-cls", action="store_true", help="omit the CLS token in --synth")
    p_reduce.add_argument("--out", required=True, help="output directory")
    p_reduce.add_argument("--json", action="store_true")
    p_reduce.set_defaults(func=_cmd_reduce)

    p_flops = sub.add_parser("flops", help="cost-model report")
    p_flops.add_argument("--params", required=True, help="JSON file or inline JSON object")
    p_flops.add_argument("--json", action="store_true")
    p_flops.set_defaults(func=_cmd_flops)

    p_synth = sub.add_parser("synth", help="write a synthetic workload")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--grid", required=True, help="visual grid, e.g. 24x24")
    p_synth.add_argument("--text", type=int, default=0)
    p_synth.add_argument("--width", type=int, default=64)
    p_synth.add_argument("--layers", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--no-cls", action="store_true")
    p_synth.add_argument("--plant", type=int, default=0, help="planted duplicate count")
    p_synth.add_argument("--noise", type=float, default=0.0, help="duplicate noise sigma")
    p_synth.add_argument("--json", action="store_true")
    p_synth.set_defaults(func=_cmd_synth)

    p_trace = sub.add_parser("trace", help="render a trace as grid or CSV text")
    p_trace.add_argument("--trace", required=True, help="trace JSON path")
    p_trace.add_argument("--format", choices=("grid", "csv"), default="grid")
    p_trace.add_argument("--layer", type=int, default=None, help="render one layer only")
    p_trace.add_argument("--token", type=int, default=None, help="track one token's pathways")
    p_trace.add_argument("--grid", default=None, help="grid dims ROWSxCOLS")
    p_trace.add_argument("--first-visual", type=int, default=1,
                         help="original index of the first visual token (default 1: after CLS)")
    p_trace.add_argument("--summary", default=None,
                         help="summary.json from reduce; supplies grid dims")
    p_trace.add_argument("--json", action="store_true")
    p_trace.set_defaults(func=_cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _thread_cap()
        return args.func(args)
    except ConfigError as exc:
        _emit_error(exc)
        return EXIT_USAGE
    except EngineError as exc:
        _emit_error(exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
