"""``cimeval`` command line."""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import runner
from .idg import DEFAULT_CIM_SET, build_idg, build_rut_iht
from .memsim import CacheLevelConfig, HierarchyConfig
from .trace import PATTERNS, Level, Opcode, gen_synthetic, serialize_trace

_SIZE = re.compile(r"^(\d+)\s*(B|kB|KB|KiB|MB|MiB)?/(\d+)(?:-way)?(?:/(\d+))?$")
_UNIT = {None: 1, "B": 1, "kB": 1 << 10, "KB": 1 << 10, "KiB": 1 << 10, "MB": 1 << 20, "MiB": 1 << 20}


def parse_cache_spec(text: str, base: CacheLevelConfig) -> CacheLevelConfig:
    """``64kB/4`` (capacity/ways) or ``64kB/4/8`` (plus banks)."""
    m = _SIZE.match(text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"cache spec must look like 64kB/4 or 64kB/4/8, got {text!r}")
    cap = int(m[1]) * _UNIT[m[2]]
    banks = int(m[4]) if m[4] else base.banks
    return CacheLevelConfig(cap, int(m[3]), base.line_size, banks)


def _levels(text: str) -> frozenset:
    if text.strip().lower() in ("", "none"):
        return frozenset()
    return frozenset(Level(t.strip().upper()) for t in text.split(","))


def _ops(text: str) -> frozenset:
    return frozenset(Opcode(t.strip().upper()) for t in text.split(",") if t.strip())


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("traces", nargs="*", help="trace files or bundled fixture names")
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--tech", help="technology of the CiM system (bundled name or .ini path)")
    p.add_argument("--baseline-tech", help="technology of the CiM-less reference system")
    p.add_argument("--host", help="host energy model (.ini)")
    p.add_argument("--cpi", type=float)
    p.add_argument("--cim-levels", type=_levels, help="comma list of CiM levels, or 'none'")
    p.add_argument("--cim-ops", type=_ops, help="comma list of CiM-supported opcodes")
    p.add_argument("--max-fused", type=int, help="largest fused subtree (instruction nodes)")
    p.add_argument("--l1", help="L1 geometry, e.g. 32kB/4")
    p.add_argument("--l2", help="L2 geometry, e.g. 2MB/8")
    p.add_argument("--warmup", action="store_true", default=None, help="replay the trace once to warm the caches")
    p.add_argument("--force-offload", action="store_true", default=None, help="skip the move net-benefit check")
    p.add_argument("--threshold", type=float, help="energy improvement above which a run is CiM-favorable")
    p.add_argument("--emit", choices=("json", "text", "csv"))
    p.add_argument("--out", help="output directory (run) or file (sweep)")


def _config(args: argparse.Namespace) -> runner.RunConfig:
    cfg = runner.RunConfig.load(args.config) if args.config else runner.RunConfig()
    kw: dict = {}
    if args.traces:
        kw["traces"] = tuple(args.traces)
    for flag, key in (("tech", "technology"), ("baseline_tech", "baseline_technology"), ("host", "host"),
                      ("cpi", "cpi"), ("warmup", "warmup"), ("emit", "output_format"),
                      ("threshold", "favorable_threshold")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    hier = cfg.hierarchy
    if args.l1:
        hier = replace(hier, l1=parse_cache_spec(args.l1, hier.l1))
    if args.l2:
        hier = replace(hier, l2=parse_cache_spec(args.l2, hier.l2))
    kw["hierarchy"] = HierarchyConfig(hier.l1, hier.l2, hier.main_capacity, hier.inclusive)
    cap = cfg.capability
    if args.cim_levels is not None:
        cap = replace(cap, levels=args.cim_levels)
    if args.cim_ops is not None:
        cap = replace(cap, supported=args.cim_ops)
    if args.max_fused is not None:
        cap = replace(cap, max_fused_nodes=args.max_fused)
    if args.force_offload:
        cap = replace(cap, force_offload=True)
    kw["capability"] = cap
    return replace(cfg, **kw)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


_TABLE_KEYS = ("macr", "energy_improvement", "speedup", "proc_ratio", "cache_ratio", "delta_processor_pj",
               "delta_caches_pj", "cim_favorable")


def comparison_table(rows: Sequence[dict]) -> str:
    head = ("benchmark", "technology", *_TABLE_KEYS)
    body = [[r["benchmark"], r["technology"], *(_fmt(r[k]) for k in _TABLE_KEYS)] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) if i > 1 else c.ljust(w) for i, (c, w) in enumerate(zip(b, widths))) for b in body]
    return "\n".join(lines) + "\n"


def _csv_rows(outs) -> list[dict]:
    rows = []
    for o in outs:
        c = o.comparison
        rows.append({
            "benchmark": o.benchmark,
            "config": c["hierarchy"],
            "technology": c["technology"],
            "cim_levels": "+".join(o.cim["config"]["capability"]["levels"]) or "none",
            **{k: c[k] for k in runner.CSV_COLUMNS[4:]},
        })
    return rows


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    outs = runner.run(cfg)
    for flag, render in (("dump_idg", lambda o: o.analysis.forest.to_dict()),
                         ("dump_plan", lambda o: o.analysis.plan.to_dict())):
        path = getattr(args, flag)
        if path:
            data = {o.benchmark: render(o) for o in outs}
            Path(path).write_text(runner.dumps(data if len(outs) > 1 else data[outs[0].benchmark]), encoding="utf-8")
    fmt = cfg.output_format
    if fmt == "json":
        sys.stdout.write(runner.dumps([{"baseline": o.baseline, "cim": o.cim, "comparison": o.comparison}
                                       for o in outs]))
    elif fmt == "csv":
        sys.stdout.write(runner.sweep_csv(_csv_rows(outs)))
    else:
        sys.stdout.write(comparison_table([o.comparison for o in outs]))
    return 0


def cmd_compare(args) -> int:
    base = json.loads(Path(args.baseline).read_text(encoding="utf-8"))
    cim = json.loads(Path(args.cim).read_text(encoding="utf-8"))
    row = runner.compare(base, cim, threshold=args.threshold, min_macr=args.min_macr)
    sys.stdout.write(runner.dumps(row) if args.emit == "json" else comparison_table([row]))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    rows = runner.sweep(cfg)
    fmt = args.emit or "csv"
    text = runner.dumps(rows) if fmt == "json" else runner.sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen(args) -> int:
    text = serialize_trace(gen_synthetic(args.pattern, args.count, args.seed))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_idg(args) -> int:
    _, ciq = runner.load_trace(args.trace)
    rut, iht = build_rut_iht(ciq)
    forest = build_idg(ciq, args.cim_ops or DEFAULT_CIM_SET, rut, iht)
    sys.stdout.write(runner.dumps(forest.to_dict()))
    return 0


def cmd_dump_plan(args) -> int:
    cfg = _config(args)
    if len(cfg.traces) != 1:
        raise runner.ConfigError("dump-plan takes exactly one trace")
    o = runner.run_one(cfg, cfg.traces[0])
    sys.stdout.write(runner.dumps(o.analysis.plan.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cimeval", description="Compute-in-memory offload and energy analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="baseline vs CiM run of one or more traces")
    _add_run_flags(r)
    r.add_argument("--dump-idg", metavar="FILE", help="write the dependency forest as JSON")
    r.add_argument("--dump-plan", metavar="FILE", help="write the offload plan as JSON")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="improvement of a CiM report over a baseline report")
    c.add_argument("baseline")
    c.add_argument("cim")
    c.add_argument("--threshold", type=float, default=1.0)
    c.add_argument("--min-macr", type=float, default=0.05)
    c.add_argument("--emit", choices=("json", "text"), default="text")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="design-space sweep from a config file")
    _add_run_flags(s)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen", help="write a synthetic trace")
    g.add_argument("pattern", help=f"one of {', '.join(PATTERNS)}, optionally with :OP (e.g. llos:XOR)")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("dump-idg", help="print the dependency forest of a trace")
    d.add_argument("trace")
    d.add_argument("--cim-ops", type=_ops)
    d.set_defaults(func=cmd_dump_idg)

    dp = sub.add_parser("dump-plan", help="print the offload plan of a trace")
    _add_run_flags(dp)
    dp.set_defaults(func=cmd_dump_plan)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, LookupError, OSError, ArithmeticError, RuntimeError) as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        tag = module if module != "builtins" else args.command
        print(f"cimeval: [{tag}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
