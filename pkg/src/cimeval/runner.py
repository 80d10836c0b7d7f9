"""Pipeline wiring, run configuration, reports and sweeps.

A run takes one trace through parse, annotate, IDG, selection, reshape and
profiling twice: once with CiM disabled (the baseline system) and once with
the configured capability.  Both runs are rendered as JSON reports and the
pair is reduced to improvement metrics by :func:`compare`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .idg import DEFAULT_CIM_SET, IdgForest, build_idg, build_rut_iht
from .memsim import HierarchyConfig, simulate_accesses
from .offload import CimCapability, OffloadPlan, compute_macr, select_candidates
from .profile import (
    EnergyReport,
    HostEnergyModel,
    LevelEnergy,
    PerfReport,
    PerformanceCounters,
    count_events,
    energy_report,
    improvement,
    perf_report,
    resolve_host,
)
from .reshape import ReshapedTrace, reshape_trace, verify_reshape
from .techmodel import TechModel, resolve_tech
from .trace import CommittedInstructionQueue, Level, Opcode, parse_trace, serialize_trace

__all__ = [
    "SCHEMA_VERSION",
    "FIXTURES",
    "RunConfig",
    "SweepAxes",
    "ConfigError",
    "CompareError",
    "Analysis",
    "load_trace",
    "analyze",
    "build_report",
    "run",
    "compare",
    "sweep",
    "sweep_csv",
    "dumps",
]

SCHEMA_VERSION = 1
FIXTURES = ("llos", "llos_imm", "llos_chain", "random_mix", "lcs_micro")


class ConfigError(ValueError):
    pass


class CompareError(ValueError):
    pass


@dataclass(frozen=True)
class SweepAxes:
    hierarchies: tuple[HierarchyConfig, ...] = ()
    technologies: tuple[str, ...] = ()
    cim_levels: tuple[frozenset, ...] = ()

    def empty(self) -> bool:
        return not (self.hierarchies or self.technologies or self.cim_levels)


@dataclass(frozen=True)
class RunConfig:
    traces: tuple[str, ...] = ()
    hierarchy: HierarchyConfig = HierarchyConfig()
    capability: CimCapability = CimCapability()
    technology: str = "sram_45nm"
    # technology of the CiM-less reference system; None = same as technology
    baseline_technology: Optional[str] = "sram_45nm"
    host: Optional[str] = None
    cpi: float = 1.0
    warmup: bool = False
    output_format: str = "text"
    output_dir: Optional[str] = None
    favorable_threshold: float = 1.0
    min_macr: float = 0.05
    sweep: SweepAxes = field(default_factory=SweepAxes)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.output_format not in ("json", "text", "csv"):
            raise ConfigError(f"unknown output format {self.output_format!r}")
        if not self.cpi > 0:
            raise ConfigError("cpi must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @classmethod
    def from_dict(cls, d: dict, *, base_dir: Union[str, Path, None] = None) -> "RunConfig":
        d = dict(d)
        base = Path(base_dir) if base_dir else None

        def rel(p: str) -> str:
            if base is None or p in FIXTURES or Path(p).is_absolute():
                return p
            return str(base / p)

        kw: dict = {}
        if "traces" in d:
            traces = d.pop("traces")
            kw["traces"] = tuple(rel(t) for t in ([traces] if isinstance(traces, str) else traces))
        if "hierarchy" in d:
            kw["hierarchy"] = HierarchyConfig.from_dict(d.pop("hierarchy"))
        if "capability" in d:
            kw["capability"] = _capability(d.pop("capability"))
        if "sweep" in d:
            s = d.pop("sweep")
            unknown = set(s) - {"hierarchies", "technologies", "cim_levels"}
            if unknown:
                raise ConfigError(f"unknown sweep axis {sorted(unknown)[0]!r}")
            kw["sweep"] = SweepAxes(
                tuple(HierarchyConfig.from_dict(h) for h in s.get("hierarchies", ())),
                tuple(s.get("technologies", ())),
                tuple(frozenset(Level(x) for x in lv) for lv in s.get("cim_levels", ())),
            )
            if kw["sweep"].empty():
                raise ConfigError("sweep axes must not all be empty")
        for key in ("host",):
            if d.get(key):
                kw[key] = rel(d.pop(key)) if d[key] != "default" else d.pop(key)
        simple = {"technology", "baseline_technology", "cpi", "warmup", "output_format", "output_dir",
                  "favorable_threshold", "min_macr", "workers"}
        for key in list(d):
            if key not in simple:
                raise ConfigError(f"unknown run config key {key!r}")
            kw[key] = d.pop(key)
        for key in ("technology", "baseline_technology"):
            if kw.get(key) and kw[key] not in ("sram_45nm", "fefet_45nm"):
                kw[key] = rel(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        return cls.from_dict(data, base_dir=p.parent)


def _capability(d: dict) -> CimCapability:
    known = {"supported", "levels", "max_fused_nodes", "force_offload", "reject_unabsorbed_store"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown capability key {sorted(unknown)[0]!r}")
    kw = dict(d)
    if "supported" in kw:
        kw["supported"] = frozenset(Opcode(o) for o in kw["supported"])
    if "levels" in kw:
        kw["levels"] = frozenset(Level(l) for l in kw["levels"])
    return CimCapability(**kw)


def load_trace(ref: str) -> tuple[str, CommittedInstructionQueue]:
    """(benchmark name, queue) for a bundled fixture name or a trace path."""
    if ref in FIXTURES and not Path(ref).exists():
        text = resources.files("cimeval").joinpath(f"fixtures/{ref}.trace").read_text(encoding="utf-8")
        return ref, parse_trace(text)
    p = Path(ref)
    if not p.exists():
        raise ConfigError(f"trace not found: {ref}")
    return p.stem, parse_trace(p.read_text(encoding="utf-8"))


@dataclass
class Analysis:
    """Everything one pipeline pass produced."""

    benchmark: str
    trace: CommittedInstructionQueue
    annotated: CommittedInstructionQueue
    forest: IdgForest
    plan: OffloadPlan
    reshaped: ReshapedTrace
    counters: PerformanceCounters
    energy: EnergyReport
    perf: PerfReport
    tech: TechModel
    host: HostEnergyModel
    hierarchy: HierarchyConfig
    capability: CimCapability
    cpi: float
    warmup: bool

    @property
    def macr(self) -> Optional[float]:
        return compute_macr(self.plan, self.annotated)


def analyze(
    benchmark: str,
    trace: CommittedInstructionQueue,
    *,
    hierarchy: HierarchyConfig,
    capability: CimCapability,
    tech: TechModel,
    host: HostEnergyModel,
    cpi: float = 1.0,
    warmup: bool = False,
) -> Analysis:
    annotated = simulate_accesses(trace, hierarchy, warmup=warmup)
    rut, iht = build_rut_iht(annotated)
    forest = build_idg(annotated, capability.supported or DEFAULT_CIM_SET, rut, iht)
    plan = select_candidates(forest, annotated, capability, tech=tech, hierarchy=hierarchy)
    reshaped = reshape_trace(annotated, plan)
    check = verify_reshape(annotated, reshaped, plan)
    if not check.ok:
        raise RuntimeError(f"[reshape] {benchmark}: {check.violation}")
    counters = count_events(reshaped)
    perf = perf_report(counters, tech, cpi)
    energy = energy_report(counters, tech, host, cycles=perf.total_cycles)
    return Analysis(benchmark, trace, annotated, forest, plan, reshaped, counters, energy, perf, tech, host,
                    hierarchy, capability, cpi, warmup)


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def workload_fingerprint(a: Analysis) -> str:
    """Hash of what two comparable runs must share."""
    return _sha(
        {
            "trace": hashlib.sha256(serialize_trace(a.trace).encode()).hexdigest(),
            "hierarchy": a.hierarchy.to_dict(),
            "host": a.host.to_dict(),
            "cpi": a.cpi,
            "warmup": a.warmup,
        }
    )


def build_report(a: Analysis) -> dict:
    body = {
        "schema_version": SCHEMA_VERSION,
        "benchmark": a.benchmark,
        "config": {
            "hierarchy": a.hierarchy.to_dict(),
            "hierarchy_label": a.hierarchy.label(),
            "capability": a.capability.to_dict(),
            "technology": a.tech.to_dict(),
            "host": a.host.to_dict(),
            "cpi": a.cpi,
            "warmup": a.warmup,
        },
        "workload_fingerprint": workload_fingerprint(a),
        "instructions": len(a.trace),
        "memory_accesses": a.annotated.memory_accesses(),
        "eliminated_accesses": a.plan.eliminated_accesses(),
        "macr": a.macr,
        "candidates": len(a.plan.candidates),
        "rejections": len(a.plan.rejections),
        "counters": a.counters.to_dict(),
        "energy": a.energy.to_dict(),
        "perf": a.perf.to_dict(),
    }
    body["fingerprint"] = _sha({k: v for k, v in body.items() if k != "fingerprint"})
    return body


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _energy_from(d: dict) -> EnergyReport:
    levels = {k: LevelEnergy(v["access"], v["cim"], v["move"]) for k, v in d["levels_pj"].items()}
    return EnergyReport(d["host_pj"], levels, d.get("technology", ""))


def _perf_from(d: dict) -> PerfReport:
    return PerfReport(d["host_cycles"], d["cim_extra_cycles"], d["cpi"])


def compare(baseline: dict, cim: dict, *, threshold: float = 1.0, min_macr: float = 0.05) -> dict:
    """Improvement table of a CiM report over a baseline report.

    The reports must come from the same trace, hierarchy, host model and
    CPI.  A run is CiM-favorable when its energy improvement exceeds
    ``threshold`` and its MACR reaches ``min_macr``.
    """
    for r in (baseline, cim):
        if r.get("schema_version") != SCHEMA_VERSION:
            raise CompareError(f"unsupported report schema {r.get('schema_version')!r}")
    if baseline["workload_fingerprint"] != cim["workload_fingerprint"]:
        raise CompareError("reports come from different workloads (fingerprint mismatch); refusing to compare")
    imp = improvement(
        (_energy_from(baseline["energy"]), _perf_from(baseline["perf"])),
        (_energy_from(cim["energy"]), _perf_from(cim["perf"])),
    )
    macr = cim["macr"]
    favorable = imp.energy_improvement > threshold and macr is not None and macr >= min_macr
    return {
        "schema_version": SCHEMA_VERSION,
        "benchmark": cim["benchmark"],
        "baseline_fingerprint": baseline["fingerprint"],
        "cim_fingerprint": cim["fingerprint"],
        "baseline_technology": baseline["config"]["technology"]["name"],
        "technology": cim["config"]["technology"]["name"],
        "hierarchy": cim["config"]["hierarchy_label"],
        "macr": macr,
        **imp.to_dict(),
        "cim_favorable": favorable,
    }


@dataclass
class RunOutput:
    benchmark: str
    baseline: dict
    cim: dict
    comparison: dict
    analysis: Analysis


def run_one(cfg: RunConfig, ref: str) -> RunOutput:
    name, trace = load_trace(ref)
    tech = resolve_tech(cfg.technology)
    base_tech = resolve_tech(cfg.baseline_technology) if cfg.baseline_technology else tech
    host = resolve_host(cfg.host)
    common = dict(hierarchy=cfg.hierarchy, host=host, cpi=cfg.cpi, warmup=cfg.warmup)
    off = replace(cfg.capability, levels=frozenset())
    base = analyze(name, trace, capability=off, tech=base_tech, **common)
    cim = analyze(name, trace, capability=cfg.capability, tech=tech, **common)
    rb, rc = build_report(base), build_report(cim)
    cmp = compare(rb, rc, threshold=cfg.favorable_threshold, min_macr=cfg.min_macr)
    return RunOutput(name, rb, rc, cmp, cim)


def run(cfg: RunConfig) -> list[RunOutput]:
    """Run every trace of ``cfg``; writes reports when an output dir is set."""
    if not cfg.traces:
        raise ConfigError("no traces given")
    outs = [run_one(cfg, t) for t in cfg.traces]
    if cfg.output_dir:
        d = Path(cfg.output_dir)
        d.mkdir(parents=True, exist_ok=True)
        for o in outs:
            (d / f"{o.benchmark}.baseline.json").write_text(dumps(o.baseline), encoding="utf-8")
            (d / f"{o.benchmark}.cim.json").write_text(dumps(o.cim), encoding="utf-8")
            (d / f"{o.benchmark}.compare.json").write_text(dumps(o.comparison), encoding="utf-8")
    return outs


CSV_COLUMNS = ("benchmark", "config", "technology", "cim_levels", "macr", "speedup", "energy_improvement",
               "proc_ratio", "cache_ratio")


def _sweep_point(args) -> dict:
    cfg, ref = args
    o = run_one(cfg, ref)
    c = o.comparison
    return {
        "benchmark": o.benchmark,
        "config": cfg.hierarchy.label(),
        "technology": c["technology"],
        "cim_levels": "+".join(sorted(l.value for l in cfg.capability.levels)) or "none",
        **{k: c[k] for k in CSV_COLUMNS[4:]},
    }


def sweep_points(cfg: RunConfig) -> list[RunConfig]:
    axes = cfg.sweep
    hiers = axes.hierarchies or (cfg.hierarchy,)
    techs = axes.technologies or (cfg.technology,)
    levels = axes.cim_levels or (cfg.capability.levels,)
    return [
        replace(cfg, hierarchy=h, technology=t, capability=replace(cfg.capability, levels=lv))
        for h in hiers
        for t in techs
        for lv in levels
    ]


def sweep(cfg: RunConfig) -> list[dict]:
    """One row per (trace, hierarchy, technology, CiM levels), in axis order."""
    if cfg.sweep.empty():
        raise ConfigError("sweep mode needs at least one non-empty sweep axis")
    if not cfg.traces:
        raise ConfigError("no traces given")
    jobs = [(p, t) for t in cfg.traces for p in sweep_points(cfg)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("n/a" if r[k] is None else r[k]) for k in CSV_COLUMNS})
    return buf.getvalue()
