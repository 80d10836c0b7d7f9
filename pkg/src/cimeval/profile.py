"""Event counters and the energy/performance models built on them.

Counters are tallied from a baseline queue or a reshaped trace.  Energy is
linear in the counts (per-op technology energies for the memory side, a
per-class table for the host).  Runtime uses a constant CPI: every committed
item costs ``cpi`` cycles and CiM operations add whatever latency they
cannot hide behind that cycle.
"""

from __future__ import annotations

import configparser
from collections import Counter
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .memsim import probe_events
from .reshape import CimKind, CimOp, ReshapedTrace
from .techmodel import OpKind, TechModel
from .trace import CommittedInstructionQueue, ExecUnit, IState, Level

__all__ = [
    "HOST_CLASSES",
    "PerformanceCounters",
    "HostEnergyModel",
    "HostConfigError",
    "MetricError",
    "EnergyReport",
    "PerfReport",
    "Improvement",
    "count_events",
    "energy_report",
    "perf_report",
    "improvement",
    "load_host_model",
    "default_host_model",
    "resolve_host",
]

HOST_CLASSES = ("int_alu", "load_store", "branch", "move", "nop", "cim_issue")

_CLASS_OF = {
    ExecUnit.INT_ALU: "int_alu",
    ExecUnit.LOAD_STORE: "load_store",
    ExecUnit.BRANCH: "branch",
    ExecUnit.MOVE: "move",
    ExecUnit.NONE: "nop",
}

_CIM_OPKIND = {
    CimKind.AND: OpKind.CIM_AND,
    CimKind.OR: OpKind.CIM_OR,
    CimKind.XOR: OpKind.CIM_XOR,
    CimKind.ADD: OpKind.CIM_ADD,
}


class HostConfigError(ValueError):
    pass


class MetricError(ArithmeticError):
    pass


def _add(a: Mapping[str, int], b: Mapping[str, int]) -> dict[str, int]:
    return dict(sorted((Counter(a) + Counter(b)).items()))


@dataclass(frozen=True)
class PerformanceCounters:
    """Event tallies.  Dict keys are plain strings so dumps stay readable:
    levels ``L1``/``L2``/``MAIN``, CiM ops ``<level>.<op>``, moves
    ``<src>-><dst>``."""

    host: Mapping[str, int] = field(default_factory=dict)
    reads: Mapping[str, int] = field(default_factory=dict)
    writes: Mapping[str, int] = field(default_factory=dict)
    hits: Mapping[str, int] = field(default_factory=dict)
    misses: Mapping[str, int] = field(default_factory=dict)
    cim: Mapping[str, int] = field(default_factory=dict)
    moves: Mapping[str, int] = field(default_factory=dict)
    # the subset of moves that fetch a LOAD operand from a deeper level
    fills: Mapping[str, int] = field(default_factory=dict)
    committed: int = 0

    def __add__(self, other: "PerformanceCounters") -> "PerformanceCounters":
        if not isinstance(other, PerformanceCounters):
            return NotImplemented
        kw = {f.name: _add(getattr(self, f.name), getattr(other, f.name)) for f in fields(self) if f.name != "committed"}
        return PerformanceCounters(**kw, committed=self.committed + other.committed)

    def host_count(self, cls: str) -> int:
        return self.host.get(cls, 0)

    def cim_ops(self) -> int:
        return sum(self.cim.values())

    def to_dict(self) -> dict:
        out = {f.name: dict(sorted(getattr(self, f.name).items())) for f in fields(self) if f.name != "committed"}
        out["committed"] = self.committed
        return out


def count_events(trace: Union[CommittedInstructionQueue, ReshapedTrace, Iterable]) -> PerformanceCounters:
    """Tally host, cache, CiM and movement events of a baseline or reshaped
    stream.  Memory items must carry cache annotations."""
    host: Counter = Counter()
    reads: Counter = Counter()
    writes: Counter = Counter()
    hits: Counter = Counter()
    misses: Counter = Counter()
    cim: Counter = Counter()
    moves: Counter = Counter()
    fills: Counter = Counter()
    committed = 0
    for item in trace:
        if isinstance(item, CimOp):
            if item.kind is CimKind.MOVE:
                pair = f"{item.src_level.value}->{item.level.value}"
                moves[pair] += 1
                if item.move_kind == "fill":
                    fills[pair] += 1
                continue
            cim[f"{item.level.value}.{_CIM_OPKIND[item.kind].value}"] += 1
            host["cim_issue"] += 1
            committed += 1
            continue
        assert isinstance(item, IState)
        committed += 1
        host[_CLASS_OF[item.exec_unit]] += 1
        for level, op, hit in probe_events(item):
            (writes if op is OpKind.WRITE else reads)[level.value] += 1
            if level is not Level.MAIN:
                (hits if hit else misses)[level.value] += 1
    return PerformanceCounters(
        *(dict(sorted(c.items())) for c in (host, reads, writes, hits, misses, cim, moves, fills)), committed
    )


@dataclass(frozen=True)
class HostEnergyModel:
    """Per-instruction host energy (pJ) by class, plus optional idle energy
    per cycle."""

    int_alu: float = 150.0
    load_store: float = 200.0
    branch: float = 120.0
    move: float = 100.0
    nop: float = 50.0
    cim_issue: float = 200.0
    idle_per_cycle: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise HostConfigError(f"host energy must be non-negative: {f.name}")

    def energy_of(self, cls: str) -> float:
        if cls not in HOST_CLASSES:
            raise HostConfigError(f"unknown host instruction class {cls!r}")
        return getattr(self, cls)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_host_model(source: str) -> HostEnergyModel:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(source)
    except configparser.Error as exc:
        raise HostConfigError(f"malformed host config: {exc}") from None
    if not parser.has_section("host"):
        raise HostConfigError("host config needs a [host] section")
    known = {f.name for f in fields(HostEnergyModel)}
    kw = {}
    for key, raw in parser.items("host"):
        if key not in known:
            raise HostConfigError(f"unknown host key: {key}")
        try:
            kw[key] = float(raw)
        except ValueError:
            raise HostConfigError(f"host.{key}: not a number: {raw!r}") from None
    return HostEnergyModel(**kw)


def default_host_model() -> HostEnergyModel:
    text = resources.files("cimeval").joinpath("data/host_default.ini").read_text(encoding="utf-8")
    return load_host_model(text)


def resolve_host(path: Union[str, Path, None]) -> HostEnergyModel:
    if path is None or path == "default":
        return default_host_model()
    return load_host_model(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class LevelEnergy:
    access: float = 0.0  # host-issued reads and writes
    cim: float = 0.0
    move: float = 0.0

    @property
    def total(self) -> float:
        return self.access + self.cim + self.move


@dataclass(frozen=True)
class EnergyReport:
    host: float
    levels: Mapping[str, LevelEnergy]
    technology: str = ""

    @property
    def processor(self) -> float:
        return self.host

    @property
    def caches(self) -> float:
        """Everything on the memory side (main memory included)."""
        return sum(lv.total for lv in self.levels.values())

    @property
    def total(self) -> float:
        return self.processor + self.caches

    def to_dict(self) -> dict:
        return {
            "technology": self.technology,
            "host_pj": self.host,
            "levels_pj": {
                k: {"access": v.access, "cim": v.cim, "move": v.move, "total": v.total}
                for k, v in sorted(self.levels.items())
            },
            "processor_pj": self.processor,
            "caches_pj": self.caches,
            "total_pj": self.total,
        }


def energy_report(
    counters: PerformanceCounters,
    tech: TechModel,
    host: HostEnergyModel,
    *,
    cycles: float = 0.0,
) -> EnergyReport:
    """Linear energy of a counter set.  ``cycles`` feeds the optional idle
    term of the host model."""
    hosted = sum(n * host.energy_of(cls) for cls, n in sorted(counters.host.items()))
    hosted += host.idle_per_cycle * cycles
    acc: dict[str, list[float]] = {lv.value: [0.0, 0.0, 0.0] for lv in Level}
    for lv in Level:
        acc[lv.value][0] = counters.reads.get(lv.value, 0) * tech.energy_of(OpKind.READ, lv) + counters.writes.get(
            lv.value, 0
        ) * tech.energy_of(OpKind.WRITE, lv)
    for key, n in sorted(counters.cim.items()):
        lv, op = key.split(".")
        acc[lv][1] += n * tech.energy_of(OpKind(op), Level(lv))
    for key, n in sorted(counters.moves.items()):
        src, dst = key.split("->")
        acc[src][2] += n * tech.energy_of(OpKind.READ, Level(src))
        acc[dst][2] += n * tech.energy_of(OpKind.WRITE, Level(dst))
    levels = {k: LevelEnergy(*v) for k, v in acc.items()}
    return EnergyReport(hosted, levels, tech.name)


@dataclass(frozen=True)
class PerfReport:
    host_cycles: float
    cim_extra_cycles: float
    cpi: float = 1.0
    speedup: Optional[float] = None

    @property
    def total_cycles(self) -> float:
        return self.host_cycles + self.cim_extra_cycles

    def to_dict(self) -> dict:
        return {
            "cpi": self.cpi,
            "host_cycles": self.host_cycles,
            "cim_extra_cycles": self.cim_extra_cycles,
            "total_cycles": self.total_cycles,
            "speedup": self.speedup,
        }


def perf_report(
    counters: PerformanceCounters,
    tech: TechModel,
    cpi: float = 1.0,
    *,
    baseline: Optional[PerfReport] = None,
) -> PerfReport:
    """Constant-CPI runtime.

    Each committed item (host instruction or CiM issue) costs ``cpi``.  A CiM
    op whose latency exceeds a read at its level by more than one issue slot
    stalls for the remainder.  Moves cost a read plus a write, except fills:
    they stand in for the host's own miss handling, which the constant-CPI
    baseline does not charge either.
    """
    if not cpi > 0:
        raise ValueError("cpi must be positive")
    extra = 0.0
    for key, n in sorted(counters.cim.items()):
        lv, op = key.split(".")
        level = Level(lv)
        delta = tech.latency_of(OpKind(op), level) - tech.latency_of(OpKind.READ, level)
        extra += n * max(0.0, delta - cpi)
    for key, n in sorted(counters.moves.items()):
        src, dst = key.split("->")
        extra += (n - counters.fills.get(key, 0)) * tech.move_latency(Level(src), Level(dst))
    host_cycles = counters.committed * cpi
    rep = PerfReport(host_cycles, extra, cpi)
    if baseline is not None:
        rep = PerfReport(host_cycles, extra, cpi, _ratio(baseline.total_cycles, rep.total_cycles))
    return rep


def _ratio(num: float, den: float) -> Optional[float]:
    if den == 0:
        return 1.0 if num == 0 else None
    return num / den


@dataclass(frozen=True)
class Improvement:
    energy_improvement: float
    speedup: Optional[float]
    proc_ratio: Optional[float]
    cache_ratio: Optional[float]
    delta_processor: float
    delta_caches: float

    @property
    def delta_total(self) -> float:
        return self.delta_processor + self.delta_caches

    def to_dict(self) -> dict:
        return {
            "energy_improvement": self.energy_improvement,
            "speedup": self.speedup,
            "proc_ratio": self.proc_ratio,
            "cache_ratio": self.cache_ratio,
            "delta_processor_pj": self.delta_processor,
            "delta_caches_pj": self.delta_caches,
            "delta_total_pj": self.delta_total,
        }


def improvement(
    baseline: tuple[EnergyReport, PerfReport], cim: tuple[EnergyReport, PerfReport]
) -> Improvement:
    """Energy improvement E_base / E_cim, speedup and the signed share of the
    energy saving contributed by the processor and by the memory side."""
    (eb, pb), (ec, pc) = baseline, cim
    if ec.total == 0:
        raise MetricError("CiM-system energy is zero; improvement is undefined")
    dp = eb.processor - ec.processor
    dc = eb.caches - ec.caches
    d = dp + dc
    proc = cache = None
    if d != 0:
        proc = dp / d
        cache = 1.0 - proc
    return Improvement(eb.total / ec.total, _ratio(pb.total_cycles, pc.total_cycles), proc, cache, dp, dc)
