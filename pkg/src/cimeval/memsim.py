"""Two-level set-associative cache annotator.

Replays the LOAD/STORE entries of a queue through an L1/L2 hierarchy
(LRU, write-allocate, write-back) and records, for each access, the first
level that held the line, the per-level hit flags and the bank.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional

from .techmodel import OpKind
from .trace import CommittedInstructionQueue, IState, Level, Opcode

__all__ = [
    "CacheLevelConfig",
    "HierarchyConfig",
    "CacheState",
    "SimStats",
    "AddressRangeError",
    "bank_of",
    "simulate_accesses",
    "probe_events",
]


class AddressRangeError(ValueError):
    pass


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheLevelConfig:
    capacity: int
    associativity: int
    line_size: int = 64
    banks: int = 1

    def __post_init__(self) -> None:
        if self.capacity <= 0 or self.associativity <= 0 or self.line_size <= 0:
            raise ValueError("cache parameters must be positive")
        if self.capacity % (self.associativity * self.line_size):
            raise ValueError(
                f"capacity {self.capacity} not divisible by associativity x line size "
                f"({self.associativity} x {self.line_size})"
            )
        if not _pow2(self.banks):
            raise ValueError(f"bank count must be a power of two, got {self.banks}")

    @property
    def sets(self) -> int:
        return self.capacity // (self.associativity * self.line_size)

    def label(self) -> str:
        return f"{_kb(self.capacity)}/{self.associativity}-way"


def _kb(n: int) -> str:
    if n % (1 << 20) == 0:
        return f"{n >> 20}MB"
    return f"{n >> 10}kB" if n % 1024 == 0 else f"{n}B"


@dataclass(frozen=True)
class HierarchyConfig:
    l1: CacheLevelConfig = CacheLevelConfig(64 * 1024, 4, 64, 4)
    l2: CacheLevelConfig = CacheLevelConfig(256 * 1024, 8, 64, 8)
    main_capacity: int = 512 << 20
    inclusive: bool = True

    def __post_init__(self) -> None:
        if self.l1.capacity > self.l2.capacity:
            raise ValueError("L1 capacity must not exceed L2 capacity")
        if self.main_capacity <= 0:
            raise ValueError("main memory capacity must be positive")

    def level(self, level: Level) -> Optional[CacheLevelConfig]:
        if level is Level.L1:
            return self.l1
        if level is Level.L2:
            return self.l2
        return None

    def banks(self, level: Level) -> int:
        cfg = self.level(level)
        return cfg.banks if cfg else 1

    def bank(self, addr: int, level: Level) -> int:
        cfg = self.level(level)
        return bank_of(addr, cfg) if cfg else 0

    def label(self) -> str:
        return f"L1 {self.l1.label()} + L2 {self.l2.label()}"

    def to_dict(self) -> dict:
        def lv(c: CacheLevelConfig) -> dict:
            return {
                "capacity": c.capacity,
                "associativity": c.associativity,
                "line_size": c.line_size,
                "banks": c.banks,
            }

        return {
            "l1": lv(self.l1),
            "l2": lv(self.l2),
            "main_capacity": self.main_capacity,
            "inclusive": self.inclusive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchyConfig":
        base = cls()
        kw = {}
        for name in ("l1", "l2"):
            if name in d:
                kw[name] = CacheLevelConfig(**{**getattr(base, name).__dict__, **d[name]})
        if "main_capacity" in d:
            kw["main_capacity"] = int(d["main_capacity"])
        if "inclusive" in d:
            kw["inclusive"] = bool(d["inclusive"])
        return cls(**kw)


def bank_of(addr: int, level_cfg: CacheLevelConfig) -> int:
    """Line-interleaved bank id of a byte address."""
    return (addr // level_cfg.line_size) % level_cfg.banks


class _Cache:
    """One level: per set an OrderedDict tag -> dirty, oldest first."""

    def __init__(self, cfg: CacheLevelConfig):
        self.cfg = cfg
        self.sets: list[OrderedDict[int, bool]] = [OrderedDict() for _ in range(cfg.sets)]

    def _locate(self, line: int) -> tuple[OrderedDict, int]:
        return self.sets[line % self.cfg.sets], line // self.cfg.sets

    def lookup(self, line: int, touch: bool = True) -> bool:
        s, tag = self._locate(line)
        if tag in s:
            if touch:
                s.move_to_end(tag)
            return True
        return False

    def mark_dirty(self, line: int) -> bool:
        s, tag = self._locate(line)
        if tag in s:
            s[tag] = True
            return True
        return False

    def insert(self, line: int, dirty: bool = False) -> Optional[tuple[int, bool]]:
        """Insert as MRU; returns the evicted (line, dirty) if any."""
        s, tag = self._locate(line)
        if tag in s:
            s[tag] = s[tag] or dirty
            s.move_to_end(tag)
            return None
        victim = None
        if len(s) >= self.cfg.associativity:
            vtag, vdirty = s.popitem(last=False)
            victim = (vtag * self.cfg.sets + line % self.cfg.sets, vdirty)
        s[tag] = dirty
        return victim

    def invalidate(self, line: int) -> Optional[bool]:
        s, tag = self._locate(line)
        return s.pop(tag, None)

    def resident_lines(self) -> set[int]:
        out = set()
        for idx, s in enumerate(self.sets):
            for tag in s:
                out.add(tag * self.cfg.sets + idx)
        return out

    def recency(self, set_index: int) -> list[int]:
        """Tags of one set, least recently used first."""
        return list(self.sets[set_index])


@dataclass
class SimStats:
    writebacks: dict[str, int] = field(default_factory=lambda: {"L1": 0, "L2": 0})
    back_invalidations: int = 0


class CacheState:
    """Mutable L1/L2 state for one simulation."""

    def __init__(self, cfg: HierarchyConfig):
        if cfg.l1.line_size != cfg.l2.line_size:
            raise ValueError("L1 and L2 must share a line size")
        self.cfg = cfg
        self.l1 = _Cache(cfg.l1)
        self.l2 = _Cache(cfg.l2)
        self.stats = SimStats()

    def access(self, addr: int, write: bool) -> tuple[Level, tuple[bool, ...]]:
        if not 0 <= addr < self.cfg.main_capacity:
            raise AddressRangeError(f"address {addr:#x} outside main memory ({self.cfg.main_capacity:#x} bytes)")
        line = addr // self.cfg.l1.line_size
        if self.l1.lookup(line):
            if write:
                self.l1.mark_dirty(line)
            return Level.L1, (True,)
        l2_hit = self.l2.lookup(line)
        if not l2_hit:
            self._fill_l2(line)
        self._fill_l1(line, dirty=write)
        return (Level.L2, (False, True)) if l2_hit else (Level.MAIN, (False, False))

    def _fill_l2(self, line: int) -> None:
        victim = self.l2.insert(line)
        if victim is None:
            return
        vline, vdirty = victim
        if self.cfg.inclusive and self.l1.invalidate(vline) is not None:
            self.stats.back_invalidations += 1
        if vdirty:
            self.stats.writebacks["L2"] += 1

    def _fill_l1(self, line: int, dirty: bool) -> None:
        victim = self.l1.insert(line, dirty)
        if victim is None:
            return
        vline, vdirty = victim
        if vdirty:
            self.stats.writebacks["L1"] += 1
            if not self.l2.mark_dirty(vline):
                # non-inclusive: a dirty L1 victim missing from L2 goes to memory
                self.stats.writebacks["L2"] += 1

    def resident(self, level: Level) -> set[int]:
        return (self.l1 if level is Level.L1 else self.l2).resident_lines()


def simulate_accesses(
    ciq: CommittedInstructionQueue,
    cfg: HierarchyConfig,
    *,
    warmup: bool = False,
    state: Optional[CacheState] = None,
) -> CommittedInstructionQueue:
    """Annotate every LOAD/STORE with level, hit flags, bank and issue tick.

    With ``warmup`` the trace is replayed once beforehand so annotations
    reflect a warm hierarchy.  ``request_tick`` is the entry's position in
    the queue (one issue per cycle).
    """
    st = state or CacheState(cfg)
    mem = [(i, e) for i, e in enumerate(ciq) if e.instr.opcode.is_memory]
    if warmup:
        for _, e in mem:
            st.access(e.instr.mem_addr, e.instr.opcode is Opcode.STORE)
    out = list(ciq.entries)
    for i, e in mem:
        ins = e.instr
        level, hits = st.access(ins.mem_addr, ins.opcode is Opcode.STORE)
        out[i] = replace(e, mem_level=level, hit=hits, bank=cfg.bank(ins.mem_addr, level), request_tick=i)
    return CommittedInstructionQueue(out)


def probe_events(entry: IState) -> list[tuple[Level, OpKind, bool]]:
    """(level, op, hit) for every level an annotated access touched.

    A LOAD reads each probed level until the hit; a STORE writes L1 and, on
    a miss, fetches the line from below (write-allocate).  Fills and dirty
    write-backs are not charged.
    """
    ins = entry.instr
    if not ins.opcode.is_memory:
        return []
    if entry.hit is None:
        raise ValueError(f"access {ins.seq_index} is not annotated")
    events = []
    first = OpKind.WRITE if ins.opcode is Opcode.STORE else OpKind.READ
    for level, hit in zip((Level.L1, Level.L2), entry.hit):
        events.append((level, first if level is Level.L1 else OpKind.READ, hit))
        if hit:
            return events
    events.append((Level.MAIN, OpKind.READ, True))
    return events
