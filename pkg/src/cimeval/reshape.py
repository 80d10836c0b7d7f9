"""Rewrite a queue into a host stream plus CiM operations.

Each accepted candidate is emitted at the position of its root: first its
data movements, then one CiM operation per offloaded op in post-order.
Instructions the plan leaves on the host keep their baseline order and
annotations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Union

from .idg import build_rut_iht
from .offload import HOST, Candidate, OffloadPlan
from .trace import (
    CommittedInstructionQueue,
    IState,
    Imm,
    Level,
    Opcode,
    parse_trace,
    serialize_trace,
)

__all__ = [
    "CimKind",
    "CimOperand",
    "CimOp",
    "ReshapedTrace",
    "ReshapeConsistencyError",
    "VerifyReport",
    "reshape_trace",
    "verify_reshape",
    "serialize_reshaped",
    "parse_reshaped",
]


class CimKind(str, Enum):
    AND = "CIM-AND"
    OR = "CIM-OR"
    XOR = "CIM-XOR"
    ADD = "CIM-ADD"
    MOVE = "CIM-MOVE"

    @property
    def mnemonic(self) -> str:
        return "CIM." + self.value[4:]


_KIND_OF = {Opcode.AND: CimKind.AND, Opcode.OR: CimKind.OR, Opcode.XOR: CimKind.XOR, Opcode.ADD: CimKind.ADD}


@dataclass(frozen=True)
class CimOperand:
    kind: str  # mem | imm | cim
    value: int

    def __str__(self) -> str:
        if self.kind == "mem":
            return f"[{self.value:#x}]"
        if self.kind == "imm":
            return f"#{self.value}"
        return f"@{self.value}"


@dataclass(frozen=True)
class CimOp:
    seq_index: int  # root of the owning candidate
    kind: CimKind
    level: Level
    bank: int
    operands: tuple[CimOperand, ...]
    origin: tuple[int, ...] = ()
    dst: Optional[int] = None
    result_addr: Optional[int] = None
    candidate: int = 0
    src_level: Optional[Level] = None
    src_bank: Optional[int] = None
    move_kind: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is CimKind.MOVE and (len(self.operands) != 1 or self.src_level is None):
            raise ValueError("CIM-MOVE needs exactly one source operand and one destination")

    @property
    def op_seq(self) -> Optional[int]:
        """Seq index of the instruction this op executes (None for moves)."""
        return self.origin[0] if self.origin else None


HostOrCim = Union[IState, CimOp]


@dataclass(frozen=True)
class ReshapedTrace:
    items: tuple[HostOrCim, ...]

    def __iter__(self) -> Iterator[HostOrCim]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def host_items(self) -> list[IState]:
        return [i for i in self.items if isinstance(i, IState)]

    def cim_items(self) -> list[CimOp]:
        return [i for i in self.items if isinstance(i, CimOp)]


class ReshapeConsistencyError(ValueError):
    pass


def _candidate_ops(c: Candidate, idx: int, ciq: CommittedInstructionQueue, producer) -> list[CimOp]:
    sub = c.subtree
    out: list[CimOp] = []
    for m in c.moves:
        operand = CimOperand("mem", m.addr) if m.addr is not None else CimOperand("cim", m.source)
        out.append(
            CimOp(sub.root, CimKind.MOVE, m.dst_level, m.dst_bank, (operand,), (), candidate=idx,
                  src_level=m.src_level, src_bank=m.src_bank, move_kind=m.kind)
        )
    loads = set(sub.loads)
    chained = set(sub.chain_inputs)
    claimed: set[int] = set()
    for s in sub.ops:
        ins = ciq.by_seq(s).instr
        operands = []
        origin = [s]
        for src in ins.sources:
            if src is None:
                continue
            if isinstance(src, Imm):
                operands.append(CimOperand("imm", src.value))
                continue
            p = producer(src, s)
            if p in loads:
                operands.append(CimOperand("mem", ciq.by_seq(p).instr.mem_addr))
                if p not in claimed:
                    claimed.add(p)
                    origin.append(p)
            elif p in sub.nodes or p in chained:
                operands.append(CimOperand("cim", p))
            else:
                raise ReshapeConsistencyError(f"operand r{src} of {s} is produced outside candidate {idx}")
        is_root = s == sub.root
        if is_root and c.absorbed_store is not None:
            origin.append(c.absorbed_store)
        store_addr = ciq.by_seq(c.absorbed_store).instr.mem_addr if is_root and c.absorbed_store is not None else None
        out.append(
            CimOp(sub.root, _KIND_OF[ins.opcode], c.target_level, c.target_bank, tuple(operands),
                  tuple(origin), dst=ins.dst if is_root else None, result_addr=store_addr, candidate=idx)
        )
    return out


def reshape_trace(ciq: CommittedInstructionQueue, plan: OffloadPlan) -> ReshapedTrace:
    known = {e.seq_index for e in ciq}
    unknown = (set(plan.disposition) - known) | {s for c in plan.candidates for s in c.offloaded if s not in known}
    if unknown:
        raise ReshapeConsistencyError(f"plan references unknown seq_index {min(unknown)}")
    rut, iht = build_rut_iht(ciq)

    def producer(reg: int, at: int) -> Optional[int]:
        for slot in iht[at]:
            if slot is not None and slot[0] == reg:
                return rut.row(reg)[slot[1] - 1] if slot[1] else None
        return None

    items: list[HostOrCim] = []
    for e in ciq:
        d = plan.disposition.get(e.seq_index, HOST)
        if d == HOST:
            items.append(e)
            continue
        c = plan.candidates[d]
        if e.seq_index == c.root:
            items.extend(_candidate_ops(c, d, ciq, producer))
    return ReshapedTrace(tuple(items))


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    violation: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def verify_reshape(
    baseline: CommittedInstructionQueue, reshaped: ReshapedTrace, plan: OffloadPlan
) -> VerifyReport:
    """Structural audit of a reshaped trace; reports the first violation."""
    def fail(msg: str) -> VerifyReport:
        return VerifyReport(False, msg)

    offloaded = plan.offloaded()
    host = reshaped.host_items()
    host_seqs = [h.seq_index for h in host]
    for s in host_seqs:
        if s in offloaded:
            return fail(f"seq {s} is OFFLOADED but still in the host stream")
    expected = [e.seq_index for e in baseline if e.seq_index not in offloaded]
    if host_seqs != expected:
        for a, b in zip(host_seqs, expected):
            if a != b:
                return fail(f"host stream order diverges at seq {a} (expected {b})")
        return fail("host stream length differs from the surviving baseline instructions")

    owners: dict[int, int] = {}
    for op in reshaped.cim_items():
        for s in op.origin:
            if s in owners:
                return fail(f"seq {s} accounted for by more than one CiM operation")
            owners[s] = op.candidate
    missing = sorted(offloaded - set(owners))
    if missing:
        return fail(f"offloaded seq {missing[0]} is not covered by any CiM operation")
    extra = sorted(set(owners) - offloaded)
    if extra:
        return fail(f"CiM operation claims seq {extra[0]} which the plan keeps on the host")

    replaced = sum(c.replaced_count for c in plan.candidates)
    if len(baseline) != len(host) + replaced:
        return fail(f"count conservation: {len(baseline)} != {len(host)} host + {replaced} replaced")

    produced: set[int] = set()
    for op in reshaped.cim_items():
        for o in op.operands:
            if o.kind == "cim" and o.value not in produced:
                return fail(f"CiM op for seq {op.op_seq} consumes @{o.value} before it is produced")
        if op.op_seq is not None:
            produced.add(op.op_seq)

    base_mem = baseline.memory_accesses()
    host_mem = sum(1 for h in host if h.instr.opcode.is_memory)
    if base_mem - host_mem != plan.eliminated_accesses():
        return fail(
            f"eliminated accesses {base_mem - host_mem} differ from the plan's {plan.eliminated_accesses()}"
        )

    roots = {c.root for c in plan.candidates}
    rut, iht = build_rut_iht(baseline)
    seen: set[int] = set()
    for h in host:
        for slot in iht[h.seq_index]:
            if slot is None or not slot[1]:
                continue
            p = rut.row(slot[0])[slot[1] - 1]
            if p in offloaded and p not in roots:
                return fail(f"host seq {h.seq_index} reads r{slot[0]} from offloaded non-root {p}")
            if p not in offloaded and p not in seen:
                return fail(f"host seq {h.seq_index} precedes its producer {p}")
        seen.add(h.seq_index)
    return VerifyReport(True)


# --------------------------------------------------------------------------
# text form


def _fmt_cim(op: CimOp) -> str:
    head = f"{op.seq_index} {op.kind.mnemonic}@{op.level.value} b{op.bank}"
    if op.kind is CimKind.MOVE:
        return f"{head} {op.operands[0]} <- {op.src_level.value}:b{op.src_bank} ; cand={op.candidate} kind={op.move_kind}"
    dests = []
    if op.dst is not None:
        dests.append(f"r{op.dst}")
    if op.result_addr is not None:
        dests.append(f"[{op.result_addr:#x}]")
    ops = ", ".join(str(o) for o in op.operands)
    origin = ",".join(str(s) for s in op.origin)
    return f"{head} {ops} -> {' '.join(dests) or '-'} ; cand={op.candidate} origin={origin}"


def serialize_reshaped(trace: ReshapedTrace) -> str:
    lines = []
    for item in trace:
        lines.append(_fmt_cim(item) if isinstance(item, CimOp) else str(item.instr))
    return "\n".join(lines) + ("\n" if lines else "")


_CIM_LINE = re.compile(
    r"(?P<seq>\d+) CIM\.(?P<kind>[A-Z]+)@(?P<level>L1|L2|MAIN) b(?P<bank>\d+) (?P<body>.*?) ; (?P<meta>.*)$"
)


def _operand(tok: str) -> CimOperand:
    tok = tok.strip()
    if tok.startswith("["):
        return CimOperand("mem", int(tok[1:-1], 16))
    if tok.startswith("#"):
        return CimOperand("imm", int(tok[1:], 0))
    if tok.startswith("@"):
        return CimOperand("cim", int(tok[1:]))
    raise ValueError(f"bad CiM operand {tok!r}")


def parse_reshaped(text: str) -> ReshapedTrace:
    """Inverse of :func:`serialize_reshaped` (host items come back unannotated)."""
    items: list[HostOrCim] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _CIM_LINE.match(line.strip())
        if not m:
            items.extend(parse_trace(line).entries)
            continue
        meta = dict(kv.split("=", 1) for kv in m["meta"].split())
        kind = CimKind("CIM-" + m["kind"])
        level, bank, seq = Level(m["level"]), int(m["bank"]), int(m["seq"])
        if kind is CimKind.MOVE:
            operand, src = m["body"].split(" <- ")
            slevel, sbank = src.split(":b")
            items.append(CimOp(seq, kind, level, bank, (_operand(operand),), (), candidate=int(meta["cand"]),
                               src_level=Level(slevel), src_bank=int(sbank), move_kind=meta["kind"]))
            continue
        ops_text, dest_text = m["body"].split(" -> ")
        dst = addr = None
        for d in dest_text.split():
            if d.startswith("r"):
                dst = int(d[1:])
            elif d.startswith("["):
                addr = int(d[1:-1], 16)
        origin = tuple(int(s) for s in meta.get("origin", "").split(",") if s)
        operands = tuple(_operand(t) for t in ops_text.split(",")) if ops_text.strip() else ()
        items.append(CimOp(seq, kind, level, bank, operands, origin, dst, addr, int(meta["cand"])))
    return ReshapedTrace(tuple(items))
