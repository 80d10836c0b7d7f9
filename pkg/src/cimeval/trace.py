"""Committed-instruction traces.

A trace is the ordered list of instructions that actually retired, in a
small fixed ISA::

    LOAD STORE ADD SUB AND OR XOR CMP MOV BRANCH NOP

Instructions are parsed into :class:`CommittedInstruction` values, wrapped in
:class:`IState` records (which the cache annotator later fills with memory
level, hit flags and bank) and collected in a
:class:`CommittedInstructionQueue`.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence, Union

__all__ = [
    "Opcode",
    "ExecUnit",
    "Level",
    "Imm",
    "CommittedInstruction",
    "IState",
    "CommittedInstructionQueue",
    "TraceParseError",
    "TraceStructureError",
    "parse_trace",
    "serialize_trace",
    "gen_synthetic",
    "PATTERNS",
    "NUM_REGS",
    "DEFAULT_ACCESS_BYTES",
]

NUM_REGS = 32
DEFAULT_ACCESS_BYTES = 4


class Opcode(str, Enum):
    LOAD = "LOAD"
    STORE = "STORE"
    ADD = "ADD"
    SUB = "SUB"
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    CMP = "CMP"
    MOV = "MOV"
    BRANCH = "BRANCH"
    NOP = "NOP"

    @property
    def is_memory(self) -> bool:
        return self in (Opcode.LOAD, Opcode.STORE)

    @property
    def is_alu(self) -> bool:
        return self in _THREE_OPERAND


_THREE_OPERAND = frozenset({Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR, Opcode.XOR})


class ExecUnit(str, Enum):
    INT_ALU = "int-alu"
    LOAD_STORE = "load-store"
    BRANCH = "branch"
    MOVE = "move"
    NONE = "none"


_EXEC_UNIT = {
    Opcode.LOAD: ExecUnit.LOAD_STORE,
    Opcode.STORE: ExecUnit.LOAD_STORE,
    Opcode.CMP: ExecUnit.INT_ALU,
    Opcode.MOV: ExecUnit.MOVE,
    Opcode.BRANCH: ExecUnit.BRANCH,
    Opcode.NOP: ExecUnit.NONE,
    **{op: ExecUnit.INT_ALU for op in _THREE_OPERAND},
}


class Level(str, Enum):
    L1 = "L1"
    L2 = "L2"
    MAIN = "MAIN"

    @property
    def depth(self) -> int:
        return _LEVEL_DEPTH[self]


_LEVEL_DEPTH = {Level.L1: 0, Level.L2: 1, Level.MAIN: 2}


@dataclass(frozen=True)
class Imm:
    """An immediate literal operand."""

    value: int

    def __str__(self) -> str:
        return f"#{self.value}"


Operand = Union[int, Imm]


@dataclass(frozen=True)
class CommittedInstruction:
    seq_index: int
    opcode: Opcode
    dst: Optional[int] = None
    src1: Optional[int] = None
    src2: Optional[Operand] = None
    mem_addr: Optional[int] = None
    access_bytes: int = DEFAULT_ACCESS_BYTES

    def __post_init__(self) -> None:
        op = self.opcode
        for name in ("dst", "src1"):
            reg = getattr(self, name)
            if reg is not None and not (isinstance(reg, int) and 0 <= reg < NUM_REGS):
                raise ValueError(f"{name} must be a register id in r0-r{NUM_REGS - 1}, got {reg!r}")
        if isinstance(self.src2, int) and not 0 <= self.src2 < NUM_REGS:
            raise ValueError(f"src2 register out of range: {self.src2}")
        if op.is_memory != (self.mem_addr is not None):
            raise ValueError(f"{op.value}: mem_addr must be present iff the opcode accesses memory")
        if op is Opcode.LOAD and self.dst is None:
            raise ValueError("LOAD needs a destination register")
        if op is Opcode.STORE and self.src1 is None:
            raise ValueError("STORE needs a source register")
        if (op.is_alu or op is Opcode.MOV) and (
            self.dst is None or (self.src1 is None and self.src2 is None)
        ):
            raise ValueError(f"{op.value} needs a destination and at least one source")
        if self.access_bytes <= 0:
            raise ValueError("access_bytes must be positive")

    @property
    def sources(self) -> tuple[Optional[Operand], Optional[Operand]]:
        """(left, right) source operands, in IDG child order."""
        return (self.src1, self.src2)

    @property
    def source_registers(self) -> tuple[int, ...]:
        return tuple(s for s in (self.src1, self.src2) if isinstance(s, int) and not isinstance(s, bool))

    @property
    def exec_unit(self) -> ExecUnit:
        return _EXEC_UNIT[self.opcode]

    def operand_text(self) -> str:
        op = self.opcode
        if op is Opcode.NOP:
            return ""
        if op.is_memory:
            reg = self.dst if op is Opcode.LOAD else self.src1
            width = "" if self.access_bytes == DEFAULT_ACCESS_BYTES else f"/{self.access_bytes}"
            return f"r{reg}, [{self.mem_addr:#x}{width}]"
        parts: list[str] = []
        if self.dst is not None:
            parts.append(f"r{self.dst}")
        if self.src1 is not None:
            parts.append(f"r{self.src1}")
        if self.src2 is not None:
            parts.append(str(self.src2) if isinstance(self.src2, Imm) else f"r{self.src2}")
        return ", ".join(parts)

    def __str__(self) -> str:
        ops = self.operand_text()
        return f"{self.seq_index} {self.opcode.value}" + (f" {ops}" if ops else "")


@dataclass(frozen=True)
class IState:
    """One committed instruction plus its execution and memory metadata.

    ``hit`` holds one flag per probed level, in probe order (L1, L2).  An L1
    hit is ``(True,)``; a main-memory access is ``(False, False)``.
    """

    instr: CommittedInstruction
    mem_level: Optional[Level] = None
    hit: Optional[tuple[bool, ...]] = None
    bank: Optional[int] = None
    request_tick: Optional[int] = None

    @property
    def seq_index(self) -> int:
        return self.instr.seq_index

    @property
    def exec_unit(self) -> ExecUnit:
        return self.instr.exec_unit

    @property
    def annotated(self) -> bool:
        return self.mem_level is not None


class TraceParseError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class TraceStructureError(ValueError):
    pass


class CommittedInstructionQueue(Sequence[IState]):
    """Immutable, seq-ordered sequence of :class:`IState` entries."""

    __slots__ = ("_entries", "_pos")

    def __init__(self, entries: Iterable[Union[IState, CommittedInstruction]] = ()):
        items = tuple(e if isinstance(e, IState) else IState(e) for e in entries)
        pos: dict[int, int] = {}
        prev = None
        for i, e in enumerate(items):
            s = e.seq_index
            if prev is not None and s <= prev:
                kind = "duplicate" if s == prev else "non-increasing"
                raise TraceStructureError(f"{kind} seq_index {s} after {prev}")
            pos[s] = i
            prev = s
        self._entries = items
        self._pos = pos

    def __getitem__(self, i):  # type: ignore[override]
        return self._entries[i]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[IState]:
        return iter(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommittedInstructionQueue):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        return f"CommittedInstructionQueue({len(self)} entries)"

    @property
    def entries(self) -> tuple[IState, ...]:
        return self._entries

    def instructions(self) -> list[CommittedInstruction]:
        return [e.instr for e in self._entries]

    def by_seq(self, seq_index: int) -> IState:
        return self._entries[self._pos[seq_index]]

    def position(self, seq_index: int) -> int:
        return self._pos[seq_index]

    def __contains__(self, item: object) -> bool:
        if isinstance(item, int):
            return item in self._pos
        return item in self._entries

    def with_entries(self, entries: Iterable[IState]) -> "CommittedInstructionQueue":
        return CommittedInstructionQueue(entries)

    def memory_accesses(self) -> int:
        return sum(1 for e in self._entries if e.instr.opcode.is_memory)


# --------------------------------------------------------------------------
# parsing

_REG = re.compile(r"r(\d+)$")
_IMM = re.compile(r"#(-?(?:0x[0-9a-fA-F]+|\d+))$")
_MEM = re.compile(r"\[(0x[0-9a-fA-F]+)(?:/(\d+))?\]$")
_HEAD = re.compile(r"\s*(\d+)\s+([A-Za-z]+)\b")


def _split_operands(text: str, base_col: int) -> list[tuple[str, int]]:
    out = []
    col = base_col
    for piece in text.split(","):
        stripped = piece.strip()
        lead = len(piece) - len(piece.lstrip())
        out.append((stripped, col + lead))
        col += len(piece) + 1
    return out


def _parse_line(text: str, lineno: int) -> CommittedInstruction:
    m = _HEAD.match(text)
    if not m:
        raise TraceParseError(lineno, 1, "expected '<seq_index> <OPCODE>'")
    seq = int(m.group(1))
    name = m.group(2)
    try:
        op = Opcode(name)
    except ValueError:
        raise TraceParseError(lineno, m.start(2) + 1, f"unknown opcode {name!r}") from None
    rest = text[m.end():]
    rest_col = m.end() + 1
    ops = [] if not rest.strip() else _split_operands(rest, rest_col)

    def reg(tok: tuple[str, int]) -> int:
        t, c = tok
        rm = _REG.match(t)
        if not rm or int(rm.group(1)) >= NUM_REGS:
            raise TraceParseError(lineno, c, f"expected register r0-r{NUM_REGS - 1}, got {t!r}")
        return int(rm.group(1))

    def reg_or_imm(tok: tuple[str, int]) -> Operand:
        t, c = tok
        im = _IMM.match(t)
        if im:
            return Imm(int(im.group(1), 0))
        if _REG.match(t):
            return reg(tok)
        raise TraceParseError(lineno, c, f"expected register or #immediate, got {t!r}")

    def arity(*allowed: int) -> None:
        if len(ops) not in allowed:
            col = ops[-1][1] if ops else rest_col
            raise TraceParseError(
                lineno, col, f"{op.value} takes {' or '.join(map(str, allowed))} operands, got {len(ops)}"
            )

    try:
        if op.is_memory:
            arity(2)
            r = reg(ops[0])
            mm = _MEM.match(ops[1][0])
            if not mm:
                raise TraceParseError(lineno, ops[1][1], f"expected [0xADDR], got {ops[1][0]!r}")
            addr = int(mm.group(1), 16)
            width = int(mm.group(2)) if mm.group(2) else DEFAULT_ACCESS_BYTES
            if op is Opcode.LOAD:
                return CommittedInstruction(seq, op, dst=r, mem_addr=addr, access_bytes=width)
            return CommittedInstruction(seq, op, src1=r, mem_addr=addr, access_bytes=width)
        if op.is_alu:
            arity(3)
            return CommittedInstruction(seq, op, dst=reg(ops[0]), src1=reg(ops[1]), src2=reg_or_imm(ops[2]))
        if op is Opcode.MOV:
            arity(2)
            src = reg_or_imm(ops[1])
            if isinstance(src, Imm):
                return CommittedInstruction(seq, op, dst=reg(ops[0]), src2=src)
            return CommittedInstruction(seq, op, dst=reg(ops[0]), src1=src)
        if op is Opcode.CMP:
            arity(2)
            return CommittedInstruction(seq, op, src1=reg(ops[0]), src2=reg_or_imm(ops[1]))
        if op is Opcode.BRANCH:
            arity(0, 1)
            if not ops:
                return CommittedInstruction(seq, op)
            tgt = reg_or_imm(ops[0])
            if isinstance(tgt, Imm):
                return CommittedInstruction(seq, op, src2=tgt)
            return CommittedInstruction(seq, op, src1=tgt)
        arity(0)
        return CommittedInstruction(seq, op)
    except ValueError as exc:
        if isinstance(exc, TraceParseError):
            raise
        raise TraceParseError(lineno, 1, str(exc)) from None


def parse_trace(text: str) -> CommittedInstructionQueue:
    """Parse trace-file content into an unannotated queue."""
    instrs = []
    prev: Optional[int] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        ins = _parse_line(line, lineno)
        if prev is not None and ins.seq_index <= prev:
            kind = "duplicate" if ins.seq_index == prev else "non-increasing"
            raise TraceStructureError(f"line {lineno}: {kind} seq_index {ins.seq_index} after {prev}")
        prev = ins.seq_index
        instrs.append(ins)
    return CommittedInstructionQueue(instrs)


def serialize_trace(ciq: Union[CommittedInstructionQueue, Iterable[CommittedInstruction]]) -> str:
    lines = []
    for e in ciq:
        ins = e.instr if isinstance(e, IState) else e
        lines.append(str(ins))
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# synthetic traces

PATTERNS = ("llos", "llos-imm", "llos-chain", "random-mix")
_CIM_ALU = (Opcode.ADD, Opcode.AND, Opcode.OR, Opcode.XOR)
# operand lines of one pattern are congruent modulo this many lines, so they
# share a bank for any power-of-two bank count up to it
BANK_ALIGN_LINES = 64
_LINE = 64


@dataclass
class _Emitter:
    rng: random.Random
    base: int
    size: int
    out: list[CommittedInstruction] = field(default_factory=list)

    def emit(self, op: Opcode, **kw) -> None:
        self.out.append(CommittedInstruction(len(self.out), op, **kw))

    def word(self, line: int) -> int:
        return self.base + line * _LINE + 4 * self.rng.randrange(_LINE // 4)

    def bank_group(self, n: int) -> list[int]:
        """n word addresses on distinct lines that share a bank residue."""
        lines = max(1, self.size // _LINE)
        residues = min(BANK_ALIGN_LINES, lines)
        r = self.rng.randrange(residues)
        pool = range(r, lines, residues)
        if len(pool) >= n:
            picked = self.rng.sample(pool, n)
        else:
            picked = [self.rng.choice(pool) for _ in range(n)]
        return [self.word(p) for p in picked]

    def random_word(self) -> int:
        return self.word(self.rng.randrange(max(1, self.size // _LINE)))


def _parse_pattern(pattern_spec: str) -> tuple[str, Optional[Opcode]]:
    name, _, opname = pattern_spec.partition(":")
    if name not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern_spec!r}; expected one of {', '.join(PATTERNS)}")
    op = None
    if opname:
        try:
            op = Opcode(opname.upper())
        except ValueError:
            raise ValueError(f"unknown pattern op {opname!r}") from None
        if op not in _CIM_ALU and op is not Opcode.SUB:
            raise ValueError(f"pattern op must be an ALU opcode, got {opname!r}")
    return name, op


def _llos(em: _Emitter, k: int, op: Opcode) -> None:
    a, b, c = (3 * k) % 30, (3 * k + 1) % 30, (3 * k + 2) % 30
    x, y, z = em.bank_group(3)
    em.emit(Opcode.LOAD, dst=a, mem_addr=x)
    em.emit(Opcode.LOAD, dst=b, mem_addr=y)
    em.emit(op, dst=c, src1=a, src2=b)
    em.emit(Opcode.STORE, src1=c, mem_addr=z)


def _llos_imm(em: _Emitter, k: int, op: Opcode) -> None:
    a, c = (2 * k) % 30, (2 * k + 1) % 30
    x, z = em.bank_group(2)
    em.emit(Opcode.LOAD, dst=a, mem_addr=x)
    em.emit(op, dst=c, src1=a, src2=Imm(em.rng.randrange(1, 256)))
    em.emit(Opcode.STORE, src1=c, mem_addr=z)


def _llos_chain(em: _Emitter, k: int, op: Opcode) -> None:
    a, b, c = (3 * k) % 30, (3 * k + 1) % 30, (3 * k + 2) % 30
    x, y, z = em.bank_group(3)
    em.emit(Opcode.LOAD, dst=a, mem_addr=x)
    em.emit(Opcode.LOAD, dst=b, mem_addr=y)
    em.emit(op, dst=c, src1=a, src2=b)
    em.emit(Opcode.AND, dst=c, src1=c, src2=Imm(em.rng.choice((0xFF, 0xFFFF, 0x7FFFFFFF))))
    em.emit(Opcode.STORE, src1=c, mem_addr=z)


def _random_mix(em: _Emitter, count: int, regs: int) -> None:
    rng = em.rng
    recent: list[int] = []

    def addr() -> int:
        if recent and rng.random() < 0.5:
            return rng.choice(recent)
        a = em.random_word()
        recent.append(a)
        if len(recent) > 16:
            recent.pop(0)
        return a

    def r() -> int:
        return rng.randrange(regs)

    def src2() -> Operand:
        return Imm(rng.randrange(-16, 256)) if rng.random() < 0.3 else r()

    while len(em.out) < count:
        roll = rng.random()
        if roll < 0.12:
            k = rng.randrange(10)
            _llos(em, k, rng.choice(_CIM_ALU))
        elif roll < 0.40:
            em.emit(Opcode.LOAD, dst=r(), mem_addr=addr())
        elif roll < 0.50:
            em.emit(Opcode.STORE, src1=r(), mem_addr=addr())
        elif roll < 0.80:
            em.emit(rng.choice(_CIM_ALU + (Opcode.SUB,)), dst=r(), src1=r(), src2=src2())
        elif roll < 0.87:
            if rng.random() < 0.5:
                em.emit(Opcode.MOV, dst=r(), src1=r())
            else:
                em.emit(Opcode.MOV, dst=r(), src2=Imm(rng.randrange(256)))
        elif roll < 0.93:
            em.emit(Opcode.CMP, src1=r(), src2=src2())
        elif roll < 0.97:
            em.emit(Opcode.BRANCH, src2=Imm(rng.randrange(0x400, 0x800, 4)))
        else:
            em.emit(Opcode.NOP)
    del em.out[count:]


def gen_synthetic(
    pattern_spec: str,
    count: int,
    seed: int,
    *,
    working_set: tuple[int, int] = (0x100000, 1 << 20),
    registers: int = 8,
) -> CommittedInstructionQueue:
    """Deterministic synthetic trace.

    ``pattern_spec`` is a pattern name, optionally suffixed with the ALU
    opcode to use, e.g. ``"llos"`` (ADD) or ``"llos:xor"``.  For the llos
    family ``count`` is the number of patterns; for ``random-mix`` it is the
    number of instructions.  Addresses are word-aligned and drawn from
    ``working_set = (base, size_bytes)``.
    """
    name, op = _parse_pattern(pattern_spec)
    if count < 0:
        raise ValueError("count must be non-negative")
    base, size = working_set
    em = _Emitter(random.Random(f"{name}/{op}/{seed}"), base, size)
    op = op or Opcode.ADD
    if name == "llos":
        for k in range(count):
            _llos(em, k, op)
    elif name == "llos-imm":
        for k in range(count):
            _llos_imm(em, k, op)
    elif name == "llos-chain":
        for k in range(count):
            _llos_chain(em, k, op)
    else:
        _random_mix(em, count, registers)
    return CommittedInstructionQueue(em.out)


def strip_annotations(ciq: CommittedInstructionQueue) -> CommittedInstructionQueue:
    return CommittedInstructionQueue(IState(e.instr) for e in ciq)


def annotate_entry(entry: IState, **fields) -> IState:
    return replace(entry, **fields)
