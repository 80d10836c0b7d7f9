"""Instruction dependency graph (IDG) construction.

The IDG is a forest with one tree per CiM-supported instruction.  A tree's
children are the instructions that produced its source registers; leaves are
LOADs or immediates.  Producers are found in O(1) through two tables filled
in a single forward pass:

* the register usage table (RUT) lists, per register, the seq indices of
  the instructions that wrote it;
* the index hash table (IHT) records, per instruction and source slot, the
  register and the length of its RUT row at the time the instruction was
  appended.

Trees are logical trees; a producer shared by several consumers is one
immutable node object referenced from every tree that contains it.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Union

from .trace import CommittedInstructionQueue, Imm, Opcode

__all__ = [
    "NodeKind",
    "IdgNode",
    "IdgForest",
    "RegisterUsageTable",
    "IndexHashTable",
    "build_rut_iht",
    "producer_of",
    "build_idg",
    "DEFAULT_CIM_SET",
]

DEFAULT_CIM_SET = frozenset({Opcode.AND, Opcode.OR, Opcode.XOR, Opcode.ADD})


class NodeKind(str, Enum):
    OP = "OP"
    LOAD = "LEAF-LOAD"
    IMM = "LEAF-IMM"
    # register input whose producer is not a LOAD or CiM op, or has no
    # producer in the trace; the host supplies it
    NON_CIM = "NON-CIM"


@dataclass(frozen=True, eq=False)
class IdgNode:
    kind: NodeKind
    seq_index: Optional[int] = None
    opcode: Optional[Opcode] = None
    operands: str = ""
    left: Optional["IdgNode"] = None
    right: Optional["IdgNode"] = None
    value: Optional[int] = None

    @property
    def children(self) -> tuple["IdgNode", ...]:
        return tuple(c for c in (self.left, self.right) if c is not None)

    @property
    def is_leaf(self) -> bool:
        return self.kind is not NodeKind.OP

    def describe(self) -> tuple:
        """Hashable identity of this node (not of its subtree)."""
        if self.kind is NodeKind.IMM:
            return (self.kind.value, self.value)
        return (self.kind.value, self.seq_index)

    def walk(self) -> Iterator["IdgNode"]:
        """Pre-order traversal of the logical tree (shared nodes repeat)."""
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def instruction_nodes(self) -> dict[int, "IdgNode"]:
        """Distinct instruction-bearing nodes (OP and LOAD) of this tree by seq."""
        out: dict[int, IdgNode] = {}
        stack = [self]
        while stack:
            n = stack.pop()
            if n.kind in (NodeKind.OP, NodeKind.LOAD) and n.seq_index not in out:
                out[n.seq_index] = n
                stack.extend(n.children)
        return out

    def __repr__(self) -> str:
        if self.kind is NodeKind.OP:
            return f"IdgNode(OP {self.opcode.value}@{self.seq_index})"
        return f"IdgNode({self.kind.value} {self.seq_index if self.kind is not NodeKind.IMM else self.value})"


@dataclass(frozen=True)
class IdgForest:
    roots: tuple[IdgNode, ...]
    expansions: int = 0

    def __iter__(self) -> Iterator[IdgNode]:
        return iter(self.roots)

    def __len__(self) -> int:
        return len(self.roots)

    def root(self, seq_index: int) -> IdgNode:
        for r in self.roots:
            if r.seq_index == seq_index:
                return r
        raise KeyError(seq_index)

    def distinct_nodes(self) -> list[IdgNode]:
        seen: dict[int, IdgNode] = {}
        stack = list(self.roots)
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen[id(n)] = n
            stack.extend(n.children)
        return list(seen.values())

    def edge_map(self) -> dict[int, tuple[Optional[tuple], Optional[tuple]]]:
        """seq -> (left child, right child) descriptors for every OP node.

        Two forests over the same trace are node-for-node equal iff their
        roots and edge maps are equal.
        """
        out = {}
        for n in self.distinct_nodes():
            if n.kind is NodeKind.OP:
                out[n.seq_index] = tuple(c.describe() if c is not None else None for c in (n.left, n.right))
        return out

    def to_dict(self) -> dict:
        nodes = {}
        for n in sorted(self.distinct_nodes(), key=lambda n: (n.seq_index is None, n.seq_index or 0, n.kind.value)):
            if n.kind is not NodeKind.OP:
                continue
            nodes[str(n.seq_index)] = {
                "opcode": n.opcode.value,
                "operands": n.operands,
                "left": _desc_json(n.left),
                "right": _desc_json(n.right),
            }
        return {"roots": [r.seq_index for r in self.roots], "nodes": nodes}


def _desc_json(n: Optional[IdgNode]) -> Optional[dict]:
    if n is None:
        return None
    if n.kind is NodeKind.IMM:
        return {"kind": n.kind.value, "value": n.value}
    return {"kind": n.kind.value, "seq": n.seq_index}


@dataclass
class RegisterUsageTable:
    rows: dict[int, list[int]] = field(default_factory=dict)

    def row(self, reg: int) -> list[int]:
        return self.rows.get(reg, [])

    def append(self, reg: int, seq_index: int) -> None:
        self.rows.setdefault(reg, []).append(seq_index)


# per source slot (src1, src2): (register, RUT row length) or None
IhtEntry = tuple[Optional[tuple[int, int]], Optional[tuple[int, int]]]


@dataclass
class IndexHashTable:
    entries: dict[int, IhtEntry] = field(default_factory=dict)

    def __getitem__(self, seq_index: int) -> IhtEntry:
        return self.entries[seq_index]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, seq_index: int) -> bool:
        return seq_index in self.entries


def _slot(operand: Union[int, Imm, None], rut: RegisterUsageTable) -> Optional[tuple[int, int]]:
    if operand is None or isinstance(operand, Imm):
        return None
    return (operand, len(rut.row(operand)))


def build_rut_iht(ciq: CommittedInstructionQueue) -> tuple[RegisterUsageTable, IndexHashTable]:
    rut = RegisterUsageTable()
    iht = IndexHashTable()
    for e in ciq:
        ins = e.instr
        iht.entries[ins.seq_index] = (_slot(ins.src1, rut), _slot(ins.src2, rut))
        if ins.dst is not None:
            rut.append(ins.dst, ins.seq_index)
    return rut, iht


def producer_of(reg: int, at: int, rut: RegisterUsageTable, iht: IndexHashTable) -> Optional[int]:
    """Seq index of the latest writer of ``reg`` before instruction ``at``."""
    if at in iht:
        for slot in iht[at]:
            if slot is not None and slot[0] == reg:
                n = slot[1]
                return rut.row(reg)[n - 1] if n else None
    # ``reg`` is not a source of ``at``: fall back to a search of the row
    row = rut.row(reg)
    i = bisect_left(row, at)
    return row[i - 1] if i else None


def _resolve(
    producer: Optional[int],
    ciq: CommittedInstructionQueue,
    built: dict[int, IdgNode],
    cim_set: frozenset,
    counter: list[int],
) -> IdgNode:
    if producer is None:
        counter[0] += 1
        return IdgNode(NodeKind.NON_CIM)
    if producer in built:
        return built[producer]
    ins = ciq.by_seq(producer).instr
    counter[0] += 1
    if ins.opcode is Opcode.LOAD:
        node = IdgNode(NodeKind.LOAD, producer, ins.opcode, ins.operand_text())
    else:
        # an OP producer in cim_set was built earlier in the forward pass
        node = IdgNode(NodeKind.NON_CIM, producer, ins.opcode, ins.operand_text())
    built[producer] = node
    return node


def build_idg(
    ciq: CommittedInstructionQueue,
    cim_set: Iterable[Opcode],
    rut: RegisterUsageTable,
    iht: IndexHashTable,
) -> IdgForest:
    """One tree per instruction whose opcode is in ``cim_set``.

    Instructions are visited in commit order, so every child of a tree node
    already exists when its parent is created; each node is built once and
    the total work is linear in the number of distinct nodes.
    """
    cimset = frozenset(cim_set) - {Opcode.LOAD, Opcode.STORE}
    built: dict[int, IdgNode] = {}
    counter = [0]
    roots = []
    for e in ciq:
        ins = e.instr
        if ins.opcode not in cimset:
            continue
        entry = iht[ins.seq_index]
        kids: list[Optional[IdgNode]] = []
        for operand, slot in zip(ins.sources, entry):
            if operand is None:
                kids.append(None)
            elif isinstance(operand, Imm):
                counter[0] += 1
                kids.append(IdgNode(NodeKind.IMM, value=operand.value))
            else:
                reg, n = slot
                producer = rut.row(reg)[n - 1] if n else None
                kids.append(_resolve(producer, ciq, built, cimset, counter))
        counter[0] += 1
        node = IdgNode(NodeKind.OP, ins.seq_index, ins.opcode, ins.operand_text(), kids[0], kids[1])
        built[ins.seq_index] = node
        roots.append(node)
    return IdgForest(tuple(roots), counter[0])
