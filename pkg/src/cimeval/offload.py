"""Offloading candidate selection.

Candidates are IDG subtrees that a CiM unit can execute as a whole:

* every operation in the subtree is CiM-supported;
* every leaf is a LOAD or an immediate, or the result of an already accepted
  candidate (a *chained* input);
* no value computed inside the subtree, other than the root's, is read by an
  instruction outside it;
* all operands end up in one cache level and bank, possibly after explicit
  data movements, and the movements pay for themselves in energy.

Selection is greedy: larger subtrees first, then lower root seq index.
"""

from __future__ import annotations

import heapq

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Union

from .idg import DEFAULT_CIM_SET, IdgForest, IdgNode, NodeKind, build_rut_iht
from .memsim import HierarchyConfig, probe_events
from .techmodel import CIM_KIND_OF, TechModel, bundled_tech
from .trace import CommittedInstructionQueue, IState, Level, Opcode

__all__ = [
    "CimCapability",
    "Subtree",
    "Move",
    "Candidate",
    "Rejection",
    "OffloadPlan",
    "HOST",
    "partition_forest",
    "check_locality",
    "select_candidates",
    "compute_macr",
    "consumer_map",
    "baseline_access_energy",
]

HOST = "HOST"
_CACHE_LEVELS = (Level.L1, Level.L2)


@dataclass(frozen=True)
class CimCapability:
    supported: frozenset = DEFAULT_CIM_SET
    levels: frozenset = frozenset(_CACHE_LEVELS)
    max_fused_nodes: int = 4
    # skip the energy net-benefit test on data movements
    force_offload: bool = False
    # reject candidates whose consuming STORE cannot be absorbed
    reject_unabsorbed_store: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "supported", frozenset(Opcode(o) for o in self.supported))
        object.__setattr__(self, "levels", frozenset(Level(l) for l in self.levels))
        bad = self.supported - set(CIM_KIND_OF)
        if bad:
            raise ValueError(f"opcodes without a CiM operation: {sorted(o.value for o in bad)}")
        if not self.levels <= set(_CACHE_LEVELS):
            raise ValueError("CiM levels must be a subset of {L1, L2}")
        if self.max_fused_nodes < 2:
            raise ValueError("max_fused_nodes must be at least 2")

    @property
    def enabled(self) -> bool:
        return bool(self.levels) and bool(self.supported)

    def to_dict(self) -> dict:
        return {
            "supported": sorted(o.value for o in self.supported),
            "levels": sorted(l.value for l in self.levels),
            "max_fused_nodes": self.max_fused_nodes,
            "force_offload": self.force_offload,
            "reject_unabsorbed_store": self.reject_unabsorbed_store,
        }


@dataclass(frozen=True)
class Subtree:
    root: int
    nodes: frozenset  # instruction seq indices: ops and LOAD leaves
    ops: tuple[int, ...]  # post-order, root last
    loads: tuple[int, ...]
    chain_inputs: tuple[int, ...] = ()  # roots of producer candidates

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class Move:
    """One hop of data movement ahead of a CiM operation."""

    kind: str  # write-back | fill | bank | chain
    src_level: Level
    src_bank: int
    dst_level: Level
    dst_bank: int
    addr: Optional[int] = None  # operand address, None for a chained result
    source: Optional[int] = None  # seq of the LOAD leaf or producer root

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "src": f"{self.src_level.value}:b{self.src_bank}",
            "dst": f"{self.dst_level.value}:b{self.dst_bank}",
            "addr": None if self.addr is None else f"{self.addr:#x}",
            "source": self.source,
        }


@dataclass(frozen=True)
class Candidate:
    subtree: Subtree
    target_level: Level
    target_bank: int
    moves: tuple[Move, ...]
    absorbed_store: Optional[int]
    baseline_energy: float
    cim_energy: float

    @property
    def root(self) -> int:
        return self.subtree.root

    @property
    def nodes(self) -> frozenset:
        return self.subtree.nodes

    @property
    def replaced_count(self) -> int:
        return self.subtree.size + (self.absorbed_store is not None)

    @property
    def eliminated_accesses(self) -> int:
        return len(self.subtree.loads) + (self.absorbed_store is not None)

    @property
    def offloaded(self) -> frozenset:
        if self.absorbed_store is None:
            return self.subtree.nodes
        return self.subtree.nodes | {self.absorbed_store}

    def to_dict(self) -> dict:
        s = self.subtree
        return {
            "root": s.root,
            "ops": list(s.ops),
            "loads": list(s.loads),
            "chain_inputs": list(s.chain_inputs),
            "absorbed_store": self.absorbed_store,
            "level": self.target_level.value,
            "bank": self.target_bank,
            "moves": [m.to_dict() for m in self.moves],
            "replaced": self.replaced_count,
            "eliminated_accesses": self.eliminated_accesses,
            "baseline_energy_pj": self.baseline_energy,
            "cim_energy_pj": self.cim_energy,
        }


@dataclass(frozen=True)
class Rejection:
    subtree: Subtree
    reason: str


@dataclass(frozen=True)
class OffloadPlan:
    candidates: tuple[Candidate, ...]
    disposition: dict  # seq -> HOST | candidate index
    rejections: tuple[Rejection, ...] = ()

    def eliminated_accesses(self) -> int:
        return sum(c.eliminated_accesses for c in self.candidates)

    def offloaded(self) -> set[int]:
        return {s for s, d in self.disposition.items() if d != HOST}

    def candidate_of(self, seq_index: int) -> Optional[Candidate]:
        d = self.disposition.get(seq_index, HOST)
        return None if d == HOST else self.candidates[d]

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "offloaded_instructions": len(self.offloaded()),
            "eliminated_accesses": self.eliminated_accesses(),
            "rejections": [
                {"root": r.subtree.root, "nodes": sorted(r.subtree.nodes), "reason": r.reason}
                for r in self.rejections
            ],
        }


# --------------------------------------------------------------------------
# partitioning


def _subtree_sets(forest: IdgForest, caps: CimCapability) -> dict[int, Optional[frozenset]]:
    """seq -> node set of the full subtree under that OP, or None if it is not offloadable."""
    memo: dict[int, Optional[frozenset]] = {}
    # forest roots are in commit order, children precede parents
    for root in forest.roots:
        for n in _ops_postorder(root):
            if n.seq_index in memo:
                continue
            memo[n.seq_index] = _full_set(n, memo, caps)
    return memo


def _ops_postorder(root: IdgNode) -> list[IdgNode]:
    out, seen = [], set()
    stack: list[tuple[IdgNode, bool]] = [(root, False)]
    while stack:
        n, done = stack.pop()
        if done:
            out.append(n)
            continue
        if n.kind is not NodeKind.OP or n.seq_index in seen:
            continue
        seen.add(n.seq_index)
        stack.append((n, True))
        for c in reversed(n.children):
            stack.append((c, False))
    return out


def _full_set(n: IdgNode, memo, caps: CimCapability) -> Optional[frozenset]:
    if n.opcode not in caps.supported:
        return None
    acc = {n.seq_index}
    for c in n.children:
        if c.kind is NodeKind.IMM:
            continue
        if c.kind is NodeKind.LOAD:
            acc.add(c.seq_index)
        elif c.kind is NodeKind.OP:
            sub = memo.get(c.seq_index)
            if sub is None:
                return None
            acc |= sub
        else:
            return None
        if len(acc) > caps.max_fused_nodes:
            return None
    return frozenset(acc)


def _make_subtree(node: IdgNode, nodes: frozenset) -> Subtree:
    ops, loads, seen = [], [], set()

    def visit(n: IdgNode) -> None:
        if n.seq_index in seen or n.kind not in (NodeKind.OP, NodeKind.LOAD):
            return
        seen.add(n.seq_index)
        if n.kind is NodeKind.LOAD:
            loads.append(n.seq_index)
            return
        for c in n.children:
            visit(c)
        ops.append(n.seq_index)

    visit(node)
    return Subtree(node.seq_index, nodes, tuple(ops), tuple(sorted(loads)))


def partition_forest(forest: IdgForest, caps: CimCapability) -> list[Subtree]:
    """Maximal offloadable subtrees of every tree, deduplicated, by root seq.

    Within one tree a subtree is kept when its root's full subtree is
    offloadable and no offloadable ancestor in that tree already covers it.
    A tree broken by unsupported operations yields one candidate per
    supported region.
    """
    sets = _subtree_sets(forest, caps)
    found: dict[frozenset, Subtree] = {}
    for root in forest.roots:
        stack, seen = [root], set()
        while stack:
            n = stack.pop()
            if n.kind is not NodeKind.OP or n.seq_index in seen:
                continue
            seen.add(n.seq_index)
            nodes = sets.get(n.seq_index)
            if nodes is not None:
                if nodes not in found:
                    found[nodes] = _make_subtree(n, nodes)
                continue
            stack.extend(n.children)
    return sorted(found.values(), key=lambda s: (s.root, s.size))


# --------------------------------------------------------------------------
# locality


@lru_cache(maxsize=None)
def _default_tech() -> TechModel:
    return bundled_tech("sram_45nm")


def baseline_access_energy(entry: IState, tech: TechModel) -> float:
    """Energy the unmodified trace spends on one annotated LOAD/STORE."""
    return sum(tech.energy_of(op, level) for level, op, _ in probe_events(entry))


@dataclass(frozen=True)
class _Operand:
    level: Level
    bank: int
    addr: Optional[int]
    source: int
    chained: bool = False


def _hops(src: Level, dst: Level, inclusive: bool) -> list[tuple[Level, Level]]:
    if src is dst:
        return [(src, dst)]
    if src.depth < dst.depth or not inclusive:
        return [(src, dst)]
    # filling upward installs the line at each intermediate level
    order = [Level.MAIN, Level.L2, Level.L1]
    path = order[order.index(src): order.index(dst) + 1]
    return list(zip(path, path[1:]))


def _plan_moves(
    operands: list[_Operand], target: Level, bank: int, hier: HierarchyConfig
) -> list[Move]:
    moves: list[Move] = []
    for o in operands:
        if o.level is target and o.bank == bank and not o.chained:
            continue
        if o.level is target:
            kind = "chain" if o.chained else "bank"
            moves.append(Move(kind, o.level, o.bank, target, bank, o.addr, o.source))
            continue
        kind = "chain" if o.chained else ("write-back" if o.level.depth < target.depth else "fill")
        hops = _hops(o.level, target, hier.inclusive)
        src_bank = o.bank
        for i, (a, b) in enumerate(hops):
            last = i == len(hops) - 1
            dst_bank = bank if last else (hier.bank(o.addr, b) if o.addr is not None else 0)
            moves.append(Move(kind, a, src_bank, b, dst_bank, o.addr, o.source))
            src_bank = dst_bank
    return moves


def _target_bank(operands: list[_Operand], target: Level, store_addr: Optional[int], hier) -> int:
    resident = Counter(o.bank for o in operands if o.level is target)
    if resident:
        top = max(resident.values())
        return min(b for b, c in resident.items() if c == top)
    if store_addr is not None:
        return hier.bank(store_addr, target)
    for o in operands:
        if o.addr is not None:
            return hier.bank(o.addr, target)
    return 0


def check_locality(
    subtree: Subtree,
    ciq: CommittedInstructionQueue,
    caps: CimCapability,
    *,
    tech: Optional[TechModel] = None,
    hierarchy: Optional[HierarchyConfig] = None,
    store: Optional[int] = None,
    producers: Optional[dict] = None,
) -> Union[Candidate, Rejection]:
    """Place a subtree's operands in one level and bank, or reject it.

    Every CiM level is a possible target.  A placement that needs moves is
    admissible only if it saves memory-side energy.  Among admissible
    placements the one eliminating the most accesses wins, then the deepest
    level holding an operand (shallower operands written back to it), then
    the cheapest.  ``store`` is the STORE consuming the root, absorbed when its
    address maps to the target bank; ``producers`` maps accepted candidate
    roots to their (level, bank) for chained inputs.
    """
    tech = tech or _default_tech()
    hier = hierarchy or HierarchyConfig()
    if not caps.enabled:
        return Rejection(subtree, "CiM disabled")
    if not subtree.loads and not subtree.chain_inputs:
        return Rejection(subtree, "degenerate: no memory operands")

    operands = []
    for s in subtree.loads:
        e = ciq.by_seq(s)
        if e.mem_level is None:
            raise ValueError(f"LOAD {s} is not annotated; run the cache annotator first")
        operands.append(_Operand(e.mem_level, e.bank, e.instr.mem_addr, s))
    for p in subtree.chain_inputs:
        level, bank = (producers or {})[p]
        operands.append(_Operand(level, bank, None, p, chained=True))

    store_entry = ciq.by_seq(store) if store is not None else None
    store_addr = store_entry.instr.mem_addr if store_entry is not None else None
    replaced = sum(baseline_access_energy(ciq.by_seq(s), tech) for s in subtree.loads)

    def evaluate(target: Level) -> Optional[Candidate]:
        bank = _target_bank(operands, target, store_addr, hier)
        moves = _plan_moves(operands, target, bank, hier)
        absorbed = store if store_addr is not None and hier.bank(store_addr, target) == bank else None
        if store is not None and absorbed is None and caps.reject_unabsorbed_store:
            return None
        base = replaced + (baseline_access_energy(store_entry, tech) if absorbed is not None else 0.0)
        cost = sum(tech.energy_of(CIM_KIND_OF[ciq.by_seq(s).instr.opcode], target) for s in subtree.ops)
        cost += sum(tech.move_energy(m.src_level, m.dst_level) for m in moves)
        return Candidate(subtree, target, bank, tuple(moves), absorbed, base, cost)

    deepest = max((o.level for o in operands), key=lambda l: l.depth)
    options = [evaluate(l) for l in _CACHE_LEVELS if l in caps.levels]
    options = [c for c in options if c is not None]
    if not options:
        return Rejection(subtree, "result store outside the target bank")
    # admissible: no data movement, or moves that pay for themselves
    ok = [c for c in options if caps.force_offload or not c.moves or c.baseline_energy - c.cim_energy > 0]
    if ok:
        return min(ok, key=lambda c: (-c.eliminated_accesses, c.target_level is not deepest, c.cim_energy,
                                      -c.target_level.depth))
    best = min(options, key=lambda c: c.cim_energy)
    return Rejection(
        subtree,
        f"no net energy benefit (best {best.cim_energy:g} pJ at {best.target_level.value} "
        f"vs {best.baseline_energy:g} pJ baseline)",
    )


# --------------------------------------------------------------------------
# selection


def consumer_map(ciq: CommittedInstructionQueue) -> dict[int, list[int]]:
    """producer seq -> seq indices of the instructions reading its result."""
    rut, iht = build_rut_iht(ciq)
    out: dict[int, list[int]] = {}
    for e in ciq:
        s = e.seq_index
        for slot in iht[s]:
            if slot is None or not slot[1]:
                continue
            p = rut.row(slot[0])[slot[1] - 1]
            lst = out.setdefault(p, [])
            if not lst or lst[-1] != s:
                lst.append(s)
    return out


def _escapes(sub: Subtree, consumers: dict[int, list[int]]) -> bool:
    return any(c not in sub.nodes for n in sub.nodes if n != sub.root for c in consumers.get(n, ()))


def _root_store(root: int, ciq: CommittedInstructionQueue, consumers) -> Optional[int]:
    for c in consumers.get(root, ()):
        if ciq.by_seq(c).instr.opcode is Opcode.STORE:
            return c
    return None


def select_candidates(
    forest: IdgForest,
    ciq: CommittedInstructionQueue,
    caps: CimCapability,
    *,
    tech: Optional[TechModel] = None,
    hierarchy: Optional[HierarchyConfig] = None,
) -> OffloadPlan:
    tech = tech or _default_tech()
    hier = hierarchy or HierarchyConfig()
    if not caps.enabled:
        return OffloadPlan((), {e.seq_index: HOST for e in ciq})

    consumers = consumer_map(ciq)
    sets = _subtree_sets(forest, caps)
    op_nodes = {n.seq_index: n for n in forest.distinct_nodes() if n.kind is NodeKind.OP}
    rejections: list[Rejection] = []
    taken: set[int] = set()
    accepted: dict[int, Candidate] = {}

    def consider(sub: Subtree) -> bool:
        store = _root_store(sub.root, ciq, consumers)
        if store is not None and store in taken:
            store = None
        producers = {p: (accepted[p].target_level, accepted[p].target_bank) for p in sub.chain_inputs}
        res = check_locality(sub, ciq, caps, tech=tech, hierarchy=hier, store=store, producers=producers)
        if isinstance(res, Rejection):
            rejections.append(res)
            return False
        accepted[sub.root] = res
        taken.update(res.offloaded)
        return True

    # largest first; a rejected subtree falls back to the subtrees of its
    # operand ops, which are full subtrees in their own right
    heap = [(-s.size, s.root, s) for s in partition_forest(forest, caps)]
    heapq.heapify(heap)
    queued = {s.root for _, _, s in heap}
    while heap:
        _, _, sub = heapq.heappop(heap)
        if sub.nodes & taken:
            rejections.append(Rejection(sub, "overlaps a larger accepted candidate"))
            continue
        if _escapes(sub, consumers):
            rejections.append(Rejection(sub, "intermediate value read outside the subtree"))
        elif consider(sub):
            continue
        for c in op_nodes[sub.root].children:
            if c.kind is NodeKind.OP and c.seq_index not in queued:
                queued.add(c.seq_index)
                child = _make_subtree(c, sets[c.seq_index])
                heapq.heappush(heap, (-child.size, child.root, child))

    # chaining: a supported op fed by accepted candidates plus its own loads
    for root in forest.roots:
        u = root.seq_index
        if u in taken or root.opcode not in caps.supported:
            continue
        loads, chained, ok = [], [], True
        for c in root.children:
            if c.kind is NodeKind.IMM:
                continue
            if c.kind is NodeKind.LOAD and c.seq_index not in taken and set(consumers.get(c.seq_index, ())) <= {u}:
                loads.append(c.seq_index)
            elif c.kind is NodeKind.OP and c.seq_index in accepted:
                chained.append(c.seq_index)
            else:
                ok = False
        loads = sorted(set(loads))
        if not ok or not chained or not loads or 1 + len(loads) > caps.max_fused_nodes:
            continue
        consider(Subtree(u, frozenset([u, *loads]), (u,), tuple(loads), tuple(dict.fromkeys(chained))))

    cands = tuple(sorted(accepted.values(), key=lambda c: c.root))
    disposition: dict[int, Union[str, int]] = {e.seq_index: HOST for e in ciq}
    for i, c in enumerate(cands):
        for s in c.offloaded:
            disposition[s] = i
    return OffloadPlan(cands, disposition, tuple(rejections))


def compute_macr(plan: OffloadPlan, ciq: CommittedInstructionQueue) -> Optional[float]:
    """Eliminated over total memory accesses; None when the trace has none."""
    total = ciq.memory_accesses()
    if total == 0:
        return None
    return plan.eliminated_accesses() / total
