import random

import pytest

from cimeval.idg import DEFAULT_CIM_SET, NodeKind, build_idg, build_rut_iht, producer_of
from cimeval.trace import Opcode, parse_trace

from oracles import idg_reference, random_trace

TEXT = """\
0 LOAD r1, [0x1000]
1 LOAD r2, [0x2000]
2 ADD r3, r1, r2
3 MOV r4, #7
4 XOR r5, r3, r4
5 OR r6, r3, #1
6 SUB r7, r5, r6
7 AND r8, r9, r1
8 STORE r5, [0x3000]
"""


@pytest.fixture
def forest():
    q = parse_trace(TEXT)
    rut, iht = build_rut_iht(q)
    return q, rut, iht, build_idg(q, DEFAULT_CIM_SET, rut, iht)


def test_rut_and_iht_contents(forest):
    _, rut, iht, _ = forest
    assert rut.row(1) == [0] and rut.row(3) == [2] and rut.row(9) == []
    assert iht[2] == ((1, 1), (2, 1))
    assert iht[5] == ((3, 1), None)
    assert iht[7] == ((9, 0), (1, 1))
    assert len(iht) == 9


def test_producer_lookup(forest):
    _, rut, iht, _ = forest
    assert producer_of(3, 4, rut, iht) == 2
    assert producer_of(9, 7, rut, iht) is None
    # not a source of the instruction: falls back to the RUT row
    assert producer_of(5, 8, rut, iht) == 4
    assert producer_of(5, 4, rut, iht) is None


def test_roots_and_children(forest):
    _, _, _, f = forest
    assert [r.seq_index for r in f] == [2, 4, 5, 7]
    add = f.root(2)
    assert add.left.kind is NodeKind.LOAD and add.left.seq_index == 0
    xor = f.root(4)
    assert xor.left is add
    assert xor.right.kind is NodeKind.NON_CIM and xor.right.seq_index == 3
    assert f.root(5).right.kind is NodeKind.IMM and f.root(5).right.value == 1
    live_in = f.root(7).left
    assert live_in.kind is NodeKind.NON_CIM and live_in.seq_index is None
    with pytest.raises(KeyError):
        f.root(6)


def test_shared_nodes_are_built_once(forest):
    _, _, _, f = forest
    assert f.root(4).left is f.root(5).left
    # each distinct node costs one expansion; shared producers are reused
    assert f.expansions == len(f.distinct_nodes())
    assert [n.seq_index for n in f.root(4).walk() if n.kind is NodeKind.LOAD] == [0, 1]
    assert sorted(f.root(4).instruction_nodes()) == [0, 1, 2, 4]


def test_cim_set_controls_roots():
    q = parse_trace(TEXT)
    rut, iht = build_rut_iht(q)
    f = build_idg(q, {Opcode.XOR, Opcode.LOAD}, rut, iht)
    assert [r.seq_index for r in f] == [4]
    # ADD is outside the set, so it becomes a host-supplied input
    assert f.root(4).left.kind is NodeKind.NON_CIM and f.root(4).left.seq_index == 2


def test_to_dict(forest):
    d = forest[3].to_dict()
    assert d["roots"] == [2, 4, 5, 7]
    assert d["nodes"]["5"] == {
        "opcode": "OR", "operands": "r6, r3, #1",
        "left": {"kind": "OP", "seq": 2}, "right": {"kind": "LEAF-IMM", "value": 1},
    }


def test_linear_expansions_on_long_chain():
    lines = ["0 LOAD r1, [0x10]"] + [f"{i} ADD r1, r1, r1" for i in range(1, 2001)]
    q = parse_trace("\n".join(lines))
    rut, iht = build_rut_iht(q)
    f = build_idg(q, DEFAULT_CIM_SET, rut, iht)
    assert f.expansions == 2001


@pytest.mark.parametrize("seed", range(25))
def test_matches_backward_scan(seed):
    rng = random.Random(seed)
    q = random_trace(rng, 300, regs=rng.choice((3, 6, 12)))
    rut, iht = build_rut_iht(q)
    f = build_idg(q, DEFAULT_CIM_SET, rut, iht)
    roots, edges = idg_reference(q, DEFAULT_CIM_SET)
    assert [r.seq_index for r in f] == roots
    assert f.edge_map() == edges
