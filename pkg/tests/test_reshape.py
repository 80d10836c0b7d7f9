import random
from dataclasses import replace

import pytest

from cimeval.idg import DEFAULT_CIM_SET, build_idg, build_rut_iht
from cimeval.memsim import HierarchyConfig, simulate_accesses
from cimeval.offload import HOST, CimCapability, OffloadPlan, select_candidates
from cimeval.reshape import (
    CimKind,
    CimOp,
    CimOperand,
    ReshapeConsistencyError,
    ReshapedTrace,
    parse_reshaped,
    reshape_trace,
    serialize_reshaped,
    verify_reshape,
)
from cimeval.techmodel import bundled_tech
from cimeval.trace import Level

from oracles import random_trace
from test_offload import CHAIN, LLOS_ONE, placed, plan_of


def test_llos_one_becomes_one_cim_add():
    ciq = placed(LLOS_ONE)
    _, plan = plan_of(ciq)
    out = reshape_trace(ciq, plan)
    (op,) = out.items
    assert isinstance(op, CimOp)
    assert (op.kind, op.level, op.bank, op.dst, op.result_addr) == (CimKind.ADD, Level.L1, 0, 3, 0x3000)
    assert op.operands == (CimOperand("mem", 0x1000), CimOperand("mem", 0x2000))
    assert op.origin == (2, 0, 1, 3) and op.op_seq == 2
    assert verify_reshape(ciq, out, plan)
    assert serialize_reshaped(out) == "2 CIM.ADD@L1 b0 [0x1000], [0x2000] -> r3 [0x3000] ; cand=0 origin=2,0,1,3\n"


def test_all_host_plan_is_identity():
    ciq = placed(LLOS_ONE)
    plan = OffloadPlan((), {e.seq_index: HOST for e in ciq})
    out = reshape_trace(ciq, plan)
    assert out.items == ciq.entries
    assert verify_reshape(ciq, out, plan).ok


def test_chained_subtrees_transfer_through_move():
    ciq = placed(CHAIN)
    _, plan = plan_of(ciq, CimCapability(max_fused_nodes=4, force_offload=True))
    out = reshape_trace(ciq, plan)
    kinds = [(i.kind, i.move_kind) for i in out.cim_items()]
    assert kinds == [(CimKind.ADD, None), (CimKind.MOVE, "chain"), (CimKind.AND, None)]
    assert out.cim_items()[2].operands[0] == CimOperand("cim", 2)
    assert out.host_items() == []
    assert verify_reshape(ciq, out, plan)


def test_unabsorbed_store_stays_on_host():
    ciq = placed(LLOS_ONE.replace("0x3000", "0x3040"))
    _, plan = plan_of(ciq)
    out = reshape_trace(ciq, plan)
    assert [type(i).__name__ for i in out] == ["CimOp", "IState"]
    assert out.items[0].result_addr is None and out.items[1].seq_index == 3
    assert verify_reshape(ciq, out, plan)


def test_unknown_seq_rejected():
    ciq = placed(LLOS_ONE)
    _, plan = plan_of(ciq)
    bad = OffloadPlan(plan.candidates, {**plan.disposition, 99: HOST})
    with pytest.raises(ReshapeConsistencyError, match="99"):
        reshape_trace(ciq, bad)


def test_move_needs_one_source():
    with pytest.raises(ValueError):
        CimOp(0, CimKind.MOVE, Level.L1, 0, (), src_level=Level.L2)


@pytest.fixture
def chain_run():
    ciq = placed(CHAIN + "6 LOAD r1, [0x5000]\n7 OR r2, r1, #3\n8 SUB r9, r2, r1\n")
    _, plan = plan_of(ciq, CimCapability(max_fused_nodes=4, force_offload=True))
    return ciq, plan, reshape_trace(ciq, plan)


def test_seeded_faults_are_named(chain_run):
    ciq, plan, out = chain_run
    assert verify_reshape(ciq, out, plan)
    items = list(out.items)

    # an offloaded LOAD left in the host stream
    leaked = ReshapedTrace(tuple([ciq.by_seq(0), *items]))
    rep = verify_reshape(ciq, leaked, plan)
    assert not rep and "seq 0" in rep.violation and "OFFLOADED" in rep.violation

    # reordered host instructions
    host = [i for i, x in enumerate(items) if not isinstance(x, CimOp)]
    swapped = list(items)
    swapped[host[0]], swapped[host[-1]] = swapped[host[-1]], swapped[host[0]]
    assert "order" in verify_reshape(ciq, ReshapedTrace(tuple(swapped)), plan).violation

    # a consumer ahead of its producer
    cims = [i for i, x in enumerate(items) if isinstance(x, CimOp)]
    back = list(items)
    back.insert(cims[0], back.pop(cims[-1]))
    assert "before it is produced" in verify_reshape(ciq, ReshapedTrace(tuple(back)), plan).violation

    # an op whose origin loses a LOAD
    first = items[cims[0]]
    trimmed = list(items)
    trimmed[cims[0]] = replace(first, origin=first.origin[:-1])
    assert "not covered" in verify_reshape(ciq, ReshapedTrace(tuple(trimmed)), plan).violation

    # a claimed seq that the plan keeps on the host
    grabbed = list(items)
    grabbed[cims[0]] = replace(first, origin=first.origin + (7,))
    assert "keeps on the host" in verify_reshape(ciq, ReshapedTrace(tuple(grabbed)), plan).violation


def test_text_round_trip(chain_run):
    ciq, plan, out = chain_run
    text = serialize_reshaped(out)
    back = parse_reshaped(text)
    assert serialize_reshaped(back) == text
    assert back.cim_items() == out.cim_items()
    assert [h.instr for h in back.host_items()] == [h.instr for h in out.host_items()]
    assert "CIM.MOVE@L1 b0 @2 <- L1:b0 ; cand=1 kind=chain" in text


def test_verify_holds_on_random_plans():
    hier = HierarchyConfig.from_dict({"l1": {"capacity": 1024, "associativity": 2},
                                      "l2": {"capacity": 4096, "associativity": 4}})
    techs = (bundled_tech("sram_45nm"), bundled_tech("fefet_45nm"))
    failures = []
    for seed in range(1000):
        rng = random.Random(seed)
        ciq = simulate_accesses(random_trace(rng, rng.randrange(1, 80), lines=rng.choice((8, 64))), hier)
        caps = CimCapability(force_offload=rng.random() < 0.5, max_fused_nodes=rng.choice((2, 3, 4, 6)),
                             levels=rng.choice(({Level.L1}, {Level.L2}, {Level.L1, Level.L2})))
        rut, iht = build_rut_iht(ciq)
        plan = select_candidates(build_idg(ciq, DEFAULT_CIM_SET, rut, iht), ciq, caps,
                                 tech=rng.choice(techs), hierarchy=hier)
        out = reshape_trace(ciq, plan)
        rep = verify_reshape(ciq, out, plan)
        if not rep:
            failures.append((seed, rep.violation))
        elif parse_reshaped(serialize_reshaped(out)).cim_items() != out.cim_items():
            failures.append((seed, "round trip"))
    assert failures == []
