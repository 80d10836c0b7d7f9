import random

import pytest

from cimeval.memsim import (
    AddressRangeError,
    CacheLevelConfig,
    CacheState,
    HierarchyConfig,
    bank_of,
    probe_events,
    simulate_accesses,
)
from cimeval.techmodel import OpKind
from cimeval.trace import Level, parse_trace

from oracles import ReferenceLru, random_trace

# 2 sets x 2 ways at L1, 4 sets x 2 ways at L2, 64 B lines
TINY = HierarchyConfig(CacheLevelConfig(256, 2, 64, 2), CacheLevelConfig(512, 2, 64, 4), 1 << 20)


@pytest.mark.parametrize(
    "args",
    [(0, 4), (1000, 4), (256, 3), (256, 2, 64, 3), (256, 2, -64)],
)
def test_level_config_validation(args):
    with pytest.raises(ValueError):
        CacheLevelConfig(*args)


def test_hierarchy_validation():
    with pytest.raises(ValueError):
        HierarchyConfig(CacheLevelConfig(4096, 2), CacheLevelConfig(1024, 2))
    with pytest.raises(ValueError):
        CacheState(HierarchyConfig(CacheLevelConfig(1024, 2, 32), CacheLevelConfig(4096, 2, 64)))


def test_labels_and_dict_round_trip():
    h = HierarchyConfig()
    assert h.label() == "L1 64kB/4-way + L2 256kB/8-way"
    assert HierarchyConfig.from_dict(h.to_dict()) == h
    assert HierarchyConfig.from_dict({"l2": {"capacity": 2 << 20}}).l2.capacity == 2 << 20


def test_banks_are_line_interleaved():
    cfg = CacheLevelConfig(1024, 2, 64, 4)
    assert [bank_of(a, cfg) for a in (0, 63, 64, 128, 192, 256)] == [0, 0, 1, 2, 3, 0]
    assert TINY.bank(0x1000, Level.MAIN) == 0


def test_hit_levels_and_lru_eviction():
    st = CacheState(TINY)
    a, b, c = 0x0, 0x80, 0x100  # all map to L1 set 0
    assert st.access(a, False) == (Level.MAIN, (False, False))
    assert st.access(a, False) == (Level.L1, (True,))
    st.access(b, False)
    st.access(a, False)  # a becomes MRU, b is LRU
    st.access(c, False)  # evicts b from L1
    assert st.access(a, False)[0] is Level.L1
    assert st.access(b, False) == (Level.L2, (False, True))


def test_dirty_eviction_writes_back():
    st = CacheState(TINY)
    st.access(0x0, True)
    st.access(0x80, False)
    st.access(0x100, False)
    assert st.stats.writebacks["L1"] == 1


def test_inclusive_back_invalidation():
    st = CacheState(TINY)
    # L2 set 0 holds lines 0, 4, 8...; L1 set 0 holds even lines
    st.access(0x0, False)
    st.access(0x100, False)
    st.access(0x0, False)  # L1 hit: line 0 is MRU in L1 but still LRU in L2
    st.access(0x200, False)  # evicts line 0 from L2, so also from L1
    assert st.stats.back_invalidations == 1
    assert 0 not in st.resident(Level.L1)
    assert st.access(0x0, False)[0] is Level.MAIN


def test_non_inclusive_keeps_l1_copy():
    cfg = HierarchyConfig(TINY.l1, TINY.l2, TINY.main_capacity, inclusive=False)
    st = CacheState(cfg)
    for addr in (0x0, 0x100, 0x0, 0x200):
        st.access(addr, False)
    assert 0 in st.resident(Level.L1)
    assert st.access(0x0, False) == (Level.L1, (True,))


def test_address_range():
    with pytest.raises(AddressRangeError):
        simulate_accesses(parse_trace("0 LOAD r1, [0x100000]\n"), TINY)


def test_annotations_and_warmup():
    q = parse_trace("0 LOAD r1, [0x40]\n1 ADD r2, r1, #1\n2 STORE r2, [0x40]\n")
    cold = simulate_accesses(q, TINY)
    assert (cold[0].mem_level, cold[0].hit, cold[0].bank, cold[0].request_tick) == (Level.MAIN, (False, False), 0, 0)
    assert (cold[2].mem_level, cold[2].hit, cold[2].bank) == (Level.L1, (True,), 1)
    assert cold[1].mem_level is None and not cold[1].annotated
    warm = simulate_accesses(q, TINY, warmup=True)
    assert warm[0].hit == (True,)


def test_probe_events():
    q = simulate_accesses(parse_trace("0 STORE r1, [0x40]\n1 LOAD r2, [0x40]\n"), TINY)
    assert probe_events(q[0]) == [
        (Level.L1, OpKind.WRITE, False), (Level.L2, OpKind.READ, False), (Level.MAIN, OpKind.READ, True)
    ]
    assert probe_events(q[1]) == [(Level.L1, OpKind.READ, True)]
    with pytest.raises(ValueError):
        probe_events(parse_trace("0 LOAD r1, [0x0]\n")[0])


@pytest.mark.parametrize("inclusive", [True, False])
def test_matches_reference_lru(inclusive):
    cfg = HierarchyConfig(CacheLevelConfig(512, 2, 64, 2), CacheLevelConfig(2048, 4, 64, 4), 1 << 24, inclusive)
    for seed in range(20):
        q = simulate_accesses(random_trace(random.Random(seed), 800, lines=96), cfg)
        ref = ReferenceLru(cfg.l1.sets, 2, cfg.l2.sets, 4, 64, inclusive)
        for e in q:
            if e.instr.opcode.is_memory:
                assert (e.mem_level, e.hit) == ref.access(e.instr.mem_addr, e.instr.opcode.value == "STORE")
