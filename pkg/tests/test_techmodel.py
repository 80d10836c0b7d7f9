import pytest

from cimeval.techmodel import (
    CapabilityError,
    OpKind,
    TechConfigError,
    bundled_tech,
    energy_of,
    latency_of,
    load_tech,
    resolve_tech,
)
from cimeval.trace import Level

# frozen by hand from the published per-level energy table (pJ)
EXPECTED = {
    ("sram_45nm", "L1"): {"read": 61, "cim_or": 71, "cim_and": 72, "cim_xor": 79, "cim_add": 79},
    ("sram_45nm", "L2"): {"read": 314, "cim_or": 341, "cim_and": 344, "cim_xor": 365, "cim_add": 365},
    ("fefet_45nm", "L1"): {"read": 34, "cim_or": 35, "cim_and": 88, "cim_xor": 105, "cim_add": 105},
    ("fefet_45nm", "L2"): {"read": 70, "cim_or": 72, "cim_and": 146, "cim_xor": 205, "cim_add": 205},
}

CELLS = [(t, lv, op, v) for (t, lv), row in EXPECTED.items() for op, v in row.items()]


@pytest.mark.parametrize("tech, level, op, value", CELLS)
def test_table_cell(tech, level, op, value):
    assert energy_of(OpKind(op), Level(level), bundled_tech(tech)) == value


def test_cell_count():
    assert len(CELLS) == 20


@pytest.mark.parametrize("tech", ["sram_45nm", "fefet_45nm"])
def test_latency_relations(tech):
    m = bundled_tech(tech)
    for lv in (Level.L1, Level.L2):
        read = latency_of(OpKind.READ, lv, m)
        for op in (OpKind.CIM_OR, OpKind.CIM_AND, OpKind.CIM_XOR):
            assert m.latency_of(op, lv) == read
        assert m.latency_of(OpKind.CIM_ADD, lv) == read + 4
    assert m.latency_of(OpKind.READ, Level.MAIN) == 100


def test_write_energies_and_assumptions():
    sram, fefet = bundled_tech("sram_45nm"), bundled_tech("fefet_45nm")
    assert sram.energy_of(OpKind.WRITE, Level.L1) == sram.energy_of(OpKind.READ, Level.L1)
    assert fefet.energy_of(OpKind.WRITE, Level.L1) == 35
    assert fefet.energy_of(OpKind.WRITE, Level.L2) == 72
    assert sram.assumptions and fefet.assumptions
    assert sram.move_energy(Level.L2, Level.L1) == 314 + 61
    assert sram.move_latency(Level.MAIN, Level.L2) == 110


def test_main_memory_has_no_cim():
    m = bundled_tech("sram_45nm")
    assert not m.cim_capable(Level.MAIN) and m.cim_capable(Level.L1)
    with pytest.raises(CapabilityError, match="not supported at MAIN"):
        m.energy_of(OpKind.CIM_ADD, Level.MAIN)


MINIMAL = """
[tech]
name = toy
[L1.energy]
read = 1
write = 2
cim_or = 3
cim_and = 3
cim_xor = 3
cim_add = 4
[L2.energy]
read = 5
write = 5
cim_or = 6
cim_and = 6
cim_xor = 6
cim_add = 7
"""


def test_defaults_fill_latency_and_main():
    m = load_tech(MINIMAL)
    assert m.name == "toy"
    assert m.latency_of(OpKind.CIM_ADD, Level.L2) == 14
    assert m.energy_of(OpKind.READ, Level.MAIN) == 1000
    assert any("main memory" in a for a in m.assumptions)


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda s: s.replace("cim_add = 4\n", ""), "missing energy: L1.cim_add"),
        (lambda s: s + "[L3.energy]\nread = 1\n", "unknown section"),
        (lambda s: s.replace("cim_or = 3", "cim_nand = 3"), "unknown op"),
        (lambda s: s.replace("read = 1", "read = fast"), "not a number"),
        (lambda s: s.replace("read = 1", "read = -1"), "must be positive"),
        (lambda s: s + "[L1.latency]\nread = 5\ncim_add = 2\n", "below read latency"),
        (lambda s: "not an ini", "malformed"),
    ],
)
def test_config_errors(edit, message):
    with pytest.raises(TechConfigError, match=message):
        load_tech(edit(MINIMAL))


def test_resolve(tmp_path):
    p = tmp_path / "toy.ini"
    p.write_text(MINIMAL, encoding="utf-8")
    assert resolve_tech(str(p)).name == "toy"
    assert resolve_tech("fefet_45nm").name == bundled_tech("fefet_45nm").name
    with pytest.raises(TechConfigError):
        bundled_tech("mram")
