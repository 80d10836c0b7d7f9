"""Per-operation energy and latency tables for a memory technology.

Technology files are INI text with one ``[<LEVEL>.energy]`` and optional
``[<LEVEL>.latency]`` section per level::

    [tech]
    name = SRAM
    clock_ghz = 1.0

    [L1.energy]
    read = 61
    write = 61
    cim_or = 71
    cim_and = 72
    cim_xor = 79
    cim_add = 79

L1 and L2 need every op.  ``[MAIN.energy]`` takes only ``read``/``write``.
Missing latencies default to read = 2 / 10 / 100 cycles (L1 / L2 / MAIN),
write = read, CiM logic ops = read and CiM ADD = read + 4.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Union

from .trace import Level, Opcode

__all__ = [
    "OpKind",
    "TechModel",
    "TechConfigError",
    "CapabilityError",
    "load_tech",
    "load_tech_file",
    "bundled_tech",
    "resolve_tech",
    "energy_of",
    "latency_of",
    "BUNDLED_TECHS",
    "CIM_KIND_OF",
    "DEFAULT_READ_LATENCY",
    "ADD_EXTRA_CYCLES",
]


class OpKind(str, Enum):
    READ = "read"
    WRITE = "write"
    CIM_OR = "cim_or"
    CIM_AND = "cim_and"
    CIM_XOR = "cim_xor"
    CIM_ADD = "cim_add"

    @property
    def is_cim(self) -> bool:
        return self.value.startswith("cim_")


CIM_KIND_OF = {
    Opcode.OR: OpKind.CIM_OR,
    Opcode.AND: OpKind.CIM_AND,
    Opcode.XOR: OpKind.CIM_XOR,
    Opcode.ADD: OpKind.CIM_ADD,
}

BUNDLED_TECHS = ("sram_45nm", "fefet_45nm")
DEFAULT_READ_LATENCY = {Level.L1: 2, Level.L2: 10, Level.MAIN: 100}
ADD_EXTRA_CYCLES = 4
DEFAULT_MAIN_ENERGY = 1000.0

_CACHE_LEVELS = (Level.L1, Level.L2)
_MAIN_OPS = (OpKind.READ, OpKind.WRITE)


class TechConfigError(ValueError):
    pass


class CapabilityError(LookupError):
    pass


@dataclass(frozen=True)
class TechModel:
    name: str
    energy: Mapping[Level, Mapping[OpKind, float]]
    latency: Mapping[Level, Mapping[OpKind, float]]
    clock_ghz: float = 1.0
    assumptions: tuple[str, ...] = ()
    level_configs: Mapping[Level, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for table, what in ((self.energy, "energy"), (self.latency, "latency")):
            for level, ops in table.items():
                for op, v in ops.items():
                    if not v > 0:
                        raise TechConfigError(f"{what} must be positive: {level.value}.{op.value} = {v}")
        for level in _CACHE_LEVELS:
            lat = self.latency[level]
            if lat[OpKind.CIM_ADD] < lat[OpKind.READ]:
                raise TechConfigError(f"{level.value}: cim_add latency below read latency")

    def cim_capable(self, level: Level) -> bool:
        return OpKind.CIM_ADD in self.energy.get(level, {})

    def energy_of(self, op: OpKind, level: Level) -> float:
        return _lookup(self.energy, op, level, self.name)

    def latency_of(self, op: OpKind, level: Level) -> float:
        return _lookup(self.latency, op, level, self.name)

    def move_energy(self, src: Level, dst: Level) -> float:
        return self.energy_of(OpKind.READ, src) + self.energy_of(OpKind.WRITE, dst)

    def move_latency(self, src: Level, dst: Level) -> float:
        return self.latency_of(OpKind.READ, src) + self.latency_of(OpKind.WRITE, dst)

    def to_dict(self) -> dict:
        def tab(t):
            return {lv.value: {op.value: v for op, v in ops.items()} for lv, ops in t.items()}

        return {
            "name": self.name,
            "clock_ghz": self.clock_ghz,
            "energy_pj": tab(self.energy),
            "latency_cycles": tab(self.latency),
            "assumptions": list(self.assumptions),
        }


def _lookup(table, op: OpKind, level: Level, name: str) -> float:
    ops = table.get(level)
    if ops is None or op not in ops:
        if op.is_cim:
            raise CapabilityError(f"{name}: {op.value} is not supported at {level.value}")
        raise CapabilityError(f"{name}: no {op.value} entry for {level.value}")
    return ops[op]


def _number(parser: configparser.ConfigParser, section: str, key: str) -> float:
    raw = parser.get(section, key)
    try:
        v = float(raw)
    except ValueError:
        raise TechConfigError(f"{section}.{key}: not a number: {raw!r}") from None
    return int(v) if v.is_integer() else v


def load_tech(source: str) -> TechModel:
    """Parse technology-file content into a fully populated model."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case so unknown keys are reported verbatim
    try:
        parser.read_string(source)
    except configparser.Error as exc:
        raise TechConfigError(f"malformed technology config: {exc}") from None

    known = {"tech"} | {f"{lv.value}{s}" for lv in Level for s in ("", ".energy", ".latency")}
    for sec in parser.sections():
        if sec not in known:
            raise TechConfigError(f"unknown section [{sec}]")

    name = parser.get("tech", "name", fallback="user-defined")
    clock = float(parser.get("tech", "clock_ghz", fallback="1.0"))
    assumptions = [a.strip() for a in parser.get("tech", "assumptions", fallback="").split(";") if a.strip()]

    energy: dict[Level, dict[OpKind, float]] = {}
    latency: dict[Level, dict[OpKind, float]] = {}
    configs: dict[Level, str] = {}
    for level in Level:
        allowed = list(OpKind) if level in _CACHE_LEVELS else list(_MAIN_OPS)
        esec, lsec = f"{level.value}.energy", f"{level.value}.latency"
        if parser.has_option(level.value, "config"):
            configs[level] = parser.get(level.value, "config")
        for sec in (esec, lsec):
            if parser.has_section(sec):
                for key in parser.options(sec):
                    if key not in {op.value for op in allowed}:
                        raise TechConfigError(f"unknown op in {sec}: {key}")

        if level is Level.MAIN and not parser.has_section(esec):
            energy[level] = {op: DEFAULT_MAIN_ENERGY for op in _MAIN_OPS}
            assumptions.append(f"main memory read/write energy defaulted to {DEFAULT_MAIN_ENERGY:g} pJ")
        else:
            energy[level] = {}
            for op in allowed:
                if not parser.has_option(esec, op.value):
                    raise TechConfigError(f"missing energy: {level.value}.{op.value}")
                energy[level][op] = _number(parser, esec, op.value)

        read_lat = (
            _number(parser, lsec, "read") if parser.has_option(lsec, "read") else DEFAULT_READ_LATENCY[level]
        )
        lat = {}
        for op in allowed:
            if parser.has_option(lsec, op.value):
                lat[op] = _number(parser, lsec, op.value)
            elif op is OpKind.CIM_ADD:
                lat[op] = read_lat + ADD_EXTRA_CYCLES
            else:
                lat[op] = read_lat
        latency[level] = lat

    return TechModel(name, energy, latency, clock, tuple(assumptions), configs)


def load_tech_file(path: Union[str, Path]) -> TechModel:
    return load_tech(Path(path).read_text(encoding="utf-8"))


def bundled_tech(name: str) -> TechModel:
    if name not in BUNDLED_TECHS:
        raise TechConfigError(f"unknown bundled technology {name!r}; choose from {', '.join(BUNDLED_TECHS)}")
    text = resources.files("cimeval").joinpath("data", f"{name}.ini").read_text(encoding="utf-8")
    return load_tech(text)


def resolve_tech(name_or_path: Union[str, Path]) -> TechModel:
    """A bundled technology by name, else a technology file path."""
    if isinstance(name_or_path, str) and name_or_path in BUNDLED_TECHS:
        return bundled_tech(name_or_path)
    return load_tech_file(name_or_path)


def energy_of(op: OpKind, level: Level, model: TechModel) -> float:
    return model.energy_of(op, level)


def latency_of(op: OpKind, level: Level, model: TechModel) -> float:
    return model.latency_of(op, level)
