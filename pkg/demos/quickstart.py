"""Walk one load-load-op-store pattern through the whole pipeline.

Run with ``python demos/quickstart.py``.  Each step prints what it produced,
so the output reads top to bottom as the analysis flow: parse, annotate,
build the dependency forest, select offload candidates, reshape, profile.
"""

from cimeval.idg import DEFAULT_CIM_SET, build_idg, build_rut_iht
from cimeval.memsim import HierarchyConfig, simulate_accesses
from cimeval.offload import CimCapability, compute_macr, select_candidates
from cimeval.profile import count_events, default_host_model, energy_report, improvement, perf_report
from cimeval.reshape import reshape_trace, serialize_reshaped, verify_reshape
from cimeval.techmodel import bundled_tech
from cimeval.trace import parse_trace

TRACE = """\
0 LOAD r1, [0x1000]
1 LOAD r2, [0x2000]
2 ADD r3, r1, r2
3 STORE r3, [0x3000]
4 LOAD r4, [0x1040]
5 XOR r5, r4, #255
6 STORE r5, [0x3040]
7 SUB r6, r5, r3
"""


def main() -> None:
    hier = HierarchyConfig()
    tech = bundled_tech("sram_45nm")
    host = default_host_model()

    ciq = simulate_accesses(parse_trace(TRACE), hier, warmup=True)
    print("annotated trace (level, bank):")
    for e in ciq:
        where = f"{e.mem_level.value} b{e.bank}" if e.annotated else ""
        print(f"  {str(e.instr):<24} {where}")

    rut, iht = build_rut_iht(ciq)
    forest = build_idg(ciq, DEFAULT_CIM_SET, rut, iht)
    print(f"\ndependency forest roots: {[r.seq_index for r in forest]}")

    plan = select_candidates(forest, ciq, CimCapability(), tech=tech, hierarchy=hier)
    for c in plan.candidates:
        print(f"candidate at {c.root}: {c.target_level.value} bank {c.target_bank}, "
              f"{c.eliminated_accesses} accesses eliminated, {c.cim_energy:g} pJ vs {c.baseline_energy:g} pJ")
    print(f"MACR = {compute_macr(plan, ciq):.3f}")

    reshaped = reshape_trace(ciq, plan)
    assert verify_reshape(ciq, reshaped, plan)
    print("\nreshaped trace:")
    print("  " + serialize_reshaped(reshaped).rstrip().replace("\n", "\n  "))

    base, cim = count_events(ciq), count_events(reshaped)
    pb = perf_report(base, tech)
    eb, ec = energy_report(base, tech, host), energy_report(cim, tech, host)
    imp = improvement((eb, pb), (ec, perf_report(cim, tech)))
    print(f"\nenergy {eb.total:g} pJ -> {ec.total:g} pJ  (improvement {imp.energy_improvement:.3f}x)")
    print(f"speedup {imp.speedup:.3f}x, saving split processor {imp.proc_ratio:.2f} / caches {imp.cache_ratio:.2f}")


if __name__ == "__main__":
    main()
