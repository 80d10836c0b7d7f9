"""SRAM versus FeFET CiM caches on every bundled fixture.

Both CiM systems are measured against the same SRAM system without CiM, so
the two improvement columns are directly comparable.  The FeFET column is
higher throughout because its reads are cheap, which lowers the energy of
every access, whether or not it is offloaded.
"""

from dataclasses import replace

from cimeval.runner import FIXTURES, RunConfig, run_one


def main() -> None:
    cfg = RunConfig()
    print(f"{'fixture':<12} {'MACR':>6} {'SRAM':>8} {'FeFET':>8} {'speedup':>8}")
    for name in FIXTURES:
        sram = run_one(replace(cfg, technology="sram_45nm"), name).comparison
        fefet = run_one(replace(cfg, technology="fefet_45nm"), name).comparison
        print(f"{name:<12} {sram['macr']:>6.3f} {sram['energy_improvement']:>8.3f} "
              f"{fefet['energy_improvement']:>8.3f} {fefet['speedup']:>8.3f}")

    # the same comparison with each technology as its own baseline
    print("\nself-normalised (FeFET CiM over FeFET without CiM):")
    own = replace(cfg, technology="fefet_45nm", baseline_technology="fefet_45nm")
    for name in ("llos", "lcs_micro"):
        c = run_one(own, name).comparison
        print(f"  {name:<12} {c['energy_improvement']:.3f}x")


if __name__ == "__main__":
    main()
