"""Design-space sweep over three cache hierarchies and two technologies.

The axes live in ``cache_sweep.json`` next to this script; the same file
drives the command line::

    cimeval sweep --config demos/cache_sweep.json

Here the rows are grouped per benchmark so the hierarchy trend is visible.
Per-level energy tables do not rescale with capacity, so differences between
hierarchies come from hit and miss behaviour alone.
"""

from itertools import groupby
from pathlib import Path

from cimeval.runner import RunConfig, sweep


def main() -> None:
    cfg = RunConfig.load(Path(__file__).with_name("cache_sweep.json"))
    rows = sweep(cfg)
    for bench, group in groupby(rows, key=lambda r: r["benchmark"]):
        print(bench)
        for r in group:
            print(f"  {r['config']:<34} {r['technology']:<6} MACR {r['macr']:.3f}  "
                  f"energy {r['energy_improvement']:.3f}x  speedup {r['speedup']:.3f}x")


if __name__ == "__main__":
    main()
