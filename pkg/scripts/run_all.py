"""Run every shipped config, then fit local orders for the strongly convex runs.

Usage: python3 scripts/run_all.py [output_root]
"""

import os
import sys
import time

from oefnewton.bench import load_config, rates_table, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "..", "results")
    code = 0
    for name in sorted(os.listdir(os.path.join(HERE, "configs"))):
        cfg = load_config(os.path.join(HERE, "configs", name))
        t0 = time.perf_counter()
        rc, summaries = run_experiment(cfg, out_root=out, jobs=min(4, len(cfg.seeds)))
        iters = [s["iterations"] for s in summaries]
        print(f"{name}: exit {rc}, iterations {iters}, {time.perf_counter() - t0:.1f}s")
        code = max(code, rc)
        if cfg.solver == "sc":
            _, median = rates_table(os.path.join(out, cfg.output_dir))
            print(f"  median fitted order {median:.3f}" if median is not None else "  fitted order N/A")
    return code


if __name__ == "__main__":
    sys.exit(main())
