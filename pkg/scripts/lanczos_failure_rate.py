"""Empirical failure rate of the Lanczos eigen estimate on random symmetric matrices.

Usage: python3 scripts/lanczos_failure_rate.py [trials] [n] [eps_h] [delta]
"""

import sys

import numpy as np

from oefnewton.linalg import lanczos_budget, min_eigen


def main():
    trials = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 100
    eps_h = float(sys.argv[3]) if len(sys.argv) > 3 else 0.1
    delta = float(sys.argv[4]) if len(sys.argv) > 4 else 0.05
    fails, used = 0, []
    for s in range(trials):
        rng = np.random.default_rng([8, s])
        B = rng.standard_normal((n, n))
        Q = 0.5 * (B + B.T)
        est = min_eigen(Q, eps_h, delta, seed=[8, s, 1], mode="lanczos")
        fails += est.value - np.linalg.eigvalsh(Q)[0] > eps_h / 2
        used.append(est.matvecs)
    print(f"budget {lanczos_budget(n, eps_h, delta)}, max matvecs used {max(used)}, "
          f"failure rate {fails / trials:.3f} (delta = {delta})")


if __name__ == "__main__":
    main()
