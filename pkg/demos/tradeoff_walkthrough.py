"""Privacy-utility walkthrough on an exact one-dimensional instance.

Builds a small toy client, adds increasing Gaussian noise to its update
and prints how the adversary's leakage, the TV distance and the utility
loss move together, followed by the bound checks at each level.

    python demos/tradeoff_walkthrough.py
"""

import numpy as np

from ppfl import evaluate_toy, make_toy_instance
from ppfl.suite import toy_bound_report


def main():
    inst = make_toy_instance(np.random.default_rng(0))
    print(f"unprotected update variance sigma^2 = {inst.sigma_sq:.4g}")
    ratios = (0.0, 0.01, 0.1, 1.0, 10.0)
    print(f"{'noise/sigma^2':>14} {'TV':>8} {'leakage':>9} {'eps_u':>10} {'xi':>7}")
    for r in ratios:
        ev = evaluate_toy(inst, r * inst.sigma_sq)
        print(f"{r:14.3g} {ev.tv:8.4f} {ev.eps_p:9.5f} {ev.eps_u:10.3e} {ev.xi:7.3f}")

    report, _ = toy_bound_report(inst, [r * inst.sigma_sq for r in ratios[1:]], delta=1.0)
    print("\nbound checks (t indexes the noise level):")
    for e in report.entries:
        print(f"  t={e.t} {e.name:22s} lhs={e.lhs: .4e} rhs={e.rhs: .4e} {e.status}")


if __name__ == "__main__":
    main()
