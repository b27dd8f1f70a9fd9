"""Print the worst equivariance error per activation family and dimension.

    python scripts/equivariance_table.py --trials 1000 --seed 0
"""

import argparse

from equivar_act.harness import DEFAULT_DIMS, equivariance_audit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    report = equivariance_audit(seed=args.seed, dims=DEFAULT_DIMS, trials=args.trials)
    worst = {}
    for case in report["equivariance"]:
        worst.setdefault(case["family"], {})[case["n"]] = case["max_scaled_error"]

    header = f"{'family':48s}" + "".join(f"{'n=' + str(n):>12s}" for n in DEFAULT_DIMS)
    print(header)
    print("-" * len(header))
    for family, row in worst.items():
        print(f"{family:48s}" + "".join(f"{row[n]:12.2e}" for n in DEFAULT_DIMS))
    print()
    print(f"recovery worst: {max(c['max_error'] for c in report['recovery']):.2e}")
    print(f"gate worst:     {max(c['max_scaled_error'] for c in report['gate_invariance']):.2e}")
    print(f"overall: {'PASS' if report['pass'] else 'FAIL'} in {report['runtime_s']:.1f} s")


if __name__ == "__main__":
    main()
