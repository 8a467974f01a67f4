"""Geweke joint-distribution test of the sampler, optionally with a planted bug.

    python scripts/geweke.py --sweeps 10000
    python scripts/geweke.py --mutation crt_off_by_one
"""
import argparse

from pgds.validation import MUTATIONS, geweke_test, mutated


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sweeps", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--mutation", choices=sorted(MUTATIONS))
    args = ap.parse_args()
    if args.mutation:
        with mutated(args.mutation):
            res = geweke_test(sweeps=args.sweeps, seed=args.seed, name=args.mutation)
    else:
        res = geweke_test(sweeps=args.sweeps, seed=args.seed)
    for name, z in res.details["z"].items():
        print(f"{name:>16s}  z = {z:+7.2f}")
    print(res.line())


if __name__ == "__main__":
    main()
