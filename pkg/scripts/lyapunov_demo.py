"""Estimate the Lyapunov spectrum on H(pi) for a few permutations.

Usage: python3 scripts/lyapunov_demo.py [--steps 20000] [--seed 6]
"""
import argparse

from rauzylab.cocycle import lyapunov_spectrum
from rauzylab.combinatorics import Permutation, singularity_profile
from rauzylab.rauzy import SimplexSystem

PERMUTATIONS = ["a b / b a", "a b c / c b a", "a b c d / d c b a"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--batches", type=int, default=20)
    ap.add_argument("--seed", type=int, default=6)
    args = ap.parse_args()
    for text in PERMUTATIONS:
        p = Permutation.parse(text)
        genus = singularity_profile(p).genus
        est = lyapunov_spectrum(SimplexSystem.largest(p), args.seed, args.steps, n_batches=args.batches)
        top = est.exponents[0]
        shown = ", ".join(f"{x / top:+.3f}" for x in est.exponents)
        print(f"{text:24s} genus {genus}  theta_1 {top:.4f}  theta_i/theta_1 [{shown}]"
              f"  pairing {'ok' if est.pairing_ok() else 'off'}")


if __name__ == "__main__":
    main()
