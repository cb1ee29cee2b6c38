#!/usr/bin/env python3
"""Generate a procedural posed-image scene (Blender-style layout) for desk
experiments and tests.

Example:
    python scripts/make_scene.py --out data/spheres50 --train 10 --test 5 \
        --size 50
"""

import argparse

from qnerf.synthetic import make_synthetic_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--train", type=int, default=10)
    parser.add_argument("--test", type=int, default=5)
    parser.add_argument("--size", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--samples", type=int, default=256,
                        help="quadrature samples per ray for the ground truth")
    args = parser.parse_args()
    out = make_synthetic_scene(args.out, n_train=args.train, n_test=args.test,
                               size=args.size, seed=args.seed,
                               n_samples=args.samples)
    print(f"wrote scene to {out}")


if __name__ == "__main__":
    main()
