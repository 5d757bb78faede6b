"""Regenerate the shipped taxiing surrogate network.

    python scripts/fit_surrogate.py [--seed 0] [--out src/ctreach/data/aats_surrogate.json]
"""

import argparse
from pathlib import Path

from ctreach.controller import save_network, surrogate_path, synthesize_surrogate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=surrogate_path())
    ap.add_argument("--latent-dim", type=int, default=0)
    args = ap.parse_args()
    net, err = synthesize_surrogate(seed=args.seed, latent_dim=args.latent_dim)
    save_network(net, args.out)
    print(f"wrote {args.out}: layers {net.layer_sizes}, max grid error {err:.5f} deg")


if __name__ == "__main__":
    main()
