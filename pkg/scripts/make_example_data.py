"""Write a simulated example dataset and a matching fit config.

Usage::

    python3 scripts/make_example_data.py --out-dir configs
    proxsurv fit --config configs/fit_example.yaml
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from proxsurv.data_model import to_csv
from proxsurv.simulation import SimConfig, simulate_dataset


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", type=Path, default=Path("configs"))
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--beta-u", dest="beta_u", type=float, default=1.0)
    parser.add_argument("--c-u", dest="c_u", type=float, default=1.0)
    parser.add_argument("--ncos", nargs="+", choices=("w1", "w2"), default=["w1"])
    args = parser.parse_args(argv)

    cfg = SimConfig(n=args.n, beta_U=args.beta_u, c_U=args.c_u, seed=args.seed, ncos=args.ncos)
    ds = simulate_dataset(cfg).dataset
    args.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = args.out_dir / "example_data.csv"
    schema, specs = to_csv(ds, csv_path)
    config = {"command": "fit", "input": csv_path.name, "schema": schema,
              "ncos": [s.to_mapping() for s in specs], "ci_level": 0.95, "inference": "sandwich"}
    cfg_path = args.out_dir / "fit_example.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False))
    print(f"wrote {csv_path} and {cfg_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
