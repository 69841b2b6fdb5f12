"""Command-line entry point.

Examples
--------
::

    implied-impact equilibrium --out results
    implied-impact fit --config my_fit.json --seed 3
    implied-impact reproduce table-fits --out results
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import PRESETS, PROCEDURES, ExperimentConfig, preset_config, run

_DEFAULT_PRESET = {
    "equilibrium": "fig-equilibrium",
    "myopic": "fig-myopic",
    "tim": "fig-tim",
    "implied-price": "fig-implied-price",
    "implied-exec": "rank-law",
    "fit": "table-fits",
    "multiasset": "fig-multiasset",
    "sweep": "theta-sweep",
}


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file: a full experiment config or procedure params")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    p.add_argument("--seed", type=int, default=0, help="seed for multi-start fits (default: 0)")
    p.add_argument("--tol", type=float, default=1e-10, help="tolerance for shape and ratio checks")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="implied-impact",
        description="Market impact game equilibria and implied transient impact kernels.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DEFAULT_PRESET:
        _add_common(sub.add_parser(name, help=f"run the {name} procedure"))
    rep = sub.add_parser("reproduce", help="run a built-in preset")
    rep.add_argument("preset", choices=sorted(PRESETS))
    _add_common(rep)
    sub.add_parser("presets", help="list built-in presets")
    return parser


def _config_for(args):
    if args.command == "reproduce":
        config = preset_config(args.preset, args.seed, str(args.out))
    elif args.config is not None:
        data = json.loads(args.config.read_text())
        if "procedures" in data:
            data.setdefault("seed", args.seed)
            data.setdefault("tol", args.tol)
            config = ExperimentConfig.from_dict(data)
        else:
            proc = "theta-sweep" if args.command == "sweep" else args.command
            config = ExperimentConfig.from_dict(
                {
                    "name": args.config.stem,
                    "procedures": [{"type": proc, "params": data}],
                    "seed": args.seed,
                    "tol": args.tol,
                }
            )
    else:
        config = preset_config(_DEFAULT_PRESET[args.command], args.seed, str(args.out))
    config.tol = args.tol
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "presets":
        for name in sorted(PRESETS):
            kinds = ", ".join(p["type"] for p in PRESETS[name])
            print(f"{name:22s} {kinds}")
        return 0
    config = _config_for(args)
    bundle = run(config, args.out)
    print(f"wrote {len(bundle.outputs)} files; manifest: {bundle.manifest}")
    for label, msg in bundle.errors.items():
        print(f"error in {label}: {msg}", file=sys.stderr)
    return 0 if bundle.ok else 1


if __name__ == "__main__":
    sys.exit(main())
