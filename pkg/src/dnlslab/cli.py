"""Command-line entry point: ``dnlslab <subcommand> [--config PATH] [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DNLSError
from .experiments import run_scenario, validate_config

SUBCOMMANDS = {
    "soliton": ("soliton_build", "build and cross-check one bound-state profile"),
    "asymptotics": ("asymptotics", "large-frequency asymptotics over a frequency grid"),
    "linear": ("linear_estimates", "resolvent scan and space-time norm surveys"),
    "evolve": ("stability_run", "evolve a perturbed soliton without modulation tracking"),
    "stability": ("stability_run", "perturbed soliton run with tracking and scattering summary"),
    "scattering": ("scattering", "same pipeline, reported as a scattering extraction"),
}

OVERRIDES = (
    ("--omega-star", "omega_star", float),
    ("--epsilon", "epsilon", float),
    ("--T", "T", float),
    ("--dt", "dt", float),
    ("--seed", "seed", int),
    ("--out", "output_dir", str),
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnlslab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="flat JSON config file")
        for flag, dest, typ in OVERRIDES:
            p.add_argument(flag, dest=dest, type=typ, default=None)
    return ap


def load_config(args) -> dict:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON in {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
    scenario = SUBCOMMANDS[args.command][0]
    if raw.get("scenario", scenario) != scenario:
        raise ConfigError("scenario", f"config says {raw['scenario']!r} but subcommand {args.command!r} runs {scenario!r}")
    raw["scenario"] = scenario
    if args.command == "evolve":
        raw.setdefault("track", False)
    for _, dest, _ in OVERRIDES:
        v = getattr(args, dest)
        if v is not None:
            raw[dest] = v
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(load_config(args))
        bundle = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DNLSError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"status": bundle.status, "output_dir": str(bundle.output_dir), "files": sorted(bundle.files)}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
