"""Command-line entry point: ``pmechaos <subcommand> [--config PATH] [--out DIR] ...``.

Exit status is 0 only when every gated acceptance band of the requested
study passes; 1 when a band fails or a branch aborted; 2 for invalid
configuration; 3 when a report finds missing or altered artifacts.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, IntegrityError
from .experiments import default_config, load_config, report, run_study

__all__ = ["main"]

SUBCOMMANDS = {
    "verify-kernels": ("kernel_verify", None),
    "solve-pde": ("pde_eta_sweep", "solve_pde"),
    "sweep-eta": ("pde_eta_sweep", None),
    "sweep-n": ("chaos_n_sweep", None),
    "coulomb": ("coulomb_deviation", None),
    "lln": ("lln_study", None),
}


def _parser():
    p = argparse.ArgumentParser(prog="pmechaos", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (study, _) in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=f"run the {study} study")
        s.add_argument("--config", help="TOML configuration (defaults to the acceptance-scale settings)")
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, help="master seed, unsigned 64-bit")
        s.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        s.add_argument("--dry-run", action="store_true", help="validate and print the materialized configuration")
    r = sub.add_parser("report", help="summarize a finished run")
    r.add_argument("run", help="run directory or manifest.json")
    return p


def _config(args, study):
    overrides = {"master_seed": args.seed, "output_dir": args.out}
    if args.config:
        cfg = load_config(args.config, **overrides)
        if cfg.study != study:
            raise ConfigurationError(f"config is for study {cfg.study!r}, but this subcommand runs {study!r}")
        return cfg
    return default_config(study, **{k: v for k, v in overrides.items() if v is not None})


def _plan(cfg):
    lines = [f"# study {cfg.study}, config hash {cfg.config_hash()[:12]}"]
    for n in cfg.n_list:
        lines.append(f"# N={n}: eta={cfg.eta(n):.6g}, replicas={cfg.replicas}")
    for eta in cfg.eta_list:
        lines.append(f"# eta={eta:g}")
    return "\n".join(lines) + "\n" + cfg.to_toml()


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "report":
        try:
            text, ok = report(args.run)
        except IntegrityError as exc:
            print(f"integrity error: {exc}", file=sys.stderr)
            return 3
        print(text)
        return 0 if ok else 1
    study, body = SUBCOMMANDS[args.command]
    try:
        cfg = _config(args, study)
        if body == "solve_pde":
            cfg = cfg.with_(sensitivity_t=[])
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        print(_plan(cfg), end="")
        return 0
    if args.workers < 1:
        print("configuration error: --workers must be >= 1", file=sys.stderr)
        return 2
    manifest = run_study(cfg, workers=args.workers, body=body)
    text, ok = report(manifest)
    print(text)
    print(f"artifacts in {manifest.out_dir}")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
