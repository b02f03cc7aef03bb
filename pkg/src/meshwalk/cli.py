"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 verification failure,
3 resource refusal.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from .checks import run_checks
from .config import PRESETS, SCHEMA, ConfigError, RunConfig, load_preset, parse_config
from .export import write_csv, write_json
from .runners import run_bands, run_dfs, run_edge, run_evolve, run_master, run_sweep
from .trajectory import ResourceRefusal

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_REFUSED = 0, 1, 2, 3
OUT_ENV = "MESHWALK_OUT"

# used when neither --config nor --preset is given; --set refines it
DEFAULT_DOCUMENT = """
protocol: {theta1: 0.25pi, theta2: 0.25pi, phi: 0, n_sites: 8, boundary: open}
noise: {distribution: gaussian, sigma: 0.2, schedule: stroboscopic, seed: 0}
run: {engine: master, initial: "site:0", n_periods: 20, n_realizations: 100, out: run}
"""

_SECTION_KEYS = {sec: set(keys) for sec, keys in SCHEMA.items()}

RUNNERS = {
    "bands": run_bands,
    "evolve": run_evolve,
    "master": run_master,
    "edge": run_edge,
    "dfs": run_dfs,
    "sweep": run_sweep,
}


def _document(args) -> dict:
    if args.config and args.preset:
        raise ConfigError(["give either --config or --preset, not both"])
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
        if isinstance(doc, dict) and "manifest_version" in doc:
            return doc["config"]
        parse_config(text)          # line-level diagnostics on the original file
        return doc
    if args.preset:
        return load_preset(args.preset).to_dict()
    return yaml.safe_load(DEFAULT_DOCUMENT)


def build_config(args) -> RunConfig:
    doc = _document(args)
    run = doc.setdefault("run", {})
    noise = doc.setdefault("noise", {})
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        section = next((s for s in ("protocol", "noise", "run") if key in _SECTION_KEYS[s]), None)
        if section is None:
            raise ConfigError([f"--set: unknown key {key!r}"])
        doc.setdefault(section, {})[key] = yaml.safe_load(value)
    if args.seed is not None:
        noise["seed"] = args.seed
    if args.realizations is not None:
        run["n_realizations"] = args.realizations
    if args.steps is not None:
        run.pop("n_periods", None)
        run["n_steps"] = args.steps
    return parse_config(yaml.safe_dump(doc, sort_keys=False))


def output_dir(args, cfg: RunConfig | None, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ENV, "meshwalk-out"))
    return root / (cfg.out if cfg is not None else command)


def _verify(args) -> int:
    results = run_checks(workers=args.threads, only=args.only)
    out = output_dir(args, None, "verify")
    write_csv(out / "verify.csv", {
        "id": [r.id for r in results], "name": [r.name for r in results],
        "passed": [r.passed for r in results], "measured": [r.measured for r in results],
        "threshold": [r.threshold for r in results], "detail": [r.detail for r in results]})
    write_json(out / "verify.json", {"checks": [r.__dict__ for r in results],
                                     "passed": all(r.passed for r in results)})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.id:<18} {r.name}  "
              f"(measured {r.measured:.3e}, threshold {r.threshold:.1e})")
    failed = [r.id for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshwalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "bands": "averaged band structure and upper-band FWHM",
        "evolve": "Monte-Carlo ensemble of trajectories",
        "master": "noise-averaged density-matrix propagation",
        "edge": "edge states and their return probability",
        "dfs": "decoherence-free momenta and noise-matrix norms",
        "verify": "run the invariant and oracle suite",
        "sweep": "grid of runs over the config's sweep section",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="YAML run configuration or a manifest.json")
        p.add_argument("--preset", choices=PRESETS, help="shipped figure preset")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--realizations", type=int, help="number of noise realizations")
        p.add_argument("--steps", type=int, help="number of steps (two per period)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<run.out>)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a protocol/noise/run key, e.g. --set phi=0.2pi")
        if name == "verify":
            p.add_argument("--only", action="append", help="run only the named check")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "verify":
            return _verify(args)
        cfg = build_config(args)
        out = output_dir(args, cfg, args.command)
        summary = RUNNERS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceRefusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.command}: wrote {out}")
    for key, value in summary.items():
        if not isinstance(value, dict):
            print(f"  {key}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
