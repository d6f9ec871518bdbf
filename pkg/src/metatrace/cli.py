"""Command line: ``metatrace run | sweep | check``.

Settings are layered: built-in defaults, then ``--preset``, then ``--config``
(key=value lines), then explicit flags.  Numbers may be written as ``2^-7``.

Exit status: 0 success, 1 usage error, 2 every run diverged, 3 ``check`` found
a failing oracle.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ExperimentConfig

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3

# flag / config-file key -> ExperimentConfig field
FIELD_FOR = {
    "env": "env",
    "model": "model",
    "tuner": "tuner",
    "normalized": "normalized",
    "alpha0": "alpha0",
    "mu": "mu",
    "gamma": "gamma",
    "lambda": "lam",
    "psi": "psi",
    "episodes": "episodes",
    "seeds": "seeds",
    "drift_rate": "drift_rate",
    "noisy_features": "n_noisy",
    "window": "smoothing_window",
    "bootstrap_timeout": "bootstrap_timeout",
    "hidden": "hidden",
    "activation": "activation",
}
LIST_KEYS = ("alpha0", "mu", "tuner", "drift_rate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_POW = re.compile(r"^\s*([+-]?\d+(?:\.\d*)?)\s*(?:\^|\*\*)\s*([+-]?\d+(?:\.\d*)?)\s*$")


def parse_number(text: str) -> float:
    """Float from plain decimal or ``base^exp`` / ``base**exp`` notation."""
    m = _POW.match(str(text))
    if m:
        return float(m.group(1)) ** float(m.group(2))
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def parse_seeds(text: str) -> tuple[int, ...]:
    """``0,3,5`` or inclusive ranges such as ``0-9``, mixed freely."""
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        try:
            if m:
                lo, hi = int(m.group(1)), int(m.group(2))
                if hi < lo:
                    raise UsageError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    return tuple(seeds)


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    if key in ("env", "model", "tuner", "activation"):
        return str(text).strip()
    if key in ("normalized", "bootstrap_timeout"):
        return parse_bool(text)
    if key == "seeds":
        return parse_seeds(text)
    if key in ("episodes", "noisy_features", "window", "hidden"):
        value = parse_number(text)
        if value != int(value):
            raise UsageError(f"{key} must be an integer, got {text!r}")
        return int(value)
    return parse_number(text)


def _norm_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Raw key=value pairs; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = line.split("=", 1)
        key = _norm_key(key)
        if key not in FIELD_FOR:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _split_list(key: str, text: str) -> list:
    return [_convert(key, part) for part in str(text).split(",") if part.strip()]


def build_settings(args: argparse.Namespace, allow_lists: bool) -> tuple[ExperimentConfig, dict]:
    """Resolve defaults, preset, config file and flags into (base config, grid)."""
    if args.preset:
        base, grid = harness.preset(args.preset)
    else:
        base, grid = ExperimentConfig(), {}
    raw: dict[str, str] = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for key in FIELD_FOR:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    updates = {}
    for key, text in raw.items():
        if isinstance(text, bool):
            updates[FIELD_FOR[key]] = text
            continue
        if key in LIST_KEYS and "," in str(text):
            if not allow_lists:
                raise UsageError(f"--{key.replace('_', '-')} takes a single value here")
            grid[FIELD_FOR[key]] = _split_list(key, text)
            continue
        updates[FIELD_FOR[key]] = _convert(key, text)
        grid.pop(FIELD_FOR[key], None)
    try:
        base = replace(base, **updates)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None
    return base, grid


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--config", metavar="FILE", help="key=value settings file")
    p.add_argument("--env", choices=harness.ENVS)
    p.add_argument("--model", choices=harness.MODELS)
    p.add_argument("--tuner")
    norm = p.add_mutually_exclusive_group()
    norm.add_argument("--normalized", dest="normalized", action="store_const", const=True)
    norm.add_argument("--unnormalized", dest="normalized", action="store_const", const=False)
    p.add_argument("--alpha0")
    p.add_argument("--mu")
    p.add_argument("--gamma")
    p.add_argument("--lambda", dest="lambda")
    p.add_argument("--psi")
    p.add_argument("--episodes")
    p.add_argument("--seeds", help="e.g. 0-9 or 0,2,4")
    p.add_argument("--drift-rate", dest="drift_rate")
    p.add_argument("--noisy-features", dest="noisy_features")
    p.add_argument("--window")
    p.add_argument("--bootstrap-timeout", dest="bootstrap_timeout", action="store_const",
                   const=True)
    p.add_argument("--hidden")
    p.add_argument("--activation", choices=("silu", "dsilu"))
    p.add_argument("--out", metavar="DIR", default="results")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metatrace", description="AC(lambda) with Metatrace step-size tuning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="one configuration, every seed")
    _add_experiment_flags(run)
    sw = sub.add_parser("sweep", help="grid over alpha0 x mu x tuner x drift-rate "
                                       "(comma-separated values)")
    _add_experiment_flags(sw)
    check = sub.add_parser("check", help="run the oracle suite")
    check.add_argument("--quick", action="store_true", help="fewer samples")
    return parser


def _summary(curve: harness.LearningCurve) -> dict:
    cfg = curve.config
    return {
        "name": harness.cell_name(cfg),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "final_return": None if cfg.episodes == 0 else harness.final_return(curve),
        "diverged": {str(k): v for k, v in curve.diverged.items()},
    }


def _all_diverged(cfg: ExperimentConfig, diverged: dict) -> bool:
    return bool(cfg.seeds) and cfg.episodes > 0 and len(diverged) == len(cfg.seeds)


def cmd_run(args) -> int:
    cfg, _ = build_settings(args, allow_lists=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    curve = harness.run_experiment(cfg, jobs=args.jobs)
    name = harness.cell_name(cfg)
    curve.write_csv(out / f"{name}.csv")
    summary = _summary(curve)
    (out / f"{name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    fr = summary["final_return"]
    print(f"{name}: final-100 return {fr if fr is None else round(fr, 2)} "
          f"({time.perf_counter() - t0:.1f}s) -> {out / (name + '.csv')}")
    if _all_diverged(cfg, curve.diverged):
        print("every seed diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    base, grid = build_settings(args, allow_lists=True)
    t0 = time.perf_counter()
    manifest = harness.sweep(base, grid, args.out, jobs=args.jobs)
    for cell in manifest["cells"]:
        fr = cell["final_return"]
        print(f"{cell['name']}: {'nan' if fr is None or math.isnan(fr) else f'{fr:.2f}'}")
    print(f"{len(manifest['cells'])} cells in {time.perf_counter() - t0:.1f}s -> {args.out}")
    cells = manifest["cells"]
    if cells and all(_all_diverged(ExperimentConfig(**{**c["config"],
                                                       "seeds": tuple(c["config"]["seeds"])}),
                                   c["diverged"]) for c in cells):
        print("every run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def run_checks(quick: bool = False) -> list[tuple[str, bool, str]]:
    """Oracle suite: lambda-return identity, gradient checks, h-trace replay."""
    from . import checks

    return checks.run_all(quick=quick)


def cmd_check(args) -> int:
    results = run_checks(args.quick)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_check(args)
    except (UsageError, KeyError) as err:
        print(f"metatrace: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
