"""Command-line entry point.

Reports are line-delimited JSON: one row per check, then one summary
object. Exit status is 0 when every non-skipped check passes, 1 otherwise,
and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import inspect
import json
import math
import sys
from dataclasses import asdict, dataclass, field

from .permcomb import classes_json
from .verify import CHECKS, SUITES, CheckResult, run_check, run_jobs, thread_count

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class Caps:
    dense_dim: int = 4096
    tuple_budget: int = 500_000_000
    pi_enum: int = 40320

    def validate(self):
        for name, v in asdict(self).items():
            if v <= 0:
                raise ConfigError(f"cap {name} must be positive")


@dataclass
class RunConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    caps: Caps = field(default_factory=Caps)
    output: str | None = None
    csv: str | None = None
    timing: bool = True

    def validate(self):
        if self.experiment not in CHECKS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {', '.join(sorted(CHECKS))}")
        self.caps.validate()
        p = self.params
        n = p.get("n")
        if n is not None and n < 1:
            raise ConfigError("n must be >= 1")
        s, t = p.get("s"), p.get("t")
        if n is not None and s is not None and (s * (t or 1)) > 2**n:
            raise ConfigError(f"st = {s * (t or 1)} exceeds 2^n = {2 ** n}")
        accepted = inspect.signature(CHECKS[self.experiment]).parameters
        unknown = [k for k in p if k not in accepted]
        if unknown:
            raise ConfigError(f"{self.experiment} does not take {', '.join(unknown)}")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def preflight(name: str, params: dict, caps: Caps) -> str | None:
    """Cap violations known before running; reported as an error row for that check."""
    n, s, t = params.get("n"), params.get("s", 1), params.get("t", 1)
    if n is None:
        return None
    N, q = 2**n, s * t
    if name in ("structural", "bounds") and q <= N and math.perm(N, q) > caps.tuple_budget:
        return f"{math.perm(N, q)} tuple visits exceed budget {caps.tuple_budget}"
    dense = name in ("closeness", "mc_agreement", "channel", "mixture")
    if dense and N**q > caps.dense_dim:
        return f"dense dimension {N ** q} exceeds cap {caps.dense_dim}"
    if name == "closeness" and params.get("pi_mode") == "exhaustive" and math.factorial(N) > caps.pi_enum:
        return f"{N}! permutations exceed cap {caps.pi_enum}"
    return None


def _guarded_run(name: str, params: dict, seed: int, caps: Caps) -> CheckResult:
    problem = preflight(name, params, caps)
    if problem:
        return CheckResult(name, dict(params), seed, {"error": f"CapExceeded: {problem}"}, {}, "n/a", "error", 0.0)
    return run_check(name, params, seed)


# -- report writing ----------------------------------------------------------------


def summarize(results: list[CheckResult], **extra) -> dict:
    counts: dict[str, int] = {}
    for r in results:
        counts[r.status] = counts.get(r.status, 0) + 1
    ok = all(r.status in ("pass", "skipped") for r in results)
    return {"summary": {"checks": len(results), "status_counts": dict(sorted(counts.items())),
                        "all_pass": ok, **extra}}


def write_report(results: list[CheckResult], out, timing: bool, **extra) -> dict:
    for r in results:
        out.write(r.to_json(timing) + "\n")
    summary = summarize(results, **extra)
    out.write(json.dumps(summary, sort_keys=True) + "\n")
    out.flush()
    return summary


CSV_FIELDS = ["check", "params", "seed", "regime", "pass", "status", "runtime_ms", "measured", "bound"]


def write_csv(results: list[CheckResult], path: str, timing: bool):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in results:
            row = r.to_row(timing)
            w.writerow({k: json.dumps(row[k], sort_keys=True) if isinstance(row[k], (dict, list)) else row[k]
                        for k in CSV_FIELDS})


def _emit(results, args, timing, **extra) -> int:
    if args.output:
        with open(args.output, "w") as fh:
            summary = write_report(results, fh, timing, **extra)
    else:
        summary = write_report(results, sys.stdout, timing, **extra)
    if args.csv:
        write_csv(results, args.csv, timing)
    return EXIT_OK if summary["summary"]["all_pass"] else EXIT_FAIL


# -- argument parsing -----------------------------------------------------------------

# flag -> (type, check parameter name)
PARAM_FLAGS = {
    "n": (int, "n"), "s": (int, "s"), "t": (int, "t"), "st": (int, "st"), "c": (float, "c"),
    "trials": (int, "trials"), "shots": (int, "shots"), "mode": (str, "mode"), "family": (str, "family"),
    "samples": (int, "samples"), "N": (int, "N"), "q": (int, "q"), "st_max": (int, "st_max"),
    "pi_mode": (str, "pi_mode"), "dense_svd": (str, "dense_svd"), "ns": (str, "ns"),
    "null_reps": (int, "null_reps"), "haar_reps": (int, "haar_reps"),
}


def _add_common(p: argparse.ArgumentParser, params: bool = True):
    p.add_argument("--config", help="INI file; keys in its [run] section mirror the flags")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", "-o", default=None, help="JSONL report path (default stdout)")
    p.add_argument("--csv", default=None, help="also write a CSV projection")
    p.add_argument("--dense-cap", dest="dense_dim", type=int, default=None)
    p.add_argument("--tuple-budget", dest="tuple_budget", type=int, default=None)
    p.add_argument("--pi-enum-cap", dest="pi_enum", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="overrides PRULAB_THREADS")
    if params:
        for flag, (typ, _) in PARAM_FLAGS.items():
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prulab", description="Verification experiments for the phase/permutation construction.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("flatness", help="flatten basis states and count threshold misses")
    _add_common(p)
    p = sub.add_parser("verify", help="run one registered check")
    p.add_argument("check", nargs="?", default=None)
    _add_common(p)
    p.add_argument("--timing", action=argparse.BooleanOptionalAction, default=True)
    p = sub.add_parser("suite", help="run a named suite of checks")
    p.add_argument("name", nargs="?", default=None)
    _add_common(p, params=False)
    p.add_argument("--timing", action=argparse.BooleanOptionalAction, default=False,
                   help="record runtimes (off by default so reports are reproducible byte for byte)")
    p = sub.add_parser("distinguish", help="keyed vs table-random histogram experiment")
    _add_common(p)
    p = sub.add_parser("classes", help="congruence classes of S_st as JSON")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    return ap


def _parse_value(key: str, raw: str):
    if key in PARAM_FLAGS:
        return PARAM_FLAGS[key][0](raw)
    if key in ("seed", "dense_dim", "tuple_budget", "pi_enum", "threads"):
        return int(raw)
    if key == "timing":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw


def load_config(path: str) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep case: N and n are different keys
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    if "run" not in cp:
        raise ConfigError(f"{path} has no [run] section")
    return {k.replace("-", "_"): _parse_value(k.replace("-", "_"), v) for k, v in cp["run"].items()}


def _merge(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        for key, value in load_config(args.config).items():
            if key in ("check", "name", "experiment"):
                key = "check" if args.command == "verify" else "name"
            if getattr(args, key, None) is None:
                setattr(args, key, value)
    return args


def _params_from(args) -> dict:
    out = {}
    for flag, (_, pname) in PARAM_FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "ns":
            v = [int(x) for x in str(v).split(",") if x]
        out[pname] = v
    return out


def _caps_from(args) -> Caps:
    caps = Caps()
    for key in ("dense_dim", "tuple_budget", "pi_enum"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(caps, key, v)
    return caps


def _single(args, experiment: str) -> int:
    params = _params_from(args)
    cfg = RunConfig(experiment, params, args.seed if args.seed is not None else 0, _caps_from(args),
                    args.output, args.csv, getattr(args, "timing", True))
    cfg.validate()
    res = _guarded_run(experiment, params, cfg.seed, cfg.caps)
    return _emit([res], args, cfg.timing, experiment=experiment, seed=cfg.seed)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args = _merge(args)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "classes":
            if args.s < 1 or args.t < 1:
                raise ConfigError("s and t must be positive")
            print(classes_json(args.s, args.t))
            return EXIT_OK
        if args.command == "flatness":
            return _single(args, "flatness")
        if args.command == "distinguish":
            return _single(args, "distinguish")
        if args.command == "verify":
            if not args.check:
                raise ConfigError("verify needs a check name")
            return _single(args, args.check)
        if args.command == "suite":
            if not args.name:
                raise ConfigError("suite needs a name")
            if args.name not in SUITES:
                raise ConfigError(f"unknown suite {args.name!r}; known: {', '.join(sorted(SUITES))}")
            if args.seed is None:
                raise ConfigError("suite runs require --seed")
            caps = _caps_from(args)
            caps.validate()
            threads = args.threads if args.threads is not None else thread_count()
            jobs = SUITES[args.name]
            results = run_jobs(jobs, args.seed, threads) if caps == Caps() else \
                [_guarded_run(n, p, args.seed, caps) for n, p in jobs]
            return _emit(results, args, args.timing, suite=args.name, seed=args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
