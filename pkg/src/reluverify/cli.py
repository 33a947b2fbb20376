"""Command-line entry point.

Exit codes: 0 every row verified, 1 some row falsified, 2 some row unknown,
3 unreadable or invalid input files, 4 oracle enumeration guard exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .bab import BabConfig, Status, run_bab
from .model import (DimensionError, ModelFormatError, NonFiniteError, check_compatible,
                    forward_eval, load_network, load_property, merge_specification)
from .oracle.attack import pgd_attack
from .oracle.lp import GuardExceeded, exact_min

EXIT_VERIFIED, EXIT_FALSIFIED, EXIT_UNKNOWN, EXIT_INPUT, EXIT_GUARD = 0, 1, 2, 3, 4

LOG_FIELDS = ("wall_seconds", "domains_live", "domains_visited", "global_lower", "global_upper")

REPORT_SCHEMA = {
    "type": "object",
    "required": ["mode", "exit_code", "config", "rows"],
    "properties": {
        "mode": {"enum": ["verify", "bound", "attack", "oracle"]},
        "exit_code": {"type": "integer"},
        "config": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["row", "status"],
                "properties": {
                    "row": {"type": "integer"},
                    "status": {"enum": ["Verified", "Falsified", "Unknown"]},
                    "global_lower": {"type": ["number", "string", "null"]},
                    "global_upper": {"type": ["number", "string", "null"]},
                    "counterexample": {"type": ["array", "null"], "items": {"type": "number"}},
                    "argmin": {"type": "array", "items": {"type": "number"}},
                    "counterexample_value": {"type": ["number", "null"]},
                    "counterexample_in_region": {"type": ["boolean", "null"]},
                    "pgd_upper": {"type": ["number", "null"]},
                    "branches": {"type": ["integer", "null"]},
                    "domains_visited": {"type": ["integer", "null"]},
                    "stop_reason": {"type": ["string", "null"]},
                    "wall_seconds": {"type": ["number", "null"]},
                },
            },
        },
    },
}


@dataclass
class RunConfig:
    model: str | None
    property: str | None
    mode: str = "verify"
    batch: int = 8
    delta: float = 1e-6
    eta: int = 10**6
    timeout: float | None = None
    branching: str = "babsr"
    iters: int = 20
    lr_alpha: float = 0.1
    lr_beta: float = 0.05
    decay: float = 0.98
    seed: int = 0
    threads: int = 1
    report: str | None = None
    log: str | None = None

    def bab_config(self, incomplete: bool = False) -> BabConfig:
        return BabConfig(batch=self.batch, delta=self.delta, eta=self.eta, timeout=self.timeout,
                         branching=self.branching, incomplete=incomplete, iters=self.iters,
                         lr_alpha=self.lr_alpha, lr_beta=self.lr_beta, decay=self.decay,
                         seed=self.seed, threads=self.threads)


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _exit_for(statuses) -> int:
    if any(s == Status.FALSIFIED.value for s in statuses):
        return EXIT_FALSIFIED
    if any(s == Status.UNKNOWN.value for s in statuses):
        return EXIT_UNKNOWN
    return EXIT_VERIFIED


def _log_path(base: str | None, row: int, nrows: int):
    if base is None:
        return None
    if nrows == 1:
        return Path(base)
    p = Path(base)
    return p.with_name(f"{p.stem}-row{row}{p.suffix}")


class _CsvLog:
    def __init__(self, path):
        self.fh = open(path, "w", newline="") if path is not None else None
        if self.fh is not None:
            self.writer = csv.writer(self.fh, lineterminator="\n")
            self.writer.writerow(LOG_FIELDS)
            self.fh.flush()

    def __call__(self, row):
        if self.fh is None:
            return
        self.writer.writerow(["" if row[k] is None else repr(row[k]) for k in LOG_FIELDS])
        self.fh.flush()

    def close(self):
        if self.fh is not None:
            self.fh.close()


def _load(cfg: RunConfig):
    if cfg.model is None or cfg.property is None:
        raise ModelFormatError("--model and --property are required for this mode")
    net = load_network(cfg.model)
    prop = load_property(cfg.property)
    check_compatible(net, prop)
    return net, prop


def _rows(net, prop):
    for r in range(len(prop.spec)):
        yield r, merge_specification(net, prop.spec.out_coeffs[r], prop.spec.out_consts[r])


def _bab_rows(cfg: RunConfig, incomplete: bool) -> dict:
    net, prop = _load(cfg)
    region = prop.region
    out = []
    n = len(prop.spec)
    for r, merged in _rows(net, prop):
        log = _CsvLog(_log_path(cfg.log, r, n))
        try:
            v = run_bab(merged, region, cfg.bab_config(incomplete), log=log)
        finally:
            log.close()
        row = {"row": r, "status": v.status.value, "global_lower": _num(v.global_lower),
               "global_upper": _num(v.global_upper), "counterexample": None,
               "counterexample_value": None, "counterexample_in_region": None,
               "branches": v.stats["branches"], "domains_visited": v.stats["domains_visited"],
               "stop_reason": v.stats["stop_reason"], "wall_seconds": v.stats["wall_seconds"]}
        if v.counterexample is not None:
            x = v.counterexample
            row["counterexample"] = [float(t) for t in x]
            row["counterexample_value"] = float(forward_eval(merged, x))
            row["counterexample_in_region"] = bool(region.contains(x, tol=1e-12))
        if incomplete and math.isinf(region.p):
            val, _ = pgd_attack(merged, region, rng=np.random.default_rng(cfg.seed))
            row["pgd_upper"] = float(val)
        out.append(row)
    return {"rows": out}


def cmd_verify(cfg: RunConfig) -> dict:
    return _bab_rows(cfg, incomplete=False)


def cmd_bound(cfg: RunConfig) -> dict:
    return _bab_rows(cfg, incomplete=True)


def cmd_attack(cfg: RunConfig) -> dict:
    net, prop = _load(cfg)
    out = []
    for r, merged in _rows(net, prop):
        val, x = pgd_attack(merged, prop.region, rng=np.random.default_rng(cfg.seed))
        found = val < 0
        out.append({"row": r, "status": Status.FALSIFIED.value if found else Status.UNKNOWN.value,
                    "global_upper": float(val), "argmin": [float(t) for t in x],
                    "counterexample": [float(t) for t in x] if found else None,
                    "counterexample_value": float(val) if found else None})
    return {"rows": out}


def cmd_oracle(cfg: RunConfig) -> dict:
    net, prop = _load(cfg)
    out = []
    for r, merged in _rows(net, prop):
        val, x = exact_min(merged, prop.region)
        status = Status.VERIFIED if val > 0 else Status.FALSIFIED if val < 0 else Status.UNKNOWN
        row = {"row": r, "status": status.value, "global_lower": float(val),
               "global_upper": float(val), "argmin": [float(t) for t in x],
               "counterexample": None, "counterexample_value": None}
        if status is Status.FALSIFIED:
            row["counterexample"] = row["argmin"]
            row["counterexample_value"] = float(forward_eval(merged, x))
        out.append(row)
    return {"rows": out}


def cmd_selftest(cfg: RunConfig) -> int:
    from . import checks

    results = checks.run_all(quick=True)
    for res in results:
        print(res.line())
    return 0 if all(res.passed for res in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reluverify",
                                description="Robustness verification of ReLU networks.")
    p.add_argument("--model", help="network JSON file")
    p.add_argument("--property", help="property JSON file")
    p.add_argument("--mode", choices=["verify", "bound", "attack", "oracle", "selftest"],
                   default="verify")
    p.add_argument("--batch", type=int, default=8, help="domains bounded per iteration")
    p.add_argument("--delta", type=float, default=1e-6, help="stop when upper - lower <= delta")
    p.add_argument("--eta", type=int, default=10**6, help="maximum number of live domains")
    p.add_argument("--timeout", type=float, default=None, help="wall-clock budget per row, seconds")
    p.add_argument("--branching", choices=["babsr", "fsb"], default="babsr")
    p.add_argument("--iters", type=int, default=20, help="ascent iterations per bound")
    p.add_argument("--lr-alpha", type=float, default=0.1)
    p.add_argument("--lr-beta", type=float, default=0.05)
    p.add_argument("--decay", type=float, default=0.98)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $VERIFIER_THREADS or 1)")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--log", help="CSV anytime log (one file per specification row)")
    return p


def _config_from_args(args) -> RunConfig:
    threads = args.threads
    if threads is None:
        env = os.environ.get("VERIFIER_THREADS")
        threads = int(env) if env else 1
    if threads < 1 or args.batch < 1 or args.eta < 1 or args.iters < 0 or args.delta < 0:
        raise ValueError("--threads, --batch and --eta must be >= 1; --iters and --delta >= 0")
    if args.timeout is not None and args.timeout < 0:
        raise ValueError("--timeout must be >= 0")
    return RunConfig(args.model, args.property, args.mode, args.batch, args.delta, args.eta,
                     args.timeout, args.branching, args.iters, args.lr_alpha, args.lr_beta,
                     args.decay, args.seed, threads, args.report, args.log)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if cfg.mode == "selftest":
        return cmd_selftest(cfg)
    handlers = {"verify": cmd_verify, "bound": cmd_bound, "attack": cmd_attack,
                "oracle": cmd_oracle}
    try:
        body = handlers[cfg.mode](cfg)
    except (ModelFormatError, DimensionError, NonFiniteError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GuardExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    code = _exit_for([r["status"] for r in body["rows"]])
    conf = {k: v for k, v in asdict(cfg).items() if k not in ("report", "log")}
    report = {"mode": cfg.mode, "exit_code": code, "config": conf, **body}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if cfg.report:
        Path(cfg.report).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
