"""Command line interface.

Every subcommand reads its settings from an optional flat ``key = value``
file (``--config``) and then from command-line flags, which take
precedence.  Unknown keys are rejected before any work starts.  Data go to
files in ``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import EmConfig, fit as em_fit
from .exceptions import ZigHmmError
from .inference import decode_subject, pack
from .params import MixtureHmmParams, parameter_count
from .selection import (
    adjusted_rand_index,
    bic,
    classification_entropy,
    marginal_cutoffs,
    select_components,
    write_selection_csv,
)
from .sequences import parse_long_csv, segment_all, validate_gap_assumption, write_long_csv
from .simulate import (
    CASES,
    MISSINGNESS,
    ScenarioSpec,
    convergence_experiment,
    misclassification_experiment,
    simulate,
    write_convergence_csv,
    write_curve_csv,
)

logger = logging.getLogger("zigmhmm")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text) -> list[int]:
    """``"1,2,5"`` or an inclusive range ``"1-4"``; ranges take an optional step ``"10-100:10"``."""
    text = str(text).strip()
    if "-" in text and "," not in text:
        span, _, step = text.partition(":")
        lo, hi = (int(p) for p in span.split("-"))
        return list(range(lo, hi + 1, int(step) if step else 1))
    return [int(p) for p in text.split(",") if p.strip()]


def _str_list(text) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def _cells(text) -> list[tuple]:
    """``"100x500:none,10x100:mcar1"`` -> [(100, 500, "none"), (10, 100, "mcar1")]."""
    out = []
    for item in _str_list(text):
        size, _, miss = item.partition(":")
        n, T = (int(p) for p in size.lower().split("x"))
        miss = miss or "none"
        if miss not in MISSINGNESS:
            raise ValueError(f"unknown missingness {miss!r}")
        out.append((n, T, miss))
    return out


@dataclass(frozen=True)
class Key:
    convert: object
    default: object
    help: str


COMMON = {
    "out": Key(str, ".", "output directory"),
    "seed": Key(int, 0, "random seed"),
    "threads": Key(int, 1, "worker threads"),
}
EM_KEYS = {
    "max_iter": Key(int, 500, "EM iteration cap"),
    "rel_tol": Key(float, 1e-8, "relative log-likelihood tolerance"),
    "restarts": Key(int, 50, "random restarts"),
    "stationary_init": Key(_bool, True, "tie initial laws to stationary laws"),
}
DATA_KEYS = {
    "data": Key(str, None, "long-format CSV (subject_id,t,value)"),
    "min_gap": Key(int, 1, "gaps shorter than this are flagged"),
}

COMMANDS = {
    "simulate": {
        **COMMON,
        "case": Key(str, "medium_hard", f"one of {', '.join(CASES)}"),
        "n": Key(int, 100, "subjects"),
        "T": Key(int, 500, "last time index (T + 1 values per subject)"),
        "missingness": Key(str, "none", f"one of {', '.join(MISSINGNESS)}"),
    },
    "fit": {
        **COMMON,
        **DATA_KEYS,
        **EM_KEYS,
        "K": Key(int, 2, "classes"),
        "M": Key(int, 2, "hidden states"),
        "eta": Key(float, 5e-4, "total-variation target of the gap check"),
        "truth": Key(str, None, "optional truth_z.csv for an ARI"),
    },
    "select": {
        **COMMON,
        **DATA_KEYS,
        **EM_KEYS,
        "K_range": Key(_int_list, [1, 2, 3, 4], "classes to try, e.g. 1-4 or 1,2,5"),
        "M": Key(int, 2, "hidden states"),
    },
    "decode": {
        **COMMON,
        **DATA_KEYS,
        "model": Key(str, None, "fitted model JSON"),
    },
    "cutoffs": {
        **COMMON,
        "model": Key(str, None, "fitted model JSON"),
        "weights": Key(str, "uniform", "state weights: uniform or marginal"),
    },
    "experiment": {
        **COMMON,
        **EM_KEYS,
        "kind": Key(str, "curves", "curves or convergence"),
        "cases": Key(_str_list, list(CASES), "cases for the curves"),
        "case": Key(str, "medium_hard", "case for the convergence table"),
        "T_grid": Key(_int_list, list(range(10, 101, 10)), "sequence lengths for the curves"),
        "replicates": Key(int, 1000, "replicates per point or cell"),
        "cells": Key(_cells, [(100, 500, "none"), (10, 100, "none")], "n x T : missingness cells"),
    },
}
REQUIRED = {"fit": ("data",), "select": ("data",), "decode": ("data", "model"), "cutoffs": ("model",)}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ZigHmmError(f"{path}, line {lineno}: expected key = value")
            out[key.strip()] = value.strip()
    return out


def resolve_config(command: str, file_values: dict, overrides: dict) -> dict:
    """Merge defaults, file values and flags; convert and check every key."""
    keys = COMMANDS[command]
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise ZigHmmError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for name, key in keys.items():
        raw = overrides.get(name)
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            cfg[name] = key.default
            continue
        try:
            cfg[name] = key.convert(raw)
        except ValueError as exc:
            raise ZigHmmError(f"bad value for {name}: {exc}") from None
    missing = [k for k in REQUIRED.get(command, ()) if cfg.get(k) is None]
    if missing:
        raise ZigHmmError(f"missing required key(s): {', '.join(missing)}")
    if cfg["threads"] < 1:
        raise ZigHmmError("threads must be >= 1")
    return cfg


def _em_config(cfg) -> EmConfig:
    return EmConfig(
        max_iter=cfg["max_iter"],
        rel_tol=cfg["rel_tol"],
        restarts=cfg["restarts"],
        seed=cfg["seed"],
        stationary_init=cfg["stationary_init"],
        n_jobs=cfg["threads"],
    )


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_subjects(cfg):
    return segment_all(parse_long_csv(cfg["data"]), cfg["min_gap"])


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _r(x) -> str:
    return repr(float(x))


# commands ----------------------------------------------------------------------


def cmd_simulate(cfg) -> None:
    """Simulate a named design; writes data.csv and the true classes and states."""
    spec = ScenarioSpec(cfg["case"], cfg["n"], cfg["T"], cfg["missingness"], 1, cfg["seed"])
    data = simulate(spec)
    out = _out_dir(cfg)
    write_long_csv(data.series(), out / "data.csv")
    ids = data.subject_ids()
    _write_rows(out / "truth_z.csv", ("subject_id", "z"), [(sid, int(z) + 1) for sid, z in zip(ids, data.z)])
    _write_rows(
        out / "truth_x.csv",
        ("subject_id", "t", "x"),
        [(sid, t, int(x) + 1) for sid, row in zip(ids, data.x) for t, x in enumerate(row)],
    )
    logger.info("wrote %d subjects to %s", data.n, out)


def _read_truth(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"subject_id", "z"} <= set(reader.fieldnames):
            raise ZigHmmError(f"{path}: expected columns subject_id,z")
        return {row["subject_id"]: int(row["z"]) for row in reader}


def cmd_fit(cfg) -> None:
    """Fit a mixture for fixed K and M; writes model.json, report.json and tau.csv."""
    subjects = _load_subjects(cfg)
    data = pack(subjects)
    result = em_fit(data, cfg["K"], cfg["M"], _em_config(cfg))
    gap = validate_gap_assumption(subjects, result.params, cfg["eta"])
    ids = data.subject_ids
    b = bic(result)
    entropy = classification_entropy(result.tau)
    report = {
        "model": result.params.to_dict(),
        "loglik": result.loglik,
        "nu_K": parameter_count(result.K, result.M),
        "n_observations": result.n_observations,
        "n_subjects": len(ids),
        "bic": b,
        "icl": b + entropy,
        "entropy": entropy,
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "restart_index": result.restart_index,
        "n_degenerate_restarts": result.n_degenerate,
        "partition": {sid: int(k) + 1 for sid, k in zip(ids, result.partition)},
        "gap_validity": gap.to_dict(),
    }
    if cfg["truth"]:
        truth = _read_truth(cfg["truth"])
        absent = [sid for sid in ids if sid not in truth]
        if absent:
            raise ZigHmmError(f"truth file lacks subject(s) {', '.join(absent[:5])}")
        report["partition_ari"] = adjusted_rand_index([truth[s] for s in ids], result.partition)
    out = _out_dir(cfg)
    result.params.save(out / "model.json")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    header = ("subject_id",) + tuple(f"tau_{k + 1}" for k in range(result.K))
    _write_rows(out / "tau.csv", header, [(sid, *map(_r, row)) for sid, row in zip(ids, result.tau)])
    logger.info("loglik %.6f, gap check %s", result.loglik, gap.status)
    if not gap.passed:
        logger.warning("gap check failed for class(es) %s", [k + 1 for k in gap.failing_components])


def cmd_select(cfg) -> None:
    """Fit a range of K and tabulate BIC and ICL."""
    subjects = _load_subjects(cfg)
    rows, best, _ = select_components(pack(subjects), cfg["K_range"], cfg["M"], _em_config(cfg))
    out = _out_dir(cfg)
    write_selection_csv(rows, out / "selection.csv")
    with open(out / "selection_best.json", "w", encoding="utf-8") as fh:
        json.dump(best, fh)
        fh.write("\n")
    logger.info("best K: bic=%d icl=%d", best["bic"], best["icl"])


def cmd_decode(cfg) -> None:
    """Viterbi paths, state posteriors and MAP classes under a saved model."""
    params = MixtureHmmParams.load(cfg["model"])
    subjects = _load_subjects(cfg)
    header = ("subject_id", "segment", "t", "map_state") + tuple(f"eta_{h + 1}" for h in range(params.M)) + ("map_class",)
    rows = []
    for subj in subjects:
        dec = decode_subject(subj, params)
        for s, (path, eta, start) in enumerate(zip(dec.paths, dec.eta, dec.starts)):
            for t in range(path.size):
                rows.append((subj.subject_id, s, start + t, int(path[t]) + 1, *map(_r, eta[t]), dec.map_class + 1))
    _write_rows(_out_dir(cfg) / "decode.csv", header, rows)


def cmd_cutoffs(cfg) -> None:
    """Activity intervals where each state is the most probable."""
    params = MixtureHmmParams.load(cfg["model"])
    if cfg["weights"] not in ("uniform", "marginal"):
        raise ZigHmmError("weights must be uniform or marginal")
    cut = marginal_cutoffs(params, cfg["weights"])
    rows = [(_r(lo), _r(hi), s + 1) for lo, hi, s in cut.intervals]
    _write_rows(_out_dir(cfg) / "cutoffs.csv", ("lower", "upper", "state"), rows)
    logger.info("zero is most probable under state %d", cut.zero_state + 1)


def cmd_experiment(cfg) -> None:
    """Misclassification curves or the convergence table."""
    out = _out_dir(cfg)
    if cfg["kind"] == "curves":
        rng = np.random.default_rng(cfg["seed"])
        for case in cfg["cases"]:
            points = misclassification_experiment(case, cfg["T_grid"], cfg["replicates"], rng)
            write_curve_csv(points, out / f"curves_{case}.csv")
    elif cfg["kind"] == "convergence":
        rows = convergence_experiment(cfg["cells"], cfg["case"], cfg["replicates"], _em_config(cfg), cfg["seed"])
        write_convergence_csv(rows, out / "convergence.csv")
    else:
        raise ZigHmmError("kind must be curves or convergence")


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "decode": cmd_decode,
    "cutoffs": cmd_cutoffs,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zigmhmm", description="Mixture of zero-inflated gamma HMMs for activity time series.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, help=HANDLERS[name].__doc__, description=HANDLERS[name].__doc__)
        p.add_argument("--config", help="flat key = value file")
        for key, spec in keys.items():
            default = spec.default if not isinstance(spec.default, list) else ",".join(map(str, spec.default))
            flags = dict.fromkeys([f"--{key.replace('_', '-')}", f"--{key.replace('_', '-').lower()}"])
            p.add_argument(*flags, dest=key, default=None, help=f"{spec.help} (default: {default})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    keys = COMMANDS[args.command]
    overrides = {k: getattr(args, k) for k in keys}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, overrides)
        HANDLERS[args.command](cfg)
    except (ZigHmmError, OSError) as exc:
        print(f"zigmhmm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
