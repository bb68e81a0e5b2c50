"""``prunebench`` command line: gen-data, run, sweep, report.

Exit codes: 0 success, 2 config/usage error, 3 pipeline error, 4 I/O or format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from collections import defaultdict
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from prunebench import __version__, datagen
from prunebench.config import (
    BUNDLED_CONFIG,
    ConfigDocument,
    build_experiment,
    config_hash,
    dataset_spec,
    read_json,
    resolved_dict,
    validate_dataset_section,
    validate_document,
)
from prunebench.errors import ConfigError, DatasetFormatError, PruneBenchError
from prunebench.fleet import (
    SWEEP_COLUMNS,
    ExperimentConfig,
    FleetResult,
    run_grid,
    write_gap_csv,
    write_sweep_csv,
    write_traces,
)
from prunebench.model import flops_per_sample
from prunebench.pruner import write_scores_csv

log = logging.getLogger("prunebench")

EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("PRUNEBENCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)


def _parse_rhos(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("--rhos needs at least one value")
    try:
        rhos = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"--rhos must be comma-separated numbers, got {text!r}")
    for r in rhos:
        if not 0 < r <= 1:
            raise UsageError(f"--rhos values must lie in (0, 1], got {r}")
    return rhos


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"--seed-override must be comma-separated integers, got {text!r}")
    if not seeds or min(seeds) < 0:
        raise UsageError("--seed-override needs non-negative integers")
    return seeds


def _load_config(path, seed_override) -> tuple[ExperimentConfig, ConfigDocument]:
    path = Path(path) if path else BUNDLED_CONFIG
    raw = read_json(path)
    if seed_override is not None and isinstance(raw, dict):
        raw = dict(raw, seeds=_parse_seeds(seed_override))
    doc = validate_document(raw)
    return build_experiment(doc, path.parent), doc


def _write_masks(out_dir: Path, results: list[FleetResult]):
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    for f in results:
        if f.method == "full":
            continue
        for d in f.devices:
            write_scores_csv(mask_dir / f"mask_{d.device_id}_{f.method}_{f.seed}_rho{f.rho:g}.csv",
                             d.scores, d.mask)


def _execute(cfg: ExperimentConfig, doc: ConfigDocument, rhos, out_dir: Path, workers: int, command: str):
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    results = run_grid(cfg, rhos, workers=workers)
    elapsed = time.perf_counter() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    n_rows = write_sweep_csv(out_dir / "sweep.csv", results, cfg.weights)
    write_gap_csv(out_dir / "gap.csv", results)
    traces = write_traces(out_dir, results)
    _write_masks(out_dir, results)
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config_hash": config_hash(doc),
        "config": resolved_dict(doc),
        "rhos": sorted({float(r) for r in rhos}),
        "num_devices": cfg.partition.num_devices,
        "fleet_rows": len(results),
        "sweep_rows": n_rows,
        "flops_per_sample": flops_per_sample(cfg.model, "forward_backward"),
        "comparison_protocol": (
            "importance trains from warm-up parameters on the top-M subset; random and full "
            "train from the same fresh initialisation; scoring FLOPs are reported separately"
        ),
        "started_utc": started,
        "elapsed_s": elapsed,
        "outputs": {"sweep": "sweep.csv", "gap": "gap.csv", "traces": [p.name for p in traces],
                    "masks": "masks/"},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return results


def cmd_gen_data(args) -> int:
    sec = validate_dataset_section(read_json(args.config))
    data = datagen.generate_synthetic(dataset_spec(sec))
    datagen.save_dataset(data, args.out)
    hist = np.bincount(data.labels, minlength=data.num_classes)
    print(f"wrote {len(data)} samples, {data.feature_dim} features, {data.num_classes} classes to {args.out}")
    print("class counts: " + " ".join(str(int(h)) for h in hist))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, doc = _load_config(args.config, args.seed_override)
    _execute(cfg, doc, [cfg.pruning.rho], Path(args.out), args.workers, "run")
    print(f"results written to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    rhos = _parse_rhos(args.rhos)
    cfg, doc = _load_config(args.config, args.seed_override)
    results = _execute(cfg, doc, rhos, Path(args.out), args.workers, "sweep")
    print(f"{len(results)} fleet results written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def load_run(out_dir) -> tuple[dict, list[dict]]:
    out_dir = Path(out_dir)
    try:
        manifest = json.loads((out_dir / "manifest.json").read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}")
    with open(out_dir / "sweep.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise DatasetFormatError(f"sweep.csv header {reader.fieldnames} != {list(SWEEP_COLUMNS)}", offset=0)
        rows = list(reader)
    if len(rows) != manifest.get("sweep_rows"):
        raise DatasetFormatError(
            f"sweep.csv has {len(rows)} data rows, manifest records {manifest.get('sweep_rows')}"
        )
    K = manifest["num_devices"]
    per_group = defaultdict(lambda: [0, 0])
    for i, r in enumerate(rows):
        try:
            key = (float(r["rho"]), r["method"], int(r["seed"]))
            for col in SWEEP_COLUMNS[4:]:
                float(r[col])
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"sweep.csv row {i + 2} is malformed: {exc}")
        per_group[key][0 if r["device"] == "fleet" else 1] += 1
    for key, (n_fleet, n_dev) in per_group.items():
        if n_fleet != 1 or n_dev not in (0, K):
            raise DatasetFormatError(f"group {key} has {n_fleet} fleet rows and {n_dev} device rows")
    return manifest, rows


def build_report(manifest: dict, rows: list[dict]) -> tuple[list[str], list[str]]:
    """Per-(rho, method) summary lines plus any linearity-invariant violations."""
    fleet = [r for r in rows if r["device"] == "fleet"]
    by = defaultdict(list)
    for r in fleet:
        by[(float(r["rho"]), r["method"])].append(r)
    cfg = manifest["config"]
    E = cfg["train"]["epochs"]
    b = cfg["train"]["batch_size"]
    c = manifest["flops_per_sample"]
    K = manifest["num_devices"]
    power = None if cfg.get("device_profiles") else cfg["profile"]["power"]

    full_flops = {}
    for r in fleet:
        if r["method"] == "full":
            full_flops[int(r["seed"])] = float(r["train_flops"])
    if not full_flops:
        for r in fleet:
            if float(r["rho"]) == 1.0:
                full_flops.setdefault(int(r["seed"]), float(r["train_flops"]))

    acc = {(float(r["rho"]), r["method"], int(r["seed"])): float(r["fleet_test_acc"]) for r in fleet}
    lines = [f"{'rho':>5} {'method':<10} {'test_acc':>9} {'gap':>8} {'latency_s':>11} "
             f"{'energy_J':>11} {'ratio':>7}"]
    flags = []
    for (rho, method), group in sorted(by.items()):
        seeds = [int(r["seed"]) for r in group]
        test_acc = np.mean([float(r["fleet_test_acc"]) for r in group])
        lat = np.mean([float(r["latency_s"]) for r in group])
        en = np.mean([float(r["energy_J"]) for r in group])
        gaps = [acc[(rho, "importance", s)] - acc[(rho, "random", s)] for s in seeds
                if (rho, "importance", s) in acc and (rho, "random", s) in acc]
        gap = f"{np.mean(gaps):+.4f}" if method == "importance" and gaps else "-"
        ratios = []
        for r in group:
            s = int(r["seed"])
            if s not in full_flops or full_flops[s] <= 0:
                continue
            ratio = float(r["train_flops"]) / full_flops[s]
            ratios.append(ratio)
            nominal = 1.0 if method == "full" else rho
            slack = K * E * c * b / full_flops[s]
            if abs(ratio - nominal) > slack + 1e-12:
                flags.append(f"rho={rho} {method} seed={s}: cost ratio {ratio:.6f} deviates from "
                             f"{nominal} by more than ceiling slack {slack:.6f}")
            if power is not None:
                lat_r, en_r = float(r["latency_s"]), float(r["energy_J"])
                if abs(en_r - power * lat_r) > 1e-9 * max(en_r, 1e-300):
                    flags.append(f"rho={rho} {method} seed={s}: energy {en_r} != power x latency")
        ratio_s = f"{np.mean(ratios):.4f}" if ratios else "-"
        lines.append(f"{rho:>5.2f} {method:<10} {test_acc:>9.4f} {gap:>8} {lat:>11.4f} {en:>11.4f} {ratio_s:>7}")
    return lines, flags


def cmd_report(args) -> int:
    manifest, rows = load_run(args.out)
    lines, flags = build_report(manifest, rows)
    print("\n".join(lines))
    if flags:
        print("\nlinearity violations:")
        for f in flags:
            print("  " + f)
    else:
        print("\nlinearity invariants: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prunebench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--config", required=True, help="JSON dataset spec")
    g.add_argument("--out", required=True, help="output .pbds path")
    g.set_defaults(func=cmd_gen_data)

    for name, fn, helptext in (("run", cmd_run, "run the configured experiment"),
                               ("sweep", cmd_sweep, "sweep the pruning ratio")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", default=None, help="experiment JSON (default: bundled config)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--workers", type=int, default=1, help="concurrent device pipelines")
        s.add_argument("--seed-override", default=None, help="comma-separated master seeds")
        if name == "sweep":
            s.add_argument("--rhos", required=True, help="comma-separated pruning ratios")
        s.set_defaults(func=fn)

    r = sub.add_parser("report", help="summarise a run directory")
    r.add_argument("--out", required=True, help="run directory containing sweep.csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"prunebench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PruneBenchError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
