"""Command-line entry point.

Subcommands: ingest, train, eval, sweep, latency, embed, density. Each
reads a declarative JSON config (flags override config keys, config
overrides defaults), writes its artifacts atomically under the output
directory, and drops a run manifest echoing the fully resolved config so
any run can be replayed byte-for-byte with
``sethar <cmd> --config <out>/manifest_<cmd>.json``.

Exit codes: 0 success, 2 input/config error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, backend, dataio, harness
from . import model as sm
from .dataio import ActivitySpace, CsvSchema, SyntheticConfig
from .errors import ConfigError
from .interp import InterpKind

DEFAULTS = {
    "seed": 0,
    "out": "runs/out",
    "window_len": 2.0,
    "stride": None,
    "data": None,
    "model": None,
    "dataset": {},
    "activities": None,
    "train": {
        "batch_size": 128,
        "lr": 1e-4,
        "lr_drop_factor": 0.1,
        "lr_drop_epoch": 100,
        "total_epochs": 150,
        "weight_decay": 1e-4,
        "alpha": 0.99,
        "epsilon": 1e-8,
    },
    "arch": {
        "phi_widths": [64, 128, 256],
        "rho_widths": [128, 64],
        "baseline_hidden": [128, 64],
    },
    "baseline": {"interp_kind": "linear"},
    "cv": {"folds": 7},
    "sweep": {
        "drop_rates": [0.0, 0.1, 0.25, 0.5, 0.75, 0.9],
        "seeds": [0],
        "holdout_folds": 5,
    },
    "latency": {"repetitions": 30, "warmup": 5, "batch": 128},
}


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path):
    """Read a config file; run manifests are accepted and unwrapped."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "command" in doc and "config" in doc:
        doc = doc["config"]
    return doc


def resolve_config(args):
    cfg = DEFAULTS
    if args.config:
        cfg = _deep_merge(cfg, load_config(args.config))
    for key in ("out", "seed", "data", "model"):
        value = getattr(args, key, None)
        if value is not None:
            cfg = _deep_merge(cfg, {key: value})
    if getattr(args, "csv", None):
        cfg = _deep_merge(cfg, {"dataset": {"csv": {"path": args.csv}}})
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


@contextmanager
def atomic_path(final):
    """Write to a temp file, then rename: no partial artifacts."""
    final = Path(final)
    tmp = final.with_name(final.name + f".tmp{os.getpid()}")
    try:
        yield tmp
        os.replace(tmp, final)
    finally:
        tmp.unlink(missing_ok=True)


def write_json_atomic(doc, path):
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_manifest(cfg, command, out_dir):
    manifest = {
        "command": command,
        "config": cfg,
        "meta": {"package_version": __version__, "kernel_backend": backend.BACKEND},
    }
    write_json_atomic(manifest, out_dir / f"manifest_{command}.json")


def _require(path, what):
    if path is None:
        raise ConfigError(f"{what} path not given (flag or config key)")
    if not Path(path).exists():
        raise ConfigError(f"{what} file not found: {path}")
    return Path(path)


def _train_config(cfg):
    return harness.TrainConfig(seed=cfg["seed"], window_len=cfg["window_len"],
                               stride=cfg["stride"], **cfg["train"])


def _arch_config(cfg):
    return harness.ArchConfig(
        phi_widths=tuple(cfg["arch"]["phi_widths"]),
        rho_widths=tuple(cfg["arch"]["rho_widths"]),
        baseline_hidden=tuple(cfg["arch"]["baseline_hidden"]),
    )


def _interp_kind(cfg):
    try:
        return InterpKind(cfg["baseline"]["interp_kind"])
    except ValueError:
        raise ConfigError(
            f"unknown interp_kind {cfg['baseline']['interp_kind']!r}; pick "
            f"one of {[k.value for k in InterpKind]}") from None


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_archive(cfg):
    path = _require(cfg["data"], "segment archive")
    return dataio.read_segments(path)


# --- commands ---------------------------------------------------------------

def cmd_ingest(cfg):
    dataset = cfg["dataset"]
    sources = [k for k in ("csv", "synthetic") if dataset.get(k)]
    if len(sources) != 1:
        raise ConfigError("dataset must give exactly one of csv | synthetic")
    out = _out_dir(cfg)
    if sources[0] == "csv":
        spec = dataset["csv"]
        path = _require(spec.get("path"), "raw csv")
        schema_keys = {k: v for k, v in spec.items() if k != "path"}
        schema = CsvSchema(**schema_keys)
        activities = (ActivitySpace(tuple(cfg["activities"]))
                      if cfg["activities"] else None)
        streams, activities, stats = dataio.ingest_csv(path, schema, activities)
        rate_hz = schema.nominal_rate_hz
    else:
        spec = dict(dataset["synthetic"])
        spec["activities"] = ActivitySpace(tuple(spec["activities"]))
        synth = SyntheticConfig(**spec)
        streams = [dataio.synth_sparse_stream(synth, seed=cfg["seed"])]
        activities = synth.activities
        stats = dataio.IngestStats(rows_read=len(streams[0]), n_streams=1,
                                   subjects=[synth.subject])
        rate_hz = synth.rate_hz
    segments, n_empty = [], 0
    for stream in streams:
        segs, empty = dataio.segment(stream, cfg["window_len"], cfg["stride"])
        segments.extend(segs)
        n_empty += empty
    if not segments:
        raise ConfigError("ingestion produced zero segments")
    with atomic_path(out / "segments.csv") as tmp:
        dataio.write_segments(tmp, segments, activities, rate_hz)
    cards = np.bincount([s.cardinality for s in segments])
    with atomic_path(out / "ingest_stats.csv") as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("# sethar-ingest-stats v=1\n")
            fh.write("metric,value\n")
            fh.write(f"streams,{stats.n_streams}\n")
            fh.write(f"rows_read,{stats.rows_read}\n")
            fh.write(f"rows_skipped,{stats.rows_skipped}\n")
            fh.write(f"empty_windows,{n_empty}\n")
            fh.write(f"segments,{len(segments)}\n")
            for m, count in enumerate(cards):
                if count:
                    fh.write(f"cardinality_{m},{count}\n")
    write_manifest(cfg, "ingest", out)
    print(f"wrote {len(segments)} segments ({n_empty} empty windows dropped) "
          f"to {out / 'segments.csv'}")
    return 0


def cmd_train(cfg):
    segments, activities, _ = _load_archive(cfg)
    out = _out_dir(cfg)
    norm = dataio.fit_normalizer(segments)
    result = harness.train(segments, activities, norm, _train_config(cfg),
                           _arch_config(cfg))
    with atomic_path(out / "model.json") as tmp:
        sm.save_model(result.model, tmp)
    with atomic_path(out / "loss_trace.csv") as tmp:
        harness.write_loss_trace_csv(result.loss_trace, tmp)
    write_manifest(cfg, "train", out)
    print(f"trained on {len(segments)} segments; final epoch loss "
          f"{result.loss_trace[-1]:.6f}; model at {out / 'model.json'}")
    return 0


def cmd_eval(cfg):
    segments, activities, _ = _load_archive(cfg)
    out = _out_dir(cfg)
    if cfg["model"]:
        model = sm.load_model(_require(cfg["model"], "model"))
        report = harness.evaluate(model, segments)
        with atomic_path(out / "eval_report.csv") as tmp:
            harness.write_eval_csv(report, model.activity_space, tmp)
        with atomic_path(out / "confusion.csv") as tmp:
            harness.write_confusion_csv(report, model.activity_space, tmp)
        write_manifest(cfg, "eval", out)
        print(f"macro F over {len(segments)} segments: {report.macro_f1:.4f}")
    else:
        result = harness.cross_validate(segments, activities,
                                        k=cfg["cv"]["folds"],
                                        config=_train_config(cfg),
                                        arch=_arch_config(cfg))
        with atomic_path(out / "cv_report.csv") as tmp:
            harness.write_cv_csv(result, activities, tmp)
        write_manifest(cfg, "eval", out)
        print(f"{cfg['cv']['folds']}-fold CV macro F: "
              f"{result.mean['f1']:.4f} +- {result.std['f1']:.4f}")
    return 0


def _split_and_train_both(cfg, segments, activities, rate_hz):
    """Stratified holdout: fold 0 evaluates, the rest train both models."""
    folds = cfg["sweep"]["holdout_folds"]
    plan = dataio.stratified_folds(segments, folds, seed=cfg["seed"],
                                   activities=activities)
    train_segs = [s for s, f in zip(segments, plan.assignments) if f != 0]
    held = [s for s, f in zip(segments, plan.assignments) if f == 0]
    norm = dataio.fit_normalizer(train_segs)
    tc, arch = _train_config(cfg), _arch_config(cfg)
    set_model = harness.train(train_segs, activities, norm, tc, arch).model
    baseline = harness.train_baseline(
        train_segs, activities, norm, tc, window_len=cfg["window_len"],
        target_rate=rate_hz, interp_kind=_interp_kind(cfg),
        hidden=arch.baseline_hidden).model
    return set_model, baseline, held


def cmd_sweep(cfg):
    segments, activities, rate_hz = _load_archive(cfg)
    out = _out_dir(cfg)
    set_model, baseline, held = _split_and_train_both(cfg, segments,
                                                      activities, rate_hz)
    sweep = harness.sparsity_sweep(set_model, baseline, held,
                                   cfg["sweep"]["drop_rates"],
                                   cfg["sweep"]["seeds"])
    tc = _train_config(cfg)
    with atomic_path(out / "sweep_metrics.csv") as tmp:
        harness.write_sweep_metrics_csv(sweep, tc, _interp_kind(cfg), tmp)
    with atomic_path(out / "sweep_latency.csv") as tmp:
        harness.write_sweep_latency_csv(sweep, tmp)
    write_manifest(cfg, "sweep", out)
    print(f"swept {len(cfg['sweep']['drop_rates'])} drop rates x "
          f"{len(cfg['sweep']['seeds'])} seeds on {len(held)} held-out "
          f"segments; metrics at {out / 'sweep_metrics.csv'}")
    return 0


def cmd_latency(cfg):
    segments, activities, rate_hz = _load_archive(cfg)
    out = _out_dir(cfg)
    batch = cfg["latency"]["batch"]
    if len(segments) < batch:
        raise ConfigError(f"archive holds {len(segments)} segments, "
                          f"need {batch} for the latency batch")
    rng = np.random.default_rng(cfg["seed"])
    picked = [segments[i] for i in rng.permutation(len(segments))[:batch]]
    norm = dataio.fit_normalizer(segments)
    arch = _arch_config(cfg)
    # timing is weight-independent, so freshly initialized models suffice
    if cfg["model"]:
        set_model = sm.load_model(_require(cfg["model"], "model"))
    else:
        set_model = sm.build_set_model(
            picked[0].values.shape[1], activities, norm,
            phi_widths=arch.phi_widths, rho_widths=arch.rho_widths,
            seed=cfg["seed"])
    baseline = sm.build_dense_baseline(
        picked[0].values.shape[1], activities, norm,
        window_len=cfg["window_len"], target_rate=rate_hz,
        interp_kind=_interp_kind(cfg), hidden_widths=arch.baseline_hidden,
        seed=cfg["seed"])
    result = harness.latency_bench(set_model, baseline, picked,
                                   repetitions=cfg["latency"]["repetitions"],
                                   warmup=cfg["latency"]["warmup"])
    with atomic_path(out / "latency.csv") as tmp:
        harness.write_latency_csv(result, tmp)
    write_manifest(cfg, "latency", out)
    print(f"batch of {batch}: set {result.set_mean_ms:.2f} ms vs "
          f"interp+dense {result.pipeline_mean_ms:.2f} ms "
          f"(interpolation {result.interp_mean_ms:.2f} ms)")
    return 0


def cmd_embed(cfg):
    segments, _, _ = _load_archive(cfg)
    model = sm.load_model(_require(cfg["model"], "model"))
    out = _out_dir(cfg)
    with atomic_path(out / "embeddings.csv") as tmp:
        harness.export_embeddings(model, segments, tmp)
    write_manifest(cfg, "embed", out)
    print(f"exported {len(segments)} pooled embeddings to "
          f"{out / 'embeddings.csv'}")
    return 0


def cmd_density(cfg):
    segments, _, _ = _load_archive(cfg)
    model = sm.load_model(_require(cfg["model"], "model"))
    out = _out_dir(cfg)
    hist, max_count = harness.contributing_density(model, segments)
    with atomic_path(out / "density.csv") as tmp:
        harness.write_density_csv(hist, tmp)
    write_manifest(cfg, "density", out)
    print(f"contributing-sample histogram (counts 1..{max_count}) at "
          f"{out / 'density.csv'}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "latency": cmd_latency,
    "embed": cmd_embed,
    "density": cmd_density,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sethar",
        description="set-based classification of sparse sensor streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "build a segment archive from a CSV or synthetic stream"),
        ("train", "train the set model on a segment archive"),
        ("eval", "evaluate a model file, or cross-validate without one"),
        ("sweep", "sparsification robustness sweep of both pipelines"),
        ("latency", "batch inference latency of both pipelines"),
        ("embed", "export pooled segment embeddings"),
        ("density", "export contributing-sample histograms"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config or a previous manifest")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--data", help="segment archive path")
        p.add_argument("--model", help="model file path")
        if name == "ingest":
            p.add_argument("--csv", help="raw stream CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
