"""Training, evaluation, cross-validation, sweeps, and analysis exports.

Training is plain mini-batch gradient descent with RMSProp and a single
step-drop learning-rate schedule; everything is seeded and runs
single-threaded so a fixed config reproduces parameters bitwise. Report
files are CSV with fixed column order and floats at 9 significant
digits.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as sm
from . import nncore
from .dataio import apply_normalizer, sparsify, stratified_folds
from .errors import ConfigError, TrainingDataError

F9 = "{:.9g}".format


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-4
    lr_drop_factor: float = 0.1
    lr_drop_epoch: int = 100
    total_epochs: int = 150
    weight_decay: float = 1e-4
    alpha: float = 0.99
    epsilon: float = 1e-8
    seed: int = 0
    window_len: float = 2.0
    stride: float = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_drop_epoch < self.total_epochs:
            raise ConfigError("need 0 < lr_drop_epoch < total_epochs")


@dataclass
class ArchConfig:
    phi_widths: tuple = (64, 128, 256)
    rho_widths: tuple = (128, 64)
    baseline_hidden: tuple = (128, 64)


@dataclass
class EvalReport:
    confusion: np.ndarray        # (c, c) counts, rows true, cols predicted
    precision: np.ndarray        # (c,)
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray          # (c,) true count per class
    macro_precision: float
    macro_recall: float
    macro_f1: float
    flagged: tuple               # classes absent from truth and predictions


def report_from_confusion(confusion):
    """Per-class and macro precision/recall/F from a count matrix.

    F is 2PR/(P+R) with the 0/0 case defined as 0; macro metrics are the
    unweighted class means. Classes absent from both truth and
    predictions score 0 and are flagged.
    """
    conf = np.asarray(confusion, dtype=np.int64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError("confusion matrix must be square")
    tp = np.diag(conf).astype(float)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / pr, 0.0)
    flagged = tuple(int(i) for i in
                    np.flatnonzero((support == 0) & (predicted == 0)))
    return EvalReport(
        confusion=conf, precision=precision, recall=recall, f1=f1,
        support=support,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        flagged=flagged,
    )


def evaluate(model, segments):
    """Predict every segment and score against its label."""
    c = len(model.activity_space)
    y_true = np.array([s.label for s in segments], dtype=np.int64)
    y_pred = sm.predict_batch(model, segments)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    return report_from_confusion(confusion)


@dataclass
class TrainResult:
    model: object
    loss_trace: list


def lr_at_epoch(config, epoch):
    """Step schedule: base lr, times lr_drop_factor from lr_drop_epoch on."""
    return config.lr * (config.lr_drop_factor
                        if epoch >= config.lr_drop_epoch else 1.0)


def _require_all_classes(segments, activities):
    present = {s.label for s in segments}
    missing = [activities.names[i] for i in range(len(activities))
               if i not in present]
    if missing:
        raise TrainingDataError(f"classes missing from training data: {missing}")


def train(segments, activities, norm, config, arch=None):
    """Fit a SetModel on labeled sparse segments.

    Per epoch: seeded shuffle, mini-batches of config.batch_size, RMSProp
    steps with L2 decay; the learning rate is multiplied by
    lr_drop_factor from epoch lr_drop_epoch on. Returns the model plus
    the per-epoch mean sample loss, length total_epochs.
    """
    arch = arch or ArchConfig()
    _require_all_classes(segments, activities)
    d = segments[0].values.shape[1]
    init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(2)
    net = sm.build_set_model(
        d, activities, norm,
        phi_widths=tuple(arch.phi_widths), rho_widths=tuple(arch.rho_widths),
        seed=int(init_ss.generate_state(1, dtype=np.uint64)[0]),
    )
    values = [apply_normalizer(norm, s.values) for s in segments]
    labels = np.array([s.label for s in segments], dtype=np.int64)
    params = net.parameters()
    opt = nncore.RmsPropState(lr=config.lr, alpha=config.alpha,
                              epsilon=config.epsilon,
                              weight_decay=config.weight_decay)
    rng = np.random.default_rng(shuffle_ss)
    n = len(segments)
    trace = []
    for epoch in range(config.total_epochs):
        opt.lr = lr_at_epoch(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            flat = np.ascontiguousarray(
                np.concatenate([values[i] for i in batch], axis=0))
            counts = np.array([len(values[i]) for i in batch], dtype=np.int64)
            offsets = np.zeros(len(batch) + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            y = labels[batch]
            caches = sm.batch_forward_cached(net, flat, offsets)
            loss = nncore.nll_loss(caches[3][-1], y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = sm.batch_backward(net, caches, offsets, y)
            nncore.rmsprop_step(opt, params, grads)
            total += loss * len(batch)
        trace.append(total / n)
    return TrainResult(model=net, loss_trace=trace)


def train_baseline(segments, activities, norm, config, window_len,
                   target_rate, interp_kind, hidden=(128, 64)):
    """Fit the interpolate-then-classify baseline with the same optimizer
    and schedule as the set model."""
    _require_all_classes(segments, activities)
    d = segments[0].values.shape[1]
    init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(2)
    baseline = sm.build_dense_baseline(
        d, activities, norm, window_len=window_len, target_rate=target_rate,
        interp_kind=interp_kind, hidden_widths=tuple(hidden),
        seed=int(init_ss.generate_state(1, dtype=np.uint64)[0]),
    )
    from .dataio import SparseSegment
    from .interp import resample
    rows = []
    for s in segments:
        ns = SparseSegment(s.timestamps, apply_normalizer(norm, s.values),
                           s.window_start, s.window_len, s.label)
        rows.append(resample(ns, interp_kind, target_rate).values.reshape(-1))
    x = np.ascontiguousarray(np.stack(rows))
    labels = np.array([s.label for s in segments], dtype=np.int64)
    params = baseline.mlp.parameters()
    opt = nncore.RmsPropState(lr=config.lr, alpha=config.alpha,
                              epsilon=config.epsilon,
                              weight_decay=config.weight_decay)
    rng = np.random.default_rng(shuffle_ss)
    n = len(segments)
    trace = []
    for epoch in range(config.total_epochs):
        opt.lr = lr_at_epoch(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            y = labels[batch]
            acts = nncore.mlp_forward_cached(baseline.mlp, x[batch])
            loss = nncore.nll_loss(acts[-1], y)
            delta = nncore.softmax_nll_delta(acts[-1], y)
            grads, _ = nncore.backprop_from_delta(baseline.mlp, acts, delta)
            nncore.rmsprop_step(opt, params, nncore.flatten_grads(grads))
            total += loss * len(batch)
        trace.append(total / n)
    return TrainResult(model=baseline, loss_trace=trace)


@dataclass
class CvResult:
    fold_reports: list
    fold_norms: list
    mean: dict
    std: dict


def cross_validate(segments, activities, k, config, arch=None):
    """Stratified k-fold CV; the normalizer is fit on training folds only.

    Aggregates are the across-fold mean and population std of the macro
    metrics.
    """
    from .dataio import fit_normalizer
    plan = stratified_folds(segments, k, seed=config.seed,
                            activities=activities)
    fold_seeds = np.random.SeedSequence(config.seed).spawn(k)
    reports, norms = [], []
    for fold in range(k):
        train_segs = [s for s, f in zip(segments, plan.assignments) if f != fold]
        val_segs = [s for s, f in zip(segments, plan.assignments) if f == fold]
        norm = fit_normalizer(train_segs)
        norms.append(norm)
        cfg = replace(config,
                      seed=int(fold_seeds[fold].generate_state(1, dtype=np.uint64)[0]))
        result = train(train_segs, activities, norm, cfg, arch)
        reports.append(evaluate(result.model, val_segs))
    metrics = {
        "precision": [r.macro_precision for r in reports],
        "recall": [r.macro_recall for r in reports],
        "f1": [r.macro_f1 for r in reports],
    }
    return CvResult(
        fold_reports=reports, fold_norms=norms,
        mean={k_: float(np.mean(v)) for k_, v in metrics.items()},
        std={k_: float(np.std(v)) for k_, v in metrics.items()},
    )


@dataclass
class SweepRow:
    pipeline: str            # "set" or "interp_baseline"
    drop_rate: float
    seed: int
    report: EvalReport
    mean_latency_s: float


@dataclass
class SweepResult:
    rows: list
    drop_rates: tuple
    seeds: tuple


def sparsity_sweep(set_model, baseline, segments, drop_rates, seeds):
    """Evaluate both pipelines on sparsified copies of the segments.

    For each (rate, seed) grid point the same sparsified copies feed the
    set model directly and the baseline through interpolation; the
    originals are never mutated. Rate 0 short-circuits to the originals
    so full-data metrics reproduce bitwise.
    """
    rows = []
    for r_idx, rate in enumerate(drop_rates):
        for seed in seeds:
            if rate == 0.0:
                sparsified = segments
            else:
                seg_seeds = np.random.SeedSequence((seed, r_idx)).generate_state(
                    len(segments), dtype=np.uint64)
                sparsified = [sparsify(s, rate, int(ss))
                              for s, ss in zip(segments, seg_seeds)]
            for name, mdl in (("set", set_model),
                              ("interp_baseline", baseline)):
                t0 = time.perf_counter()
                report = evaluate(mdl, sparsified)
                dt = time.perf_counter() - t0
                rows.append(SweepRow(pipeline=name, drop_rate=float(rate),
                                     seed=int(seed), report=report,
                                     mean_latency_s=dt / len(sparsified)))
    return SweepResult(rows=rows, drop_rates=tuple(drop_rates),
                       seeds=tuple(seeds))


@dataclass
class LatencyResult:
    n_segments: int
    repetitions: int
    set_mean_ms: float
    set_std_ms: float
    pipeline_mean_ms: float
    pipeline_std_ms: float
    interp_mean_ms: float
    interp_std_ms: float


def latency_bench(set_model, baseline, segments, repetitions=30, warmup=5):
    """Wall-time per batch for (a) direct set inference and (b) the
    resample-then-classify pipeline, with (b)'s interpolation stage
    sub-timed. Warmup runs are excluded."""
    if repetitions < 30:
        raise ConfigError("need at least 30 timed repetitions")

    def run_set():
        sm.forward_batch(set_model, segments)

    def run_pipeline():
        t0 = time.perf_counter()
        from .dataio import SparseSegment
        from .interp import resample
        flats = []
        for s in segments:
            ns = SparseSegment(s.timestamps,
                               apply_normalizer(baseline.norm, s.values),
                               s.window_start, s.window_len, s.label)
            flats.append(resample(ns, baseline.interp_kind,
                                  baseline.target_rate).values.reshape(-1))
        t1 = time.perf_counter()
        nncore.mlp_forward(baseline.mlp, np.stack(flats))
        t2 = time.perf_counter()
        return t1 - t0, t2 - t0

    for _ in range(warmup):
        run_set()
        run_pipeline()
    set_times, interp_times, total_times = [], [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        run_set()
        set_times.append(time.perf_counter() - t0)
        interp_dt, total_dt = run_pipeline()
        interp_times.append(interp_dt)
        total_times.append(total_dt)
    ms = lambda xs: (float(np.mean(xs) * 1e3), float(np.std(xs) * 1e3))
    set_mean, set_std = ms(set_times)
    tot_mean, tot_std = ms(total_times)
    int_mean, int_std = ms(interp_times)
    return LatencyResult(
        n_segments=len(segments), repetitions=repetitions,
        set_mean_ms=set_mean, set_std_ms=set_std,
        pipeline_mean_ms=tot_mean, pipeline_std_ms=tot_std,
        interp_mean_ms=int_mean, interp_std_ms=int_std,
    )


# --- analysis exports -------------------------------------------------------

def pooled_embeddings(model, segments):
    """(n, z) pooled embeddings plus per-segment argmax rows and preds."""
    flat, offsets = sm.flatten_segments(segments)
    flat = apply_normalizer(model.norm, flat)
    emb = nncore.mlp_forward(model.phi, flat)
    from . import backend
    pooled, argmax = backend.pool_forward(emb, offsets)
    probs = nncore.mlp_forward(model.rho, pooled)
    return pooled, argmax, probs.argmax(axis=1)


def export_embeddings(model, segments, path):
    """CSV of pooled embeddings with true and predicted labels.

    Header line 1 declares z and the activity names; line 2 the columns.
    """
    pooled, _, preds = pooled_embeddings(model, segments)
    names = model.activity_space.names
    z = pooled.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# z={z} activities={','.join(names)}\n")
        fh.write("true_label,pred_label," +
                 ",".join(f"e{j}" for j in range(z)) + "\n")
        for seg, row, pred in zip(segments, pooled, preds):
            fh.write(f"{names[seg.label]},{names[pred]},"
                     + ",".join(F9(v) for v in row) + "\n")


def contributing_density(model, segments):
    """Histogram, per true activity, of how many distinct readings win at
    least one pooled feature. Returns (hist, max_count) where hist maps
    activity name to an array indexed by count-1."""
    _, argmax, _ = pooled_embeddings(model, segments)
    z = argmax.shape[1]
    max_m = max(s.cardinality for s in segments)
    max_count = min(max_m, z)
    hist = {name: np.zeros(max_count, dtype=np.int64)
            for name in model.activity_space.names}
    for seg, row in zip(segments, argmax):
        count = len(np.unique(row))
        hist[model.activity_space.names[seg.label]][count - 1] += 1
    return hist, max_count


# --- report files -----------------------------------------------------------

def write_eval_csv(report, activities, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sethar-eval v=1 activities={'|'.join(activities.names)}\n")
        fh.write("class,precision,recall,f1,support,flagged\n")
        for i, name in enumerate(activities.names):
            fh.write(f"{name},{F9(report.precision[i])},{F9(report.recall[i])},"
                     f"{F9(report.f1[i])},{report.support[i]},"
                     f"{int(i in report.flagged)}\n")
        fh.write(f"macro,{F9(report.macro_precision)},{F9(report.macro_recall)},"
                 f"{F9(report.macro_f1)},{report.support.sum()},0\n")


def write_confusion_csv(report, activities, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sethar-confusion v=1 rows=true cols=pred "
                 f"activities={'|'.join(activities.names)}\n")
        for row in report.confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def write_cv_csv(result, activities, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sethar-cv v=1 folds={len(result.fold_reports)} "
                 f"activities={'|'.join(activities.names)}\n")
        fh.write("fold,macro_precision,macro_recall,macro_f1\n")
        for i, r in enumerate(result.fold_reports):
            fh.write(f"{i},{F9(r.macro_precision)},{F9(r.macro_recall)},"
                     f"{F9(r.macro_f1)}\n")
        fh.write(f"mean,{F9(result.mean['precision'])},"
                 f"{F9(result.mean['recall'])},{F9(result.mean['f1'])}\n")
        fh.write(f"std,{F9(result.std['precision'])},"
                 f"{F9(result.std['recall'])},{F9(result.std['f1'])}\n")


def write_sweep_metrics_csv(sweep, config, interp_kind, path):
    """Deterministic metric rows; latency lives in its own file."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sethar-sweep v=1\n")
        fh.write("pipeline,drop_rate,seed,macro_precision,macro_recall,"
                 "macro_f1,window_len,interp_kind,train_seed\n")
        for row in sweep.rows:
            kind = interp_kind.value if row.pipeline == "interp_baseline" else "none"
            fh.write(f"{row.pipeline},{F9(row.drop_rate)},{row.seed},"
                     f"{F9(row.report.macro_precision)},"
                     f"{F9(row.report.macro_recall)},"
                     f"{F9(row.report.macro_f1)},"
                     f"{F9(config.window_len)},{kind},{config.seed}\n")


def write_sweep_latency_csv(sweep, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sethar-sweep-latency v=1\n")
        fh.write("pipeline,drop_rate,seed,mean_latency_ms\n")
        for row in sweep.rows:
            fh.write(f"{row.pipeline},{F9(row.drop_rate)},{row.seed},"
                     f"{F9(row.mean_latency_s * 1e3)}\n")


def write_latency_csv(result, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sethar-latency v=1 batch={result.n_segments} "
                 f"repetitions={result.repetitions}\n")
        fh.write("stage,mean_ms,std_ms\n")
        fh.write(f"set_direct,{F9(result.set_mean_ms)},{F9(result.set_std_ms)}\n")
        fh.write(f"interp_baseline_total,{F9(result.pipeline_mean_ms)},"
                 f"{F9(result.pipeline_std_ms)}\n")
        fh.write(f"interp_baseline_interp_only,{F9(result.interp_mean_ms)},"
                 f"{F9(result.interp_std_ms)}\n")


def write_density_csv(hist, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sethar-density v=1\n")
        fh.write("activity,contributing_count,segments\n")
        for name, counts in hist.items():
            for c, n in enumerate(counts, start=1):
                fh.write(f"{name},{c},{int(n)}\n")


def write_loss_trace_csv(trace, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sethar-loss v=1\n")
        fh.write("epoch,mean_nll\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{F9(v)}\n")
