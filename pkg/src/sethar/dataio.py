"""Sensor stream ingestion, segmentation, synthesis, and fold planning.

Streams are stored column-wise (timestamp / value / label arrays) for
speed; a window of readings becomes a SparseSegment whose cardinality
varies with how many readings actually arrived during the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyInputError, StratificationError


@dataclass(frozen=True)
class ActivitySpace:
    """Ordered, immutable set of activity names; index order is the label."""

    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if len(self.names) < 2:
            raise ValueError("activity space needs at least 2 activities")
        if len(set(self.names)) != len(self.names):
            raise ValueError("activity names must be unique")
        for name in self.names:
            # names appear in CSV report columns and '|'-joined headers
            if not name or any(ch in name for ch in ",|\n"):
                raise ValueError(f"activity name {name!r} not serializable")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)


@dataclass(frozen=True)
class SensorReading:
    timestamp: float
    channels: np.ndarray


@dataclass
class SensorStream:
    timestamps: np.ndarray   # (T,) seconds, nondecreasing
    values: np.ndarray       # (T, d)
    labels: np.ndarray       # (T,) activity indices
    subject: str
    nominal_rate_hz: float

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.timestamps) == len(self.values) == len(self.labels)):
            raise ValueError("timestamps, values and labels must align")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be nondecreasing")

    def __len__(self):
        return len(self.timestamps)


@dataclass
class SparseSegment:
    """Unordered set of readings inside one window, plus its majority label."""

    timestamps: np.ndarray   # (m,)
    values: np.ndarray       # (m, d)
    window_start: float
    window_len: float
    label: int

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)

    @property
    def cardinality(self):
        return len(self.timestamps)


@dataclass
class NormStats:
    """Per-channel training min/max; channels with max == min are degenerate."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape:
            raise ValueError("mins and maxs must have the same shape")
        if np.any(self.maxs < self.mins):
            raise ValueError("max must be >= min per channel")

    @property
    def degenerate(self):
        return self.maxs == self.mins


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray  # (n,) segment index -> fold index


@dataclass
class CsvSchema:
    """Column mapping for raw CSV streams.

    Columns are names (requires a header row) or zero-based indices.
    time_scale converts raw timestamps to seconds, e.g. 1e-9 for the
    nanosecond stamps some phone datasets use. categorical_channels
    (such as an RFID antenna id) are one-hot encoded over the values
    observed in the file and appended after the numeric channels;
    categorical codes are never fed to the model as raw numbers.
    """

    subject: object
    activity: object
    timestamp: object
    channels: list
    categorical_channels: list = field(default_factory=list)
    has_header: bool = False
    delimiter: str = ","
    time_scale: float = 1.0
    nominal_rate_hz: float = 20.0


@dataclass
class IngestStats:
    rows_read: int = 0
    rows_skipped: int = 0
    n_streams: int = 0
    subjects: list = field(default_factory=list)


def _column_indices(schema, header_fields):
    cols = [schema.subject, schema.activity, schema.timestamp,
            *schema.channels, *schema.categorical_channels]
    if all(isinstance(c, int) for c in cols):
        return cols
    if header_fields is None:
        raise ConfigError("schema uses column names but has_header is false")
    idx = []
    for c in cols:
        if isinstance(c, int):
            idx.append(c)
        elif c in header_fields:
            idx.append(header_fields.index(c))
        else:
            raise ConfigError(f"column {c!r} not found in header")
    return idx


def ingest_csv(path, schema, activities=None):
    """Parse a raw stream CSV into one SensorStream per subject.

    Raw-file quirks are tolerated: a single trailing delimiter is
    stripped, rows with blank fields, bad numbers, wrong field counts,
    negative timestamps, or (when a fixed activity space is given)
    unknown labels are skipped and counted. Readings are sorted by
    timestamp with stable tie order.

    Returns (streams, activity_space, stats). When activities is None
    the space is discovered as the sorted unique labels.
    """
    stats = IngestStats()
    per_subject = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 0
    header_fields = None
    if schema.has_header:
        if not lines:
            raise EmptyInputError(f"{path} is empty")
        header_fields = [f.strip() for f in lines[0].split(schema.delimiter)]
        start = 1
    cols = _column_indices(schema, header_fields)
    sub_i, act_i, ts_i = cols[0], cols[1], cols[2]
    chan_i = cols[3:3 + len(schema.channels)]
    cat_i = cols[3 + len(schema.channels):]
    for raw in lines[start:]:
        line = raw.strip()
        if not line:
            continue
        stats.rows_read += 1
        if line.endswith(schema.delimiter) or line.endswith(";"):
            line = line[:-1]
        fields = [f.strip() for f in line.split(schema.delimiter)]
        if len(fields) <= max(cols) or any(fields[i] == "" for i in cols):
            stats.rows_skipped += 1
            continue
        try:
            ts = float(fields[ts_i]) * schema.time_scale
            chans = [float(fields[i]) for i in chan_i]
        except ValueError:
            stats.rows_skipped += 1
            continue
        if ts < 0 or not np.isfinite(ts) or not all(np.isfinite(c) for c in chans):
            stats.rows_skipped += 1
            continue
        subject, label = fields[sub_i], fields[act_i]
        if activities is not None and label not in activities.names:
            stats.rows_skipped += 1
            continue
        cats = tuple(fields[i] for i in cat_i)
        per_subject.setdefault(subject, []).append((ts, label, chans, cats))
    if not per_subject:
        raise EmptyInputError(f"no valid rows in {path}")
    if cat_i:
        # one-hot vocabularies over the whole file, order fixed by sort
        vocabs = []
        for j in range(len(cat_i)):
            vocabs.append(sorted({row[3][j] for rows in per_subject.values()
                                  for row in rows}))
        for rows in per_subject.values():
            for k, (ts, label, chans, cats) in enumerate(rows):
                onehot = []
                for j, vocab in enumerate(vocabs):
                    onehot.extend(1.0 if cats[j] == v else 0.0 for v in vocab)
                rows[k] = (ts, label, chans + onehot, cats)
    if activities is None:
        seen = sorted({row[1] for rows in per_subject.values() for row in rows})
        if len(seen) < 2:
            raise EmptyInputError(f"need at least 2 activities, found {seen}")
        activities = ActivitySpace(tuple(seen))
    streams = []
    for subject in sorted(per_subject):
        rows = per_subject[subject]
        ts = np.array([r[0] for r in rows])
        order = np.argsort(ts, kind="stable")
        streams.append(SensorStream(
            timestamps=ts[order],
            values=np.array([r[2] for r in rows])[order],
            labels=np.array([activities.index(r[1]) for r in rows])[order],
            subject=subject,
            nominal_rate_hz=schema.nominal_rate_hz,
        ))
    stats.n_streams = len(streams)
    stats.subjects = [s.subject for s in streams]
    return streams, activities, stats


def _values_of(source):
    if isinstance(source, np.ndarray):
        return source
    return source.values


def fit_normalizer(sources):
    """Per-channel min/max over all readings of the given training sources.

    Accepts streams, segments, or bare (n, d) arrays.
    """
    mins = maxs = None
    for src in sources:
        v = _values_of(src)
        if len(v) == 0:
            continue
        lo, hi = v.min(axis=0), v.max(axis=0)
        mins = lo if mins is None else np.minimum(mins, lo)
        maxs = hi if maxs is None else np.maximum(maxs, hi)
    if mins is None:
        raise EmptyInputError("no readings to fit the normalizer on")
    return NormStats(mins=mins, maxs=maxs)


def apply_normalizer(stats, x):
    """Scale to [0, 1] per channel, clipping values outside the training
    range; degenerate channels map to 0.0.

    Accepts a SensorReading or an (..., d) array; returns the same kind.
    """
    if isinstance(x, SensorReading):
        return SensorReading(x.timestamp, apply_normalizer(stats, x.channels))
    v = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != stats.mins.shape[0]:
        raise ValueError(
            f"channel count {v.shape[-1]} does not match stats "
            f"({stats.mins.shape[0]})"
        )
    span = np.where(stats.degenerate, 1.0, stats.maxs - stats.mins)
    out = np.clip((v - stats.mins) / span, 0.0, 1.0)
    out[..., stats.degenerate] = 0.0
    return out


def segment(stream, window_len, stride=None):
    """Slice a stream into fixed-duration windows of variable cardinality.

    Windows tile [t0, t_last] at the given stride (default: the window
    length, i.e. non-overlapping). A reading belongs to a window when
    window_start <= t < window_start + window_len. Each segment's label
    is the modal per-reading annotation, ties broken by lowest activity
    index. Returns (segments, n_empty) where n_empty counts dropped
    zero-cardinality windows.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    stride = window_len if stride is None else stride
    if stride <= 0:
        raise ValueError("stride must be positive")
    if len(stream) == 0:
        return [], 0
    t0, t_last = stream.timestamps[0], stream.timestamps[-1]
    segments, n_empty = [], 0
    k = 0
    while True:
        start = t0 + k * stride
        if start > t_last:
            break
        lo = np.searchsorted(stream.timestamps, start, side="left")
        hi = np.searchsorted(stream.timestamps, start + window_len, side="left")
        if hi == lo:
            n_empty += 1
        else:
            label = int(np.bincount(stream.labels[lo:hi]).argmax())
            segments.append(SparseSegment(
                timestamps=stream.timestamps[lo:hi].copy(),
                values=stream.values[lo:hi].copy(),
                window_start=float(start),
                window_len=float(window_len),
                label=label,
            ))
        k += 1
    return segments, n_empty


def sparsify(seg, drop_rate, seed):
    """Drop round(p * m) readings uniformly at random, keeping at least one.

    Survivors keep their original timestamps and channel values bitwise;
    the same seed reproduces the same surviving index set.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError("drop_rate must lie in [0, 1)")
    m = seg.cardinality
    if m < 1:
        raise EmptyInputError("cannot sparsify an empty segment")
    n_drop = min(int(round(drop_rate * m)), m - 1)
    if n_drop == 0:
        return SparseSegment(seg.timestamps.copy(), seg.values.copy(),
                             seg.window_start, seg.window_len, seg.label)
    rng = np.random.default_rng(seed)
    drop = rng.choice(m, size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(m), drop)
    return SparseSegment(seg.timestamps[keep], seg.values[keep],
                         seg.window_start, seg.window_len, seg.label)


@dataclass
class SyntheticConfig:
    """Generator settings for sparse streams with a semi-Markov activity
    sequence, exponential inter-arrival gaps (floored at 1/rate_hz), and
    per-activity Gaussian channel noise around fixed mean vectors."""

    activities: ActivitySpace
    channel_means: np.ndarray    # (c, d)
    noise_scales: np.ndarray     # (c,)
    mean_gap_s: float
    mean_dwell_s: float
    duration_s: float
    rate_hz: float
    subject: str = "synthetic"

    def __post_init__(self):
        self.channel_means = np.asarray(self.channel_means, dtype=np.float64)
        self.noise_scales = np.asarray(self.noise_scales, dtype=np.float64)
        c = len(self.activities)
        if self.channel_means.shape[0] != c or self.channel_means.ndim != 2:
            raise ConfigError("channel_means must be (n_activities, d)")
        if self.noise_scales.shape != (c,):
            raise ConfigError("noise_scales must have one entry per activity")
        for name, v in (("mean_gap_s", self.mean_gap_s),
                        ("mean_dwell_s", self.mean_dwell_s),
                        ("duration_s", self.duration_s),
                        ("rate_hz", self.rate_hz)):
            if v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")


def _activity_episodes(config, rng):
    """Semi-Markov schedule: (start, end, activity), exponential dwells,
    next activity uniform over the others."""
    c = len(config.activities)
    episodes = []
    t, prev = 0.0, -1
    while t < config.duration_s:
        if prev < 0:
            act = int(rng.integers(c))
        else:
            draw = int(rng.integers(c - 1))
            act = draw + (1 if draw >= prev else 0)
        dwell = rng.exponential(config.mean_dwell_s)
        episodes.append((t, min(t + dwell, config.duration_s), act))
        t += dwell
        prev = act
    return episodes


def synth_sparse_stream(config, seed):
    """Generate one deterministic sparse SensorStream from the config."""
    rng = np.random.default_rng(seed)
    episodes = _activity_episodes(config, rng)
    min_gap = 1.0 / config.rate_hz
    times = []
    t = 0.0
    while True:
        t += max(rng.exponential(config.mean_gap_s), min_gap)
        if t >= config.duration_s:
            break
        times.append(t)
    if not times:
        raise EmptyInputError("duration too short: no readings generated")
    times = np.array(times)
    starts = np.array([e[0] for e in episodes])
    acts = np.array([e[2] for e in episodes], dtype=np.int64)
    labels = acts[np.searchsorted(starts, times, side="right") - 1]
    noise = rng.standard_normal((len(times), config.channel_means.shape[1]))
    values = config.channel_means[labels] + noise * config.noise_scales[labels][:, None]
    return SensorStream(times, values, labels, config.subject, config.rate_hz)


def stratified_folds(segments, k, seed, activities=None):
    """Assign segments to k folds, per class: seeded shuffle then round
    robin, so per-fold class counts stay within +-1 of the proportional
    share."""
    labels = np.array([s.label for s in segments], dtype=np.int64)
    if len(labels) == 0:
        raise EmptyInputError("no segments to fold")
    rng = np.random.default_rng(seed)
    assignments = np.full(len(labels), -1, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            name = activities.names[cls] if activities else str(cls)
            raise StratificationError(
                f"class {name!r} has {len(idx)} segments, needs at least {k}"
            )
        rng.shuffle(idx)
        assignments[idx] = np.arange(len(idx)) % k
    return FoldPlan(k=k, assignments=assignments)


# ---------------------------------------------------------------------------
# Segment archive: CSV with a one-line header declaring d, the nominal
# rate, and the activity space; per segment one "S" row followed by its
# "R" reading rows. Floats use repr so a round trip is bitwise exact.

ARCHIVE_MAGIC = "# sethar-segments v=1"


def write_segments(path, segments, activities, rate_hz):
    if not segments:
        raise EmptyInputError("refusing to write an empty archive")
    d = segments[0].values.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{ARCHIVE_MAGIC} d={d} rate_hz={rate_hz!r} "
                 f"activities={'|'.join(activities.names)}\n")
        for seg in segments:
            fh.write(f"S,{seg.window_start!r},{seg.window_len!r},"
                     f"{seg.label},{seg.cardinality}\n")
            for t, row in zip(seg.timestamps, seg.values):
                vals = ",".join(repr(float(v)) for v in row)
                fh.write(f"R,{float(t)!r},{vals}\n")


def read_segments(path):
    """Inverse of write_segments: (segments, activities, rate_hz)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(ARCHIVE_MAGIC):
        raise ValueError(f"{path} is not a segment archive")
    # activity names may contain spaces, so split them off first
    head, sep, acts = lines[0].partition(" activities=")
    if not sep:
        raise ValueError(f"{path}: archive header lacks the activity space")
    fields = dict(part.split("=", 1)
                  for part in head[len(ARCHIVE_MAGIC):].split())
    d = int(fields["d"])
    rate_hz = float(fields["rate_hz"])
    activities = ActivitySpace(tuple(acts.split("|")))
    segments = []
    i = 1
    while i < len(lines):
        if not lines[i].startswith("S,"):
            raise ValueError(f"{path}:{i + 1}: expected segment row")
        _, ws, wl, label, m = lines[i].split(",")
        m = int(m)
        ts = np.empty(m)
        vals = np.empty((m, d))
        for j in range(m):
            parts = lines[i + 1 + j].split(",")
            if parts[0] != "R" or len(parts) != d + 2:
                raise ValueError(f"{path}:{i + 2 + j}: malformed reading row")
            ts[j] = float(parts[1])
            vals[j] = [float(p) for p in parts[2:]]
        segments.append(SparseSegment(ts, vals, float(ws), float(wl), int(label)))
        i += 1 + m
    if not segments:
        raise EmptyInputError(f"{path} holds no segments")
    return segments, activities, rate_hz
