"""The set network and the dense fixed-grid baseline.

A segment's readings are embedded independently by a shared MLP, pooled
with a feature-wise max (order-free by construction), and classified by
a second MLP ending in softmax. Batches of segments are processed as one
flat reading matrix plus an offsets vector; the ragged pooling runs on
the selected kernel backend. The baseline interpolates each segment onto
a fixed grid and classifies the flattened grid with a plain MLP.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import backend, nncore
from .dataio import ActivitySpace, NormStats, SparseSegment, apply_normalizer
from .errors import DimensionError, EmptyInputError, ModelLoadError
from .interp import InterpKind, resample

MODEL_FORMAT_VERSION = 1


@dataclass
class SetModel:
    phi: nncore.Mlp            # d -> ... -> z, relu throughout
    rho: nncore.Mlp            # z -> ... -> c, relu hiddens, softmax out
    activity_space: ActivitySpace
    norm: NormStats

    def __post_init__(self):
        if self.phi.out_width != self.rho.in_width:
            raise DimensionError("phi output width must match rho input width")
        if self.rho.out_width != len(self.activity_space):
            raise DimensionError("rho output width must match activity count")
        for layer in self.phi.layers:
            if layer.activation != "relu":
                raise ValueError("phi layers must all be relu")

    @property
    def d(self):
        return self.phi.in_width

    @property
    def z(self):
        return self.phi.out_width

    def parameters(self):
        return self.phi.parameters() + self.rho.parameters()


@dataclass
class PoolResult:
    embedding: np.ndarray      # (z,)
    argmax_index: np.ndarray   # (z,) row index of the winning reading


@dataclass
class DenseBaselineModel:
    mlp: nncore.Mlp            # m*d -> ... -> c with softmax
    interp_kind: InterpKind
    target_rate: float
    window_len: float
    activity_space: ActivitySpace
    norm: NormStats

    @property
    def grid_size(self):
        return int(round(self.target_rate * self.window_len))


def build_set_model(d, activities, norm, phi_widths=(64, 128, 256),
                    rho_widths=(128, 64), seed=0):
    """Fresh SetModel; the defaults are the reference architecture and
    are recorded in every saved model."""
    ss = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    phi = nncore.build_mlp([d, *phi_widths], seed=int(ss[0]),
                           final_activation="relu")
    rho = nncore.build_mlp([phi_widths[-1], *rho_widths, len(activities)],
                           seed=int(ss[1]), final_activation="softmax")
    return SetModel(phi=phi, rho=rho, activity_space=activities, norm=norm)


def build_dense_baseline(d, activities, norm, window_len, target_rate,
                         interp_kind=InterpKind.LINEAR,
                         hidden_widths=(128, 64), seed=0):
    m = int(round(target_rate * window_len))
    mlp = nncore.build_mlp([m * d, *hidden_widths, len(activities)],
                           seed=seed, final_activation="softmax")
    return DenseBaselineModel(mlp=mlp, interp_kind=interp_kind,
                              target_rate=target_rate, window_len=window_len,
                              activity_space=activities, norm=norm)


def _check_segment(model, seg):
    if seg.cardinality == 0:
        raise EmptyInputError("segment holds no readings")
    if seg.values.shape[1] != model.norm.mins.shape[0]:
        raise DimensionError(
            f"segment has {seg.values.shape[1]} channels, model expects "
            f"{model.norm.mins.shape[0]}"
        )


def embed_samples(model, seg):
    """Per-reading embeddings, one row per reading.

    The segment is expected to be normalized already; rows are mutually
    independent because phi is shared and has no cross-row state.
    """
    _check_segment(model, seg)
    return nncore.mlp_forward(model.phi, seg.values)


def pool(embeddings):
    """Feature-wise max over rows; ties go to the smallest row index."""
    emb = nncore.as_matrix(embeddings, "embeddings")
    if emb.shape[0] == 0:
        raise EmptyInputError("cannot pool zero embeddings")
    idx = emb.argmax(axis=0)
    return PoolResult(embedding=emb[idx, np.arange(emb.shape[1])],
                      argmax_index=idx.astype(np.int64))


def contributing_count(pool_result, m):
    """Number of distinct readings that won at least one feature."""
    count = len(np.unique(pool_result.argmax_index))
    assert 1 <= count <= m
    return count


def forward(model, seg):
    """Activity probabilities for one sparse segment.

    Normalization happens here, so inference is self-contained given a
    saved model.
    """
    _check_segment(model, seg)
    values = apply_normalizer(model.norm, seg.values)
    emb = nncore.mlp_forward(model.phi, values)
    pooled = pool(emb)
    return nncore.mlp_forward(model.rho, pooled.embedding[None, :])[0]


def predict(model, seg):
    """MAP class index; exact ties resolve to the lowest index."""
    return int(np.argmax(forward(model, seg)))


# --- batched path ----------------------------------------------------------

def flatten_segments(segments):
    """Stack all readings row-wise and record per-segment offsets."""
    if not segments:
        raise EmptyInputError("no segments")
    counts = np.array([s.cardinality for s in segments], dtype=np.int64)
    if np.any(counts == 0):
        raise EmptyInputError("segment holds no readings")
    offsets = np.zeros(len(segments) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.concatenate([s.values for s in segments], axis=0)
    return np.ascontiguousarray(flat), offsets


def forward_batch(model, segments, normalized=False):
    """Probabilities for many segments at once: (n_segments, c)."""
    flat, offsets = flatten_segments(segments)
    if not normalized:
        flat = apply_normalizer(model.norm, flat)
    emb = nncore.mlp_forward(model.phi, flat)
    pooled, _ = backend.pool_forward(emb, offsets)
    return nncore.mlp_forward(model.rho, pooled)


def predict_batch(model, segments):
    if isinstance(model, DenseBaselineModel):
        probs = np.stack([baseline_forward(model, s) for s in segments])
    else:
        probs = forward_batch(model, segments)
    return probs.argmax(axis=1)


def batch_forward_cached(model, flat_normalized, offsets):
    """Forward pass over a flat batch keeping everything backward needs."""
    phi_acts = nncore.mlp_forward_cached(model.phi, flat_normalized)
    pooled, argmax = backend.pool_forward(phi_acts[-1], offsets)
    rho_acts = nncore.mlp_forward_cached(model.rho, pooled)
    return phi_acts, pooled, argmax, rho_acts


def batch_backward(model, caches, offsets, labels):
    """Gradients of the mean NLL for a flat batch.

    Returns flat gradient arrays aligned with model.parameters(). The
    pooled max routes each feature's gradient to the single reading that
    won it.
    """
    phi_acts, _, argmax, rho_acts = caches
    delta = nncore.softmax_nll_delta(rho_acts[-1], labels)
    rho_grads, d_pooled = nncore.backprop_from_delta(model.rho, rho_acts, delta)
    d_emb = backend.pool_backward(d_pooled, argmax, offsets,
                                  phi_acts[-1].shape[0])
    # phi ends in relu; convert the post-activation gradient to pre
    delta_phi = d_emb * (phi_acts[-1] > 0)
    phi_grads, _ = nncore.backprop_from_delta(model.phi, phi_acts, delta_phi)
    return nncore.flatten_grads(phi_grads) + nncore.flatten_grads(rho_grads)


def baseline_forward(baseline, seg):
    """Normalize, interpolate onto the fixed grid, flatten row-major,
    classify."""
    _check_segment(baseline, seg)
    normalized = SparseSegment(seg.timestamps, apply_normalizer(baseline.norm,
                                                                seg.values),
                               seg.window_start, seg.window_len, seg.label)
    dense = resample(normalized, baseline.interp_kind, baseline.target_rate)
    flat = dense.values.reshape(1, -1)
    return nncore.mlp_forward(baseline.mlp, flat)[0]


# --- serialization ---------------------------------------------------------

def _mlp_to_doc(mlp):
    return [
        {
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
            "activation": layer.activation,
        }
        for layer in mlp.layers
    ]


def _mlp_from_doc(doc):
    return nncore.Mlp([
        nncore.DenseLayer(np.array(layer["weights"], dtype=np.float64),
                          np.array(layer["bias"], dtype=np.float64),
                          layer["activation"])
        for layer in doc
    ])


def _digest(payload):
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_model(model, path):
    """Write a self-describing JSON document with a content digest."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "activity_space": list(model.activity_space.names),
        "norm": {"mins": model.norm.mins.tolist(),
                 "maxs": model.norm.maxs.tolist()},
    }
    if isinstance(model, DenseBaselineModel):
        payload.update({
            "kind": "dense_baseline",
            "d": int(model.norm.mins.shape[0]),
            "interp_kind": model.interp_kind.value,
            "target_rate": model.target_rate,
            "window_len": model.window_len,
            "widths": [model.mlp.in_width] + [l.out_width for l in model.mlp.layers],
            "params": {"mlp": _mlp_to_doc(model.mlp)},
        })
    else:
        payload.update({
            "kind": "set_model",
            "d": int(model.d),
            "z": int(model.z),
            "phi_widths": [model.phi.in_width] + [l.out_width for l in model.phi.layers],
            "rho_widths": [model.rho.in_width] + [l.out_width for l in model.rho.layers],
            "params": {"phi": _mlp_to_doc(model.phi),
                       "rho": _mlp_to_doc(model.rho)},
        })
    payload["digest"] = _digest({k: v for k, v in payload.items()})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    """Read a model document back; digest or version trouble raises
    ModelLoadError."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelLoadError(f"{path}: not valid JSON: {exc}") from exc
    if "format_version" not in payload:
        raise ModelLoadError(f"{path}: missing field 'format_version'")
    if payload["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelLoadError(
            f"{path}: format_version {payload['format_version']} not "
            f"supported (expected {MODEL_FORMAT_VERSION})"
        )
    stored = payload.pop("digest", None)
    if stored is None or stored != _digest(payload):
        raise ModelLoadError(f"{path}: content digest mismatch")
    activities = ActivitySpace(tuple(payload["activity_space"]))
    norm = NormStats(np.array(payload["norm"]["mins"]),
                     np.array(payload["norm"]["maxs"]))
    if payload["kind"] == "set_model":
        return SetModel(phi=_mlp_from_doc(payload["params"]["phi"]),
                        rho=_mlp_from_doc(payload["params"]["rho"]),
                        activity_space=activities, norm=norm)
    if payload["kind"] == "dense_baseline":
        return DenseBaselineModel(
            mlp=_mlp_from_doc(payload["params"]["mlp"]),
            interp_kind=InterpKind(payload["interp_kind"]),
            target_rate=payload["target_rate"],
            window_len=payload["window_len"],
            activity_space=activities, norm=norm,
        )
    raise ModelLoadError(f"{path}: unknown model kind {payload['kind']!r}")
