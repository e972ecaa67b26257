"""Export of per-patch channel-query attention scores."""

from __future__ import annotations

import csv
import io

import numpy as np

from .. import numerics as T
from ..errors import ConfigError
from ..sigproc import (MODALITIES, PATCH_LEN, TARGET_FS, MultimodalRecord, PatchGrid,
                       preprocess_record, segment_and_patch)

CSV_HEADER = ("patch", "query", "modality", "score")


def _window_from_record(record, window_s=None, preprocess=True):
    if preprocess:
        record = preprocess_record(record)
    elif record.sample_rate_hz != TARGET_FS:
        raise ConfigError(f"record at {record.sample_rate_hz} Hz needs preprocessing to {TARGET_FS} Hz")
    if window_s is None:
        window_s = (record.n_samples // PATCH_LEN) * PATCH_LEN / TARGET_FS
    return segment_and_patch(record, window_s)[0]


def attention_scores(model, values, meta):
    """Head-averaged cross-attention ``[P, Q, C]`` of one window ``[C, P, 32]``."""
    if not getattr(model, "retain_attn", False):
        raise ConfigError("attention retention is disabled on this model")
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[None]
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            state = model.encode(values, meta)
    finally:
        model.train(was_training)
    attn = np.asarray(state.attn, dtype=np.float64)[0]
    if not np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6):
        raise FloatingPointError("attention rows do not sum to one")
    return attn


def dump_attention(model, record, meta=None, window_s=None, preprocess=True):
    """Rows ``(patch, query, modality, score)``; score is the mean over that modality's channels.

    ``record`` is a :class:`MultimodalRecord` (conditioned, then the first
    window is used), a :class:`PatchGrid`, or a ``[C, P, 32]`` array with ``meta``.
    """
    if not getattr(model, "retain_attn", False):
        raise ConfigError("attention retention is disabled on this model")
    if isinstance(record, MultimodalRecord):
        record = _window_from_record(record, window_s, preprocess)
    if isinstance(record, PatchGrid):
        values, meta = record.values, record.meta
    else:
        values = record
        if meta is None:
            raise ConfigError("channel metadata is required for raw patch arrays")
    attn = attention_scores(model, values, meta)
    mods = [m.modality for m in meta]
    present = [m for m in MODALITIES if m in mods]
    cols = {mod: [i for i, m in enumerate(mods) if m == mod] for mod in present}
    rows = []
    for p in range(attn.shape[0]):
        for q in range(attn.shape[1]):
            for mod in present:
                rows.append((p, q, mod, float(attn[p, q, cols[mod]].mean())))
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p, q, mod, score in rows:
        writer.writerow((p, q, mod, repr(score)))
    return buf.getvalue()


def read_attention_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [(int(p), int(q), mod, float(s)) for p, q, mod, s in reader]


def top_query(rows, modality):
    """Query index with the largest mean score on ``modality`` across patches."""
    totals = {}
    for _, q, mod, score in rows:
        if mod == modality:
            totals[q] = totals.get(q, 0.0) + score
    if not totals:
        raise ValueError(f"no rows for modality {modality!r}")
    return max(sorted(totals), key=lambda q: totals[q])
