"""Single-head self-attention, optionally extended with banked keys/values."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .tensor_core import as_matrix, concat_rows, row_softmax


def _check_qkv(q, k, v):
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")


def attention_weights(q, k, v, k_fb=None, v_fb=None) -> np.ndarray:
    """Row-stochastic ``n x (n + m)`` weights over the current and banked keys."""
    q, k, v = as_matrix(q), as_matrix(k), as_matrix(v)
    _check_qkv(q, k, v)
    keys = k if k_fb is None else concat_rows(k, k_fb)
    d = q.shape[1]
    return row_softmax(q @ keys.T, 1.0 / np.sqrt(d))


def extended_attention(q, k, v, k_fb=None, v_fb=None) -> np.ndarray:
    """softmax(Q [K; K_fb]^T / sqrt(d)) [V; V_fb].

    With an empty or missing bank this is ordinary self-attention.
    """
    q, k, v = as_matrix(q), as_matrix(k), as_matrix(v)
    _check_qkv(q, k, v)
    if k_fb is None and v_fb is None:
        return self_attention(q, k, v)
    k_fb, v_fb = as_matrix(k_fb), as_matrix(v_fb)
    if k_fb.shape != v_fb.shape or k_fb.shape[1] != k.shape[1]:
        raise ShapeError(f"bank K/V {k_fb.shape}, {v_fb.shape} do not fit dim {k.shape[1]}")
    if k_fb.shape[0] == 0:
        return self_attention(q, k, v)
    w = attention_weights(q, k, v, k_fb, v_fb)
    return w @ concat_rows(v, v_fb)


def self_attention(q, k, v) -> np.ndarray:
    q, k, v = as_matrix(q), as_matrix(k), as_matrix(v)
    _check_qkv(q, k, v)
    return row_softmax(q @ k.T, 1.0 / np.sqrt(q.shape[1])) @ v


def attention_heatmap(q_row, k_past) -> np.ndarray:
    """Raw dot product of one query against every past key."""
    q_row = np.asarray(q_row, dtype=np.float32).reshape(-1)
    k_past = as_matrix(k_past)
    if k_past.shape[1] != q_row.shape[0]:
        raise ShapeError(f"query dim {q_row.shape[0]} vs keys {k_past.shape}")
    return k_past @ q_row


def write_heatmap_csv(path, q, k_past, queries=None) -> Path:
    """Rows of (query_token, past_token, score) for the selected query tokens."""
    q = as_matrix(q)
    queries = range(q.shape[0]) if queries is None else queries
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_token", "past_token", "score"])
        for i in queries:
            for j, s in enumerate(attention_heatmap(q[i], k_past)):
                w.writerow([i, j, repr(float(s))])
    return path
