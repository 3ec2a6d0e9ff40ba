"""Direct feature fusion of block outputs with their closest banked token."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import DTYPE, as_matrix, cosine_sim_matrix

MATCH_METRICS = ("cosine", "dot")


@dataclass
class FusionConfig:
    alpha: float = 0.75
    threshold: float = 0.9
    active_blocks: frozenset = field(default_factory=lambda: frozenset({1, 2}))
    match_metric: str = "cosine"

    def __post_init__(self):
        self.active_blocks = frozenset(int(b) for b in self.active_blocks)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.match_metric not in MATCH_METRICS:
            raise ConfigError(f"match_metric must be one of {MATCH_METRICS}")


def should_fuse(block: int, cfg: FusionConfig) -> bool:
    return block in cfg.active_blocks


@dataclass
class FusionMask:
    match: np.ndarray       # best bank row per token, -1 if the bank is empty
    similarity: np.ndarray  # cosine similarity to that row
    fused: np.ndarray       # bool


def fusion_mask(o_t, o_fb, cfg: FusionConfig) -> FusionMask:
    o_t, o_fb = as_matrix(o_t), as_matrix(o_fb)
    if o_fb.shape[1] != o_t.shape[1]:
        raise ShapeError(f"bank outputs {o_fb.shape} vs current {o_t.shape}")
    n = o_t.shape[0]
    if o_fb.shape[0] == 0:
        return FusionMask(np.full(n, -1), np.zeros(n, dtype=DTYPE), np.zeros(n, dtype=bool))
    cos = cosine_sim_matrix(o_t, o_fb)
    scores = cos if cfg.match_metric == "cosine" else o_t @ o_fb.T
    match = np.argmax(scores, axis=1)
    sim = cos[np.arange(n), match]
    # strict: a threshold of 1.0 never fuses
    fused = sim > cfg.threshold
    return FusionMask(match, sim, fused)


def fuse(o_t, o_fb, cfg: FusionConfig, mask: FusionMask | None = None) -> np.ndarray:
    """Blend each gated token toward its matched bank token with strength alpha.

    Masked tokens are copied, never recomputed, so they stay bit-identical.
    """
    o_t = as_matrix(o_t)
    if mask is None:
        mask = fusion_mask(o_t, o_fb, cfg)
    out = o_t.copy()
    if cfg.alpha == 0.0 or not mask.fused.any():
        return out
    o_fb = as_matrix(o_fb)
    rows = np.flatnonzero(mask.fused)
    a = DTYPE(cfg.alpha)
    out[rows] = (DTYPE(1) - a) * o_t[rows] + a * o_fb[mask.match[rows]]
    return out


def write_mask_csv(path, mask: FusionMask) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token", "matched_bank_token", "similarity", "fused"])
        for p, (q, s, f) in enumerate(zip(mask.match, mask.similarity, mask.fused)):
            w.writerow([p, int(q), repr(float(s)), int(f)])
    return path
