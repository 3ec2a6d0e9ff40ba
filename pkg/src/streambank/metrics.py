"""Temporal consistency metrics and a PCA projection for feature inspection."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InsufficientDataError, ShapeError
from .tensor_core import DTYPE, Rng, as_matrix

CSV_COLUMNS = ("arm", "bank", "size", "alpha", "threshold", "interval", "strategy",
               "warp_error", "consec_mse", "attn_logits", "bank_rows", "wall_ms")


def warp_tokens(tokens, grid_shape, patch: int, displacement) -> np.ndarray:
    """Move a token grid by a pixel displacement that is a whole number of patches."""
    dx, dy = displacement
    if dx % patch or dy % patch:
        raise ConfigError(f"displacement ({dx}, {dy}) is not a multiple of patch {patch}")
    gh, gw = grid_shape
    tokens = as_matrix(tokens)
    if tokens.shape[0] != gh * gw:
        raise ShapeError(f"{tokens.shape[0]} tokens do not fill a {gh}x{gw} grid")
    g = tokens.reshape(gh, gw, -1)
    return np.roll(g, (dy // patch, dx // patch), axis=(0, 1)).reshape(gh * gw, -1)


def pair_warp_errors(outputs, displacements, grid_shape, patch: int) -> list[float]:
    """Per-pair MSE between warped frame t and frame t+1 (unscaled).

    ``displacements[t]`` is the motion from frame t-1 into frame t.
    """
    outputs = [as_matrix(o) for o in outputs]
    if len(displacements) != len(outputs):
        raise ShapeError(f"{len(outputs)} outputs vs {len(displacements)} displacements")
    errs = []
    for t in range(len(outputs) - 1):
        warped = warp_tokens(outputs[t], grid_shape, patch, displacements[t + 1])
        diff = warped.astype(np.float64) - outputs[t + 1]
        errs.append(float(np.mean(diff * diff)))
    return errs


def warp_error(outputs, displacements, grid_shape, patch: int) -> float:
    """Mean motion-compensated MSE over consecutive pairs, times 100."""
    errs = pair_warp_errors(outputs, displacements, grid_shape, patch)
    if not errs:
        raise InsufficientDataError("warp error needs at least two frames")
    return 100.0 * float(np.mean(errs))


def consec_mse(outputs) -> float:
    outputs = [as_matrix(o) for o in outputs]
    if len(outputs) < 2:
        raise InsufficientDataError("consecutive MSE needs at least two outputs")
    vals = [np.mean((b.astype(np.float64) - a) ** 2) for a, b in zip(outputs, outputs[1:])]
    return float(np.mean(vals))


@dataclass
class PCA3:
    projection: np.ndarray   # N x 3
    components: np.ndarray   # 3 x d, rows are unit eigenvectors (or zero)
    eigenvalues: np.ndarray  # 3, non-increasing
    mean: np.ndarray
    rank_deficient: bool


def _power_iteration(cov, start, found, max_iter=100, tol=1e-9):
    v = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        for e in found:
            w -= (w @ e) * e
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0, np.zeros_like(v)
        v = w / norm
        new_lam = float(v @ cov @ v)
        if abs(new_lam - lam) < tol:
            lam = new_lam
            break
        lam = new_lam
    return lam, v


def pca3(features, seed: int = 0) -> PCA3:
    """Project rows onto the top three principal axes.

    Axes come from power iteration with Gram-Schmidt deflation on the
    covariance, from seeded start vectors. Each axis is signed so its
    largest-magnitude entry is positive. Missing axes (rank < 3) are zero.
    """
    x = as_matrix(features).astype(np.float64)
    N, d = x.shape
    if N < 3 or d < 3:
        raise ShapeError(f"pca3 needs at least 3 rows and 3 columns, got {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (N - 1)
    scale = max(float(np.trace(cov)), 1e-300)
    rng = Rng(seed)
    found, lams = [], []
    for _ in range(3):
        start = rng.normal(d)
        for e in found:
            start -= (start @ e) * e
        lam, v = _power_iteration(cov, start, found)
        if lam <= 1e-10 * scale:
            lam, v = 0.0, np.zeros(d)
        else:
            v = v if v[np.argmax(np.abs(v))] > 0 else -v
            found.append(v)
        lams.append(lam)
    comps = np.zeros((3, d))
    comps[: len(found)] = found
    lams = np.array(lams)
    order = np.argsort(-lams, kind="stable")
    comps, lams = comps[order], lams[order]
    proj = xc @ comps.T
    return PCA3(proj.astype(DTYPE), comps.astype(DTYPE), lams, mean.astype(DTYPE), len(found) < 3)


@dataclass
class ConsistencyReport:
    arm: str
    warp_error: float
    consec_mse: float
    per_frame: list
    cost: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path


def build_report(arm, outputs, displacements, grid_shape, patch, cost, config=None) -> ConsistencyReport:
    """Report over the real (post warm-up) frames.

    ``per_frame`` has one entry per frame; frame 0 has no predecessor so its
    warp and mse are ``None``.
    """
    errs = pair_warp_errors(outputs, displacements, grid_shape, patch)
    per_frame = [{"t": 0, "warp": None, "mse": None}]
    for t in range(1, len(outputs)):
        mse = float(np.mean((as_matrix(outputs[t]).astype(np.float64) - outputs[t - 1]) ** 2))
        per_frame.append({"t": t, "warp": 100.0 * errs[t - 1], "mse": mse})
    return ConsistencyReport(
        arm=arm,
        warp_error=warp_error(outputs, displacements, grid_shape, patch),
        consec_mse=consec_mse(outputs),
        per_frame=per_frame,
        cost=dict(cost),
        config=dict(config or {}),
    )


def write_csv(path, rows) -> Path:
    """One row per arm with exactly :data:`CSV_COLUMNS`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in CSV_COLUMNS})
    return path
