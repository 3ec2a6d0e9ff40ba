"""Feature bank of past-frame keys, values and block outputs.

Entries are indexed by ``(step, layer)``. Two update policies exist:

* ``queue``: keep the last ``k`` frames, first in first out.
* ``dyme``: dynamic merging. The incoming frame and the stored frame are
  concatenated, split into equal src/dst halves, and every src token is
  averaged into its most similar dst token. The dst half is the new bank,
  so the stored size never grows past one frame.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import DTYPE, Rng, as_matrix, cosine_sim_matrix, empty, load_matrix, save_matrix

TENSORS = ("K", "V", "O")


class SamplingStrategy(str, enum.Enum):
    RANDOM = "random"
    UNIFORM_GRID = "uniform_grid"
    SPLIT = "split"


@dataclass
class FrameFeatures:
    """Captured K/V/O per (step, layer) for one frame."""

    frame: int
    entries: dict = field(default_factory=dict)  # (step, layer) -> (K, V, O)

    def add(self, step: int, layer: int, k, v, o) -> None:
        k, v, o = as_matrix(k), as_matrix(v), as_matrix(o)
        if not (k.shape == v.shape == o.shape):
            raise ShapeError(f"K/V/O shapes differ: {k.shape}, {v.shape}, {o.shape}")
        self.entries[(step, layer)] = (k, v, o)

    def __iter__(self):
        return iter(sorted(self.entries.items()))


@dataclass
class _Entry:
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    # rows contributed by each stored frame, oldest first (queue only)
    frame_rows: list = field(default_factory=list)

    @property
    def rows(self) -> int:
        return self.k.shape[0]


class FeatureBank:
    """Per-(step, layer) store with a queue or DyMe update policy.

    Args:
        dim: feature width, used for the empty matrices returned before the
            first insertion.
        policy: ``"none"``, ``"queue"`` or ``"dyme"``.
        size: frames kept by the queue; DyMe only supports one frame.
        interval: update only on frames whose index is a multiple of this.
        strategy: src/dst sampling for DyMe.
        seed: seed of the DyMe partition generator.
        share_across_steps: collapse all denoising steps onto one entry per layer.
    """

    def __init__(self, dim: int, policy: str = "dyme", size: int = 1, interval: int = 4,
                 strategy=SamplingStrategy.RANDOM, seed: int = 0, share_across_steps: bool = False):
        if policy not in ("none", "queue", "dyme"):
            raise ConfigError(f"unknown bank policy {policy!r}")
        if interval < 1:
            raise ConfigError("bank update interval must be >= 1")
        if policy == "queue" and size < 1:
            raise ConfigError("queue size must be >= 1")
        if policy == "dyme" and size != 1:
            raise ConfigError("DyMe keeps exactly one frame; use dyme:1")
        self.dim = dim
        self.policy = policy
        self.size = size
        self.interval = interval
        self.strategy = SamplingStrategy(strategy)
        self.seed = seed
        self.share_across_steps = share_across_steps
        self.rng = Rng(seed)
        self.entries: dict[tuple[int, int], _Entry] = {}
        self.updates = 0
        # (step, layer, src_idx, dst_idx, match) of the last DyMe update, for inspection
        self.last_merges: list = []

    def key(self, step: int, layer: int) -> tuple[int, int]:
        return (0 if self.share_across_steps else step, layer)

    def fetch(self, step: int, layer: int):
        """Stored (K_fb, V_fb, O_fb); empty ``0 x dim`` matrices if nothing stored."""
        e = self.entries.get(self.key(step, layer))
        if e is None:
            z = empty(self.dim)
            return z, z, z
        return e.k, e.v, e.o

    def rows(self, step: int, layer: int) -> int:
        e = self.entries.get(self.key(step, layer))
        return 0 if e is None else e.rows

    def max_rows(self) -> int:
        return max((e.rows for e in self.entries.values()), default=0)

    def stored_floats(self) -> int:
        return sum(3 * e.rows * self.dim for e in self.entries.values())

    def _check(self, k) -> None:
        if k.shape[1] != self.dim:
            raise ShapeError(f"feature dim {k.shape[1]} does not match bank dim {self.dim}")

    def queue_update(self, feats: FrameFeatures) -> "FeatureBank":
        if self.policy != "queue":
            raise ConfigError(f"queue_update on a {self.policy} bank")
        # with shared steps a frame's rows from every step form one queue slot
        chunks: dict = {}
        for (step, layer), (k, v, o) in feats:
            self._check(k)
            chunks.setdefault(self.key(step, layer), []).append((k, v, o))
        for key, parts in chunks.items():
            k, v, o = (np.concatenate([p[i] for p in parts]) for i in range(3))
            e = self.entries.get(key)
            if e is None:
                self.entries[key] = _Entry(k, v, o, [k.shape[0]])
                continue
            e.k = np.concatenate([e.k, k])
            e.v = np.concatenate([e.v, v])
            e.o = np.concatenate([e.o, o])
            e.frame_rows.append(k.shape[0])
            while len(e.frame_rows) > self.size:
                drop = e.frame_rows.pop(0)
                e.k, e.v, e.o = e.k[drop:], e.v[drop:], e.o[drop:]
        self.updates += 1
        return self

    def dyme_update(self, feats: FrameFeatures, strategy=None) -> "FeatureBank":
        if self.policy != "dyme":
            raise ConfigError(f"dyme_update on a {self.policy} bank")
        strategy = self.strategy if strategy is None else SamplingStrategy(strategy)
        self.last_merges = []
        for (step, layer), (k, v, o) in feats:
            self._check(k)
            key = self.key(step, layer)
            e = self.entries.get(key)
            if e is None:
                # bootstrap: first frame is stored verbatim
                self.entries[key] = _Entry(k.copy(), v.copy(), o.copy(), [k.shape[0]])
                continue
            if k.shape[0] != e.rows:
                raise ShapeError(f"DyMe needs {e.rows} incoming rows, got {k.shape[0]}")
            src, dst = partition(e.rows, strategy, self.rng)
            all_k = np.concatenate([k, e.k])
            match = match_src_to_dst(all_k[src], all_k[dst])
            e.k = merge_into_dst(all_k, src, dst, match)
            e.v = merge_into_dst(np.concatenate([v, e.v]), src, dst, match)
            e.o = merge_into_dst(np.concatenate([o, e.o]), src, dst, match)
            self.last_merges.append((step, layer, src, dst, match))
        self.updates += 1
        return self

    def update(self, feats: FrameFeatures) -> "FeatureBank":
        if self.policy == "queue":
            return self.queue_update(feats)
        if self.policy == "dyme":
            return self.dyme_update(feats)
        return self

    def maybe_update(self, feats: FrameFeatures, frame: int) -> bool:
        """Apply the policy when ``frame`` falls on the update interval."""
        if self.policy == "none" or frame % self.interval != 0:
            return False
        self.update(feats)
        return True

    def export(self, directory) -> Path:
        """Write one SBNK file per (step, layer, tensor) plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        listing = []
        for (step, layer), e in sorted(self.entries.items()):
            files = {}
            for name, mat in zip(TENSORS, (e.k, e.v, e.o)):
                fname = f"s{step}_l{layer}_{name}.sbnk"
                save_matrix(directory / fname, mat)
                files[name] = fname
            listing.append({"step": step, "layer": layer, "rows": e.rows, "files": files})
        manifest = {
            "policy": self.policy,
            "size": self.size,
            "dim": self.dim,
            "interval": self.interval,
            "strategy": self.strategy.value,
            "share_across_steps": self.share_across_steps,
            "entries": listing,
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, directory) -> "FeatureBank":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        bank = cls(manifest["dim"], manifest["policy"], manifest["size"], manifest["interval"],
                   manifest["strategy"], share_across_steps=manifest["share_across_steps"])
        for item in manifest["entries"]:
            k, v, o = (load_matrix(directory / item["files"][n]) for n in TENSORS)
            bank.entries[(item["step"], item["layer"])] = _Entry(k, v, o, [k.shape[0]])
        return bank


def partition(n: int, strategy, rng: Rng | None = None):
    """Split the ``2n`` concatenated indices (current rows first) into src/dst.

    random: position j keeps either the current or the stored token as dst,
        chosen by a fair coin, and the other becomes src. This is a uniformly
        random split of the pool into two halves subject to every position
        keeping one token, so the bank stays spatially aligned and a
        duplicate frame merges onto itself.
    uniform_grid: even concatenated indices are src, odd are dst.
    split: stored rows are src, current rows are dst.
    """
    strategy = SamplingStrategy(strategy)
    idx = np.arange(n)
    if strategy is SamplingStrategy.RANDOM:
        if rng is None:
            raise ConfigError("random partition needs a generator")
        flip = rng.bits(n)
        dst = np.where(flip, idx, idx + n)
        src = np.where(flip, idx + n, idx)
        # src order is shuffled so no side is systematically merged last
        src = src[rng.permutation(n)]
        return src, dst
    if strategy is SamplingStrategy.UNIFORM_GRID:
        all_idx = np.arange(2 * n)
        return all_idx[0::2], all_idx[1::2]
    return idx + n, idx


def match_src_to_dst(src_k, dst_k) -> np.ndarray:
    """Index of the most cosine-similar dst row for each src row (lowest index on ties)."""
    return np.argmax(cosine_sim_matrix(src_k, dst_k), axis=1)


def merge_into_dst(pool, src, dst, match) -> np.ndarray:
    """Average src rows into their matched dst rows, in ascending src position.

    Several src rows may land on the same dst row; each averages with the
    value left by the previous one.
    """
    pool = as_matrix(pool)
    out = pool[dst].copy()
    src_rows = pool[src]
    for i, j in enumerate(match):
        out[j] = (out[j] + src_rows[i]) / DTYPE(2)
    return out


def dyme_merge(current, stored, src, dst):
    """One DyMe step on a single tensor with a given partition; returns (bank, match)."""
    pool = np.concatenate([as_matrix(current), as_matrix(stored)])
    match = match_src_to_dst(pool[src], pool[dst])
    return merge_into_dst(pool, src, dst, match), match


def parse_arm(arm: str) -> tuple[str, int]:
    """``"none"``, ``"queue:k"`` or ``"dyme:k"`` -> (policy, size)."""
    if arm == "none":
        return "none", 0
    policy, _, size = arm.partition(":")
    if policy not in ("queue", "dyme") or not size.isdigit():
        raise ConfigError(f"bad bank arm {arm!r}; expected none, queue:k or dyme:k")
    if policy == "queue" and int(size) < 1:
        raise ConfigError("queue size must be >= 1")
    if policy == "dyme" and int(size) != 1:
        raise ConfigError("DyMe keeps exactly one frame; use dyme:1")
    return policy, int(size)
