"""Pipelined S-step denoising: one frame in, one frame out per tick.

The batch always holds exactly ``S`` latents at steps ``S, S-1, ..., 1``.
A tick applies one denoiser call to every slot, pops the slot that reaches
step 0, and appends the new latent at step ``S``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import as_matrix

# denoiser(latent, step, frame_index) -> latent of the same shape
Denoiser = Callable[[np.ndarray, int, int], np.ndarray]


@dataclass
class LatentState:
    frame: int
    step: int
    latent: np.ndarray
    # real stream frame, as opposed to a warm-start or drain copy
    real: bool = True
    extras: dict = field(default_factory=dict)


@dataclass
class DenoisingBatch:
    steps: int
    slots: list[LatentState]

    @property
    def newest(self) -> int:
        return self.slots[0].frame

    def check(self) -> None:
        assert len(self.slots) == self.steps
        for i, slot in enumerate(self.slots):
            assert slot.step == self.steps - i
            assert slot.frame == self.newest - i


def warm_start(latent, steps: int, frame: int = 0) -> DenoisingBatch:
    """Fill the pipeline with ``steps`` copies of the first latent.

    The copy at step ``S`` is the real frame; the copies below it get
    negative frame indices and are flagged ``real=False``.
    """
    if steps < 1:
        raise ConfigError(f"need at least one denoising step, got {steps}")
    latent = as_matrix(latent)
    slots = [
        LatentState(frame - i, steps - i, latent.copy(), real=(i == 0))
        for i in range(steps)
    ]
    return DenoisingBatch(steps, slots)


def tick(batch: DenoisingBatch, new_latent, denoiser: Denoiser, real: bool = True):
    """Advance every slot one step, emit the finished one, enqueue ``new_latent``.

    Returns ``(batch, emitted)`` where ``emitted`` is the :class:`LatentState`
    that reached step 0. Its frame index is ``newest - S + 1``.
    """
    new_latent = as_matrix(new_latent)
    shape = batch.slots[0].latent.shape
    newest = batch.newest
    if new_latent.shape != shape:
        raise ShapeError(f"new latent {new_latent.shape} does not match pipeline {shape}")
    for slot in batch.slots:
        out = as_matrix(denoiser(slot.latent, slot.step, slot.frame))
        if out.shape != shape:
            raise ShapeError(f"denoiser changed latent shape {shape} -> {out.shape}")
        slot.latent = out
        slot.step -= 1
    emitted = batch.slots.pop()
    assert emitted.step == 0
    batch.slots.insert(0, LatentState(newest + 1, batch.steps, new_latent.copy(), real=real))
    return batch, emitted


def sequential_denoise(latent, steps: int, denoiser: Denoiser, frame: int = 0) -> np.ndarray:
    """Reference path: ``steps`` denoiser calls on one latent, no pipelining."""
    z = as_matrix(latent)
    for s in range(steps, 0, -1):
        z = as_matrix(denoiser(z, s, frame))
    return z


def run_pipeline(latents, steps: int, denoiser: Denoiser, on_emit=None) -> list[LatentState]:
    """Push a finite sequence through the pipeline and drain it.

    Drain ticks feed copies of the last latent (flagged ``real=False``) until
    every real frame has been emitted. Returns all emissions in order,
    including warm-start and drain copies.
    """
    latents = list(latents)
    if not latents:
        return []
    batch = warm_start(latents[0], steps)
    emitted = []
    feed = latents[1:]
    # the last real frame needs S more ticks to come out
    for i in range(len(feed) + steps):
        real = i < len(feed)
        new = feed[i] if real else latents[-1]
        batch, out = tick(batch, new, denoiser, real=real)
        emitted.append(out)
        if on_emit is not None:
            on_emit(out)
    return emitted
