"""A small frozen block network that drives the bank end to end.

Each block projects its input to Q/K/V, runs (extended) attention, applies
a tanh feed-forward with a residual, and optionally fuses the result with
banked outputs. Blocks are chained; one denoising step moves the latent by
``-eta`` times the last block's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import extended_attention, self_attention
from .bank import FeatureBank, FrameFeatures, SamplingStrategy, parse_arm
from .errors import ConfigError, ShapeError
from .fusion import FusionConfig, fuse, fusion_mask, should_fuse
from .stream_batch import run_pipeline
from .tensor_core import DTYPE, Rng, as_matrix, derive_seed, randn


@dataclass
class BankConfig:
    arm: str = "dyme:1"
    interval: int = 4
    strategy: str = "random"
    seed: int = 0
    share_across_steps: bool = False

    def __post_init__(self):
        parse_arm(self.arm)
        SamplingStrategy(self.strategy)
        if self.interval < 1:
            raise ConfigError("bank interval must be >= 1")

    def make(self, dim: int) -> FeatureBank:
        policy, size = parse_arm(self.arm)
        return FeatureBank(dim, policy, max(size, 1) if policy != "none" else 0, self.interval,
                           self.strategy, self.seed, self.share_across_steps)


@dataclass
class PipelineConfig:
    blocks: int = 4
    hidden: int = 32
    steps: int = 4
    eta: float = 0.3
    sigma_init: float = 0.4
    model_seed: int = 0
    noise_seed: int = 0
    ea_enabled: bool = True
    # init gains of the frozen weights
    qk_gain: float = 2.0
    v_gain: float = 1.0
    # correlation between Wq and Wk; 1 makes Q.K^T a positive semidefinite form
    qk_tie: float = 0.9
    bank: BankConfig = field(default_factory=BankConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.blocks < 1 or self.steps < 1 or self.hidden < 1:
            raise ConfigError("blocks, steps and hidden must all be >= 1")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0.0 <= self.qk_tie <= 1.0:
            raise ConfigError("qk_tie must lie in [0, 1]")
        if self.sigma_init < 0:
            raise ConfigError("sigma_init must be >= 0")


@dataclass
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


def make_block(model_seed: int, index: int, dim: int, hidden: int,
               qk_gain: float = 2.0, v_gain: float = 1.0, qk_tie: float = 0.9) -> BlockWeights:
    rng = Rng(derive_seed(model_seed, index))
    sd = 1.0 / np.sqrt(dim)
    wq = randn(rng, dim, dim)
    wk = DTYPE(qk_tie) * wq + DTYPE(np.sqrt(1.0 - qk_tie**2)) * randn(rng, dim, dim)
    return BlockWeights(
        wq=wq * DTYPE(qk_gain * sd),
        wk=wk * DTYPE(qk_gain * sd),
        wv=randn(rng, dim, dim) * DTYPE(v_gain * sd),
        w1=randn(rng, dim, hidden) * DTYPE(sd),
        w2=randn(rng, hidden, dim) * DTYPE(1.0 / np.sqrt(hidden)),
    )


def make_blocks(cfg: PipelineConfig, dim: int) -> list[BlockWeights]:
    return [make_block(cfg.model_seed, i, dim, cfg.hidden, cfg.qk_gain, cfg.v_gain, cfg.qk_tie)
            for i in range(cfg.blocks)]


@dataclass
class BlockTrace:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    pre_fusion: np.ndarray
    o: np.ndarray
    o_fb: np.ndarray
    mask: object
    logits: int


def block_forward(x, weights: BlockWeights, bank_entry, index: int, cfg: PipelineConfig):
    """One block. Returns ``(O, trace)``; ``trace`` holds the K/V/O to bank.

    ``bank_entry`` is the (K_fb, V_fb, O_fb) triple for this step and block.
    """
    x = as_matrix(x)
    if x.shape[1] != weights.wq.shape[0]:
        raise ShapeError(f"block input {x.shape} vs weights {weights.wq.shape}")
    k_fb, v_fb, o_fb = bank_entry
    q, k, v = x @ weights.wq, x @ weights.wk, x @ weights.wv
    if cfg.ea_enabled:
        a = extended_attention(q, k, v, k_fb, v_fb)
        m = k_fb.shape[0]
    else:
        a = self_attention(q, k, v)
        m = 0
    f = np.tanh(a @ weights.w1) @ weights.w2 + a
    mask = None
    o = f
    if should_fuse(index, cfg.fusion) and cfg.fusion.alpha > 0:
        mask = fusion_mask(f, o_fb, cfg.fusion)
        o = fuse(f, o_fb, cfg.fusion, mask)
    n = x.shape[0]
    return o, BlockTrace(q, k, v, f, o, o_fb, mask, n * (n + m))


def denoise_step(z, step: int, blocks, bank: FeatureBank | None, cfg: PipelineConfig,
                 capture: dict | None = None) -> np.ndarray:
    """Run every block on ``z`` and return ``z - eta * last_output``.

    If ``capture`` is given it receives ``layer -> BlockTrace``.
    """
    z = as_matrix(z)
    d = z.shape[1]
    empty = np.zeros((0, d), dtype=DTYPE)
    x = z
    for layer, w in enumerate(blocks):
        entry = bank.fetch(step, layer) if bank is not None else (empty, empty, empty)
        x, trace = block_forward(x, w, entry, layer, cfg)
        if capture is not None:
            capture[layer] = trace
    return z - DTYPE(cfg.eta) * x


@dataclass
class StreamResult:
    outputs: list            # (frame index, latent) for real frames, in order
    warmup: list             # (frame index, latent) for warm-start copies
    ticks: list              # per-tick stats dicts
    bank: FeatureBank
    attn_logits_per_block: int  # at the final tick
    attn_logits_total: int


# record(frame, step, layer, trace)
Recorder = Callable[[int, int, int, BlockTrace], None]


def initial_latent(tokens, t: int, cfg: PipelineConfig) -> np.ndarray:
    tokens = as_matrix(tokens)
    if cfg.sigma_init == 0:
        return tokens.copy()
    noise = randn(Rng(derive_seed(cfg.noise_seed, t)), *tokens.shape)
    return tokens + DTYPE(cfg.sigma_init) * noise


def run_stream(frames, cfg: PipelineConfig, record: Recorder | None = None) -> StreamResult:
    """Drive a whole stream through the pipeline with the bank in the loop.

    The bank is read during a tick and updated only after it, from the
    emitted frame's features at every (step, layer). Warm-start copies and
    drain padding never enter the bank.
    """
    frames = list(frames)
    if not frames:
        raise ConfigError("empty stream")
    n, d = frames[0].tokens.shape
    blocks = make_blocks(cfg, d)
    bank = cfg.bank.make(d)
    captured: dict[int, FrameFeatures] = {}
    tick_logits = [0]
    last = {"per_block": 0}

    def denoiser(z, step, frame):
        trace: dict = {}
        out = denoise_step(z, step, blocks, bank, cfg, capture=trace)
        feats = captured.setdefault(frame, FrameFeatures(frame))
        for layer, tr in trace.items():
            feats.add(step, layer, tr.k, tr.v, tr.o)
            tick_logits[0] += tr.logits
            last["per_block"] = tr.logits
            if record is not None:
                record(frame, step, layer, tr)
        return out

    outputs, warmup, ticks = [], [], []
    total = [0]

    def on_emit(state):
        feats = captured.pop(state.frame, None)
        updated = False
        if state.real:
            outputs.append((state.frame, state.latent))
            if feats is not None:
                updated = bank.maybe_update(feats, state.frame)
        elif state.frame < 0:
            warmup.append((state.frame, state.latent))
        total[0] += tick_logits[0]
        ticks.append({
            "frame": state.frame,
            "real": state.real,
            "bank_updated": updated,
            "bank_rows": bank.max_rows(),
            "bank_floats": bank.stored_floats(),
            "attn_logits": tick_logits[0],
        })
        tick_logits[0] = 0

    latents = [initial_latent(f.tokens, f.index, cfg) for f in frames]
    run_pipeline(latents, cfg.steps, denoiser, on_emit)
    return StreamResult(outputs, warmup, ticks, bank, last["per_block"], total[0])
