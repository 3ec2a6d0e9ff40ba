"""
Temporal consistency on a static scene
======================================

A frozen random network amplifies per-frame noise. Attending to a bank of
past features, then blending with it, pulls consecutive outputs together.
"""
from dataclasses import replace

from streambank import StreamSpec, generate_stream
from streambank.metrics import warp_error
from streambank.toy_denoiser import BankConfig, PipelineConfig, run_stream

spec = StreamSpec(seed=0, motion=[0, 0], noise_sigma=0.1)
frames = generate_stream(spec)
base = PipelineConfig(model_seed=0, noise_seed=100)

arms = {
    "no bank": replace(base, bank=BankConfig(arm="none"), ea_enabled=False),
    "attention only": replace(base, fusion=replace(base.fusion, alpha=0.0)),
    "attention + fusion": base,
    "queue:2 + fusion": replace(base, bank=BankConfig(arm="queue:2")),
}
for name, cfg in arms.items():
    res = run_stream(frames, cfg)
    err = warp_error([o for _, o in res.outputs], [f.displacement for f in frames],
                     spec.grid_shape, spec.patch)
    print(f"{name:20s} warp error {err:7.2f}  logits/block {res.attn_logits_per_block}")
