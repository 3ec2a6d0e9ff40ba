"""
Pipelined denoising with a stream batch
=======================================

Every tick advances S latents by one step and emits the one that reaches
step 0. Output matches denoising each frame on its own.
"""
import numpy as np

from streambank import generate_stream, StreamSpec
from streambank.stream_batch import run_pipeline, sequential_denoise, warm_start

spec = StreamSpec(seed=1, height=16, width=16, patch=4, dim=8, frames=6, motion=[4, 0], blobs=2)
latents = [f.tokens for f in generate_stream(spec)]


# any callable (latent, step, frame) -> latent works as a denoiser
def denoiser(z, step, frame):
    return 0.8 * z + 0.05 * step


steps = 3
batch = warm_start(latents[0], steps)
print("warm start slots (frame, step):", [(s.frame, s.step) for s in batch.slots])

emitted = run_pipeline(latents, steps, denoiser)
for e in emitted:
    tag = "real" if e.real else "warm-up/drain"
    print(f"emitted frame {e.frame:2d} ({tag})")

# real emissions equal the sequential path exactly
for e in emitted:
    if e.real:
        ref = sequential_denoise(latents[e.frame], steps, denoiser, e.frame)
        assert np.array_equal(e.latent, ref)
print("pipelined output matches sequential denoising")
