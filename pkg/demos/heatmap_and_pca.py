"""
Where does a token look in the previous frame?
==============================================

On a translating blob, the centre token's strongest past key sits where the
blob was one frame earlier. PCA of block outputs gives a 3-channel view.
"""
import numpy as np

from streambank import StreamSpec, generate_stream
from streambank.attention import attention_heatmap
from streambank.metrics import pca3
from streambank.synthetic_stream import blob_field, token_index
from streambank.toy_denoiser import PipelineConfig, run_stream

spec = StreamSpec(seed=0, blobs=1, noise_sigma=0.0, motion=[4, 0], frames=6)
frames = generate_stream(spec)
cfg = PipelineConfig(sigma_init=0.0)

traces = {}


def record(t, step, layer, trace):
    if step == cfg.steps and layer == 0 and 0 <= t < spec.frames:
        traces[t] = trace


run_stream(frames, cfg, record=record)
(cy, cx), = blob_field(spec)[1]
for t in range(1, spec.frames):
    ox, oy = frames[t].offset
    px, py = frames[t - 1].offset
    q = token_index(spec, cy + oy, cx + ox)
    scores = attention_heatmap(traces[t].q[q], traces[t - 1].k)
    print(f"frame {t}: query {q:2d} -> argmax {int(np.argmax(scores)):2d}"
          f" (expected {token_index(spec, cy + py, cx + px):2d})")

feats = np.concatenate([traces[t].o for t in sorted(traces)])
res = pca3(feats)
print("top eigenvalues:", np.round(res.eigenvalues, 4))
print("projection shape:", res.projection.shape)
