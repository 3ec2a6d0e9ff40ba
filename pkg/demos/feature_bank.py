"""
Queue bank versus dynamic merging
=================================

A queue bank grows with its size; the merging bank keeps one frame's worth
of rows and folds each new frame into it.
"""
import numpy as np

from streambank.bank import FeatureBank, FrameFeatures, dyme_merge, partition
from streambank.tensor_core import Rng

rng = np.random.default_rng(0)
n, d = 8, 4


def frame(t):
    f = FrameFeatures(t)
    k = rng.standard_normal((n, d)).astype(np.float32)
    f.add(1, 0, k, k.copy(), k.copy())
    return f


queue = FeatureBank(d, "queue", size=2, interval=1)
dyme = FeatureBank(d, "dyme", interval=1, seed=0)
for t in range(6):
    f = frame(t)
    queue.update(f)
    dyme.update(f)
    print(f"frame {t}: queue rows {queue.rows(1, 0):2d}, dyme rows {dyme.rows(1, 0):2d}")

# one merge by hand: src rows average into their most similar dst rows
current = rng.standard_normal((n, d)).astype(np.float32)
stored = dyme.fetch(1, 0)[0]
src, dst = partition(n, "random", Rng(7))
merged, match = dyme_merge(current, stored, src, dst)
print("src -> dst matches:", match.tolist())
print("bank shape after merge:", merged.shape)
