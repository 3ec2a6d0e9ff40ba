"""Dense float32 kernels and a seeded splitmix64 generator.

Matrices are plain 2-D ``numpy.float32`` arrays. Every public kernel checks
its operand shapes and raises :class:`ShapeError` on mismatch.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

DTYPE = np.float32
MAGIC = b"SBNK"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, 0)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def empty(cols: int) -> np.ndarray:
    return np.zeros((0, cols), dtype=DTYPE)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed (order sensitive)."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = (h ^ (int(p) & _MASK)) & _MASK
        h = int(_mix(np.array([(h + 0x9E3779B97F4A7C15) & _MASK], dtype=np.uint64))[0])
    return h


class Rng:
    """splitmix64 stream. Draws are vectorised: the k-th output only depends
    on the seed and k, so a block of draws is one numpy expression."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._state = self.seed

    def next_u64(self, count: int) -> np.ndarray:
        k = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self._state) + k * _GAMMA
            out = _mix(states)
        self._state = (self._state + count * int(_GAMMA)) & _MASK
        return out

    def uniform(self, count: int) -> np.ndarray:
        """Float64 draws in [0, 1) with 53 random bits."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, count: int) -> np.ndarray:
        # Box-Muller, both branches used
        half = (count + 1) // 2
        u = self.uniform(2 * half)
        u1 = 1.0 - u[:half]
        u2 = u[half:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:count]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def bits(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(63)).astype(bool)

    def spawn(self, *key: int) -> "Rng":
        return Rng(derive_seed(self.seed, *key))


def randn(rng: Rng, rows: int, cols: int) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"randn needs positive dims, got {rows}x{cols}")
    return rng.normal(rows * cols).astype(DTYPE).reshape(rows, cols)


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(a, scale: float = 1.0) -> np.ndarray:
    """Softmax over each row of ``a * scale`` with the row max subtracted first."""
    x = as_matrix(a) * DTYPE(scale)
    if x.shape[1] == 0:
        return x
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def normalize_rows(a) -> np.ndarray:
    a = as_matrix(a)
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    out = np.zeros_like(a)
    nz = norms[:, 0] > 0
    out[nz] = a[nz] / norms[nz]
    return out


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarity of the rows of ``a`` and ``b``.

    Rows with zero norm have similarity 0 with everything.
    """
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_sim_matrix: {a.shape} vs {b.shape}")
    return np.clip(normalize_rows(a) @ normalize_rows(b).T, -1.0, 1.0)


def concat_rows(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)


def matrix_to_bytes(m) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    return MAGIC + struct.pack("<II", rows, cols) + m.astype("<f4").tobytes()


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not an SBNK matrix dump")
    rows, cols = struct.unpack("<II", buf[4:12])
    body = buf[12:]
    if len(body) != rows * cols * 4:
        raise ValueError(f"SBNK payload is {len(body)} bytes, header says {rows}x{cols}")
    return np.frombuffer(body, dtype="<f4").astype(DTYPE).reshape(rows, cols)


def save_matrix(path, m) -> None:
    Path(path).write_bytes(matrix_to_bytes(m))


def load_matrix(path) -> np.ndarray:
    return matrix_from_bytes(Path(path).read_bytes())
