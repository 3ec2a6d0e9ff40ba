"""Deterministic toy videos with exact ground-truth motion.

A frame is a scalar field on an ``H x W`` torus made of Gaussian blobs. Each
frame is the previous clean field rolled by an integer displacement, plus
fresh i.i.d. Gaussian noise. Tokens are non-overlapping ``patch x patch``
tiles, flattened and multiplied by a fixed random projection.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import DTYPE, Rng, as_matrix, derive_seed, save_matrix

STREAM_KEYS = ("seed", "height", "width", "patch", "dim", "frames", "motion", "blobs", "noise_sigma")

# salts for derived generators
_BLOBS, _PROJECTION, _NOISE = 1, 2, 3


@dataclass
class StreamSpec:
    seed: int = 0
    height: int = 32
    width: int = 32
    patch: int = 4
    dim: int = 16
    frames: int = 30
    # one (dx, dy) for every transition, or a list of frames - 1 pairs
    motion: list = field(default_factory=lambda: [0, 0])
    blobs: int = 6
    noise_sigma: float = 0.1

    def __post_init__(self):
        self.motion = _normalize_motion(self.motion)

    def validate(self) -> None:
        for name in ("height", "width", "patch", "dim", "frames", "blobs"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.patch < 1 or self.dim < 1 or self.blobs < 0:
            raise ConfigError("patch and dim must be >= 1, blobs >= 0")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"{self.height}x{self.width} is not divisible by patch {self.patch}")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be >= 0")
        limit = min(self.height, self.width) / 2
        for dx, dy in self.displacements():
            if abs(dx) >= limit or abs(dy) >= limit:
                raise ConfigError(f"displacement ({dx}, {dy}) must be smaller than {limit} in magnitude")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def tokens(self) -> int:
        gh, gw = self.grid_shape
        return gh * gw

    def displacements(self) -> list[tuple[int, int]]:
        """Displacement into every frame; frame 0 gets (0, 0)."""
        m = self.motion
        if len(m) == 2 and all(isinstance(v, int) for v in m):
            steps = [tuple(m)] * (self.frames - 1)
        else:
            if len(m) != self.frames - 1:
                raise ConfigError(f"motion schedule has {len(m)} entries, expected {self.frames - 1}")
            steps = [tuple(p) for p in m]
        return [(0, 0)] + [(int(dx), int(dy)) for dx, dy in steps]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StreamSpec":
        if not isinstance(d, dict):
            raise ConfigError("stream spec must be a JSON object")
        keys = set(d)
        if keys != set(STREAM_KEYS):
            missing = sorted(set(STREAM_KEYS) - keys)
            extra = sorted(keys - set(STREAM_KEYS))
            raise ConfigError(f"stream spec keys mismatch: missing {missing}, unknown {extra}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "StreamSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read stream spec {path}: {exc}") from exc
        return cls.from_dict(data)


def _normalize_motion(m):
    if not isinstance(m, (list, tuple)):
        raise ConfigError(f"motion must be a pair or a list of pairs, got {m!r}")
    if len(m) == 2 and all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in m):
        return [int(m[0]), int(m[1])]
    out = []
    for p in m:
        if not isinstance(p, (list, tuple)) or len(p) != 2 or not all(isinstance(v, (int, np.integer)) for v in p):
            raise ConfigError(f"motion entries must be integer pairs, got {p!r}")
        out.append([int(p[0]), int(p[1])])
    return out


@dataclass
class Frame:
    index: int
    grid: np.ndarray
    tokens: np.ndarray
    displacement: tuple[int, int]
    # cumulative shift of the content relative to frame 0
    offset: tuple[int, int] = (0, 0)


def blob_field(spec: StreamSpec) -> tuple[np.ndarray, np.ndarray]:
    """Clean frame-0 field and the blob centres as an array of (y, x)."""
    rng = Rng(derive_seed(spec.seed, _BLOBS))
    H, W = spec.height, spec.width
    gh, gw = spec.grid_shape
    # centres sit on patch centres so each blob has one unambiguous centre token
    cells = np.stack([np.floor(rng.uniform(spec.blobs) * gh), np.floor(rng.uniform(spec.blobs) * gw)], axis=1)
    centres = cells * spec.patch + (spec.patch - 1) / 2.0
    width = max(H, W) / 10.0
    ys = np.arange(H, dtype=np.float64)[:, None]
    xs = np.arange(W, dtype=np.float64)[None, :]
    field_ = np.zeros((H, W))
    for cy, cx in centres:
        dy = np.abs(ys - cy)
        dx = np.abs(xs - cx)
        dy = np.minimum(dy, H - dy)
        dx = np.minimum(dx, W - dx)
        field_ += np.exp(-(dy**2 + dx**2) / (2 * width**2))
    return field_.astype(DTYPE), centres


def make_projection(spec: StreamSpec) -> np.ndarray:
    rng = Rng(derive_seed(spec.seed, _PROJECTION))
    p2 = spec.patch * spec.patch
    return (rng.normal(p2 * spec.dim) / np.sqrt(p2)).astype(DTYPE).reshape(p2, spec.dim)


def patchify(grid: np.ndarray, patch: int) -> np.ndarray:
    """Rows are patches in row-major patch order, each flattened row-major."""
    grid = np.asarray(grid, dtype=DTYPE)
    H, W = grid.shape
    if H % patch or W % patch:
        raise ShapeError(f"grid {grid.shape} not divisible by patch {patch}")
    gh, gw = H // patch, W // patch
    return grid.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch * patch)


def embed_frame(grid, projection, patch: int | None = None) -> np.ndarray:
    """Patch-embed ``grid``: token i is patch i flattened, times ``projection``."""
    projection = as_matrix(projection)
    if patch is None:
        patch = int(round(np.sqrt(projection.shape[0])))
    if patch * patch != projection.shape[0]:
        raise ShapeError(f"projection has {projection.shape[0]} rows, patch {patch} needs {patch * patch}")
    return patchify(grid, patch) @ projection


def generate_stream(spec: StreamSpec) -> list[Frame]:
    spec.validate()
    base, _ = blob_field(spec)
    projection = make_projection(spec)
    frames = []
    oy = ox = 0
    for t, (dx, dy) in enumerate(spec.displacements()):
        ox, oy = ox + dx, oy + dy
        clean = np.roll(base, (oy, ox), axis=(0, 1))
        if spec.noise_sigma > 0:
            # per-frame generator so frames can be produced independently
            noise = Rng(derive_seed(spec.seed, _NOISE, t)).normal(clean.size).reshape(clean.shape)
            grid = (clean + spec.noise_sigma * noise).astype(DTYPE)
        else:
            grid = clean.copy()
        frames.append(Frame(t, grid, embed_frame(grid, projection, spec.patch), (dx, dy), (ox, oy)))
    return frames


def token_index(spec: StreamSpec, y: float, x: float) -> int:
    """Index of the token whose patch contains pixel (y, x) on the torus."""
    gh, gw = spec.grid_shape
    return int((y % spec.height) // spec.patch) * gw + int((x % spec.width) // spec.patch)


def write_grids(frames, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in frames:
        p = directory / f"grid_{f.index:04d}.sbnk"
        save_matrix(p, f.grid)
        paths.append(p)
    return paths
