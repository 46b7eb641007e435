"""Synthetic ring-shaped "house tour" and ingestion of real frame folders.

Rendering model
---------------
The tour is the unit ring [0, 1) split into K equal rooms; room ``r`` covers
``[r/K, (r+1)/K)``. Each room draws its appearance from
``Rng(splitmix64(seed, source_room))``, in this order:

* base colour: 3 uniforms (one per channel, reused cyclically if C != 3)
* stripe phase: 1 uniform
* stripe frequency: ``1 + floor(3 u)`` cycles per image width
* channel phase offsets: 3 uniforms

``source_room`` is the smallest room index in the room's alias group, so
aliased rooms look identical at equal room-relative offsets. With
``u = K * (signed ring offset of p from the room start)`` the pixel is::

    clamp(base[ch] + AMPLITUDE * sin(2 pi (f col / W + phase + CHANNEL_SPREAD * off[ch] + DRIFT * u))
          + SHADE * (row / (H - 1) - 0.5), 0, 1)

Within ``transition_width`` of a room boundary the two adjacent rooms are
linearly cross-faded.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .errors import ConfigError, FormatError
from .numerics import Rng, splitmix64

AMPLITUDE = 1.5
SHADE = 0.6
DRIFT = 0.5
CHANNEL_SPREAD = 0.25

DATASET_VERSION = 1


@dataclass(frozen=True)
class WorldConfig:
    num_rooms: int = 4
    frames: int = 1000
    height: int = 16
    width: int = 16
    channels: int = 3
    transition_width: float = 0.0
    alias_pairs: tuple = ()
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alias_pairs", tuple(tuple(int(v) for v in p) for p in self.alias_pairs))
        if self.num_rooms < 1:
            raise ConfigError("num_rooms", f"must be >= 1, got {self.num_rooms}")
        if self.frames < 2:
            raise ConfigError("frames", f"must be >= 2, got {self.frames}")
        for key in ("height", "width", "channels"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        if not 0.0 <= self.transition_width < 0.5 / self.num_rooms:
            raise ConfigError("transition_width", f"must lie in [0, {0.5 / self.num_rooms}), got {self.transition_width}")
        for pair in self.alias_pairs:
            if len(pair) != 2 or not all(0 <= r < self.num_rooms for r in pair):
                raise ConfigError("alias_pairs", f"invalid room pair {pair}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")

    def source_rooms(self) -> list[int]:
        parent = list(range(self.num_rooms))

        def find(r):
            while parent[r] != r:
                r = parent[r]
            return r

        for a, b in self.alias_pairs:
            ra, rb = find(a), find(b)
            parent[max(ra, rb)] = min(ra, rb)
        return [find(r) for r in range(self.num_rooms)]


@dataclass
class TourFrame:
    index: int
    position: float
    image: np.ndarray


@dataclass
class TourDataset:
    images: np.ndarray  # (N, H, W, C)
    positions: np.ndarray
    provenance: str = "generated"
    config: WorldConfig | None = None
    sources: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> TourFrame:
        return TourFrame(i, float(self.positions[i]), self.images[i])

    @property
    def shape(self):
        return self.images.shape[1:]

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1)


def _room_style(cfg: WorldConfig, room: int):
    rng = Rng(splitmix64(cfg.seed, cfg.source_rooms()[room]))
    base = rng.uniform(3)
    phase = rng.uniform(1)[0]
    freq = 1 + int(rng.uniform(1)[0] * 3)
    offsets = rng.uniform(3)
    return base, phase, freq, offsets


def _render_room(cfg: WorldConfig, room: int, p: float) -> np.ndarray:
    base, phase, freq, offsets = _room_style(cfg, room)
    k = cfg.num_rooms
    d = (p - room / k + 0.5) % 1.0 - 0.5
    u = d * k
    h, w = cfg.height, cfg.width
    rows = np.arange(h)[:, None, None]
    cols = np.arange(w)[None, :, None]
    ch = np.arange(cfg.channels) % 3
    shade = SHADE * (rows / (h - 1) - 0.5) if h > 1 else 0.0
    wave = np.sin(2.0 * np.pi * (freq * cols / w + phase + CHANNEL_SPREAD * offsets[ch] + DRIFT * u))
    return np.clip(base[ch] + AMPLITUDE * wave + shade, 0.0, 1.0)


def render_frame(cfg: WorldConfig, p: float) -> np.ndarray:
    """HxWxC image of ring position ``p`` in [0, 1)."""
    if not (isinstance(p, (int, float, np.floating)) and math.isfinite(p) and 0.0 <= p < 1.0):
        raise ValueError(f"position must lie in [0, 1), got {p!r}")
    k, wdt = cfg.num_rooms, cfg.transition_width
    room = min(int(p * k), k - 1)
    img = _render_room(cfg, room, p)
    if wdt > 0 and k > 1:
        lo, hi = room / k, (room + 1) / k
        if p - lo < wdt:
            t = (p - lo + wdt) / (2 * wdt)
            img = (1 - t) * _render_room(cfg, (room - 1) % k, p) + t * img
        elif hi - p <= wdt:
            t = (p - hi + wdt) / (2 * wdt)
            img = (1 - t) * img + t * _render_room(cfg, (room + 1) % k, p)
    return img


def generate_tour(cfg: WorldConfig) -> TourDataset:
    positions = np.arange(cfg.frames) / cfg.frames
    images = np.stack([render_frame(cfg, float(p)) for p in positions])
    return TourDataset(images, positions, "generated", cfg)


def resize_bilinear(image, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres; channels independent."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    sh, sw = img.shape[:2]
    if min(sh, sw, height, width) < 1:
        raise ValueError("image dimensions must be >= 1")

    def coords(n_out, n_in):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0.0, n_in - 1)
        i0 = np.floor(x).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    r0, r1, fr = coords(height, sh)
    c0, c1, fc = coords(width, sw)
    fr, fc = fr[:, None, None], fc[None, :, None]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return np.clip(top * (1 - fr) + bot * fr, 0.0, 1.0)


def ingest_frames(directory, height: int, width: int) -> TourDataset:
    """Load lexicographically ordered PPM/PGM frames and resize them.

    Positions are ordinal (i / N), not ground truth; provenance is "ingested".
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"not a directory: {directory}")
    if height < 1 or width < 1:
        raise ConfigError("height" if height < 1 else "width", "must be >= 1")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    if len(files) < 2:
        raise FormatError(f"need at least 2 PPM/PGM frames in {directory}, found {len(files)}")
    kinds, images = set(), []
    for f in files:
        kind, img = imageio.read_pnm(f)
        kinds.add(kind)
        if len(kinds) > 1:
            raise FormatError(f"inconsistent source formats: {sorted(kinds)} (at {f.name})")
        images.append(resize_bilinear(img, height, width))
    n = len(images)
    return TourDataset(np.stack(images), np.arange(n) / n, "ingested", None, [f.name for f in files])


def _raw_path(manifest: Path) -> Path:
    return manifest.with_suffix(".raw")


def dataset_files(ds: TourDataset, path) -> dict:
    """``{path: bytes}`` for the manifest and raw pixel file."""
    path = Path(path)
    n, h, w, c = ds.images.shape
    manifest = {
        "version": DATASET_VERSION,
        "height": h,
        "width": w,
        "channels": c,
        "frames": n,
        "seed": ds.config.seed if ds.config else None,
        "provenance": ds.provenance,
        "raw_file": _raw_path(path).name,
        "world": _world_dict(ds.config) if ds.config else None,
        "sources": ds.sources,
        "positions": [float(p) for p in ds.positions],
    }
    raw = np.ascontiguousarray(ds.images, dtype="<f8").tobytes()
    return {path: (json.dumps(manifest, indent=1) + "\n").encode(), _raw_path(path): raw}


def _world_dict(cfg: WorldConfig) -> dict:
    d = asdict(cfg)
    d["alias_pairs"] = [list(p) for p in cfg.alias_pairs]
    return d


def save_dataset(ds: TourDataset, path) -> None:
    for p, data in dataset_files(ds, path).items():
        p.write_bytes(data)


def load_dataset(path) -> TourDataset:
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if m.get("version") != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {m.get('version')!r}")
    n, h, w, c = m["frames"], m["height"], m["width"], m["channels"]
    if len(m["positions"]) != n:
        raise FormatError(f"manifest lists {len(m['positions'])} positions for {n} frames")
    raw = (path.parent / m["raw_file"]).read_bytes()
    if len(raw) != 8 * n * h * w * c:
        raise FormatError(f"raw file holds {len(raw)} bytes, manifest implies {8 * n * h * w * c}")
    images = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n, h, w, c)
    cfg = WorldConfig(**m["world"]) if m.get("world") else None
    return TourDataset(images, np.array(m["positions"], dtype=np.float64), m["provenance"], cfg, m.get("sources", []))
