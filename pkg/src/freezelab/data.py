"""Procedural Gaussian-blob images with a scalar domain-shift knob.

Each image alpha-blends a few soft blobs over a flat background. Blob colour
and position are class-conditioned; ``shift`` in [0, 1] interpolates every
rendering parameter from its source value to a shifted target value (new
background, inverted class colours, larger blobs). ``shift == 0`` renders the
source domain exactly.

Pixels of image ``i`` depend only on ``(spec, seed, i)``.
"""
from __future__ import annotations

import colorsys
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .binfmt import Reader, Writer, decode_kv, encode_kv
from .errors import ConfigError, FormatError, UsageError
from .rng import Rng, derive, STREAMS

MAGIC = b"FRZS"
GOLDEN_FRAC = 0.6180339887498949


@dataclass(frozen=True)
class DatasetSpec:
    family: str = "blobs"
    n_classes: int = 5
    blobs_min: int = 1
    blobs_max: int = 3
    center_jitter: float = 0.12
    radius_min: float = 0.08
    radius_max: float = 0.18
    color_noise: float = 0.15
    background: tuple = (-0.8, -0.8, -0.6)
    target_background: tuple = (0.3, 0.1, -0.4)
    shift: float = 0.0
    image_size: int = 16
    seed: int = 0

    def validate(self) -> "DatasetSpec":
        if self.family != "blobs":
            raise ConfigError(f"unknown dataset family {self.family!r}")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")
        if not 1 <= self.blobs_min <= self.blobs_max:
            raise ConfigError("need 1 <= blobs_min <= blobs_max")
        if not 0.0 < self.radius_min < self.radius_max:
            raise ConfigError("need 0 < radius_min < radius_max")
        if self.center_jitter < 0 or self.color_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        if not 0.0 <= self.shift <= 1.0:
            raise ConfigError(f"shift must lie in [0, 1], got {self.shift}")
        if self.image_size < 4:
            raise ConfigError("image_size must be >= 4")
        for bg in (self.background, self.target_background):
            if len(bg) != 3 or any(not -1.0 <= c <= 1.0 for c in bg):
                raise ConfigError("background colours need 3 channels in [-1, 1]")
        return self

    def with_(self, **changes) -> "DatasetSpec":
        return dataclasses.replace(self, **changes)


def class_color(c: int) -> np.ndarray:
    """Source colour of class ``c`` in [-1, 1]; independent of the class count."""
    r, g, b = colorsys.hsv_to_rgb((c * GOLDEN_FRAC) % 1.0, 0.85, 0.95)
    return np.array([r, g, b]) * 2.0 - 1.0


def class_center(c: int) -> np.ndarray:
    angle = 2.0 * math.pi * ((c * GOLDEN_FRAC) % 1.0)
    return np.array([0.5 + 0.22 * math.cos(angle), 0.5 + 0.22 * math.sin(angle)])


def render_params(spec: DatasetSpec, label: int) -> dict:
    """Rendering parameters for one class after applying ``spec.shift``."""
    s = spec.shift
    src = class_color(label)
    bg_src, bg_tgt = np.array(spec.background), np.array(spec.target_background)
    return {
        "color": (1.0 - s) * src + s * (-src),
        "center": class_center(label),
        "background": (1.0 - s) * bg_src + s * bg_tgt,
        "radius_scale": 1.0 + 0.6 * s,
    }


def render_image(spec: DatasetSpec, seed: int, index: int, label: int) -> np.ndarray:
    rng = Rng(derive(seed, STREAMS["render"], index))
    params = render_params(spec, label)
    size = spec.image_size
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.broadcast_to(params["background"][:, None, None], (3, size, size)).copy()
    n_blobs = spec.blobs_min + rng.integers(spec.blobs_max - spec.blobs_min + 1)
    for _ in range(n_blobs):
        cy, cx = np.clip(params["center"] + spec.center_jitter * rng.normal((2,)), 0.0, 1.0)
        radius = rng.uniform(None, spec.radius_min, spec.radius_max) * params["radius_scale"]
        color = np.clip(params["color"] + spec.color_noise * rng.normal((3,)), -1.0, 1.0)
        alpha = 0.9 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius * radius))
        img = img * (1.0 - alpha) + color[:, None, None] * alpha
    return np.clip(img, -1.0, 1.0)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, H, W) in [-1, 1]
    labels: np.ndarray  # (n,) int64
    spec: DatasetSpec

    def __len__(self):
        return self.images.shape[0]


def make_dataset(spec: DatasetSpec, n_per_class: int, seed: int | None = None) -> Dataset:
    spec.validate()
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    seed = spec.seed if seed is None else seed
    n = spec.n_classes * n_per_class
    labels = np.arange(n, dtype=np.int64) // n_per_class
    images = np.empty((n, 3, spec.image_size, spec.image_size))
    for i in range(n):
        images[i] = render_image(spec, seed, i, int(labels[i]))
    return Dataset(images, labels, spec.with_(seed=seed))


def sample_indices(n: int, batch: int, rng: Rng) -> np.ndarray:
    if n < 1:
        raise UsageError("cannot sample from an empty dataset")
    return rng.integers(n, (batch,))


def sample_batch(dataset: Dataset, batch: int, rng: Rng):
    """Uniform with-replacement batch ``(images, labels)``."""
    idx = sample_indices(len(dataset), batch, rng)
    return dataset.images[idx], dataset.labels[idx]


# ---------------------------------------------------------------- file format


def _spec_to_kv(spec: DatasetSpec) -> dict:
    out = dataclasses.asdict(spec)
    for key in ("background", "target_background"):
        out[key] = ",".join(repr(float(c)) for c in out[key])
    return out


def _spec_from_kv(values: dict) -> DatasetSpec:
    fields = {f.name: f for f in dataclasses.fields(DatasetSpec)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise FormatError(f"unknown dataset spec key {key!r}")
        tname = fields[key].type
        try:
            if key in ("background", "target_background"):
                kwargs[key] = tuple(float(c) for c in raw.split(","))
            elif tname == "int":
                kwargs[key] = int(raw)
            elif tname == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise FormatError(f"bad value {raw!r} for dataset spec key {key!r}") from None
    return DatasetSpec(**kwargs)


def dataset_bytes(ds: Dataset) -> bytes:
    w = Writer()
    w.header(MAGIC)
    w.blob(encode_kv(_spec_to_kv(ds.spec)))
    n, c, h, wd = ds.images.shape
    for v in (n, c, h, wd):
        w.u32(v)
    w.raw(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    w.f64(ds.images)
    return w.getvalue()


def dataset_from_bytes(data: bytes) -> Dataset:
    r = Reader(data)
    r.header(MAGIC, "dataset")
    spec = _spec_from_kv(decode_kv(r.blob("spec blob")))
    n = r.u32("sample count")
    c, h, w = (r.u32(name) for name in ("channels", "height", "width"))
    labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    per = c * h * w
    images = np.empty((n, c, h, w))
    for i in range(n):
        images[i] = r.f64(per, f"image {i} pixels").reshape(c, h, w)
    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last image")
    return Dataset(images, labels, spec)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
