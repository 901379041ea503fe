"""Single-object datasets: a synthetic scene generator and a CSV manifest loader."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .features import image_size
from .geometry import BoundingBox
from .metrics import iou
from .pnm import read_pnm, write_pnm

log = logging.getLogger(__name__)

SHAPES = ("rectangle", "ellipse", "triangle")
MAX_DRAWS = 1000


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the synthetic scene generator.

    ``scale_range`` bounds the square root of the object's box area as a
    fraction of the image side; ``aspect_range`` bounds box width / height.
    """

    width: int = 64
    height: int = 64
    shapes: tuple[str, ...] = SHAPES
    scale_range: tuple[float, float] = (0.15, 0.6)
    aspect_range: tuple[float, float] = (0.3, 3.0)
    noise: float = 0.05
    distractors: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale range must be positive and ordered, got {self.scale_range}")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi:
            raise ValueError(f"aspect range must be positive and ordered, got {self.aspect_range}")
        unknown = set(self.shapes) - set(SHAPES)
        if not self.shapes or unknown:
            raise ValueError(f"shapes must be drawn from {SHAPES}, got {self.shapes}")
        if self.noise < 0 or self.distractors < 0:
            raise ValueError("noise and distractor count must be non-negative")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    box: BoundingBox
    id: str

    def __post_init__(self) -> None:
        if not self.box.inside(image_size(self.image)):
            raise ValueError(f"sample {self.id}: box {self.box!r} outside the image")


def shape_mask(shape: str, width: int, height: int) -> np.ndarray:
    """Boolean ``height x width`` raster of a shape inscribed in its frame."""
    ys = np.arange(height)[:, None] + 0.5
    xs = np.arange(width)[None, :] + 0.5
    if shape == "rectangle":
        return np.ones((height, width), dtype=bool)
    if shape == "ellipse":
        rx, ry = width / 2.0, height / 2.0
        return ((xs - rx) / rx) ** 2 + ((ys - ry) / ry) ** 2 <= 1.0
    if shape == "triangle":
        # apex at the top middle, base along the bottom edge
        half = (ys / height) * (width / 2.0)
        return np.abs(xs - width / 2.0) <= half + 0.5
    raise ValueError(f"unknown shape {shape!r}")


def tight_box(mask: np.ndarray, ox: int = 0, oy: int = 0) -> BoundingBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(ox + cols[0], oy + rows[0], ox + cols[-1] + 1, oy + rows[-1] + 1)


def _draw_object(spec: SceneSpec, rng: np.random.Generator):
    """Pick a shape, size and position whose tight box honours the scene ranges."""
    lo_a, hi_a = spec.aspect_range
    lo_s, hi_s = spec.scale_range
    side = math.sqrt(spec.width * spec.height)
    for _ in range(MAX_DRAWS):
        shape = spec.shapes[rng.integers(len(spec.shapes))]
        scale = rng.uniform(lo_s, hi_s)
        aspect = math.exp(rng.uniform(math.log(lo_a), math.log(hi_a)))
        w = int(round(scale * side * math.sqrt(aspect)))
        h = int(round(scale * side / math.sqrt(aspect)))
        if not (1 <= w <= spec.width and 1 <= h <= spec.height):
            continue
        mask = shape_mask(shape, w, h)
        local = tight_box(mask)
        bw, bh = local.width, local.height
        if not lo_a <= bw / bh <= hi_a:
            continue
        if not lo_s <= math.sqrt(bw * bh) / side <= hi_s:
            continue
        x = int(rng.integers(0, spec.width - w + 1))
        y = int(rng.integers(0, spec.height - h + 1))
        return shape, mask, x, y
    raise ValueError(f"infeasible scene spec: no object fits after {MAX_DRAWS} draws ({spec})")


def _render(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, BoundingBox]:
    H, W = spec.height, spec.width
    background = rng.uniform(0.1, 0.3)
    image = np.full((H, W, 3), background) + rng.uniform(-0.03, 0.03, size=3)
    if spec.noise > 0:
        image += rng.normal(0.0, spec.noise, size=(H, W, 3))

    shape, mask, x, y = _draw_object(spec, rng)
    h, w = mask.shape
    gt = tight_box(mask, x, y)

    for _ in range(spec.distractors):
        for _ in range(MAX_DRAWS):
            dw = int(rng.integers(2, max(3, W // 5)))
            dh = int(rng.integers(2, max(3, H // 5)))
            dx = int(rng.integers(0, W - dw + 1))
            dy = int(rng.integers(0, H - dh + 1))
            dmask = shape_mask(spec.shapes[rng.integers(len(spec.shapes))], dw, dh)
            if iou(tight_box(dmask, dx, dy), gt) <= 0.2:
                break
        else:
            continue
        tone = background + rng.uniform(-0.08, 0.08)
        region = image[dy : dy + dh, dx : dx + dw]
        region[dmask] = tone

    colour = rng.uniform(0.75, 1.0, size=3)
    image[y : y + h, x : x + w][mask] = colour
    return np.clip(image, 0.0, 1.0), gt


def generate(spec: SceneSpec, n: int) -> list[Sample]:
    """Render ``n`` single-object scenes, deterministic in ``spec.seed``."""
    if n < 1:
        raise ValueError("need at least one sample")
    root = np.random.SeedSequence(spec.seed)
    samples = []
    for i, child in enumerate(root.spawn(n)):
        image, gt = _render(spec, np.random.default_rng(child))
        samples.append(Sample(image, gt, f"s{spec.seed}-{i:05d}"))
    return samples


def split(spec: SceneSpec, n_train: int = 253, n_test: int = 159) -> tuple[list[Sample], list[Sample]]:
    """Train/test sets from two derived seeds, so identifiers never collide."""
    train = generate(spec, n_train)
    test_spec = SceneSpec(**{**asdict(spec), "seed": spec.seed + 1_000_003})
    return train, generate(test_spec, n_test)


def write_dataset(samples: list[Sample], out_dir: str | os.PathLike, manifest: str = "manifest.csv") -> Path:
    """Write each sample as PPM plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# image_path,x0,y0,x1,y1"]
    for s in samples:
        name = f"{s.id}.ppm"
        write_pnm(out / name, s.image)
        lines.append(f"{name},{s.box.serialize()}")
    path = out / manifest
    path.write_text("\n".join(lines) + "\n")
    return path


class ManifestError(ValueError):
    pass


def load_manifest(path: str | os.PathLike) -> list[Sample]:
    """Read ``image_path,x0,y0,x1,y1`` lines; image paths are relative to the manifest."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    samples = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 'image_path,x0,y0,x1,y1', got {raw!r}")
        try:
            x0, y0, x1, y1 = (float(p) for p in parts[1:])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: non-numeric box in {raw!r}") from None
        if not (x1 > x0 and y1 > y0):
            raise ManifestError(f"{path}:{lineno}: box must satisfy x0 < x1 and y0 < y1, got {raw!r}")
        image_path = Path(parts[0])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        image = read_pnm(image_path)
        box = BoundingBox(x0, y0, x1, y1)
        if not box.inside(image_size(image)):
            raise ManifestError(
                f"{path}:{lineno}: box {box.serialize()} outside the "
                f"{image.shape[1]}x{image.shape[0]} image {image_path.name}"
            )
        samples.append(Sample(image, box, image_path.stem))
    return samples


def single_object(samples) -> list[Sample]:
    """Keep one sample per image id, the one with the largest ground-truth box."""
    chosen: dict[str, Sample] = {}
    for s in samples:
        best = chosen.get(s.id)
        if best is None:
            chosen[s.id] = s
            continue
        log.warning("%s has several annotated objects; keeping the largest box", s.id)
        if s.box.width * s.box.height > best.box.width * best.box.height:
            chosen[s.id] = s
    return list(chosen.values())
