"""Deterministic synthetic texture corpus in the MVTec directory layout.

Normal images are periodic textures (stripes, checkerboards, blobs, dot
lattices) with seeded phase, orientation, brightness and pixel-noise jitter.
Anomalous images paste a rectangle or ellipse whose pixels are shifted in
intensity and perturbed with noise, together with an exact binary mask.
Every image is a pure function of ``(seed, class index, split, index)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..kvfile import parse_lines
from ..errors import ConfigError
from .pnm import save_pgm, save_ppm
from .rng import Rng, derive_seed

FAMILIES = ("stripes", "checker", "blobs", "dots")
SHAPES = ("rect", "ellipse")


class CorpusSpecError(ConfigError):
    pass


def _hex(colour: str) -> tuple[float, float, float]:
    colour = colour.lstrip("#")
    if len(colour) != 6:
        raise CorpusSpecError(f"palette colour {colour!r} is not RRGGBB")
    return tuple(int(colour[i:i + 2], 16) / 255.0 for i in (0, 2, 4))


@dataclass(frozen=True)
class TextureClass:
    name: str
    family: str
    period: int
    low: tuple[float, float, float]
    high: tuple[float, float, float]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CorpusSpecError(f"class {self.name!r}: unknown pattern family {self.family!r}")
        if self.period < 2:
            raise CorpusSpecError(f"class {self.name!r}: period must be >= 2")

    @classmethod
    def parse(cls, text: str) -> "TextureClass":
        parts = [p.strip() for p in text.split(":")]
        if len(parts) != 5:
            raise CorpusSpecError(f"class descriptor {text!r} is not name:family:period:RRGGBB:RRGGBB")
        return cls(parts[0], parts[1], int(parts[2]), _hex(parts[3]), _hex(parts[4]))

    def format(self) -> str:
        def h(c):
            return "".join(f"{round(v * 255):02x}" for v in c)
        return f"{self.name}:{self.family}:{self.period}:{h(self.low)}:{h(self.high)}"


DESK_CLASSES = (
    TextureClass("stripes", "stripes", 8, _hex("2b4c6f"), _hex("e6dcb8")),
    TextureClass("checker", "checker", 8, _hex("3a3a3a"), _hex("c8c8c8")),
    TextureClass("blobs", "blobs", 12, _hex("5b3a29"), _hex("d9a066")),
    TextureClass("dots", "dots", 10, _hex("1e5631"), _hex("a4de02")),
)


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 7
    image_size: int = 64
    train: int = 40
    test_normal: int = 10
    test_anomalous: int = 10
    classes: tuple[TextureClass, ...] = DESK_CLASSES
    defect_shapes: tuple[str, ...] = SHAPES
    defect_size: tuple[int, int] = (8, 18)  # side length range in pixels
    defect_delta: tuple[int, int] = (50, 90)  # minimum intensity shift range, 8-bit units
    defect_texture: int = 25  # extra non-negative per-pixel shift, 8-bit units
    noise: float = 0.02
    jitter: float = 0.2  # phase offset range as a fraction of the period

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "defect_shapes", tuple(self.defect_shapes))
        if not self.classes:
            raise CorpusSpecError("corpus needs at least one class")
        if len({c.name for c in self.classes}) != len(self.classes):
            raise CorpusSpecError("class names must be unique")
        if self.image_size < 16:
            raise CorpusSpecError("image_size must be >= 16")
        if min(self.train, self.test_normal, self.test_anomalous) < 0:
            raise CorpusSpecError("counts must be non-negative")
        lo, hi = self.defect_size
        if not 1 <= lo <= hi:
            raise CorpusSpecError(f"bad defect_size range {self.defect_size}")
        if hi > self.image_size:
            raise CorpusSpecError(f"defect size {hi} larger than image size {self.image_size}")
        dlo, dhi = self.defect_delta
        if not 1 <= dlo <= dhi:
            raise CorpusSpecError(f"bad defect_delta range {self.defect_delta}")
        if dhi + self.defect_texture > 127:
            raise CorpusSpecError("defect_delta max + defect_texture must not exceed 127")
        if not 0.0 <= self.jitter <= 1.0:
            raise CorpusSpecError(f"jitter must lie in [0, 1], got {self.jitter}")
        if any(s not in SHAPES for s in self.defect_shapes) or not self.defect_shapes:
            raise CorpusSpecError(f"defect_shapes must be drawn from {SHAPES}")

    @classmethod
    def from_text(cls, text: str, source: str = "<corpus>") -> "CorpusSpec":
        updates: dict = {}
        classes = []
        for key, value in parse_lines(text, source):
            if key == "class":
                classes.append(TextureClass.parse(value))
            elif key in ("seed", "image_size", "train", "test_normal", "test_anomalous", "defect_texture"):
                updates[key] = int(value)
            elif key in ("noise", "jitter"):
                updates[key] = float(value)
            elif key in ("defect_size", "defect_delta"):
                updates[key] = tuple(int(v) for v in value.split(","))
            elif key == "defect_shapes":
                updates[key] = tuple(v.strip() for v in value.split(","))
            else:
                raise CorpusSpecError(f"{source}: unknown corpus key {key!r}")
        if classes:
            updates["classes"] = tuple(classes)
        return dataclasses.replace(cls(), **updates)

    @classmethod
    def from_file(cls, path: str | Path) -> "CorpusSpec":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))

    def to_text(self) -> str:
        lines = [
            f"seed = {self.seed}",
            f"image_size = {self.image_size}",
            f"train = {self.train}",
            f"test_normal = {self.test_normal}",
            f"test_anomalous = {self.test_anomalous}",
        ]
        lines += [f"class = {c.format()}" for c in self.classes]
        lines += [
            f"defect_shapes = {','.join(self.defect_shapes)}",
            f"defect_size = {self.defect_size[0]},{self.defect_size[1]}",
            f"defect_delta = {self.defect_delta[0]},{self.defect_delta[1]}",
            f"defect_texture = {self.defect_texture}",
            f"noise = {self.noise!r}",
            f"jitter = {self.jitter!r}",
        ]
        return "\n".join(lines) + "\n"


def _pattern(cls: TextureClass, size: int, rng: Rng, jitter: float) -> np.ndarray:
    """Texture in [0, 1]; ``jitter`` scales the seeded phase and orientation offsets (1 = a full period)."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    p = cls.period

    def offset() -> float:
        return rng.uniform(low=-jitter, high=jitter) * p

    if cls.family == "stripes":
        theta = np.deg2rad(30.0 + rng.uniform(low=-12.0, high=12.0) * jitter)
        return 0.5 + 0.5 * np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta) + offset()) / p)
    if cls.family == "checker":
        ox, oy = offset(), offset()
        return ((np.floor((x + ox) / p) + np.floor((y + oy) / p)) % 2).astype(np.float64)
    if cls.family == "dots":
        ox, oy = offset(), offset()
        dx = (x + ox) % p - p / 2
        dy = (y + oy) % p - p / 2
        return (np.hypot(dx, dy) < p / 3.5).astype(np.float64)
    # blobs: a jittered lattice of soft bumps
    out = np.zeros((size, size))
    sigma = p / 3.0
    ox, oy = offset(), offset()
    for cy in np.arange(-p, size + p, p):
        for cx in np.arange(-p, size + p, p):
            jx, jy = rng.uniform(2, low=-p / 4, high=p / 4) * min(1.0, 2.0 * jitter)
            out += np.exp(-((x - cx - ox - jx) ** 2 + (y - cy - oy - jy) ** 2) / (2 * sigma ** 2))
    return np.clip(out, 0.0, 1.0)


def render_normal(spec: CorpusSpec, class_index: int, split: str, index: int) -> np.ndarray:
    """``H x W x 3`` uint8 defect-free texture."""
    rng = Rng(derive_seed(spec.seed, class_index, split, index))
    return _render_base(spec, class_index, rng)


def _render_base(spec: CorpusSpec, class_index: int, rng: Rng) -> np.ndarray:
    cls = spec.classes[class_index]
    size = spec.image_size
    pat = _pattern(cls, size, rng, spec.jitter)
    low, high = np.array(cls.low), np.array(cls.high)
    img = low[:, None, None] * (1 - pat) + high[:, None, None] * pat
    img = img + rng.uniform(low=-0.03, high=0.03)
    img = img + spec.noise * rng.normal((3, size, size))
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


@dataclass(frozen=True)
class Defect:
    shape: str
    mask: np.ndarray
    base: np.ndarray
    image: np.ndarray


def render_anomalous(spec: CorpusSpec, class_index: int, index: int) -> Defect:
    rng = Rng(derive_seed(spec.seed, class_index, "test_anomalous", index))
    base = _render_base(spec, class_index, rng)
    size = spec.image_size
    shape = spec.defect_shapes[rng.integers(0, len(spec.defect_shapes))]
    lo, hi = spec.defect_size
    h, w = rng.integers(lo, hi + 1), rng.integers(lo, hi + 1)
    top, left = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
    mask = np.zeros((size, size), dtype=bool)
    if shape == "rect":
        mask[top:top + h, left:left + w] = True
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = top + (h - 1) / 2, left + (w - 1) / 2
        mask = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
    if not mask.any():
        mask[top + h // 2, left + w // 2] = True
    delta = rng.integers(spec.defect_delta[0], spec.defect_delta[1] + 1)
    # one preferred direction per channel, so the defect colour leaves the class palette
    sign = np.array([1 if rng.integers(0, 2) else -1 for _ in range(3)])
    texture = np.floor(rng.uniform((size, size), 0.0, spec.defect_texture + 1)).astype(np.int64)
    shift = (delta + texture)[:, :, None]
    b = base.astype(np.int64)
    up, down = b + shift, b - shift
    shifted = np.where(sign > 0, np.where(up <= 255, up, down), np.where(down >= 0, down, up))
    image = np.where(mask[:, :, None], shifted, b).astype(np.uint8)
    return Defect(shape, mask, base, image)


def generate_corpus(spec: CorpusSpec, out_root: str | Path) -> Path:
    """Write the corpus under ``out_root`` and return the root path."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "corpus_spec.txt").write_text(spec.to_text(), encoding="utf-8")
    for ci, cls in enumerate(spec.classes):
        base = root / cls.name
        train_dir = base / "train" / "good"
        good_dir = base / "test" / "good"
        train_dir.mkdir(parents=True, exist_ok=True)
        good_dir.mkdir(parents=True, exist_ok=True)
        for i in range(spec.train):
            save_ppm(render_normal(spec, ci, "train", i), train_dir / f"{i:03d}.ppm")
        for i in range(spec.test_normal):
            save_ppm(render_normal(spec, ci, "test_normal", i), good_dir / f"{i:03d}.ppm")
        for i in range(spec.test_anomalous):
            d = render_anomalous(spec, ci, i)
            img_dir = base / "test" / d.shape
            gt_dir = base / "ground_truth" / d.shape
            img_dir.mkdir(parents=True, exist_ok=True)
            gt_dir.mkdir(parents=True, exist_ok=True)
            save_ppm(d.image, img_dir / f"{i:03d}.ppm")
            save_pgm(d.mask, gt_dir / f"{i:03d}_mask.pgm")
    return root
