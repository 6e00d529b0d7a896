"""MVTec-style dataset trees.

::

    root/<class>/train/good/*.ppm
    root/<class>/test/good/*.ppm
    root/<class>/test/<defect>/*.ppm
    root/<class>/ground_truth/<defect>/<stem>_mask.pgm
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pnm import load_image, load_mask

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    label: int  # 0 normal, 1 anomalous
    class_name: str
    mask: np.ndarray | None = None


@dataclass(frozen=True)
class SampleRef:
    path: Path
    label: int
    class_name: str
    split: str = "train"
    defect: str = "good"
    mask_path: Path | None = None

    def load(self) -> Sample:
        image = load_image(self.path)
        if self.mask_path is not None:
            mask = load_mask(self.mask_path)
        elif self.split == "test":
            mask = np.zeros(image.shape[1:], dtype=bool)
        else:
            mask = None
        return Sample(image, self.label, self.class_name, mask)


@dataclass
class ClassSplit:
    name: str
    train: list[SampleRef] = field(default_factory=list)
    test: list[SampleRef] = field(default_factory=list)


@dataclass
class Dataset:
    root: Path
    classes: list[ClassSplit]

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def __getitem__(self, name: str) -> ClassSplit:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def counts(self) -> dict[str, dict[str, int]]:
        return {
            c.name: {
                "train": len(c.train),
                "test_normal": sum(1 for s in c.test if s.label == 0),
                "test_anomalous": sum(1 for s in c.test if s.label == 1),
            }
            for c in self.classes
        }


def _images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _find_mask(gt_dir: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        candidate = gt_dir / f"{stem}_mask{suffix}"
        if candidate.is_file():
            return candidate
    return None


def scan_layout(root: str | Path) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root not found: {root}")
    classes = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        split = ClassSplit(class_dir.name)
        split.train = [SampleRef(p, 0, class_dir.name) for p in _images(class_dir / "train" / "good")]
        if not split.train:
            raise LayoutError(f"class {class_dir.name!r} has no training images under train/good")
        test_dir = class_dir / "test"
        if test_dir.is_dir():
            for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
                defect = defect_dir.name
                for img in _images(defect_dir):
                    if defect == "good":
                        split.test.append(SampleRef(img, 0, class_dir.name, "test"))
                        continue
                    mask = _find_mask(class_dir / "ground_truth" / defect, img.stem)
                    if mask is None:
                        raise LayoutError(
                            f"class {class_dir.name!r}: anomalous image {defect}/{img.name} has no mask "
                            f"(expected ground_truth/{defect}/{img.stem}_mask.pgm)")
                    split.test.append(SampleRef(img, 1, class_dir.name, "test", defect, mask))
        classes.append(split)
    if not classes:
        raise LayoutError(f"no class directories under {root}")
    return Dataset(root, classes)
