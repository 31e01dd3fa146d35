"""Image loading, deterministic train/test manifests, and the synthetic leaf fixture.

Manifest format (JSON, ``format_version`` 1)::

    {
      "format_version": 1,
      "root": "<dataset root, relative to the manifest file>",
      "seed": 0,
      "healthy_train_fraction": 0.5,
      "diseased_test_count": 100,          # or "all"
      "shuffle": "mt19937-fisher-yates",
      "counts": {"healthy": {"train": 76, "test": 76}, "diseased": {"train": 0, "test": 100}},
      "entries": [{"path": "healthy/a.png", "label": "healthy", "split": "train"}, ...]
    }

Shuffling: file names of each class are sorted (byte order of the POSIX
relative path), then permuted with a Durstenfeld Fisher-Yates pass driven by
Python's ``random.Random(seed)`` (MT19937): for ``i`` from ``n-1`` down to
``1``, swap positions ``i`` and ``rng.randrange(i + 1)``. The healthy and
diseased lists are shuffled by the same generator, healthy first.
"""
from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from colorrecon.colorspace import lab_to_rgb

MANIFEST_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SHUFFLE_NAME = "mt19937-fisher-yates"

HEALTHY = "healthy"
DISEASED = "diseased"


class DatasetError(Exception):
    pass


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode a PNG/JPEG into an (H, W, 3) uint8 array.

    Alpha is dropped, grayscale is replicated to three channels and 16-bit
    samples keep only their high byte.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I;16N", "I"):
                arr = np.asarray(im, dtype=np.uint32)
                if mode == "I" and arr.max(initial=0) > 0xFFFF:
                    raise DatasetError(f"{path}: unsupported 32-bit image")
                gray = (arr >> 8).astype(np.uint8)
                return np.repeat(gray[..., None], 3, axis=2)
            if mode != "RGB":
                im = im.convert("RGB")
            return np.array(im, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


def save_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an 8-bit RGB or L image atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(np.ascontiguousarray(img)).save(tmp, format="PNG")
    os.replace(tmp, path)


def _list_images(directory: Path) -> list[str]:
    return sorted(
        p.name for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def seeded_shuffle(items: list, rng: random.Random) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.randrange(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str

    @property
    def is_anomalous(self) -> bool:
        return self.label == DISEASED


@dataclass
class Manifest:
    root: Path
    seed: int
    healthy_train_fraction: float
    diseased_test_count: int | str
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise DatasetError("manifest paths are not unique")
        for e in self.entries:
            if e.label not in (HEALTHY, DISEASED):
                raise DatasetError(f"unknown label {e.label!r} for {e.path}")
            if e.split not in ("train", "test"):
                raise DatasetError(f"unknown split {e.split!r} for {e.path}")
            if e.split == "train" and e.label == DISEASED:
                raise DatasetError(f"diseased image {e.path} is in the train split")

    @property
    def counts(self) -> dict[str, dict[str, int]]:
        counts = {lab: {"train": 0, "test": 0} for lab in (HEALTHY, DISEASED)}
        for e in self.entries:
            counts[e.label][e.split] += 1
        return counts

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def to_json(self, manifest_path: str | os.PathLike) -> str:
        base = Path(manifest_path).resolve().parent
        root = os.path.relpath(self.root.resolve(), base)
        doc = {
            "format_version": MANIFEST_VERSION,
            "root": Path(root).as_posix(),
            "seed": self.seed,
            "healthy_train_fraction": self.healthy_train_fraction,
            "diseased_test_count": self.diseased_test_count,
            "shuffle": SHUFFLE_NAME,
            "counts": self.counts,
            "entries": [
                {"path": e.path, "label": e.label, "split": e.split} for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    def save(self, manifest_path: str | os.PathLike) -> None:
        manifest_path = Path(manifest_path)
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = manifest_path.with_name(f".{manifest_path.name}.tmp")
        tmp.write_text(self.to_json(manifest_path), encoding="utf-8")
        os.replace(tmp, manifest_path)

    @classmethod
    def load(cls, manifest_path: str | os.PathLike) -> "Manifest":
        manifest_path = Path(manifest_path)
        try:
            doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
        if doc.get("format_version") != MANIFEST_VERSION:
            raise DatasetError(
                f"{manifest_path}: unsupported manifest version {doc.get('format_version')!r}"
            )
        entries = [ManifestEntry(e["path"], e["label"], e["split"]) for e in doc["entries"]]
        manifest = cls(
            root=manifest_path.resolve().parent / doc["root"],
            seed=doc["seed"],
            healthy_train_fraction=doc["healthy_train_fraction"],
            diseased_test_count=doc["diseased_test_count"],
            entries=entries,
        )
        if manifest.counts != doc["counts"]:
            raise DatasetError(f"{manifest_path}: counts do not match the entry list")
        return manifest


def build_manifest(
    root: str | os.PathLike,
    healthy_train_fraction: float = 0.5,
    diseased_test_count: int | str | None = "all",
    seed: int = 0,
) -> Manifest:
    """Split ``root/healthy`` and ``root/diseased`` into train/test.

    The first ``round_half_up(fraction * n_healthy)`` shuffled healthy images
    go to train and the rest to test; the first ``diseased_test_count``
    shuffled diseased images go to test and the remainder is left out.
    """
    root = Path(root)
    if not 0.0 < healthy_train_fraction < 1.0:
        raise DatasetError(f"healthy_train_fraction must be in (0, 1), got {healthy_train_fraction}")
    dirs = {lab: root / lab for lab in (HEALTHY, DISEASED)}
    for lab, d in dirs.items():
        if not d.is_dir():
            raise DatasetError(f"missing {lab} directory: {d}")
    healthy = _list_images(dirs[HEALTHY])
    diseased = _list_images(dirs[DISEASED])
    if not healthy:
        raise DatasetError(f"no healthy images in {dirs[HEALTHY]}")
    if diseased_test_count is None or diseased_test_count == "all":
        n_diseased = len(diseased)
        diseased_test_count = "all"
    else:
        n_diseased = int(diseased_test_count)
        if n_diseased < 0 or n_diseased > len(diseased):
            raise DatasetError(
                f"diseased_test_count={n_diseased} but only {len(diseased)} diseased images"
            )

    rng = random.Random(seed)
    healthy = seeded_shuffle(healthy, rng)
    diseased = seeded_shuffle(diseased, rng)
    n_train = math.floor(healthy_train_fraction * len(healthy) + 0.5)

    entries = [
        ManifestEntry(f"{HEALTHY}/{name}", HEALTHY, "train" if i < n_train else "test")
        for i, name in enumerate(healthy)
    ]
    entries += [ManifestEntry(f"{DISEASED}/{name}", DISEASED, "test") for name in diseased[:n_diseased]]
    return Manifest(root, seed, healthy_train_fraction, diseased_test_count, entries)


# -- synthetic fixture -------------------------------------------------------

def _ellipse(h: int, w: int, cy: float, cx: float, ry: float, rx: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(angle), math.sin(angle)
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return u * u + v * v <= 1.0


def _leaf(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (lab image, leaf mask) for one healthy leaf on black."""
    h = w = size
    cy = size / 2 + rng.uniform(-0.05, 0.05) * size
    cx = size / 2 + rng.uniform(-0.05, 0.05) * size
    ry = rng.uniform(0.38, 0.44) * size
    rx = rng.uniform(0.24, 0.32) * size
    angle = rng.uniform(-0.6, 0.6)
    leaf = _ellipse(h, w, cy, cx, ry, rx, angle)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / size
    texture = np.zeros((h, w))
    for _ in range(4):
        fy, fx = rng.uniform(2.0, 9.0, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        texture += np.sin(2 * math.pi * (fy * yy + fx * xx) + phase)
    texture /= 4.0
    # midrib along the leaf's main axis
    c, s = math.cos(angle), math.sin(angle)
    across = np.abs((xx * size - cx) * c + (yy * size - cy) * s)
    vein = np.exp(-(across / 1.5) ** 2)

    lab = np.zeros((h, w, 3))
    lab[..., 0] = rng.uniform(48.0, 54.0) + 5.0 * texture + 6.0 * vein
    lab[..., 1] = rng.uniform(-34.0, -28.0) + 1.5 * texture
    lab[..., 2] = rng.uniform(32.0, 40.0) + 2.0 * texture
    lab[~leaf] = 0.0
    return lab, leaf


def _add_blotches(rng: np.random.Generator, lab: np.ndarray, leaf: np.ndarray) -> np.ndarray:
    h, w = leaf.shape
    ys, xs = np.nonzero(leaf)
    mask = np.zeros_like(leaf)
    for _ in range(int(rng.integers(1, 6))):
        k = int(rng.integers(len(ys)))
        r = rng.uniform(0.06, 0.11) * h
        blob = _ellipse(h, w, ys[k], xs[k], r, r * rng.uniform(0.6, 1.0), rng.uniform(0, math.pi))
        blob &= leaf
        if rng.random() < 0.5:  # brown lesion
            color = (rng.uniform(30.0, 38.0), rng.uniform(12.0, 20.0), rng.uniform(24.0, 32.0))
        else:  # yellow discoloration
            color = (rng.uniform(76.0, 84.0), rng.uniform(-6.0, 2.0), rng.uniform(60.0, 72.0))
        lab[blob] = color
        mask |= blob
    return mask


def synth_fixture(
    out: str | os.PathLike,
    seed: int = 0,
    n_healthy_train: int = 40,
    n_healthy_test: int = 40,
    n_diseased_test: int = 40,
    size: int = 128,
) -> Path:
    """Write a synthetic leaf dataset under ``out``.

    Layout: ``healthy/*.png``, ``diseased/*.png``, ``masks/<stem>.png`` (blotch
    mask per diseased image) and ``leaf_masks/<stem>.png`` for every image.
    The healthy count is ``n_healthy_train + n_healthy_test``; splitting is
    left to :func:`build_manifest`.
    """
    for n in (n_healthy_train, n_healthy_test, n_diseased_test, size):
        if n <= 0:
            raise DatasetError("fixture counts and size must be positive")
    out = Path(out)
    rng = np.random.default_rng(seed)
    n_healthy = n_healthy_train + n_healthy_test
    for i in range(n_healthy):
        lab, leaf = _leaf(rng, size)
        stem = f"healthy_{i:04d}"
        save_png(out / HEALTHY / f"{stem}.png", lab_to_rgb(lab))
        save_png(out / "leaf_masks" / f"{stem}.png", leaf.astype(np.uint8) * 255)
    for i in range(n_diseased_test):
        lab, leaf = _leaf(rng, size)
        mask = _add_blotches(rng, lab, leaf)
        stem = f"diseased_{i:04d}"
        save_png(out / DISEASED / f"{stem}.png", lab_to_rgb(lab))
        save_png(out / "masks" / f"{stem}.png", mask.astype(np.uint8) * 255)
        save_png(out / "leaf_masks" / f"{stem}.png", leaf.astype(np.uint8) * 255)
    return out


def load_mask(path: str | os.PathLike) -> np.ndarray:
    return load_image(path)[..., 0] > 127

