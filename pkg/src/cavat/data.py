"""Synthetic connected-shape dataset: generation, text serialization, splits.

Images are noisy renderings of a single connected blob (union of overlapping
discs): foreground intensity offset, a smooth background intensity ramp, and
Gaussian pixel noise. Ground-truth masks are the clean blobs and are
guaranteed globally connected, re-checked with flood fill at generation time.

On-disk format (diff-able plain text, one directory per dataset):
    meta.txt          key = value lines (counts, generator settings)
    manifest.txt      key = value lines; labeled/unlabeled/val id lists
    images/NNNN.txt   header "H W 1", then H rows of W %.17g intensities
    masks/NNNN.txt    header "H W C", then H rows of W integer labels < C
%.17g round-trips float64 exactly, so write-then-read is bit identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import DatasetParseError, GenerationFailureError, InvalidArgumentError
from .rng import RngState

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ShapeParams:
    """Difficulty knobs for the generator."""

    discs_min: int = 2
    discs_max: int = 5
    radius_min_frac: float = 0.10  # of min(h, w)
    radius_max_frac: float = 0.22
    fg_offset: float = 1.0
    noise_sigma: float = 0.6
    bg_gradient_amp: float = 0.4
    area_min: float = 0.05
    area_max: float = 0.40
    max_retries: int = 80

    def __post_init__(self):
        if self.discs_min < 1 or self.discs_max < self.discs_min:
            raise InvalidArgumentError("disc count range invalid")
        if not (0 < self.radius_min_frac <= self.radius_max_frac):
            raise InvalidArgumentError("radius range invalid")
        if not (0 <= self.area_min < self.area_max <= 1):
            raise InvalidArgumentError("area band invalid")


@dataclass
class Manifest:
    labeled: list = field(default_factory=list)
    unlabeled: list = field(default_factory=list)
    val: list = field(default_factory=list)


@dataclass
class Dataset:
    images: np.ndarray  # (n, h, w) float64, raw intensities
    masks: np.ndarray  # (n, h, w) int64
    classes: int = 2
    meta: dict = field(default_factory=dict)
    manifest: Manifest | None = None

    def __len__(self):
        return self.images.shape[0]


def _render_blob(h, w, params: ShapeParams, rng: RngState) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    fg = np.zeros((h, w), dtype=bool)
    n_discs = params.discs_min + int(
        rng.integers(params.discs_max - params.discs_min + 1)
    )
    rmin = params.radius_min_frac * min(h, w)
    rmax = params.radius_max_frac * min(h, w)
    # first disc anywhere in the central region; later discs centered on an
    # existing foreground pixel, which keeps the union connected
    cy = h / 4 + float(rng.uniform()) * h / 2
    cx = w / 4 + float(rng.uniform()) * w / 2
    for _ in range(n_discs):
        r = rmin + float(rng.uniform()) * (rmax - rmin)
        fg |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        inside = np.argwhere(fg)
        pick = inside[int(rng.integers(inside.shape[0]))]
        cy, cx = float(pick[0]), float(pick[1])
    return fg


def gen_shapes(n: int, h: int, w: int, params: ShapeParams, rng: RngState) -> Dataset:
    """Generate ``n`` image/mask pairs; every mask is globally connected and
    its foreground fraction falls inside the configured area band."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if h < 16 or w < 16:
        raise InvalidArgumentError(f"grid must be at least 16x16, got {h}x{w}")
    images = np.empty((n, h, w), dtype=np.float64)
    masks = np.empty((n, h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    for idx in range(n):
        sub = rng.spawn("image", idx)
        for attempt in range(params.max_retries + 1):
            fg = _render_blob(h, w, params, sub)
            frac = fg.mean()
            if params.area_min <= frac <= params.area_max and grid.is_connected(fg):
                break
        else:
            raise GenerationFailureError(
                f"image {idx}: no valid shape in {params.max_retries} retries "
                f"(area band {params.area_min}..{params.area_max})"
            )
        gx = (float(sub.uniform()) - 0.5) * 2 * params.bg_gradient_amp
        gy = (float(sub.uniform()) - 0.5) * 2 * params.bg_gradient_amp
        ramp = gx * (xx / max(w - 1, 1) - 0.5) + gy * (yy / max(h - 1, 1) - 0.5)
        noise = params.noise_sigma * sub.normal((h, w))
        images[idx] = params.fg_offset * fg + ramp + noise
        masks[idx] = fg
    meta = {
        "n": n,
        "h": h,
        "w": w,
        "classes": 2,
        "seed": rng.seed,
        "noise_sigma": params.noise_sigma,
        "fg_offset": params.fg_offset,
        "bg_gradient_amp": params.bg_gradient_amp,
        "format_version": FORMAT_VERSION,
    }
    return Dataset(images=images, masks=masks, classes=2, meta=meta)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; perturbation radii are defined in these units."""
    a = np.asarray(image, dtype=np.float64)
    std = a.std()
    return (a - a.mean()) / (std if std > 0 else 1.0)


def split(ds: Dataset, labeled_ratio: float, val_fraction: float, rng: RngState) -> Dataset:
    """Seeded partition into labeled/unlabeled train sets plus validation.

    The labeled count is the ratio of the training set rounded to nearest,
    clamped to at least 1.
    """
    if not (0 < labeled_ratio <= 1):
        raise InvalidArgumentError(f"labeled_ratio must be in (0, 1], got {labeled_ratio}")
    if not (0 <= val_fraction < 1):
        raise InvalidArgumentError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = len(ds)
    order = rng.permutation(n).tolist()
    n_val = int(round(n * val_fraction))
    val = sorted(order[:n_val])
    train = order[n_val:]
    n_labeled = int(round(len(train) * labeled_ratio))
    if n_labeled < 1:
        import logging

        logging.getLogger(__name__).warning(
            "labeled_ratio %g yields 0 labeled images; clamping to 1", labeled_ratio
        )
        n_labeled = 1
    labeled = sorted(train[:n_labeled])
    unlabeled = sorted(train[n_labeled:])
    manifest = Manifest(labeled=labeled, unlabeled=unlabeled, val=val)
    return replace_dataset(ds, manifest)


def replace_dataset(ds: Dataset, manifest: Manifest) -> Dataset:
    return Dataset(
        images=ds.images, masks=ds.masks, classes=ds.classes, meta=dict(ds.meta),
        manifest=manifest,
    )


# ------------------------------------------------------------------- files --

def _write_grid(path, header, rows, fmt):
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(" ".join(fmt(v) for v in row) + "\n")


def _write_kv(path, pairs):
    with open(path, "w") as f:
        for k, v in pairs:
            f.write(f"{k} = {v}\n")


def write_dataset(ds: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    n, h, w = ds.images.shape
    for i in range(n):
        _write_grid(
            os.path.join(out_dir, "images", f"{i:04d}.txt"),
            f"{h} {w} 1",
            ds.images[i],
            lambda v: f"{v:.17g}",
        )
        _write_grid(
            os.path.join(out_dir, "masks", f"{i:04d}.txt"),
            f"{h} {w} {ds.classes}",
            ds.masks[i],
            lambda v: str(int(v)),
        )
    _write_kv(os.path.join(out_dir, "meta.txt"), sorted(ds.meta.items()))
    man = ds.manifest or Manifest()
    _write_kv(
        os.path.join(out_dir, "manifest.txt"),
        [
            ("labeled", " ".join(map(str, man.labeled))),
            ("unlabeled", " ".join(map(str, man.unlabeled))),
            ("val", " ".join(map(str, man.val))),
        ],
    )


def _read_kv(path):
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetParseError("expected 'key = value'", path=path, line=ln)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _read_grid(path, expect_classes=None):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetParseError("empty grid file", path=path, line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise DatasetParseError("header must be 'H W C'", path=path, line=1)
    try:
        h, w, c = (int(x) for x in head)
    except ValueError:
        raise DatasetParseError("non-integer header", path=path, line=1)
    if len(lines) < 1 + h:
        raise DatasetParseError(
            f"truncated grid: expected {h} rows, found {len(lines) - 1}",
            path=path,
            line=len(lines),
        )
    rows = []
    for i in range(h):
        vals = lines[1 + i].split()
        if len(vals) != w:
            raise DatasetParseError(
                f"expected {w} values, found {len(vals)}", path=path, line=2 + i
            )
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise DatasetParseError("non-numeric value", path=path, line=2 + i)
    a = np.array(rows, dtype=np.float64)
    if expect_classes is not None and c != expect_classes:
        raise DatasetParseError(f"class count {c} != {expect_classes}", path=path, line=1)
    return a, c


def read_dataset(data_dir) -> Dataset:
    """Read a dataset directory; raises DatasetParseError before returning
    anything partial."""
    meta = _read_kv(os.path.join(data_dir, "meta.txt"))
    try:
        n = int(meta["n"])
        classes = int(meta.get("classes", 2))
    except (KeyError, ValueError):
        raise DatasetParseError("meta.txt missing integer 'n'", path=str(data_dir))
    images = []
    masks = []
    for i in range(n):
        img, c_img = _read_grid(os.path.join(data_dir, "images", f"{i:04d}.txt"))
        if c_img != 1:
            raise DatasetParseError(
                "image header channel count must be 1",
                path=os.path.join(data_dir, "images", f"{i:04d}.txt"),
                line=1,
            )
        mask, _ = _read_grid(
            os.path.join(data_dir, "masks", f"{i:04d}.txt"), expect_classes=classes
        )
        if img.shape != mask.shape:
            raise DatasetParseError(
                f"image/mask shape mismatch for id {i}", path=str(data_dir)
            )
        m = mask.astype(np.int64)
        if (m != mask).any() or m.min() < 0 or m.max() >= classes:
            raise DatasetParseError(
                f"mask {i} has non-integer or out-of-range labels", path=str(data_dir)
            )
        images.append(img)
        masks.append(m)
    man_kv = _read_kv(os.path.join(data_dir, "manifest.txt"))
    manifest = Manifest(
        labeled=[int(x) for x in man_kv.get("labeled", "").split()],
        unlabeled=[int(x) for x in man_kv.get("unlabeled", "").split()],
        val=[int(x) for x in man_kv.get("val", "").split()],
    )
    typed_meta = {}
    for k, v in meta.items():
        try:
            typed_meta[k] = int(v)
        except ValueError:
            try:
                typed_meta[k] = float(v)
            except ValueError:
                typed_meta[k] = v
    return Dataset(
        images=np.stack(images),
        masks=np.stack(masks),
        classes=classes,
        meta=typed_meta,
        manifest=manifest,
    )
