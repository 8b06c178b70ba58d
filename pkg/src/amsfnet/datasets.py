"""Synthetic stand-in data, preprocessing (window/crop/resize) and training augmentation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import wavelet
from .episodes import DatasetManifest, Item


@dataclass
class Band:
    level: int
    direction: str  # "LH", "HL" or "HH"
    amplitude: float  # target pixel RMS of the texture component


@dataclass
class ClassSpec:
    name: str
    bands: list


@dataclass
class SyntheticRecipe:
    """Four texture classes over patient-specific smooth backgrounds.

    Each class plants random-sign coefficients in its own Haar bands, so the
    classes are separated by band energy while pixel means carry no class signal.
    """

    classes: list = field(default_factory=lambda: default_classes())
    patients_per_class: int = 5
    images_per_patient: int = 8
    image_size: int = 32
    seed: int = 0
    offset_range: tuple = (0.35, 0.65)
    blob_amplitude: float = 0.15
    blob_sigma: tuple = (4.0, 10.0)
    noise_sigma: float = 0.02
    patient_gain_jitter: float = 0.15
    image_shift: float = 2.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "classes" in d:
            d["classes"] = [
                c if isinstance(c, ClassSpec) else ClassSpec(c["name"], [Band(**b) for b in c["bands"]])
                for c in d["classes"]
            ]
        for k in ("offset_range", "blob_sigma"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def default_classes(amplitude: float = 0.08):
    """Classes separated by level and orientation (levels 1 to 3)."""
    return [
        ClassSpec("class_I", [Band(1, "HH", amplitude)]),
        ClassSpec("class_II", [Band(2, "LH", amplitude)]),
        ClassSpec("class_III", [Band(2, "HL", amplitude)]),
        ClassSpec("class_N", [Band(3, "HH", amplitude)]),
    ]


def level3_classes(amplitude: float = 0.08):
    """All class signal planted in level-3 bands."""
    a = amplitude / np.sqrt(2)
    return [
        ClassSpec("class_I", [Band(3, "LH", amplitude)]),
        ClassSpec("class_II", [Band(3, "HL", amplitude)]),
        ClassSpec("class_III", [Band(3, "HH", amplitude)]),
        ClassSpec("class_N", [Band(3, "LH", a), Band(3, "HL", a)]),
    ]


def band_texture(bands, size: int, rng):
    out = np.zeros((size, size))
    for b in bands:
        n = size // 2**b.level
        coef = rng.standard_normal((n, n)) * b.amplitude * 2**b.level
        out += wavelet.back_project(coef, b.direction, b.level, (size, size))
    return out


def _gaussian_blob(size, center, sigma):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2 * sigma**2))


def render_synthetic(recipe: SyntheticRecipe):
    """Build the dataset in memory: (manifest, {item_id: uint8 image})."""
    rng = np.random.default_rng(recipe.seed)
    s = recipe.image_size
    items, images = [], {}
    for spec in recipe.classes:
        for j in range(recipe.patients_per_class):
            pid = f"{spec.name}_p{j:02d}"
            offset = rng.uniform(*recipe.offset_range)
            blob_amp = rng.uniform(-recipe.blob_amplitude, recipe.blob_amplitude)
            sigma = rng.uniform(*recipe.blob_sigma)
            center = rng.uniform(0.25 * s, 0.75 * s, size=2)
            gain = 1 + rng.uniform(-recipe.patient_gain_jitter, recipe.patient_gain_jitter)
            for k in range(recipe.images_per_patient):
                c = center + rng.uniform(-recipe.image_shift, recipe.image_shift, size=2)
                img = offset + blob_amp * _gaussian_blob(s, c, sigma)
                img = img + gain * band_texture(spec.bands, s, rng)
                img = img + rng.normal(0, recipe.noise_sigma, (s, s))
                iid = f"{pid}_{k:03d}"
                images[iid] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
                items.append(Item(iid, f"images/{spec.name}/{iid}.png", spec.name, pid))
    return DatasetManifest(items), images


def generate_synthetic(recipe: SyntheticRecipe, out_dir) -> DatasetManifest:
    """Write PNG images and ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    manifest, images = render_synthetic(recipe)
    for it in manifest.items:
        p = out_dir / it.path
        p.parent.mkdir(parents=True, exist_ok=True)
        write_image(p, images[it.item_id])
    manifest.write(out_dir / "manifest.csv")
    return manifest


def write_image(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path, format="PNG")


def read_image(path):
    """Grayscale image as float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


class ImageStore:
    """Decoded images keyed by item id, loaded lazily from disk or supplied in memory."""

    def __init__(self, manifest: DatasetManifest, root=None, images=None, transform=None):
        self.paths = {it.item_id: it.path for it in manifest.items}
        self.root = Path(root) if root is not None else None
        self.cache = {}
        self.transform = transform
        if images is not None:
            for k, v in images.items():
                v = np.asarray(v)
                self.cache[k] = v / 255.0 if v.dtype == np.uint8 else v.astype(np.float64)

    def __getitem__(self, item_id):
        if item_id not in self.cache:
            if self.root is None:
                raise KeyError(item_id)
            img = read_image(self.root / self.paths[item_id])
            self.cache[item_id] = self.transform(img) if self.transform else img
        return self.cache[item_id]


@dataclass
class PreprocessPolicy:
    window_level: float | None = None  # None: use the image's own min/max
    window_width: float | None = None
    background_threshold: float = 0.01  # fraction of max intensity
    crop: bool = True
    size: int = 32


class BackgroundError(ValueError):
    pass


def apply_window(x, level=None, width=None):
    x = np.asarray(x, dtype=np.float64)
    if level is None or width is None:
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            return np.zeros_like(x)
        return (x - lo) / (hi - lo)
    return np.clip((x - (level - width / 2)) / width, 0, 1)


def crop_background(x, threshold: float = 0.01):
    """Tight bounding box of pixels brighter than ``threshold`` * max."""
    mask = x > threshold * x.max()
    if x.max() <= 0 or not mask.any():
        raise BackgroundError("image is entirely background")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return x[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def resize(x, size: int):
    if x.shape == (size, size):
        return x
    return np.clip(ndimage.zoom(x, (size / x.shape[0], size / x.shape[1]), order=1, mode="nearest", grid_mode=True), 0, 1)


def preprocess(image, policy: PreprocessPolicy = PreprocessPolicy()):
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("preprocess expects a grayscale (2D) image")
    x = apply_window(x, policy.window_level, policy.window_width)
    if policy.crop:
        x = crop_background(x, policy.background_threshold)
    elif x.max() <= 0:
        raise BackgroundError("image is entirely background")
    return resize(x, policy.size)


@dataclass
class AugmentPolicy:
    crop: bool = True
    crop_scale: tuple = (0.8, 1.0)  # fraction of the image area kept
    flip: bool = True
    rotate: bool = True
    max_angle: float = 10.0


def hflip(x):
    return x[..., ::-1]


def augment(image, rng, policy: AugmentPolicy = AugmentPolicy()):
    """Random resized crop, horizontal flip (p=0.5), rotation uniform in +-max_angle."""
    x = np.asarray(image, dtype=np.float64)
    h, w = x.shape
    if policy.crop:
        side = np.sqrt(rng.uniform(*policy.crop_scale))
        ch, cw = max(1, round(side * h)), max(1, round(side * w))
        top = rng.integers(0, h - ch + 1)
        left = rng.integers(0, w - cw + 1)
        x = x[top : top + ch, left : left + cw]
        if x.shape != (h, w):
            x = ndimage.zoom(x, (h / ch, w / cw), order=1, mode="nearest", grid_mode=True)
    if policy.flip and rng.random() < 0.5:
        x = hflip(x)
    if policy.rotate:
        angle = rng.uniform(-policy.max_angle, policy.max_angle)
        x = ndimage.rotate(x, angle, reshape=False, order=1, mode="reflect")
    return np.clip(x, 0, 1)
