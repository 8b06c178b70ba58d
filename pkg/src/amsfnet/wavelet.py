"""Orthonormal 2D Haar transform: analysis cascade, synthesis and directional back-projection.

All functions act on the last two axes, so leading batch/channel axes are
transformed independently. Row index is vertical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_LEVELS = 4
DIRECTIONS = ("LH", "HL", "HH")


class DimensionError(ValueError):
    pass


class LevelError(ValueError):
    pass


def _check_levels(levels: int) -> None:
    if not isinstance(levels, (int, np.integer)) or not 1 <= levels <= MAX_LEVELS:
        raise LevelError(f"levels must be an integer in 1..{MAX_LEVELS}, got {levels!r}")


def dwt_level(x):
    """One analysis step. Returns (LL, LH, HL, HH), each at half resolution."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError("input must have at least two dimensions")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even, got {(h, w)}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, lh, hl, hh


def idwt_level(ll, lh, hl, hh):
    """Inverse of :func:`dwt_level`. ``None`` entries are treated as zero bands."""
    bands = [b for b in (ll, lh, hl, hh) if b is not None]
    if not bands:
        raise DimensionError("at least one subband is required")
    shape = np.shape(bands[0])
    if any(np.shape(b) != shape for b in bands):
        raise DimensionError("subbands must share one shape")
    zero = np.zeros(shape)
    ll, lh, hl, hh = (zero if b is None else np.asarray(b, dtype=np.float64) for b in (ll, lh, hl, hh))
    out = np.empty(shape[:-2] + (2 * shape[-2], 2 * shape[-1]))
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def pad_to_multiple(x, multiple: int):
    """Symmetric padding of the last two axes up to the next multiple."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad, mode="symmetric")


@dataclass
class SubbandPyramid:
    """Coefficients of an L-level cascade plus the unpadded input shape.

    ``ll[l-1]``, ``lh[l-1]`` ... hold level ``l``. ``shape`` is the original
    (H, W); the cascade itself ran on the padded array.
    """

    ll: list = field(default_factory=list)
    lh: list = field(default_factory=list)
    hl: list = field(default_factory=list)
    hh: list = field(default_factory=list)
    shape: tuple = (0, 0)

    @property
    def levels(self) -> int:
        return len(self.ll)

    def band(self, name: str, level: int):
        return getattr(self, name.lower())[level - 1]


def dwt_cascade(x, levels: int) -> SubbandPyramid:
    """L-level cascade; each level decomposes the previous level's LL.

    Inputs whose size is not a multiple of ``2**levels`` are padded
    symmetrically first; reconstructions crop back to the original size.
    """
    _check_levels(levels)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError("input must have at least two dimensions")
    pyr = SubbandPyramid(shape=tuple(x.shape[-2:]))
    current = pad_to_multiple(x, 2**levels)
    for _ in range(levels):
        ll, lh, hl, hh = dwt_level(current)
        pyr.ll.append(ll)
        pyr.lh.append(lh)
        pyr.hl.append(hl)
        pyr.hh.append(hh)
        current = ll
    return pyr


def _crop(x, target):
    return x[..., : target[0], : target[1]]


def _check_target(band_shape, level, target):
    full = (band_shape[-2] * 2**level, band_shape[-1] * 2**level)
    for f, t in zip(full, target):
        # padding never exceeds 2**MAX_LEVELS - 1 samples
        if f < t or f - t >= 2**MAX_LEVELS:
            raise DimensionError(
                f"level-{level} band of shape {tuple(band_shape[-2:])} is inconsistent with target {tuple(target)}"
            )


def back_project(band, slot: str, level: int, target):
    """Synthesize a single band to ``target`` resolution with every other band zeroed.

    ``slot`` is one of "LL", "LH", "HL", "HH".
    """
    band = np.asarray(band, dtype=np.float64)
    _check_target(band.shape, level, target)
    args = {"LL": None, "LH": None, "HL": None, "HH": None}
    args[slot] = band
    zero = np.zeros(band.shape)
    out = idwt_level(*(zero if args[k] is None else args[k] for k in ("LL", "LH", "HL", "HH")))
    for _ in range(level - 1):
        out = idwt_level(out, None, None, None)
    return _crop(out, target)


def idwt_directional(lh, hl, hh, level: int, target):
    """Back-project the three directional bands of one level to ``target``."""
    shapes = {np.shape(lh), np.shape(hl), np.shape(hh)}
    if len(shapes) != 1:
        raise DimensionError("directional bands must share one shape")
    return tuple(back_project(b, s, level, target) for b, s in zip((lh, hl, hh), DIRECTIONS))


def concat_directions(r_lh, r_hl, r_hh):
    """Stack (LH, HL, HH) maps on a new channel axis placed before (H, W)."""
    maps = [np.asarray(m, dtype=np.float64) for m in (r_lh, r_hl, r_hh)]
    if len({m.shape for m in maps}) != 1:
        raise DimensionError(f"shape mismatch: {[m.shape for m in maps]}")
    return np.stack(maps, axis=-3)


def directional_maps(pyr: SubbandPyramid):
    """Per-level concatenated directional maps, each of shape (..., 3, H, W)."""
    return [
        concat_directions(*idwt_directional(pyr.lh[l], pyr.hl[l], pyr.hh[l], l + 1, pyr.shape))
        for l in range(pyr.levels)
    ]


def lowpass_map(pyr: SubbandPyramid, level: int = 1):
    """LL of ``level`` back-projected to input resolution."""
    return back_project(pyr.ll[level - 1], "LL", level, pyr.shape)


def reconstruct(pyr: SubbandPyramid):
    """Full synthesis from the deepest LL and all detail bands."""
    out = pyr.ll[-1]
    for l in reversed(range(pyr.levels)):
        out = idwt_level(out, pyr.lh[l], pyr.hl[l], pyr.hh[l])
    return _crop(out, pyr.shape)


def wavelet_features(images, levels: int):
    """Front-end features for a batch: (LL_1 map, stacked directional maps).

    Returns arrays of shape (..., H, W) and (..., levels, 3, H, W).
    """
    pyr = dwt_cascade(images, levels)
    return lowpass_map(pyr, 1), np.stack(directional_maps(pyr), axis=-4)
