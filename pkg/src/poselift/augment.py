"""Chroma-key driven appearance augmentation.

Frames are 8-bit RGB arrays ``(H, W, 3)``; masks are floats in [0, 1] (or
8-bit, rescaled on load). Compositing happens in 8-bit sRGB without
linearization.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssetDecodeError, BadProportions, DimMismatch, InvariantViolation

REGIONS = ("background", "chair", "upper_body", "lower_body")
FOREGROUND = ("chair", "upper_body", "lower_body")


class Tier(str, enum.Enum):
    NONE = "none"
    BG_CHAIR = "bg_chair"
    FULL = "full"


TIER_REGIONS = {
    Tier.NONE: (),
    Tier.BG_CHAIR: ("background", "chair"),
    Tier.FULL: REGIONS,
}


def _as_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise DimMismatch(f"mask must be single-channel, got shape {m.shape}")
    if m.dtype == np.uint8:
        return m.astype(np.float64) / 255.0
    m = m.astype(np.float64)
    if m.size and (m.min() < 0 or m.max() > 1):
        raise InvariantViolation("mask values must lie in [0, 1]")
    return m


@dataclass(frozen=True, eq=False)
class MaskSet:
    background: np.ndarray
    chair: np.ndarray
    upper_body: np.ndarray
    lower_body: np.ndarray

    def __post_init__(self):
        for name in REGIONS:
            object.__setattr__(self, name, _as_mask(getattr(self, name)))
        shapes = {getattr(self, n).shape for n in REGIONS}
        if len(shapes) != 1:
            raise DimMismatch(f"masks differ in size: {sorted(shapes)}")
        fg = np.stack([getattr(self, n) >= 0.5 for n in FOREGROUND])
        if np.any(fg.sum(axis=0) > 1):
            raise InvariantViolation("chair / upper-body / lower-body masks overlap")

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.shape

    @classmethod
    def empty(cls, shape) -> MaskSet:
        z = np.zeros(shape)
        return cls(z, z, z, z)


def _check_frame(frame: np.ndarray, shape) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimMismatch(f"frame must be H x W x 3, got {frame.shape}")
    if frame.shape[:2] != tuple(shape):
        raise DimMismatch(f"frame is {frame.shape[:2]}, mask is {tuple(shape)}")
    return frame


def shading_surrogate(frame: np.ndarray, mask) -> np.ndarray:
    """Per-pixel channel mean in [0, 1] inside ``mask`` (> 0), zero outside."""
    m = _as_mask(mask)
    frame = _check_frame(frame, m.shape)
    mean = frame.astype(np.float64).sum(axis=2) / (3.0 * 255.0)
    return np.where(m > 0, mean, 0.0)


def tile_texture(texture: np.ndarray, shape, offset=(0, 0)) -> np.ndarray:
    """Tile ``texture`` periodically to ``shape``, starting at ``offset``."""
    texture = np.asarray(texture)
    if texture.ndim != 3 or texture.shape[2] != 3 or 0 in texture.shape[:2]:
        raise DimMismatch(f"texture must be a non-empty H x W x 3 image, got {texture.shape}")
    h, w = shape
    th, tw = texture.shape[:2]
    rows = (np.arange(h) + offset[0]) % th
    cols = (np.arange(w) + offset[1]) % tw
    return texture[rows[:, None], cols[None, :]]


def composite(frame: np.ndarray, masks: MaskSet, assets: dict, seed: int = 0,
              regions=REGIONS, gain: float = 1.0, random_offsets: bool = True) -> np.ndarray:
    """Replace the background and re-texture chair and clothing regions.

    Args:
        frame: ``(H, W, 3)`` uint8 image.
        masks: soft region masks; blending is linear in the mask value.
        assets: region name -> RGB image (background image or texture). Entries
            may also be file paths.
        seed: drives the per-region random texture offsets.
        regions: subset of regions to augment.
        gain: multiplier on the shading surrogate.
        random_offsets: if False, textures are tiled from their top-left corner.

    Pixels outside every augmented mask are returned bit-identical.
    """
    frame = _check_frame(frame, masks.shape)
    rng = np.random.default_rng(seed)
    out = frame.astype(np.float64)
    touched = np.zeros(masks.shape, dtype=bool)
    shape = masks.shape
    for name in REGIONS:
        # offsets are drawn for every region so that enabling one region does
        # not shift the random stream of the others
        asset = assets.get(name)
        off = (0, 0)
        if asset is not None:
            asset = load_image(asset) if isinstance(asset, (str, Path)) else np.asarray(asset)
            if asset.ndim != 3 or asset.shape[2] != 3:
                raise DimMismatch(f"{name} asset must be H x W x 3, got {asset.shape}")
            if random_offsets and name != "background":
                off = (int(rng.integers(asset.shape[0])), int(rng.integers(asset.shape[1])))
        if name not in regions:
            continue
        m = getattr(masks, name)
        if not np.any(m > 0):
            continue
        if asset is None:
            raise AssetDecodeError(f"no asset provided for region {name!r}")
        layer = tile_texture(asset, shape, off).astype(np.float64)
        if name != "background":
            shade = gain * shading_surrogate(frame, m)
            layer = layer * shade[..., None]
        a = m[..., None]
        out = np.where(a > 0, (1.0 - a) * out + a * layer, out)
        touched |= m > 0
    result = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    result[~touched] = frame[~touched]
    return result


@dataclass(frozen=True)
class AugmentPlan:
    tiers: dict[str, Tier]
    proportions: tuple[float, float, float]
    seed: int

    def counts(self) -> dict[Tier, int]:
        c = {t: 0 for t in Tier}
        for t in self.tiers.values():
            c[t] += 1
        return c


def _split_counts(n: int, proportions) -> list[int]:
    """Largest-remainder rounding: counts sum to ``n`` and each is within 1 of exact."""
    exact = [p * n for p in proportions]
    base = [int(np.floor(e + 1e-9)) for e in exact]
    rest = n - sum(base)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def plan_augmentation(frame_ids, proportions=(0.25, 0.40, 0.35), seed: int = 0) -> AugmentPlan:
    """Assign each frame to none / bg+chair / full augmentation.

    Frames are shuffled with ``seed`` and split contiguously by proportion.
    """
    props = tuple(float(p) for p in proportions)
    if len(props) != 3 or any(p < 0 or not np.isfinite(p) for p in props):
        raise BadProportions(f"need three non-negative proportions, got {proportions!r}")
    if abs(sum(props) - 1.0) > 1e-9:
        raise BadProportions(f"proportions sum to {sum(props)!r}, not 1")
    ids = [str(f) for f in frame_ids]
    if len(set(ids)) != len(ids):
        raise BadProportions("duplicate frame ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    counts = _split_counts(len(ids), props)
    tiers = {}
    pos = 0
    for tier, c in zip(Tier, counts):
        for i in order[pos:pos + c]:
            tiers[ids[i]] = tier
        pos += c
    # keep the caller's frame order in the mapping
    return AugmentPlan({i: tiers[i] for i in ids}, props, seed)


def load_image(path, mode: str = "RGB") -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, UnidentifiedImageError) as e:
        raise AssetDecodeError(f"{path}: {e}") from None


def load_mask(path) -> np.ndarray:
    return load_image(path, "L").astype(np.float64) / 255.0
