"""Color-space engine: conversions, composite reconstruction targets, channel statistics.

All conversions are pure functions on arrays of unit-interval intensities.
Hexcone HSV and CIE 1976 L*a*b* (sRGB primaries, D65 white) are the only
colorimetric assumptions; L*a*b* channels are stored rescaled into [0, 1]
(L*/100, (a*+128)/255, (b*+128)/255) so every target shares one loss scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class ColorSpaceError(ValueError):
    """Raised for unknown space ids or images carrying the wrong space tag."""


@dataclass(frozen=True)
class ColorSpaceSpec:
    """A named target space: ordered channel layout over {R,G,B,H,S,V,L,A,B*,Y}."""

    id: str
    channel_names: tuple[str, ...]

    @property
    def channel_count(self) -> int:
        return len(self.channel_names)

    @property
    def is_composite(self) -> bool:
        # composite ids stack the RGB channels first, appended channels after
        return self.channel_names[:3] == ("R", "G", "B") and self.channel_count > 3


COLOR_SPACES: dict[str, ColorSpaceSpec] = {
    spec.id: spec
    for spec in (
        ColorSpaceSpec("rgb", ("R", "G", "B")),
        ColorSpaceSpec("hsv", ("H", "S", "V")),
        ColorSpaceSpec("lab", ("L", "A", "B*")),
        ColorSpaceSpec("gray", ("Y",)),
        ColorSpaceSpec("r", ("R",)),
        ColorSpaceSpec("rgb-s", ("R", "G", "B", "S")),
        ColorSpaceSpec("rgb-sv", ("R", "G", "B", "S", "V")),
        ColorSpaceSpec("rgb-hsv", ("R", "G", "B", "H", "S", "V")),
    )
}


def get_space(space: str | ColorSpaceSpec) -> ColorSpaceSpec:
    if isinstance(space, ColorSpaceSpec):
        return space
    try:
        return COLOR_SPACES[space.lower()]
    except KeyError:
        raise ColorSpaceError(
            f"unknown color space {space!r}; choose from {sorted(COLOR_SPACES)}"
        ) from None


@dataclass
class Image:
    """H x W x C intensities in [0, 1] tagged with their color space."""

    data: np.ndarray
    space: ColorSpaceSpec = field(default_factory=lambda: COLOR_SPACES["rgb"])

    def __post_init__(self):
        self.space = get_space(self.space)
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image data must be HxWxC, got shape {arr.shape}")
        if arr.shape[2] != self.space.channel_count:
            raise ColorSpaceError(
                f"space {self.space.id!r} expects {self.space.channel_count} channels, "
                f"got {arr.shape[2]}"
            )
        if arr.size and (arr.min() < -1e-9 or arr.max() > 1 + 1e-9):
            raise ValueError(
                f"intensities must lie in [0,1], got range "
                f"[{arr.min():.6g}, {arr.max():.6g}]"
            )
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _require(img: Image, space_id: str) -> np.ndarray:
    if img.space.id != space_id:
        raise ColorSpaceError(f"expected a {space_id!r} image, got {img.space.id!r}")
    return img.data


# ---------------------------------------------------------------------------
# array-level conversions (vectorized, float64; last axis = channels)
# ---------------------------------------------------------------------------

def hsv_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """Hexcone model: H in [0,1) (degrees/360), S = delta/max, V = max.

    H is defined as 0 at achromatic pixels and S as 0 where V = 0, so the
    conversion is deterministic everywhere.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc

    safe_delta = np.where(delta == 0.0, 1.0, delta)
    h = np.where(
        maxc == r,
        ((g - b) / safe_delta) % 6.0,
        np.where(maxc == g, (b - r) / safe_delta + 2.0, (r - g) / safe_delta + 4.0),
    )
    h = np.where(delta == 0.0, 0.0, h / 6.0) % 1.0

    safe_max = np.where(maxc == 0.0, 1.0, maxc)
    s = np.where(maxc == 0.0, 0.0, delta / safe_max)
    return np.stack([h, s, maxc], axis=-1)


def rgb_from_hsv(hsv: np.ndarray) -> np.ndarray:
    """Inverse hexcone; zero saturation reproduces (v, v, v) regardless of hue."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.minimum(np.floor(h6), 5.0)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    i = i.astype(np.int64)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


# sRGB -> XYZ (D65, 2 deg observer) and its inverse
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def lab_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """CIE 1976 L*a*b* via linear sRGB and D65 XYZ, rescaled into [0,1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = _srgb_to_linear(rgb)
    xyz = linear @ _RGB_TO_XYZ.T
    ratio = xyz / _D65_WHITE
    f = np.where(
        ratio > _LAB_DELTA**3,
        np.cbrt(ratio),
        ratio / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0,
    )
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lum = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    out = np.stack([lum / 100.0, (a + 128.0) / 255.0, (b + 128.0) / 255.0], axis=-1)
    return np.clip(out, 0.0, 1.0)


def rgb_from_lab(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`lab_from_rgb`; lossy at gamut edges (output clipped)."""
    lab = np.asarray(lab, dtype=np.float64)
    lum = lab[..., 0] * 100.0
    a = lab[..., 1] * 255.0 - 128.0
    b = lab[..., 2] * 255.0 - 128.0
    fy = (lum + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    ratio = np.where(f > _LAB_DELTA, f**3, 3.0 * _LAB_DELTA**2 * (f - 4.0 / 29.0))
    xyz = ratio * _D65_WHITE
    linear = xyz @ _XYZ_TO_RGB.T
    return np.clip(_linear_to_srgb(linear), 0.0, 1.0)


# ITU-R BT.601 luma weights
_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def gray_from_rgb(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return (rgb @ _GRAY_WEIGHTS)[..., None]


# ---------------------------------------------------------------------------
# tagged-image conversions
# ---------------------------------------------------------------------------

def rgb_to_hsv(img: Image) -> Image:
    return Image(hsv_from_rgb(_require(img, "rgb")), COLOR_SPACES["hsv"])


def hsv_to_rgb(img: Image) -> Image:
    return Image(rgb_from_hsv(_require(img, "hsv")), COLOR_SPACES["rgb"])


def rgb_to_lab(img: Image) -> Image:
    return Image(lab_from_rgb(_require(img, "rgb")), COLOR_SPACES["lab"])


def lab_to_rgb(img: Image) -> Image:
    return Image(rgb_from_lab(_require(img, "lab")), COLOR_SPACES["rgb"])


def rgb_to_gray(img: Image) -> Image:
    return Image(gray_from_rgb(_require(img, "rgb")), COLOR_SPACES["gray"])


def target_from_rgb(rgb: np.ndarray, space: str | ColorSpaceSpec) -> np.ndarray:
    """Assemble the reconstruction target for an RGB array in any supported space.

    Composite spaces stack the RGB channels first and append the extra HSV
    channels; pure spaces go through their full conversion.
    """
    spec = get_space(space)
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ColorSpaceError(f"expected RGB input with 3 channels, got {rgb.shape[-1]}")
    if spec.id == "rgb":
        return rgb.copy()
    if spec.id == "hsv":
        return hsv_from_rgb(rgb)
    if spec.id == "lab":
        return lab_from_rgb(rgb)
    if spec.id == "gray":
        return gray_from_rgb(rgb)
    if spec.id == "r":
        return rgb[..., :1].copy()
    hsv = hsv_from_rgb(rgb)
    if spec.id == "rgb-s":
        extra = hsv[..., 1:2]
    elif spec.id == "rgb-sv":
        extra = hsv[..., 1:3]
    elif spec.id == "rgb-hsv":
        extra = hsv
    else:  # pragma: no cover - registry and branches kept in sync
        raise ColorSpaceError(f"no target assembly rule for {spec.id!r}")
    return np.concatenate([rgb, extra], axis=-1)


def compose_target(img: Image, space: str | ColorSpaceSpec) -> Image:
    spec = get_space(space)
    return Image(target_from_rgb(_require(img, "rgb"), spec), spec)


# ---------------------------------------------------------------------------
# channel statistics
# ---------------------------------------------------------------------------

CHANNELS = ("R", "G", "B", "H", "S", "V")


@dataclass
class CorrelationMatrix:
    """Pairwise Pearson coefficients over a pooled pixel sample."""

    channel_names: tuple[str, ...]
    values: np.ndarray
    sample_count: int
    degenerate_flags: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", *self.channel_names])
            for name, row in zip(self.channel_names, self.values):
                writer.writerow([name, *(f"{v:.10f}" for v in row)])


def _channel_planes(rgb: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
    """Extract the named channels of an RGB image as an (n_pixels, k) matrix."""
    flat_rgb = rgb.reshape(-1, 3)
    need_hsv = any(n in ("H", "S", "V") for n in names)
    flat_hsv = hsv_from_rgb(flat_rgb) if need_hsv else None
    cols = []
    for name in names:
        if name in ("R", "G", "B"):
            cols.append(flat_rgb[:, "RGB".index(name)])
        else:
            cols.append(flat_hsv[:, "HSV".index(name)])
    return np.stack(cols, axis=1)


def channel_correlation(
    corpus,
    channels: tuple[str, ...] = CHANNELS,
    sample_budget: int = 100_000,
    seed: int = 0,
) -> CorrelationMatrix:
    """Pearson correlation between color channels over a seeded pixel subsample.

    The subsample is drawn uniformly from the pooled pixel population of the
    whole corpus, so a fixed seed reproduces the matrix bit-for-bit.
    Zero-variance channels are flagged degenerate and their coefficients
    reported as 0.

    Args:
        corpus: iterable of RGB ``Image`` objects or (H, W, 3) arrays.
        channels: channel names from {R, G, B, H, S, V}.
        sample_budget: maximum number of pixels pooled into the estimate.
        seed: PRNG seed for the pixel subsample.
    """
    channels = tuple(c.upper() for c in channels)
    for c in channels:
        if c not in CHANNELS:
            raise ColorSpaceError(f"unknown channel {c!r}; choose from {CHANNELS}")
    if sample_budget < 2:
        raise ValueError("sample_budget must be at least 2")

    arrays = []
    for item in corpus:
        arr = _require(item, "rgb") if isinstance(item, Image) else np.asarray(item, dtype=np.float64)
        arrays.append(arr.reshape(-1, 3))
    if not arrays:
        raise ValueError("corpus is empty")

    sizes = np.array([a.shape[0] for a in arrays])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    if total <= sample_budget:
        chosen = [np.arange(n) for n in sizes]
    else:
        flat = np.sort(rng.choice(total, size=sample_budget, replace=False))
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        chosen = [
            flat[(flat >= bounds[i]) & (flat < bounds[i + 1])] - bounds[i]
            for i in range(len(arrays))
        ]

    samples = np.concatenate(
        [_channel_planes(a[idx], channels) for a, idx in zip(arrays, chosen) if idx.size],
        axis=0,
    )

    # two-pass Pearson: means first, then centered cross products
    means = samples.mean(axis=0)
    centered = samples - means
    cov = centered.T @ centered
    std = np.sqrt(np.diag(cov))
    degenerate_axis = std == 0.0
    safe_std = np.where(degenerate_axis, 1.0, std)
    values = cov / np.outer(safe_std, safe_std)
    flags = degenerate_axis[:, None] | degenerate_axis[None, :]
    values[flags] = 0.0
    np.fill_diagonal(values, np.where(degenerate_axis, 0.0, 1.0))
    values = np.clip(values, -1.0, 1.0)
    # enforce exact symmetry against fp noise in the cross products
    values = (values + values.T) / 2.0

    return CorrelationMatrix(
        channel_names=channels,
        values=values,
        sample_count=int(samples.shape[0]),
        degenerate_flags=flags,
    )
