"""Procedural multi-object scenes with ground-truth masks, factors, and lighting.

Flat 2-D rendering with painter's-algorithm occlusion: objects are placed
rear-to-front, filled with seeded value-noise textures over a textured
background, and the per-object masks record final visibility only. A scene is
a pure function of (config, seed), so regeneration is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .color import COLOR_SPACES, Image, rgb_from_hsv

SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "medium", "large")
_SIZE_FRACTION = {"small": 0.10, "medium": 0.14, "large": 0.19}

# attenuation a(L, x, y) = exp(-DECAY * L * (1 + SPREAD * d(x, y))) with d the
# normalized distance to a seeded light anchor: exactly 1 at L = 0, strictly
# decreasing in L everywhere, darker farther from the anchor
LIGHT_DECAY = 0.045
LIGHT_SPREAD = 0.8

_PLACEMENT_RETRIES = 100

# sub-stream tags hung off the scene seed
_FACTOR_STREAM = 0
_BACKGROUND_STREAM = 1
_TEXTURE_STREAM = 2
_LIGHT_STREAM = 3


class PlacementError(RuntimeError):
    """Raised when objects cannot be placed within the retry budget."""


@dataclass
class FactorRecord:
    shape: str
    size: str
    material_hue: float
    material_saturation: float
    texture_id: int
    position: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "size": self.size,
            "material_hue": self.material_hue,
            "material_saturation": self.material_saturation,
            "texture_id": self.texture_id,
            "position": list(self.position),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorRecord":
        return cls(
            shape=d["shape"],
            size=d["size"],
            material_hue=float(d["material_hue"]),
            material_saturation=float(d["material_saturation"]),
            texture_id=int(d["texture_id"]),
            position=(float(d["position"][0]), float(d["position"][1])),
        )


@dataclass
class Scene:
    image: Image
    masks: np.ndarray  # (n_objects + 1, H, W) uint8; index 0 = background
    factors: list[FactorRecord]
    light_distance: float
    seed: int

    def label_map(self) -> np.ndarray:
        """Per-pixel segment index; masks partition the grid so argmax is exact."""
        return np.argmax(self.masks, axis=0)


@dataclass
class DatasetConfig:
    scene_count: int = 64
    image_size: int = 32
    object_count_range: tuple[int, int] = (2, 4)
    texture_count: int = 16
    background_texture_count: int = 4
    light_distances: tuple[float, ...] = (0.0,)
    master_seed: int = 0

    def __post_init__(self):
        self.object_count_range = (
            int(self.object_count_range[0]),
            int(self.object_count_range[1]),
        )
        self.light_distances = tuple(float(v) for v in self.light_distances)
        lo, hi = self.object_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid object_count_range {self.object_count_range}")
        if self.scene_count < 0:
            raise ValueError("scene_count must be non-negative")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if any(light < 0 for light in self.light_distances):
            raise ValueError("light distances must be non-negative")

    def to_dict(self) -> dict:
        return {
            "scene_count": self.scene_count,
            "image_size": self.image_size,
            "object_count_range": list(self.object_count_range),
            "texture_count": self.texture_count,
            "background_texture_count": self.background_texture_count,
            "light_distances": list(self.light_distances),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C401
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config fields: {sorted(unknown)}")
        return cls(**{k: d[k] for k in d})


# ---------------------------------------------------------------------------
# texture + shape rasterization
# ---------------------------------------------------------------------------

def _value_noise(size: int, cell: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear value noise in [0, 1] with smoothstep interpolation."""
    grid = rng.random((size // cell + 2, size // cell + 2))
    coords = np.arange(size) / cell
    idx = coords.astype(np.int64)
    t = coords - idx
    t = t * t * (3.0 - 2.0 * t)
    g00 = grid[np.ix_(idx, idx)]
    g01 = grid[np.ix_(idx, idx + 1)]
    g10 = grid[np.ix_(idx + 1, idx)]
    g11 = grid[np.ix_(idx + 1, idx + 1)]
    ty, tx = t[:, None], t[None, :]
    return (
        g00 * (1 - ty) * (1 - tx)
        + g01 * (1 - ty) * tx
        + g10 * ty * (1 - tx)
        + g11 * ty * tx
    )


def _texture_field(size: int, texture_id: int, rng: np.random.Generator) -> np.ndarray:
    coarse = max(4, size // 8) + 2 * (texture_id % 4)
    fine = max(2, coarse // 2)
    return 0.65 * _value_noise(size, coarse, rng) + 0.35 * _value_noise(size, fine, rng)


def _shape_mask(shape: str, cx: float, cy: float, radius: float, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        half = radius * 0.9
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape == "triangle":
        # equilateral, apex up, circumradius scaled to match the other areas
        r = radius * 1.25
        angles = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
        vx = cx + r * np.cos(angles)
        vy = cy - r * np.sin(angles)  # image rows grow downward
        inside = np.ones((size, size), dtype=bool)
        for i in range(3):
            x0, y0 = vx[i], vy[i]
            x1, y1 = vx[(i + 1) % 3], vy[(i + 1) % 3]
            cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
            inside &= cross >= 0
        return inside
    raise ValueError(f"unknown shape {shape!r}")


def _min_visible_pixels(size: int) -> int:
    return max(6, (size * size) // 170)


def _object_rng(seed: int, index: int, texture_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, _TEXTURE_STREAM, index, texture_id])
    )


def render_scene(
    cfg: DatasetConfig, factors: list[FactorRecord], seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically rasterize stored factors back into (image, masks)."""
    size = cfg.image_size
    bg_state = np.random.SeedSequence([seed, _BACKGROUND_STREAM]).generate_state(1)[0]
    bg_texture_id = int(bg_state % max(1, cfg.background_texture_count))
    bg_rng = _object_rng(seed, -1, bg_texture_id)

    hue = np.empty((size, size))
    sat = np.empty((size, size))
    val = np.empty((size, size))
    noise = _texture_field(size, bg_texture_id, bg_rng)
    hue[:] = bg_rng.random()
    sat[:] = 0.05 + 0.06 * noise
    val[:] = 0.30 + 0.45 * noise

    labels = np.zeros((size, size), dtype=np.int64)
    for index, rec in enumerate(factors):
        radius = _SIZE_FRACTION[rec.size] * size
        mask = _shape_mask(rec.shape, rec.position[0], rec.position[1], radius, size)
        rng = _object_rng(seed, index, rec.texture_id)
        noise = _texture_field(size, rec.texture_id, rng)
        hue[mask] = rec.material_hue
        sat[mask] = np.clip(rec.material_saturation + 0.10 * (noise[mask] - 0.5), 0.0, 1.0)
        val[mask] = 0.45 + 0.55 * noise[mask]
        labels[mask] = index + 1

    image = rgb_from_hsv(np.stack([hue, sat, val], axis=-1))
    masks = np.stack(
        [(labels == i).astype(np.uint8) for i in range(len(factors) + 1)], axis=0
    )
    return image, masks


def generate_scene(cfg: DatasetConfig, seed: int) -> Scene:
    """Draw factors (with occlusion-aware placement retries) and render at L = 0."""
    size = cfg.image_size
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _FACTOR_STREAM]))
    count = int(rng.integers(cfg.object_count_range[0], cfg.object_count_range[1] + 1))
    min_visible = _min_visible_pixels(size)

    factors: list[FactorRecord] = []
    shape_masks: list[np.ndarray] = []
    for index in range(count):
        placed = False
        for _ in range(_PLACEMENT_RETRIES):
            rec = FactorRecord(
                shape=SHAPES[rng.integers(len(SHAPES))],
                size=SIZES[rng.integers(len(SIZES))],
                material_hue=float(rng.random()),
                material_saturation=float(rng.uniform(0.55, 1.0)),
                texture_id=int(rng.integers(cfg.texture_count)),
                position=(
                    float(rng.uniform(0.15 * size, 0.85 * size)),
                    float(rng.uniform(0.15 * size, 0.85 * size)),
                ),
            )
            radius = _SIZE_FRACTION[rec.size] * size
            mask = _shape_mask(rec.shape, rec.position[0], rec.position[1], radius, size)
            if mask.sum() < min_visible:
                continue
            # painter's algorithm: the new object may occlude earlier ones,
            # but every object must keep a visible remnant
            occluded = [m & ~mask for m in shape_masks]
            if all(m.sum() >= min_visible for m in occluded):
                shape_masks = occluded + [mask]
                factors.append(rec)
                placed = True
                break
        if not placed:
            raise PlacementError(
                f"could not place object {index + 1}/{count} within "
                f"{_PLACEMENT_RETRIES} retries at image size {size}"
            )

    image, masks = render_scene(cfg, factors, int(seed))
    return Scene(
        image=Image(image, COLOR_SPACES["rgb"]),
        masks=masks,
        factors=factors,
        light_distance=0.0,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# lighting
# ---------------------------------------------------------------------------

def light_attenuation(seed: int, size: int, light: float) -> np.ndarray:
    """Per-pixel V-channel attenuation for a light pushed `light` units away."""
    if light < 0:
        raise ValueError("light distance must be non-negative")
    anchor_rng = np.random.default_rng(np.random.SeedSequence([int(seed), _LIGHT_STREAM]))
    ax = anchor_rng.uniform(0.2 * size, 0.8 * size)
    ay = anchor_rng.uniform(0.2 * size, 0.8 * size)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.hypot(xs - ax, ys - ay) / (size * np.sqrt(2.0))
    return np.exp(-LIGHT_DECAY * light * (1.0 + LIGHT_SPREAD * dist))


def apply_lighting(scene: Scene, light: float) -> Scene:
    """Scale the hexcone V channel by the seeded attenuation field.

    In the hexcone model every RGB component is V times a function of (H, S),
    so scaling V is an exact uniform RGB scaling: H and S are preserved and
    masks/factors are untouched.
    """
    if light < 0:
        raise ValueError("light distance must be non-negative")
    if scene.light_distance != 0.0:
        raise ValueError("lighting must be applied to the L=0 rendering")
    atten = light_attenuation(scene.seed, scene.image.height, light)
    data = scene.image.data * atten[:, :, None]
    return Scene(
        image=Image(data, COLOR_SPACES["rgb"]),
        masks=scene.masks,
        factors=scene.factors,
        light_distance=float(light),
        seed=scene.seed,
    )


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def scene_seeds(cfg: DatasetConfig) -> list[int]:
    """Independent per-scene seeds split from the master seed."""
    if cfg.scene_count == 0:
        return []
    state = np.random.SeedSequence(cfg.master_seed).generate_state(cfg.scene_count)
    return [int(s) for s in state]


def generate_dataset(cfg: DatasetConfig, out_dir) -> io.DatasetHandle:
    """Write every scene (with all lighting variants) and the manifest last."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)

    entries = []
    factor_table = {}
    for index, seed in enumerate(scene_seeds(cfg)):
        scene_id = f"scene_{index:05d}"
        scene = generate_scene(cfg, seed)
        mask_rel = f"scenes/{scene_id}_masks.oct"
        io.write_tensor(out / mask_rel, scene.masks.astype(np.float32))
        images = {}
        for light in cfg.light_distances:
            lit = apply_lighting(scene, light) if light > 0 else scene
            key = io.format_light(light)
            rel = f"scenes/{scene_id}_L{key}.oct"
            io.write_tensor(out / rel, lit.image.data.astype(np.float32))
            images[key] = rel
        factor_table[scene_id] = [rec.to_dict() for rec in scene.factors]
        entries.append(
            {
                "scene_id": scene_id,
                "seed": seed,
                "n_objects": len(scene.factors),
                "images": images,
                "masks": mask_rel,
            }
        )

    io.dump_json(out / io.FACTORS_NAME, factor_table)
    manifest = {
        "schema_version": io.SCHEMA_VERSION,
        "generator": cfg.to_dict(),
        "image_size": cfg.image_size,
        "light_distances": list(cfg.light_distances),
        "channel_conventions": {
            "image": "rgb, row-major, intensities in [0,1]",
            "masks": "one binary map per segment, index 0 = background",
        },
        "scenes": entries,
    }
    io.dump_json(out / io.MANIFEST_NAME, manifest)
    return io.DatasetHandle(out)
