"""Bit-exact file formats: binary tensors, dataset manifests, checkpoints.

Tensor files are magic ``OCT1`` + rank (u8) + dims (u64 LE each) + row-major
float32 LE payload. A dataset directory is only valid once ``manifest.json``
exists; generators therefore write the manifest last as an atomic completion
marker.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"OCT1"
MANIFEST_NAME = "manifest.json"
FACTORS_NAME = "factors.json"
SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed tensor files or dataset directories."""


def write_tensor(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("B", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
        (rank,) = struct.unpack("B", fh.read(1))
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        payload = fh.read()
    expected = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
    if rank == 0:
        dims = ()
        expected = 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} require {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def dump_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, fixed separators) so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

class DatasetHandle:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.exists():
            raise FormatError(
                f"{self.root} has no {MANIFEST_NAME}; not a (complete) dataset"
            )
        self.manifest = load_json(manifest_path)
        self._factors = load_json(self.root / FACTORS_NAME)

    @property
    def scene_ids(self) -> list[str]:
        return [s["scene_id"] for s in self.manifest["scenes"]]

    @property
    def light_distances(self) -> list[float]:
        return list(self.manifest["light_distances"])

    @property
    def image_size(self) -> int:
        return int(self.manifest["image_size"])

    def scene_entry(self, scene_id: str) -> dict:
        for entry in self.manifest["scenes"]:
            if entry["scene_id"] == scene_id:
                return entry
        raise KeyError(scene_id)

    def load_image(self, scene_id: str, light: float = 0.0) -> np.ndarray:
        entry = self.scene_entry(scene_id)
        key = format_light(light)
        if key not in entry["images"]:
            raise FormatError(
                f"scene {scene_id} has no light-distance variant {key} "
                f"(available: {sorted(entry['images'])})"
            )
        return read_tensor(self.root / entry["images"][key])

    def load_masks(self, scene_id: str) -> np.ndarray:
        entry = self.scene_entry(scene_id)
        return read_tensor(self.root / entry["masks"])

    def factors(self, scene_id: str) -> list[dict]:
        return self._factors[scene_id]

    def load_images(self, light: float = 0.0) -> np.ndarray:
        """All scene images at one light distance, stacked (n, H, W, 3)."""
        return np.stack([self.load_image(sid, light) for sid in self.scene_ids])

    def load_all_images(self) -> np.ndarray:
        """Every (scene, light) variant, stacked in manifest order."""
        stacks = []
        for sid in self.scene_ids:
            for light in self.light_distances:
                stacks.append(self.load_image(sid, light))
        return np.stack(stacks)


def format_light(light: float) -> str:
    return format(float(light), "g")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _param_filename(name: str) -> str:
    return name.replace(".", "__") + ".oct"


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    """Parameter tensors in the binary format plus a JSON index of names/shapes."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(params):
        rel = f"params/{_param_filename(name)}"
        write_tensor(path / rel, params[name])
        index[name] = {"file": rel, "shape": list(np.shape(params[name]))}
    dump_json(path / "params.json", index)
    dump_json(path / "config.json", config)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    config = load_json(path / "config.json")
    index = load_json(path / "params.json")
    params = {}
    for name, meta in index.items():
        arr = read_tensor(path / meta["file"])
        if list(arr.shape) != meta["shape"]:
            raise FormatError(
                f"parameter {name}: file shape {list(arr.shape)} != index {meta['shape']}"
            )
        params[name] = arr
    return params, config
