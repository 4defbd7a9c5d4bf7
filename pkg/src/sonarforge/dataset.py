"""Bulk, deterministic generation of labeled synthetic sonar image datasets.

A sweep enumerates images per target shape, cycling through aspect angles,
seabed types, and camera altitudes.  Every image is reproducible from the
config alone: image i (in global enumeration order) draws all of its
randomness from seeds derived with a documented stable hash,

    derive_seed(master_seed, i) = first 8 bytes (little-endian) of
        blake2b(master_seed as 8-byte LE || i as 8-byte LE)

and per-image sub-seeds reuse the same hash on the image seed with fixed role
indices: 0 = seabed noise, 1 = aspect-angle jitter, 2 = noise-injection base.
Generation with any worker count writes byte-identical files; the manifest is
JSON Lines (one config head object, then one record per line) and round-trips
byte-identically.

The aspect angle rotates the camera and (through the scene builder) the light
with it, so the target is viewed from a different bearing while highlight and
shadow keep their orientation in image space.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .imagebuf import ImageBuffer, save_image
from .postproc import PostprocError, apply_chain_array, chain_from_config
from .render import render
from .scene import (SEABED_KINDS, SHAPES, Camera, DirectionalLight, Pose,
                    SceneBuilder, SeabedSpec, TargetPrimitive, make_seabed)

SPLITS = ("train", "test")

DEFAULT_TARGET_DIMS = {
    "cube": {"edge": 0.6},
    "cylinder": {"radius": 0.15, "length": 2.2},
    "cone": {"radius": 0.5, "height": 0.5},
    "sphere": {"radius": 0.45},
}

DEFAULT_CHAIN = (
    {"op": "grayscale"},
    {"op": "noise", "kind": "speckle", "variance": 0.1},
)

# role indices for per-image sub-seeds
SEED_ROLE_SEABED = 0
SEED_ROLE_JITTER = 1
SEED_ROLE_NOISE = 2

# numba's fallback threading backend does not tolerate concurrent parallel
# kernels, so worker threads serialize rendering and overlap postproc + I/O
_RENDER_LOCK = threading.Lock()


class DatasetError(ValueError):
    """Invalid sweep configuration, manifest, or split request."""


def derive_seed(master_seed: int, index: int) -> int:
    """Stable 64-bit per-index seed; pairwise distinct in practice."""
    payload = (int(master_seed) & (2**64 - 1)).to_bytes(8, "little") + \
        (int(index) & (2**64 - 1)).to_bytes(8, "little")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SweepConfig:
    """Full description of one dataset generation run.

    counts maps shape name to image count and fixes the enumeration order.
    aspect_angles is either an explicit list of degrees or a sweep dict
    {"start", "step", "count"}.  Image i of a shape takes
    angle[i mod A], seabed[(i // A) mod S], altitude[(i // (A*S)) mod L],
    with a seeded uniform jitter of +-angle_jitter_deg on the angle.
    """

    counts: dict
    seabeds: tuple = ("mud",)
    aspect_angles: object = None
    angle_jitter_deg: float = 2.0
    camera_altitudes: tuple = (10.0,)
    image_width: int = 256
    image_height: int = 256
    fov_deg: float = 60.0
    grazing_angle_deg: float = 6.0
    light_intensity: float = 1.0
    ambient: float = 0.08
    grid_nodes: int = 241
    cell_size: float = 0.1
    target_dims: dict = field(default_factory=dict)
    chain: tuple = DEFAULT_CHAIN
    master_seed: int = 0
    output_dir: str = "dataset"
    image_format: str = "png"

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in dict(self.counts).items()}
        if not counts:
            raise DatasetError("sweep needs at least one shape count")
        for shape, n in counts.items():
            if shape not in SHAPES:
                raise DatasetError(f"unknown shape {shape!r}; expected one of {SHAPES}")
            if n <= 0:
                raise DatasetError(f"count for {shape} must be > 0, got {n}")
        object.__setattr__(self, "counts", counts)

        seabeds = tuple(self.seabeds)
        if not seabeds:
            raise DatasetError("sweep needs at least one seabed kind")
        for kind in seabeds:
            if kind not in SEABED_KINDS:
                raise DatasetError(f"unknown seabed {kind!r}; expected one of {SEABED_KINDS}")
        object.__setattr__(self, "seabeds", seabeds)

        angles = self.aspect_angles
        if angles is None:
            angles = {"start": 0.0, "step": 10.0, "count": 36}
        if isinstance(angles, dict):
            count = int(angles["count"])
            if count < 1:
                raise DatasetError(f"angle sweep count must be >= 1, got {count}")
            start = float(angles.get("start", 0.0))
            step = float(angles.get("step", 10.0))
            angles = tuple(start + step * k for k in range(count))
        else:
            angles = tuple(float(a) for a in angles)
        if not angles:
            raise DatasetError("aspect angle list must be non-empty")
        object.__setattr__(self, "aspect_angles", angles)

        altitudes = tuple(float(a) for a in self.camera_altitudes)
        if not altitudes or any(a <= 0 for a in altitudes):
            raise DatasetError(f"camera altitudes must be positive, got {altitudes}")
        object.__setattr__(self, "camera_altitudes", altitudes)

        if self.image_width < 16 or self.image_height < 16:
            raise DatasetError(
                f"image size must be at least 16x16, got {self.image_width}x{self.image_height}")
        if self.angle_jitter_deg < 0:
            raise DatasetError(f"angle jitter must be >= 0, got {self.angle_jitter_deg}")
        if self.grid_nodes < 2 or self.cell_size <= 0:
            raise DatasetError(f"bad grid: {self.grid_nodes} nodes, cell {self.cell_size}")
        if self.image_format not in ("png", "pgm"):
            raise DatasetError(f"image format must be png or pgm, got {self.image_format!r}")

        dims = {k: dict(v) for k, v in dict(self.target_dims).items()}
        for shape in counts:
            dims.setdefault(shape, dict(DEFAULT_TARGET_DIMS[shape]))
        object.__setattr__(self, "target_dims", dims)
        object.__setattr__(self, "chain", tuple(dict(s) if isinstance(s, dict) else s
                                                for s in self.chain))

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "seabeds": list(self.seabeds),
            "aspect_angles": list(self.aspect_angles),
            "angle_jitter_deg": self.angle_jitter_deg,
            "camera_altitudes": list(self.camera_altitudes),
            "image_width": self.image_width,
            "image_height": self.image_height,
            "fov_deg": self.fov_deg,
            "grazing_angle_deg": self.grazing_angle_deg,
            "light_intensity": self.light_intensity,
            "ambient": self.ambient,
            "grid_nodes": self.grid_nodes,
            "cell_size": self.cell_size,
            "target_dims": {k: dict(v) for k, v in self.target_dims.items()},
            "chain": [dict(s) for s in self.chain],
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "image_format": self.image_format,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DatasetError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**d)


def load_sweep_config(path) -> SweepConfig:
    with open(path) as f:
        return SweepConfig.from_dict(json.load(f))


@dataclass(frozen=True)
class DatasetRecord:
    image_path: str
    shape: str
    seabed: str
    aspect_deg: float
    altitude: float
    seed: int
    split: str = "test"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")

    def to_dict(self) -> dict:
        return {
            "image_path": self.image_path,
            "shape": self.shape,
            "seabed": self.seabed,
            "aspect_deg": self.aspect_deg,
            "altitude": self.altitude,
            "seed": self.seed,
            "split": self.split,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Config snapshot plus one record per generated image."""

    config: dict
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DatasetError("manifest image paths are not unique")

    def by_split(self, split: str) -> tuple:
        if split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {split!r}")
        return tuple(r for r in self.records if r.split == split)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"config": manifest.config},
                           sort_keys=True, separators=(",", ":")) + "\n")
        for rec in manifest.records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


def read_manifest(path) -> DatasetManifest:
    with open(path) as f:
        head = f.readline()
        if not head.strip():
            raise DatasetError(f"manifest {path} is empty")
        config = json.loads(head).get("config", {})
        records = []
        for line in f:
            if not line.strip():
                continue
            records.append(DatasetRecord(**json.loads(line)))
    return DatasetManifest(config=config, records=tuple(records))


def _plan_records(cfg: SweepConfig) -> list:
    """Enumerate the sweep into concrete per-image parameters, in order."""
    plan = []
    angles = cfg.aspect_angles
    n_a = len(angles)
    n_s = len(cfg.seabeds)
    index = 0
    for shape, count in cfg.counts.items():
        for i in range(count):
            seed = derive_seed(cfg.master_seed, index)
            angle = angles[i % n_a]
            if cfg.angle_jitter_deg > 0.0:
                jrng = np.random.default_rng(derive_seed(seed, SEED_ROLE_JITTER))
                angle = angle + float(jrng.uniform(-cfg.angle_jitter_deg,
                                                   cfg.angle_jitter_deg))
            seabed = cfg.seabeds[(i // n_a) % n_s]
            altitude = cfg.camera_altitudes[(i // (n_a * n_s)) % len(cfg.camera_altitudes)]
            plan.append(DatasetRecord(
                image_path=f"images/img_{index:06d}.{cfg.image_format}",
                shape=shape,
                seabed=seabed,
                aspect_deg=angle % 360.0,
                altitude=altitude,
                seed=seed,
            ))
            index += 1
    return plan


def scene_for_record(cfg: SweepConfig, rec: DatasetRecord):
    """Build the scene a record describes: one target centered under the
    camera, viewed at the record's aspect angle and altitude."""
    hf = make_seabed(SeabedSpec(kind=rec.seabed, seed=derive_seed(rec.seed, SEED_ROLE_SEABED)),
                     cfg.grid_nodes, cfg.grid_nodes, cfg.cell_size)
    xmin, ymin, xmax, ymax = hf.extent
    cx = (xmin + xmax) / 2.0
    cy = (ymin + ymax) / 2.0
    camera = Camera(position=(cx, cy, rec.altitude), fov_deg=cfg.fov_deg,
                    width=cfg.image_width, height=cfg.image_height,
                    yaw_deg=rec.aspect_deg)
    light = DirectionalLight(grazing_angle_deg=cfg.grazing_angle_deg,
                             intensity=cfg.light_intensity)
    builder = SceneBuilder(hf, camera, light, ambient=cfg.ambient)
    prim = TargetPrimitive(shape=rec.shape, dims=cfg.target_dims[rec.shape])
    builder.place_target(prim, Pose(position=(cx, cy)))
    return builder.build()


def generate_dataset(cfg: SweepConfig, workers: int | None = None,
                     config_dir=None) -> DatasetManifest:
    """Render, post-process, and write every image of the sweep.

    Returns the manifest, which is also written to <output_dir>/manifest.jsonl.
    Rendering is serialized across workers; post-processing and file writes
    overlap.  Output bytes are independent of the worker count.
    """
    try:
        chain = chain_from_config(list(cfg.chain), base_dir=config_dir)
    except PostprocError as e:
        raise DatasetError(f"invalid postproc chain: {e}") from None
    plan = _plan_records(cfg)
    out_dir = cfg.output_dir
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)

    def run_job(rec: DatasetRecord) -> None:
        scene = scene_for_record(cfg, rec)
        with _RENDER_LOCK:
            img = render(scene)
        arr = apply_chain_array(img.data, chain,
                                noise_seed_override=derive_seed(rec.seed, SEED_ROLE_NOISE))
        save_image(ImageBuffer(np.clip(arr, 0.0, 1.0)),
                   os.path.join(out_dir, rec.image_path))

    if workers is None:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise DatasetError(f"worker count must be >= 1, got {workers}")
    if workers == 1:
        for rec in plan:
            run_job(rec)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_job, plan))

    manifest = DatasetManifest(config=cfg.to_dict(), records=tuple(plan))
    write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def split_manifest(manifest: DatasetManifest, train_counts: dict,
                   seed: int) -> DatasetManifest:
    """Mark train_counts[shape] seeded-random records per shape as train,
    everything else as test."""
    by_shape: dict = {}
    for idx, rec in enumerate(manifest.records):
        by_shape.setdefault(rec.shape, []).append(idx)
    rng = np.random.default_rng(seed)
    train_idx = set()
    for shape in sorted(train_counts):
        want = int(train_counts[shape])
        have = by_shape.get(shape, [])
        if want < 0:
            raise DatasetError(f"train count for {shape} must be >= 0, got {want}")
        if want > len(have):
            raise DatasetError(
                f"requested {want} training records for {shape}, only {len(have)} available")
        if want:
            picked = rng.choice(len(have), size=want, replace=False)
            train_idx.update(have[int(p)] for p in picked)
    new_records = tuple(
        DatasetRecord(**{**rec.to_dict(), "split": "train" if i in train_idx else "test"})
        for i, rec in enumerate(manifest.records))
    new_config = dict(manifest.config)
    new_config["split"] = {"train_counts": {k: int(v) for k, v in sorted(train_counts.items())},
                          "seed": int(seed)}
    return DatasetManifest(config=new_config, records=new_records)
