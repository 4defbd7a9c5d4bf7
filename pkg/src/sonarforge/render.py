"""Ray-traced rendering of scenes into highlight/shadow images.

A nadir pinhole camera shoots one primary ray per pixel; the nearest hit among
the seabed mesh and the analytic targets is shaded with a Lambertian model
plus one binary shadow ray toward the directional light:

    L = clamp01(ambient * albedo + visibility * intensity * albedo * max(0, n.l))

The heavy lifting lives in compiled kernels (_kernels); this module packs
scenes into the flat arrays the kernels expect and exposes single-ray
intersection helpers with the exact same numerics as the full render.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .imagebuf import ImageBuffer
from .scene import SHAPES, Heightfield, PlacedTarget, Pose, Scene, TargetPrimitive

TMIN_PRIMARY = K.TMIN_PRIMARY
TMIN_SHADOW = K.TMIN_SHADOW
SHADOW_OFFSET = K.SHADOW_OFFSET


class RenderError(ValueError):
    """Invalid render request (bad ray, thread count, or camera setup)."""


@dataclass(frozen=True)
class Ray:
    """Half-line with unit direction; direction is normalized on construction."""

    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.direction) != 3:
            raise RenderError("ray origin and direction must be 3-vectors")
        d = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(d))
        if not np.isfinite(n) or n == 0.0:
            raise RenderError(f"ray direction must be nonzero and finite, got {self.direction}")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "direction", tuple(float(c) for c in d / n))

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.origin) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class Hit:
    """Nearest intersection: world t plus shading inputs.

    target_index is -1 for seabed hits, otherwise the index into
    scene.targets.
    """

    t: float
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    albedo: float
    target_index: int = -1


def _pack_heightfield(hf: Heightfield):
    """(elev, per-cell max node elevation, global zmin, global zmax)."""
    elev = np.ascontiguousarray(hf.elevations)
    czmax = np.maximum(np.maximum(elev[:-1, :-1], elev[1:, :-1]),
                       np.maximum(elev[:-1, 1:], elev[1:, 1:]))
    return elev, np.ascontiguousarray(czmax), float(elev.min()), float(elev.max())


def _pack_targets(targets):
    """Flatten placed targets into the parallel arrays the kernels consume."""
    n = len(targets)
    tshape = np.zeros(n, dtype=np.int64)
    tdims = np.zeros((n, 3), dtype=np.float64)
    tpos = np.zeros((n, 3), dtype=np.float64)
    trot = np.zeros((n, 2), dtype=np.float64)
    tscale = np.ones((n, 3), dtype=np.float64)
    tbound = np.zeros(n, dtype=np.float64)
    talb = np.ones(n, dtype=np.float64)
    for k, pt in enumerate(targets):
        prim = pt.primitive
        pose = pt.pose
        tshape[k] = SHAPES.index(prim.shape)
        d = prim.dims
        if prim.shape == "cube":
            tdims[k, 0] = d["edge"]
        elif prim.shape == "cylinder":
            tdims[k, 0] = d["radius"]
            tdims[k, 1] = d["length"]
        elif prim.shape == "cone":
            tdims[k, 0] = d["radius"]
            tdims[k, 1] = d["height"]
        else:
            tdims[k, 0] = d["radius"]
        tpos[k, 0] = pose.position[0]
        tpos[k, 1] = pose.position[1]
        tpos[k, 2] = pt.origin_z
        a = math.radians(pose.yaw_deg)
        trot[k, 0] = math.cos(a)
        trot[k, 1] = math.sin(a)
        tscale[k, 0], tscale[k, 1], tscale[k, 2] = pose.scale
        tbound[k] = prim.bounding_radius() * max(pose.scale) * 1.0001 + 1e-9
        talb[k] = prim.albedo
    return tshape, tdims, tpos, trot, tscale, tbound, talb


def intersect_primitive(ray: Ray, prim: TargetPrimitive, pose: Pose,
                        origin_z: float = 0.0) -> Hit | None:
    """Nearest hit of a single posed primitive whose local origin sits at
    world elevation origin_z; None on a miss."""
    packed = _pack_targets([PlacedTarget(prim, pose, origin_z)])
    ox, oy, oz = ray.origin
    dx, dy, dz = ray.direction
    t, k, nx, ny, nz = K.target_hit(ox, oy, oz, dx, dy, dz, *packed[:6], TMIN_PRIMARY)
    if t < 0.0:
        return None
    return Hit(t=float(t), point=tuple(ray.at(t)), normal=(float(nx), float(ny), float(nz)),
               albedo=prim.albedo, target_index=int(k))


def traverse_heightfield(ray: Ray, hf: Heightfield, albedo: float = 1.0) -> Hit | None:
    """Nearest hit of the triangulated heightfield surface; None on a miss."""
    elev, czmax, zmin_g, zmax_g = _pack_heightfield(hf)
    ox, oy, oz = ray.origin
    dx, dy, dz = ray.direction
    t, ix, iy, itri = K.hf_trace(ox, oy, oz, dx, dy, dz, elev, czmax,
                                 hf.origin[0], hf.origin[1], hf.cell_size,
                                 zmin_g, zmax_g, TMIN_PRIMARY)
    if t < 0.0:
        return None
    nx, ny, nz = K.hf_normal(elev, ix, iy, hf.cell_size, itri)
    return Hit(t=float(t), point=tuple(ray.at(t)), normal=(float(nx), float(ny), float(nz)),
               albedo=albedo, target_index=-1)


def intersect_scene(ray: Ray, scene: Scene) -> Hit | None:
    """Nearest hit across the seabed and every target."""
    hf_hit = traverse_heightfield(ray, scene.heightfield, scene.seabed_albedo)
    packed = _pack_targets(scene.targets)
    ox, oy, oz = ray.origin
    dx, dy, dz = ray.direction
    t, k, nx, ny, nz = K.target_hit(ox, oy, oz, dx, dy, dz, *packed[:6], TMIN_PRIMARY)
    tg_hit = None
    if t > 0.0:
        tg_hit = Hit(t=float(t), point=tuple(ray.at(t)),
                     normal=(float(nx), float(ny), float(nz)),
                     albedo=scene.targets[int(k)].primitive.albedo, target_index=int(k))
    if hf_hit is None:
        return tg_hit
    if tg_hit is None or hf_hit.t <= tg_hit.t:
        return hf_hit
    return tg_hit


def shade(hit: Hit, scene: Scene) -> tuple[float, float, float]:
    """RGB radiance at a hit: ambient plus shadow-tested Lambertian diffuse.

    The shadow ray starts SHADOW_OFFSET along the surface normal and is
    skipped entirely on faces turned away from the light.
    """
    light = scene.light
    l = light.direction_to_source()
    n = np.asarray(hit.normal)
    ndl = float(n @ l)
    diff = 0.0
    if ndl > 0.0 and light.intensity > 0.0:
        elev, czmax, zmin_g, zmax_g = _pack_heightfield(scene.heightfield)
        packed = _pack_targets(scene.targets)
        o = np.asarray(hit.point) + SHADOW_OFFSET * n
        blocked = K.scene_blocked(o[0], o[1], o[2], l[0], l[1], l[2],
                                  elev, czmax,
                                  scene.heightfield.origin[0], scene.heightfield.origin[1],
                                  scene.heightfield.cell_size, zmin_g, zmax_g,
                                  *packed[:6], TMIN_SHADOW)
        if not blocked:
            diff = light.intensity * ndl * hit.albedo
    base = scene.ambient * hit.albedo
    return tuple(min(1.0, max(0.0, base + c * diff)) for c in light.color)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count for the render kernel.

    Order of precedence: explicit argument, SONARFORGE_THREADS environment
    variable, hardware CPU count.  The result is clamped to the thread pool
    numba booted with.
    """
    import numba

    if threads is None:
        env = os.environ.get("SONARFORGE_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise RenderError(f"SONARFORGE_THREADS must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise RenderError(f"thread count must be >= 1, got {threads}")
    return min(threads, numba.config.NUMBA_NUM_THREADS)


def render(scene: Scene, threads: int | None = None) -> ImageBuffer:
    """Render the scene to an RGB image in [0, 1].

    `threads` caps the worker threads for this call (see resolve_threads);
    output is identical regardless of thread count.
    """
    import numba

    cam = scene.camera
    tanv = math.tan(math.radians(cam.fov_deg) / 2.0)
    tanh = tanv * (cam.width / cam.height)
    right, up, _ = cam.basis()
    light = scene.light
    l = light.direction_to_source()
    elev, czmax, zmin_g, zmax_g = _pack_heightfield(scene.heightfield)
    packed = _pack_targets(scene.targets)
    talb = packed[-1]

    n_threads = resolve_threads(threads)
    old = numba.get_num_threads()
    numba.set_num_threads(n_threads)
    try:
        out = K.render_kernel(
            cam.width, cam.height,
            cam.position[0], cam.position[1], cam.position[2],
            right[0], right[1], up[0], up[1], tanh, tanv,
            elev, czmax, scene.heightfield.origin[0], scene.heightfield.origin[1],
            scene.heightfield.cell_size, zmin_g, zmax_g,
            packed[0], packed[1], packed[2], packed[3], packed[4], packed[5], talb,
            l[0], l[1], l[2], light.intensity,
            light.color[0], light.color[1], light.color[2],
            scene.ambient, scene.seabed_albedo)
    finally:
        numba.set_num_threads(old)
    return ImageBuffer(out)
