"""Simulated underwater world: seabed heightfields, targets, camera and light.

The seabed is a regular elevation grid generated procedurally for three bottom
types (sand ripples, mud, rocks).  Targets are analytic primitives (cube,
cylinder, cone, sphere) posed on the seabed surface.  A nadir-facing
perspective camera and a low-grazing-angle directional light mimic the imaging
geometry of a side-scan sonar: the light direction is tied to the camera yaw so
shadows always stretch along the across-track image axis.

Everything here is deterministic: the same seabed spec (seed included)
regenerates a bit-identical heightfield, and a built Scene is immutable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

SHAPES = ("cube", "cylinder", "cone", "sphere")
SEABED_KINDS = ("ripple", "mud", "rock")

_MASK64 = (1 << 64) - 1


class SceneError(ValueError):
    """Invalid scene parameter, geometry, or target placement."""


# ---------------------------------------------------------------------------
# Seeded lattice value noise
# ---------------------------------------------------------------------------

_PRIME_X = np.uint64(0x9E3779B97F4A7C15)
_PRIME_Y = np.uint64(0xC2B2AE3D27D4EB4F)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)


def _lattice_values(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Hash integer lattice coordinates to uniform values in [-1, 1).

    Integer avalanche (splitmix64 finalizer) over (ix, iy, seed); pure integer
    arithmetic, so results are identical on every platform.
    """
    h = ix.astype(np.int64).astype(np.uint64) * _PRIME_X
    h ^= iy.astype(np.int64).astype(np.uint64) * _PRIME_Y
    h ^= np.uint64(seed & _MASK64)
    h ^= h >> np.uint64(30)
    h *= _MIX_1
    h ^= h >> np.uint64(27)
    h *= _MIX_2
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -52) - 1.0


def value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Smooth lattice noise in [-1, 1], C1-continuous, unit feature scale.

    Random values at integer lattice points, blended with the smoothstep
    weight w = f**2 * (3 - 2f).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ix = np.floor(x)
    iy = np.floor(y)
    fx = x - ix
    fy = y - iy
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    v00 = _lattice_values(ix, iy, seed)
    v10 = _lattice_values(ix + 1, iy, seed)
    v01 = _lattice_values(ix, iy + 1, seed)
    v11 = _lattice_values(ix + 1, iy + 1, seed)
    wx = fx * fx * (3.0 - 2.0 * fx)
    wy = fy * fy * (3.0 - 2.0 * fy)
    a = v00 + (v10 - v00) * wx
    b = v01 + (v11 - v01) * wx
    return a + (b - a) * wy


def fractal_noise(
    x: np.ndarray,
    y: np.ndarray,
    seed: int,
    octaves: int,
    lacunarity: float,
    gain: float,
) -> np.ndarray:
    """Sum of `octaves` value-noise layers, each at `lacunarity`-scaled
    frequency and `gain`-scaled amplitude; the first octave has amplitude 1."""
    total = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
    freq = 1.0
    amp = 1.0
    for o in range(octaves):
        total += amp * value_noise(x * freq, y * freq, seed + 0x51ED * (o + 1))
        freq *= lacunarity
        amp *= gain
    return total


# ---------------------------------------------------------------------------
# Seabed specification and heightfield
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RippleParams:
    amplitude: float = 0.25        # m
    wavelength: float = 2.0        # m
    direction_deg: float = 0.0     # direction of elevation variation
    phase_jitter: float = 0.0      # fraction of a full cycle of phase wobble


@dataclass(frozen=True)
class MudParams:
    roughness_amplitude: float = 0.02   # m
    correlation_length: float = 0.5     # m


@dataclass(frozen=True)
class RockParams:
    base_amplitude: float = 0.6    # m, amplitude of the largest feature layer
    octaves: int = 5
    lacunarity: float = 2.0
    gain: float = 0.5
    feature_size: float = 8.0      # m, wavelength of the largest feature layer


@dataclass(frozen=True)
class SeabedSpec:
    kind: str = "mud"
    seed: int = 0
    ripple: RippleParams = field(default_factory=RippleParams)
    mud: MudParams = field(default_factory=MudParams)
    rock: RockParams = field(default_factory=RockParams)

    def __post_init__(self):
        if self.kind not in SEABED_KINDS:
            raise SceneError(f"unknown seabed kind {self.kind!r}; expected one of {SEABED_KINDS}")
        r = self.ripple
        if r.amplitude < 0 or r.wavelength <= 0 or r.phase_jitter < 0:
            raise SceneError(f"invalid ripple parameters: {r}")
        m = self.mud
        if m.roughness_amplitude < 0 or m.correlation_length <= 0:
            raise SceneError(f"invalid mud parameters: {m}")
        k = self.rock
        if k.base_amplitude < 0 or k.octaves < 1 or not (0.0 < k.gain < 1.0) \
                or k.lacunarity <= 0 or k.feature_size <= 0:
            raise SceneError(f"invalid rock parameters: {k}")


@dataclass(frozen=True, eq=False)
class Heightfield:
    """Regular elevation grid: nx x ny nodes, spacing cell_size meters.

    Node (i, j) sits at world (origin[0] + i*cell_size, origin[1] + j*cell_size)
    with elevation elevations[i, j].  The surface between nodes is bilinear for
    height queries; the renderer triangulates each cell along its low-index to
    high-index diagonal.
    """

    nx: int
    ny: int
    cell_size: float
    origin: tuple[float, float]
    elevations: np.ndarray   # shape (nx, ny), meters

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise SceneError(f"grid must be at least 2x2 nodes, got {self.nx}x{self.ny}")
        if self.cell_size <= 0:
            raise SceneError(f"cell_size must be positive, got {self.cell_size}")
        arr = np.asarray(self.elevations, dtype=np.float64)
        if arr.shape != (self.nx, self.ny):
            raise SceneError(f"elevations shape {arr.shape} != ({self.nx}, {self.ny})")
        if not np.all(np.isfinite(arr)):
            raise SceneError("elevations contain non-finite values")
        object.__setattr__(self, "elevations", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """World bounds (xmin, ymin, xmax, ymax)."""
        x0, y0 = self.origin
        return (x0, y0,
                x0 + (self.nx - 1) * self.cell_size,
                y0 + (self.ny - 1) * self.cell_size)

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin <= x <= xmax and ymin <= y <= ymax


def make_seabed(
    spec: SeabedSpec,
    nx: int,
    ny: int,
    cell_size: float,
    origin: tuple[float, float] = (0.0, 0.0),
) -> Heightfield:
    """Generate the heightfield for a seabed spec.

    Elevations are a pure function of (spec, nx, ny, cell_size): they are
    computed in grid-local coordinates, so `origin` only places the grid in
    the world.
      ripple: directional sinusoid, optionally phase-wobbled by smooth noise;
      mud:    single-layer low-amplitude value noise;
      rock:   fractal (multi-octave) value noise.
    """
    if nx < 2 or ny < 2 or cell_size <= 0:
        raise SceneError(f"invalid grid: nx={nx}, ny={ny}, cell_size={cell_size}")
    xs = np.arange(nx, dtype=np.float64) * cell_size
    ys = np.arange(ny, dtype=np.float64) * cell_size
    gx, gy = np.meshgrid(xs, ys, indexing="ij")

    if spec.kind == "ripple":
        p = spec.ripple
        if p.amplitude == 0.0:
            elev = np.zeros((nx, ny), dtype=np.float64)
        else:
            ang = math.radians(p.direction_deg)
            u = gx * math.cos(ang) + gy * math.sin(ang)
            phase = 0.0
            if p.phase_jitter > 0.0:
                # crest wobble: smooth phase noise with a 4-wavelength footprint
                scale = 4.0 * p.wavelength
                phase = (2.0 * math.pi * p.phase_jitter
                         * value_noise(gx / scale, gy / scale, spec.seed))
            elev = p.amplitude * np.sin(2.0 * math.pi * u / p.wavelength + phase)
    elif spec.kind == "mud":
        p = spec.mud
        elev = p.roughness_amplitude * value_noise(
            gx / p.correlation_length, gy / p.correlation_length, spec.seed)
    else:
        p = spec.rock
        elev = p.base_amplitude * fractal_noise(
            gx / p.feature_size, gy / p.feature_size,
            spec.seed, p.octaves, p.lacunarity, p.gain)

    return Heightfield(nx=nx, ny=ny, cell_size=cell_size, origin=origin, elevations=elev)


def height_at(hf: Heightfield, x: float, y: float) -> float:
    """Bilinear surface elevation at world (x, y); raises outside the extent."""
    xmin, ymin, xmax, ymax = hf.extent
    if not (xmin <= x <= xmax and ymin <= y <= ymax):
        raise SceneError(
            f"query ({x:g}, {y:g}) outside heightfield extent "
            f"[{xmin:g}, {xmax:g}] x [{ymin:g}, {ymax:g}]")
    u = (x - xmin) / hf.cell_size
    v = (y - ymin) / hf.cell_size
    i = min(int(u), hf.nx - 2)
    j = min(int(v), hf.ny - 2)
    fu = u - i
    fv = v - j
    z = hf.elevations
    a = z[i, j] + (z[i + 1, j] - z[i, j]) * fu
    b = z[i, j + 1] + (z[i + 1, j + 1] - z[i, j + 1]) * fu
    return float(a + (b - a) * fv)


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

_REQUIRED_DIMS = {
    "cube": ("edge",),
    "cylinder": ("radius", "length"),
    "cone": ("radius", "height"),
    "sphere": ("radius",),
}


@dataclass(frozen=True)
class TargetPrimitive:
    """Analytic target shape with white (albedo 1) surface by default.

    Local frames, before pose scale/yaw:
      cube:     axis-aligned, centered at the origin, edge `edge`;
      cylinder: axis along local x, centered, radius `radius`, length `length`
                (a cylinder rests lying on its side);
      cone:     base disk of `radius` in the z=0 plane centered at the origin,
                apex at (0, 0, height);
      sphere:   centered at the origin, radius `radius`.
    """

    shape: str
    dims: dict
    albedo: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        required = _REQUIRED_DIMS[self.shape]
        missing = [k for k in required if k not in self.dims]
        if missing:
            raise SceneError(f"{self.shape} needs dimensions {required}, missing {missing}")
        for k in required:
            if not (float(self.dims[k]) > 0):
                raise SceneError(f"{self.shape} dimension {k} must be positive, got {self.dims[k]}")
        if not (0.0 <= self.albedo <= 1.0):
            raise SceneError(f"albedo must be in [0, 1], got {self.albedo}")
        object.__setattr__(self, "dims", {k: float(v) for k, v in self.dims.items()})

    def local_min_z(self) -> float:
        """Lowest local-frame z of the shape (before scaling); used to rest
        the target on the seabed."""
        if self.shape == "cube":
            return -self.dims["edge"] / 2.0
        if self.shape == "cylinder":
            return -self.dims["radius"]
        if self.shape == "cone":
            return 0.0
        return -self.dims["radius"]

    def bounding_radius(self) -> float:
        if self.shape == "cube":
            return self.dims["edge"] * math.sqrt(3.0) / 2.0
        if self.shape == "cylinder":
            return math.hypot(self.dims["length"] / 2.0, self.dims["radius"])
        if self.shape == "cone":
            return max(self.dims["height"], self.dims["radius"])
        return self.dims["radius"]


@dataclass(frozen=True)
class Pose:
    """Placement of a target: ground position, yaw about vertical, per-axis scale.

    The vertical coordinate is not free: the scene builder derives it so the
    scaled primitive rests on the seabed surface.
    """

    position: tuple[float, float]
    yaw_deg: float = 0.0
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.position) != 2:
            raise SceneError(f"position must be (x, y), got {self.position}")
        if len(self.scale) != 3 or any(s <= 0 for s in self.scale):
            raise SceneError(f"scale components must be positive, got {self.scale}")
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "yaw_deg", float(self.yaw_deg) % 360.0)


@dataclass(frozen=True)
class PlacedTarget:
    """Target plus its resolved resting elevation.

    `origin_z` is the world z of the primitive's local origin: the seabed
    elevation under the target minus the scaled local minimum z, putting the
    lowest point of the shape exactly on the surface.
    """

    primitive: TargetPrimitive
    pose: Pose
    origin_z: float


# ---------------------------------------------------------------------------
# Camera and light
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Nadir-looking pinhole camera.

    `fov_deg` is the vertical field of view; the horizontal FOV follows from
    the aspect ratio.  `yaw_deg` spins the image frame about the vertical
    axis: at yaw 0, image columns run along world +x and image rows along
    world -y (top of the image faces +y).
    """

    position: tuple[float, float, float]
    fov_deg: float = 120.0
    width: int = 2048
    height: int = 2048
    yaw_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise SceneError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise SceneError(f"image size must be >= 1, got {self.width}x{self.height}")
        if len(self.position) != 3:
            raise SceneError(f"camera position must be (x, y, z), got {self.position}")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "yaw_deg", float(self.yaw_deg) % 360.0)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors in world coordinates; forward is
        straight down."""
        a = math.radians(self.yaw_deg)
        right = np.array([math.cos(a), math.sin(a), 0.0])
        up = np.array([-math.sin(a), math.cos(a), 0.0])
        forward = np.array([0.0, 0.0, -1.0])
        return right, up, forward


@dataclass(frozen=True)
class DirectionalLight:
    """Directional light skimming the seafloor at a small grazing angle.

    `azimuth_deg` is the horizontal travel direction of the light.  It is not
    set independently: the scene builder locks it to the camera yaw so shadows
    always stretch along the across-track (image +x) axis.
    """

    grazing_angle_deg: float = 6.0
    intensity: float = 1.0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    azimuth_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.grazing_angle_deg < 90.0):
            raise SceneError(f"grazing angle must be in (0, 90), got {self.grazing_angle_deg}")
        if self.intensity < 0:
            raise SceneError(f"intensity must be >= 0, got {self.intensity}")
        if len(self.color) != 3 or any(not (0.0 <= c <= 1.0) for c in self.color):
            raise SceneError(f"light color must be RGB in [0, 1], got {self.color}")
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)

    def direction_to_source(self) -> np.ndarray:
        """Unit vector from a surface point toward the light (opposite the
        propagation direction)."""
        g = math.radians(self.grazing_angle_deg)
        a = math.radians(self.azimuth_deg)
        return np.array([-math.cos(g) * math.cos(a),
                         -math.cos(g) * math.sin(a),
                         math.sin(g)])


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scene:
    """Complete, immutable description of what the renderer draws."""

    heightfield: Heightfield
    targets: tuple[PlacedTarget, ...]
    camera: Camera
    light: DirectionalLight
    ambient: float = 0.08
    seabed_albedo: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.ambient < 1.0):
            raise SceneError(f"ambient must be in [0, 1), got {self.ambient}")
        if not (0.0 <= self.seabed_albedo <= 1.0):
            raise SceneError(f"seabed albedo must be in [0, 1], got {self.seabed_albedo}")
        object.__setattr__(self, "targets", tuple(self.targets))


class SceneBuilder:
    """Accumulates targets onto a seabed, then freezes into a Scene.

    The builder resolves each target's resting elevation at placement time and
    rejects positions outside the heightfield extent.  `build()` ties the
    light azimuth to the camera yaw.
    """

    def __init__(
        self,
        heightfield: Heightfield,
        camera: Camera,
        light: DirectionalLight | None = None,
        ambient: float = 0.08,
        seabed_albedo: float = 1.0,
    ):
        self.heightfield = heightfield
        self.camera = camera
        self.light = light if light is not None else DirectionalLight()
        self.ambient = ambient
        self.seabed_albedo = seabed_albedo
        self._targets: list[PlacedTarget] = []

    def place_target(self, prim: TargetPrimitive, pose: Pose) -> "SceneBuilder":
        x, y = pose.position
        if not self.heightfield.contains(x, y):
            xmin, ymin, xmax, ymax = self.heightfield.extent
            raise SceneError(
                f"target position ({x:g}, {y:g}) outside seabed extent "
                f"[{xmin:g}, {xmax:g}] x [{ymin:g}, {ymax:g}]")
        floor = height_at(self.heightfield, x, y)
        origin_z = floor - prim.local_min_z() * pose.scale[2]
        self._targets.append(PlacedTarget(prim, pose, origin_z))
        return self

    def build(self) -> Scene:
        light = replace(self.light, azimuth_deg=self.camera.yaw_deg)
        return Scene(
            heightfield=self.heightfield,
            targets=tuple(self._targets),
            camera=self.camera,
            light=light,
            ambient=self.ambient,
            seabed_albedo=self.seabed_albedo,
        )


# ---------------------------------------------------------------------------
# JSON scene description
# ---------------------------------------------------------------------------

def seabed_spec_from_dict(d: dict) -> SeabedSpec:
    kw = {}
    if "ripple" in d:
        kw["ripple"] = RippleParams(**d["ripple"])
    if "mud" in d:
        kw["mud"] = MudParams(**d["mud"])
    if "rock" in d:
        kw["rock"] = RockParams(**d["rock"])
    return SeabedSpec(kind=d.get("kind", "mud"), seed=int(d.get("seed", 0)), **kw)


def scene_from_dict(cfg: dict) -> Scene:
    """Build a Scene from the JSON configuration layout.

    Layout (lengths in meters, angles in degrees):
      {
        "grid":   {"nx": 401, "ny": 401, "cell_size": 0.1, "origin": [0, 0]},
        "seabed": {"kind": "ripple"|"mud"|"rock", "seed": 0,
                   "ripple": {...}, "mud": {...}, "rock": {...}},
        "targets": [{"shape": "cube", "dims": {"edge": 1.0},
                     "position": [20, 20], "yaw_deg": 0,
                     "scale": [1, 1, 1], "albedo": 1.0}, ...],
        "camera": {"position": [20, 20, 10], "fov_deg": 120,
                   "width": 2048, "height": 2048, "yaw_deg": 0},
        "light":  {"grazing_angle_deg": 6, "intensity": 1.0,
                   "color": [1, 1, 1]},
        "ambient": 0.08,
        "seabed_albedo": 1.0
      }
    """
    try:
        grid = cfg["grid"]
        hf = make_seabed(
            seabed_spec_from_dict(cfg.get("seabed", {})),
            nx=int(grid["nx"]), ny=int(grid["ny"]),
            cell_size=float(grid["cell_size"]),
            origin=tuple(grid.get("origin", (0.0, 0.0))),
        )
        cam_d = dict(cfg["camera"])
        cam_d["position"] = tuple(cam_d["position"])
        camera = Camera(**cam_d)
        light_d = dict(cfg.get("light", {}))
        light_d.pop("azimuth_deg", None)   # derived from camera yaw
        if "color" in light_d:
            light_d["color"] = tuple(light_d["color"])
        light = DirectionalLight(**light_d)
        builder = SceneBuilder(
            hf, camera, light,
            ambient=float(cfg.get("ambient", 0.08)),
            seabed_albedo=float(cfg.get("seabed_albedo", 1.0)),
        )
        for t in cfg.get("targets", []):
            prim = TargetPrimitive(shape=t["shape"], dims=dict(t["dims"]),
                                   albedo=float(t.get("albedo", 1.0)))
            pose = Pose(position=tuple(t["position"]),
                        yaw_deg=float(t.get("yaw_deg", 0.0)),
                        scale=tuple(t.get("scale", (1.0, 1.0, 1.0))))
            builder.place_target(prim, pose)
    except KeyError as e:
        raise SceneError(f"scene config missing required key: {e}") from None
    return builder.build()


def load_scene(path) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f))
