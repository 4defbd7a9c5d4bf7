"""Post-processing of rendered images into sonar-styled intensity imagery.

The standard chain converts the renderer's RGB output to grayscale, optionally
matches its histogram to a reference, injects acoustic-style noise (Gaussian,
speckle, or Poisson), and can apply a copper colormap for display or stitch
port/starboard swaths around a nadir dead-zone.

All operations are pure per-image transforms; noise draws from a generator
seeded per call, so results are bit-reproducible and images can be processed
concurrently.  Public functions take and return ImageBuffer; the *_array
variants work on bare float arrays and skip re-validation between chain steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imagebuf import ImageBuffer, load_image

NOISE_KINDS = ("gaussian", "speckle", "poisson")
SPECKLE_MULTIPLIERS = ("uniform", "gaussian")
LEVELS = 256
DEFAULT_DEADZONE_PX = 128

# grayscale luma weights (Rec.601)
_LUMA = np.array([0.299, 0.587, 0.114])
# copper colormap slopes per channel
_COPPER = (1.25, 0.7812, 0.4975)


class PostprocError(ValueError):
    """Invalid post-processing parameter or input."""


@dataclass(frozen=True)
class NoiseSpec:
    """One noise injection: kind, strength, and its own RNG seed.

    variance applies to gaussian (additive, intensity^2 units) and speckle
    (variance of the zero-mean multiplier).  scale applies to poisson only:
    intensities are treated as count rates of I*scale events.  multiplier
    selects the speckle multiplier law: "uniform" (zero-mean uniform on
    +-sqrt(3*variance)) or "gaussian" (Normal(0, variance)).
    """

    kind: str
    variance: float = 0.0
    scale: float = 255.0
    seed: int = 0
    multiplier: str = "uniform"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise PostprocError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not (self.variance >= 0.0):
            raise PostprocError(f"noise variance must be >= 0, got {self.variance}")
        if not (self.scale > 0.0):
            raise PostprocError(f"poisson scale must be > 0, got {self.scale}")
        if self.multiplier not in SPECKLE_MULTIPLIERS:
            raise PostprocError(
                f"unknown speckle multiplier {self.multiplier!r}; "
                f"expected one of {SPECKLE_MULTIPLIERS}")


def parse_noise_spec(text: str) -> NoiseSpec:
    """Parse the CLI noise syntax, e.g. "speckle:0.1:seed=7".

    The first segment is the kind; one bare number is the variance; the rest
    are key=value pairs for seed, scale, and multiplier.
    """
    parts = text.split(":")
    kind = parts[0].strip()
    kwargs = {}
    for part in parts[1:]:
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            key, _, val = part.partition("=")
            key = key.strip()
            if key == "seed":
                kwargs["seed"] = int(val)
            elif key == "scale":
                kwargs["scale"] = float(val)
            elif key == "variance":
                kwargs["variance"] = float(val)
            elif key == "multiplier":
                kwargs["multiplier"] = val.strip()
            else:
                raise PostprocError(f"unknown noise option {key!r} in {text!r}")
        else:
            if "variance" in kwargs:
                raise PostprocError(f"duplicate variance value {part!r} in {text!r}")
            try:
                kwargs["variance"] = float(part)
            except ValueError:
                raise PostprocError(f"bad noise parameter {part!r} in {text!r}") from None
    return NoiseSpec(kind=kind, **kwargs)


@dataclass(frozen=True, eq=False)
class Histogram:
    """256-bin pixel-count histogram over intensities in [0, 1]."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.shape != (LEVELS,):
            raise PostprocError(f"histogram needs {LEVELS} bins, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.floor(arr)):
                raise PostprocError("histogram counts must be integers")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise PostprocError("histogram counts must be >= 0")
        object.__setattr__(self, "counts", arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def cdf(self) -> np.ndarray:
        """Cumulative distribution over the 256 levels; ends at 1."""
        if self.total == 0:
            raise PostprocError("empty histogram has no CDF")
        return np.cumsum(self.counts) / self.total


def quantize_levels(arr: np.ndarray) -> np.ndarray:
    """Map intensities in [0, 1] to integer levels 0..255 by equal-width bins
    (floor(v*256), with 1.0 folded into level 255)."""
    levels = (np.asarray(arr) * LEVELS).astype(np.int32)
    np.minimum(levels, LEVELS - 1, out=levels)
    return levels


def compute_histogram(img: ImageBuffer) -> Histogram:
    """Level histogram of a single-channel image."""
    if img.channels != 1:
        raise PostprocError(f"histogram needs a single-channel image, got {img.channels} channels")
    levels = quantize_levels(img.data)
    return Histogram(np.bincount(levels.ravel(), minlength=LEVELS))


def load_reference_histogram(path) -> Histogram:
    """Reference histogram from an image file or a 256-line text count file.

    Text files hold one integer count per line.  Image files are loaded,
    converted to grayscale if needed, and binned at the 256 levels.
    """
    path = str(path)
    if path.endswith(".txt"):
        counts = np.loadtxt(path, dtype=np.int64, ndmin=1)
        if counts.shape != (LEVELS,):
            raise PostprocError(
                f"histogram text file must hold {LEVELS} counts, got {counts.shape[0]}")
        return Histogram(counts)
    img = load_image(path)
    if img.channels == 3:
        img = to_grayscale(img)
    return compute_histogram(img)


# ---------------------------------------------------------------------------
# Chain operations
# ---------------------------------------------------------------------------

def to_grayscale_array(arr: np.ndarray) -> np.ndarray:
    return arr @ _LUMA


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Rec.601 luma: g = 0.299 R + 0.587 G + 0.114 B."""
    if img.channels != 3:
        raise PostprocError(f"grayscale conversion needs 3 channels, got {img.channels}")
    return ImageBuffer(np.clip(to_grayscale_array(img.data), 0.0, 1.0))


def match_lut(src_hist: Histogram, ref: Histogram) -> np.ndarray:
    """Level-to-level lookup table for histogram matching.

    Level s maps to the smallest reference level r with
    CDF_ref(r) >= CDF_src(s).
    """
    if ref.total == 0:
        raise PostprocError("reference histogram is empty")
    if src_hist.total == 0:
        raise PostprocError("source histogram is empty")
    cdf_src = src_hist.cdf()
    cdf_ref = ref.cdf()
    # cdf_ref ends at exactly 1.0 and no cdf_src value exceeds 1.0, so the
    # search always lands on a real level; the clamp is only a guard
    lut = np.searchsorted(cdf_ref, cdf_src, side="left")
    return np.minimum(lut, LEVELS - 1).astype(np.int64)


def histogram_match_array(arr: np.ndarray, ref: Histogram) -> np.ndarray:
    levels = quantize_levels(arr)
    src_hist = Histogram(np.bincount(levels.ravel(), minlength=LEVELS))
    lut = match_lut(src_hist, ref)
    return (lut / float(LEVELS - 1))[levels]


def histogram_match(src: ImageBuffer, ref: Histogram) -> ImageBuffer:
    """Remap intensities so the output's level distribution follows ref.

    Both images are quantized to 256 levels; output pixels sit exactly on
    level centers r/255, which makes re-matching to the same reference an
    exact no-op.
    """
    if src.channels != 1:
        raise PostprocError(f"histogram matching needs 1 channel, got {src.channels}")
    return ImageBuffer(histogram_match_array(src.data, ref))


def add_noise_array(arr: np.ndarray, spec: NoiseSpec, clamp: bool = True) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        if spec.variance == 0.0:
            return arr.copy()
        out = rng.normal(0.0, math.sqrt(spec.variance), size=arr.shape)
        out += arr
    elif spec.kind == "speckle":
        if spec.variance == 0.0:
            return arr.copy()
        if spec.multiplier == "uniform":
            half = math.sqrt(3.0 * spec.variance)
            u = rng.uniform(-half, half, size=arr.shape)
        else:
            u = rng.normal(0.0, math.sqrt(spec.variance), size=arr.shape)
        u *= arr
        u += arr
        out = u
    else:
        out = rng.poisson(arr * spec.scale).astype(np.float64) / spec.scale
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def add_noise(img: ImageBuffer, spec: NoiseSpec, clamp: bool = True) -> ImageBuffer:
    """Inject seeded noise; see NoiseSpec for the three models.

    clamp=False returns the raw noisy values (possibly outside [0, 1]) as a
    bare array for statistical inspection; clamped output is an ImageBuffer.
    """
    if img.channels != 1:
        raise PostprocError(f"noise injection needs 1 channel, got {img.channels}")
    out = add_noise_array(img.data[:, :, 0], spec, clamp=clamp)
    if not clamp:
        return out
    return ImageBuffer(out)


def apply_copper_colormap_array(arr: np.ndarray) -> np.ndarray:
    out = np.empty(arr.shape + (3,), dtype=np.float64)
    np.minimum(arr * _COPPER[0], 1.0, out=out[:, :, 0])
    out[:, :, 1] = arr * _COPPER[1]
    out[:, :, 2] = arr * _COPPER[2]
    return out


def apply_copper_colormap(img: ImageBuffer) -> ImageBuffer:
    """Map grayscale to the copper display palette:
    R = min(1, 1.25 g), G = 0.7812 g, B = 0.4975 g."""
    if img.channels != 1:
        raise PostprocError(f"colormap needs 1 channel, got {img.channels}")
    return ImageBuffer(apply_copper_colormap_array(img.data[:, :, 0]))


def stitch_sidescan(port: ImageBuffer, starboard: ImageBuffer,
                    deadzone_px: int = DEFAULT_DEADZONE_PX) -> ImageBuffer:
    """Compose a two-sided swath: mirrored port | dark nadir gap | starboard.

    The port image is flipped left-right so range grows away from the center
    on both sides, as in real side-scan waterfalls.
    """
    if port.channels != 1 or starboard.channels != 1:
        raise PostprocError("stitching needs single-channel swaths")
    if port.height != starboard.height:
        raise PostprocError(
            f"swath heights differ: port {port.height} vs starboard {starboard.height}")
    if deadzone_px < 0:
        raise PostprocError(f"dead-zone width must be >= 0, got {deadzone_px}")
    gap = np.zeros((port.height, deadzone_px), dtype=np.float64)
    out = np.hstack([np.fliplr(port.data[:, :, 0]), gap, starboard.data[:, :, 0]])
    return ImageBuffer(out)


# ---------------------------------------------------------------------------
# Operation chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainStep:
    """One chain element: op in {grayscale, match, noise, colormap} plus its
    parameters (ref histogram for match, NoiseSpec for noise)."""

    op: str
    ref: Histogram | None = None
    noise: NoiseSpec | None = None

    def __post_init__(self):
        if self.op not in ("grayscale", "match", "noise", "colormap"):
            raise PostprocError(f"unknown chain op {self.op!r}")
        if self.op == "match" and self.ref is None:
            raise PostprocError("match step needs a reference histogram")
        if self.op == "noise" and self.noise is None:
            raise PostprocError("noise step needs a NoiseSpec")


def chain_from_config(steps: list, base_dir=None) -> tuple[ChainStep, ...]:
    """Build a chain from its JSON form.

    Each entry is {"op": ...}; noise entries carry kind/variance/scale/seed/
    multiplier fields, match entries carry {"ref": path} resolved against
    base_dir.
    """
    import os

    out = []
    for entry in steps:
        if isinstance(entry, str):
            entry = {"op": entry}
        op = entry.get("op")
        if op == "noise":
            if "kind" not in entry:
                raise PostprocError(f"noise step needs a 'kind': {entry!r}")
            spec = NoiseSpec(kind=entry["kind"],
                             variance=float(entry.get("variance", 0.0)),
                             scale=float(entry.get("scale", 255.0)),
                             seed=int(entry.get("seed", 0)),
                             multiplier=entry.get("multiplier", "uniform"))
            out.append(ChainStep(op="noise", noise=spec))
        elif op == "match":
            if "ref" not in entry:
                raise PostprocError(f"match step needs a 'ref' path: {entry!r}")
            path = entry["ref"]
            if base_dir is not None:
                path = os.path.join(base_dir, path)
            out.append(ChainStep(op="match", ref=load_reference_histogram(path)))
        elif op == "colormap":
            palette = entry.get("palette", "copper")
            if palette != "copper":
                raise PostprocError(f"unknown palette {palette!r}; only 'copper' is available")
            out.append(ChainStep(op="colormap"))
        elif op == "grayscale":
            out.append(ChainStep(op=op))
        else:
            raise PostprocError(f"unknown chain op {op!r}")
    return tuple(out)


def apply_chain_array(arr: np.ndarray, steps, noise_seed_override: int | None = None):
    """Run a chain on a bare array ((h, w) or (h, w, 3)), skipping the
    per-step buffer validation; used by bulk generation and benchmarks.

    noise_seed_override, when given, reseeds the k-th noise step with
    noise_seed_override XOR k so bulk generation can vary noise per image
    while sharing one chain definition.
    """
    noise_idx = 0
    for step in steps:
        if step.op == "grayscale":
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise PostprocError("grayscale step needs a 3-channel image")
            arr = to_grayscale_array(arr)
        elif step.op == "match":
            if arr.ndim != 2:
                raise PostprocError("match step needs a 1-channel image")
            arr = histogram_match_array(arr, step.ref)
        elif step.op == "noise":
            if arr.ndim != 2:
                raise PostprocError("noise step needs a 1-channel image")
            spec = step.noise
            if noise_seed_override is not None:
                spec = NoiseSpec(kind=spec.kind, variance=spec.variance, scale=spec.scale,
                                 seed=noise_seed_override ^ noise_idx,
                                 multiplier=spec.multiplier)
            arr = add_noise_array(arr, spec, clamp=True)
            noise_idx += 1
        else:
            if arr.ndim != 2:
                raise PostprocError("colormap step needs a 1-channel image")
            arr = apply_copper_colormap_array(arr)
    return arr


def apply_chain(img: ImageBuffer, steps, noise_seed_override: int | None = None) -> ImageBuffer:
    """Run an ordered chain of post-processing steps on an image."""
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    out = apply_chain_array(arr, steps, noise_seed_override)
    return ImageBuffer(np.clip(out, 0.0, 1.0))
