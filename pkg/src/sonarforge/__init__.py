"""sonarforge: synthetic side-scan sonar imagery and ATR evaluation.

Renders highlight/shadow images of simple targets on procedural seabeds with
a shadow-casting ray tracer, post-processes them into noisy sonar-styled
imagery, generates labeled datasets in bulk, and trains/evaluates a
HOG + linear-SVM classifier on them.
"""

from .imagebuf import ImageBuffer, ImageError, load_image, save_image
from .scene import (Camera, DirectionalLight, Heightfield, Pose, Scene,
                    SceneBuilder, SceneError, SeabedSpec, TargetPrimitive,
                    height_at, load_scene, make_seabed, scene_from_dict)
from .render import (Hit, Ray, RenderError, intersect_primitive, intersect_scene,
                     render, resolve_threads, shade, traverse_heightfield)
from .postproc import (Histogram, NoiseSpec, PostprocError, add_noise,
                       apply_chain, apply_copper_colormap, compute_histogram,
                       histogram_match, parse_noise_spec, stitch_sidescan,
                       to_grayscale)
from .dataset import (DatasetError, DatasetManifest, DatasetRecord, SweepConfig,
                      derive_seed, generate_dataset, read_manifest,
                      split_manifest, write_manifest)
from .atr import (AtrError, ClassifierModel, ConfusionMatrix, TrainConfig,
                  confusion_matrix, extract_features, predict, train_classifier)

__version__ = "0.1.0"
