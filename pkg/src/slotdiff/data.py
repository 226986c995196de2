"""Procedural sprite scenes: deterministic generation, PNG storage, manifests.

Every sample is fully determined by (spec, index). Objects are drawn back to
front; masks record visible pixels only and always partition the image.
Images are quantized to 8-bit levels at generation time so the PNG round
trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .artifacts import blob_hash

SHAPE_NAMES = ("circle", "square", "triangle")
BACKGROUND_MODES = ("plain", "textured", "mixed")

# saturated object colors on muted gray backgrounds
DEFAULT_PALETTE = (
    (0.894, 0.102, 0.110),
    (0.216, 0.494, 0.722),
    (0.302, 0.686, 0.290),
    (0.596, 0.306, 0.639),
    (1.000, 0.498, 0.000),
    (0.900, 0.800, 0.100),
)
_BACKGROUND_TONES = (0.08, 0.14, 0.20, 0.26)
_MIN_VISIBLE_PIXELS = 10
_MAX_LAYOUT_ATTEMPTS = 100


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    max_objects: int = 3
    shapes: tuple[str, ...] = SHAPE_NAMES
    palette: tuple[tuple[float, float, float], ...] = DEFAULT_PALETTE
    background_mode: str = "mixed"
    scale_range: tuple[float, float] = (0.20, 0.38)
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError(f"image_size {self.image_size} too small")
        if self.max_objects < 1:
            raise ValueError("max_objects must be at least 1")
        unknown = set(self.shapes) - set(SHAPE_NAMES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}")
        if self.background_mode not in BACKGROUND_MODES:
            raise ValueError(f"background_mode must be one of {BACKGROUND_MODES}")


@dataclass
class ObjectRecord:
    shape: str
    color: int  # palette index
    x: float    # center, fraction of image width
    y: float    # center, fraction of image height
    scale: float  # diameter, fraction of image size


@dataclass
class SceneSample:
    image: np.ndarray       # [H, W, 3] float32 in [0, 1], 8-bit quantized
    label_map: np.ndarray   # [H, W] uint8, 0 = background, k = objects[k-1]
    objects: list[ObjectRecord]

    @property
    def masks(self) -> np.ndarray:
        """[n+1, H, W] booleans partitioning the image, index 0 = background."""
        n = len(self.objects)
        return np.stack([self.label_map == k for k in range(n + 1)])


def _pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="xy")


def _support(shape: str, x: float, y: float, scale: float, size: int) -> np.ndarray:
    px, py = _pixel_grid(size)
    r = scale / 2.0
    if shape == "circle":
        return (px - x) ** 2 + (py - y) ** 2 <= r * r
    if shape == "square":
        return np.maximum(np.abs(px - x), np.abs(py - y)) <= r
    if shape == "triangle":
        angles = (-np.pi / 2, np.pi / 6, 5 * np.pi / 6)
        vs = [(x + r * np.cos(a), y + r * np.sin(a)) for a in angles]
        d = []
        for (ax, ay), (bx, by) in zip(vs, vs[1:] + vs[:1]):
            d.append((px - ax) * (by - ay) - (py - ay) * (bx - ax))
        pos = (d[0] >= 0) & (d[1] >= 0) & (d[2] >= 0)
        neg = (d[0] <= 0) & (d[1] <= 0) & (d[2] <= 0)
        return pos | neg
    raise ValueError(f"unknown shape {shape!r}")


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    mode = spec.background_mode
    if mode == "mixed":
        mode = "textured" if rng.random() < 0.5 else "plain"
    tones = rng.choice(_BACKGROUND_TONES, size=2, replace=False)
    if mode == "plain":
        return np.full((size, size, 3), tones[0], dtype=np.float64)
    # textured: smooth two-tone sinusoidal stripes at a random orientation
    freq = rng.uniform(2.0, 6.0)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    px, py = _pixel_grid(size)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (px * np.cos(theta)
                                                  + py * np.sin(theta)) + phase)
    lo, hi = min(tones), max(tones)
    return np.repeat((lo + (hi - lo) * wave)[:, :, None], 3, axis=2)


def generate_scene(spec: SceneSpec, index: int) -> SceneSample:
    """Render sample `index`; identical (spec, index) gives identical output."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, index])
    size = spec.image_size
    background = _background(spec, rng)
    n_objects = int(rng.integers(1, spec.max_objects + 1))

    for _ in range(_MAX_LAYOUT_ATTEMPTS):
        objects: list[ObjectRecord] = []
        supports: list[np.ndarray] = []
        for _ in range(n_objects):
            shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
            color = int(rng.integers(len(spec.palette)))
            scale = float(rng.uniform(*spec.scale_range))
            margin = scale / 2.0 + 0.02
            x = float(rng.uniform(margin, 1.0 - margin))
            y = float(rng.uniform(margin, 1.0 - margin))
            objects.append(ObjectRecord(shape, color, x, y, scale))
            supports.append(_support(shape, x, y, scale, size))
        label = np.zeros((size, size), dtype=np.uint8)
        for k, sup in enumerate(supports, start=1):  # back to front
            label[sup] = k
        visible = np.bincount(label.reshape(-1), minlength=n_objects + 1)[1:]
        if np.all(visible >= _MIN_VISIBLE_PIXELS):
            break
    else:
        raise RuntimeError(
            f"no valid layout for sample {index} after {_MAX_LAYOUT_ATTEMPTS} attempts")

    image = background.copy()
    for k, obj in enumerate(objects, start=1):
        image[label == k] = spec.palette[obj.color]
    image = np.round(image * 255.0) / 255.0
    return SceneSample(image.astype(np.float32), label, objects)


def _save_image_png(path: Path, image: np.ndarray) -> bytes:
    arr = np.round(image * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path.read_bytes()


def _save_label_png(path: Path, label: np.ndarray) -> bytes:
    Image.fromarray(label, mode="L").save(path, format="PNG")
    return path.read_bytes()


def write_dataset(spec: SceneSpec, count: int, out_dir: str | Path) -> "SceneDataset":
    """Generate `count` samples under out_dir and write manifest.json."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(count):
        sample = generate_scene(spec, i)
        image_rel = f"images/{i:05d}.png"
        mask_rel = f"masks/{i:05d}.png"
        image_bytes = _save_image_png(out_dir / image_rel, sample.image)
        mask_bytes = _save_label_png(out_dir / mask_rel, sample.label_map)
        samples.append({
            "index": i,
            "image": image_rel,
            "mask": mask_rel,
            "image_hash": blob_hash(image_bytes),
            "mask_hash": blob_hash(mask_bytes),
            "objects": [asdict(o) for o in sample.objects],
        })
    manifest = {"format": 1, "spec": asdict(spec), "count": count, "samples": samples}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return SceneDataset(out_dir, manifest)


class SceneDataset:
    """Read access to a written dataset; files are loaded lazily per sample."""

    def __init__(self, root: str | Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.spec = _spec_from_dict(manifest["spec"])
        self._samples = manifest["samples"]

    @classmethod
    def load(cls, root: str | Path, verify: bool = False) -> "SceneDataset":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest at {manifest_path}")
        ds = cls(root, json.loads(manifest_path.read_text()))
        for rec in ds._samples:
            for key in ("image", "mask"):
                path = root / rec[key]
                if not path.exists():
                    raise FileNotFoundError(
                        f"sample {rec['index']}: missing file {path}")
        if verify:
            ds.verify()
        return ds

    def verify(self) -> None:
        """Recompute content hashes against the manifest."""
        for rec in self._samples:
            for key, hkey in (("image", "image_hash"), ("mask", "mask_hash")):
                path = self.root / rec[key]
                got = blob_hash(path.read_bytes())
                if got != rec[hkey]:
                    raise ValueError(f"sample {rec['index']}: {key} hash mismatch "
                                     f"for {path}")

    def __len__(self) -> int:
        return self.manifest["count"]

    def image(self, i: int) -> np.ndarray:
        path = self.root / self._samples[i]["image"]
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
        return arr / 255.0

    def label_map(self, i: int) -> np.ndarray:
        path = self.root / self._samples[i]["mask"]
        return np.asarray(Image.open(path), dtype=np.uint8)

    def masks(self, i: int) -> np.ndarray:
        label = self.label_map(i)
        n = len(self._samples[i]["objects"])
        return np.stack([label == k for k in range(n + 1)])

    def objects(self, i: int) -> list[ObjectRecord]:
        return [ObjectRecord(**o) for o in self._samples[i]["objects"]]

    def load_images_u8(self, indices=None) -> np.ndarray:
        """[N, H, W, 3] uint8 batch, the trainer's in-memory cache."""
        if indices is None:
            indices = range(len(self))
        out = np.stack([
            np.asarray(Image.open(self.root / self._samples[i]["image"]).convert("RGB"))
            for i in indices])
        return out


def _spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    d["shapes"] = tuple(d["shapes"])
    d["palette"] = tuple(tuple(c) for c in d["palette"])
    d["scale_range"] = tuple(d["scale_range"])
    return SceneSpec(**d)


def images_to_input(images_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [N, H, W, 3] to NCHW float in [0, 1]."""
    return (images_u8.astype(dtype) / 255.0).transpose(0, 3, 1, 2)
