"""Parametric synthetic image generator with objectively measurable root causes.

Each 32x32 grayscale image shows a bright ray leaving the image center at
a parametric angle, optionally crossed by an occluding disk, dimmed by a
global brightness factor and overlaid with sensor noise.  The class label
is the ray's direction binned into eight 45-degree sectors centered on
0, 45, ..., 315 degrees, so the label is derivable from the parameters
alone and labeling is free and exact.

Three independent hard regions can be oversampled to inject known root
causes of classifier errors: angles near a bin boundary, heavy occlusion
and low brightness.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .micronet import LabeledDataset

IMAGE_SIDE = 32
N_CLASSES = 8
BIN_WIDTH = 360.0 / N_CLASSES

_BG_LEVEL = 0.25
_RAY_AMPLITUDE = 0.65


def angle_to_label(angle: float) -> int:
    """Class of a direction angle; sector c covers [45c - 22.5, 45c + 22.5).

    Boundaries belong to the upper sector (half-open rule): 67.5 degrees
    is labeled 2, not 1.
    """
    return int(((angle + BIN_WIDTH / 2.0) % 360.0) // BIN_WIDTH)


def boundary_distance(angle: float) -> float:
    """Angular distance to the nearest class boundary, in degrees."""
    offset = (angle - BIN_WIDTH / 2.0) % BIN_WIDTH
    return float(min(offset, BIN_WIDTH - offset))


@dataclass(frozen=True)
class SimParams:
    """Scene parameters of one generated image."""

    angle: float
    length: float
    width: float
    occlusion: float
    brightness: float
    offset_x: float
    offset_y: float

    def label(self) -> int:
        return angle_to_label(self.angle)


PARAM_NAMES = [f.name for f in fields(SimParams)]
DERIVED_PARAM_NAMES = ["boundary_dist"]


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameter domains plus hard-region oversampling fractions.

    ``boundary_frac``, ``occlusion_frac`` and ``dim_frac`` give the share
    of samples forced into the respective root-cause region; the rest stay
    nominal in every parameter.
    """

    angle_margin: float = 5.5
    boundary_width: float = 3.5
    occlusion_nominal: tuple[float, float] = (0.0, 0.3)
    occlusion_hard: tuple[float, float] = (0.45, 0.65)
    brightness_nominal: tuple[float, float] = (0.62, 1.0)
    brightness_hard: tuple[float, float] = (0.26, 0.38)
    length_range: tuple[float, float] = (9.0, 13.0)
    width_range: tuple[float, float] = (1.6, 2.6)
    offset_range: tuple[float, float] = (-2.0, 2.0)
    noise_sigma: float = 0.045
    boundary_frac: float = 0.0
    occlusion_frac: float = 0.0
    dim_frac: float = 0.0

    def __post_init__(self):
        for name in ("boundary_frac", "occlusion_frac", "dim_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.boundary_frac + self.occlusion_frac + self.dim_frac > 1.0 + 1e-12:
            raise ValueError("hard-region fractions must sum to at most 1")
        for name in (
            "occlusion_nominal",
            "occlusion_hard",
            "brightness_nominal",
            "brightness_hard",
            "length_range",
            "width_range",
            "offset_range",
        ):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} has an empty range ({lo}, {hi})")
        if not 0.0 < self.angle_margin < BIN_WIDTH / 2.0:
            raise ValueError("angle margin must lie strictly inside a half sector")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")


@dataclass(frozen=True)
class ManifestRow:
    id: str
    path: str
    label: int
    params: SimParams
    boundary_dist: float


@dataclass
class Manifest:
    """One row per generated image; ids are unique."""

    rows: list[ManifestRow]

    def __post_init__(self):
        ids = [r.id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")
        self._by_id = {r.id: r for r in self.rows}

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> list[str]:
        return [r.id for r in self.rows]

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=np.int64)

    def row(self, image_id: str) -> ManifestRow:
        return self._by_id[image_id]

    def label_of(self, image_id: str) -> int:
        return self._by_id[image_id].label

    def param_names(self) -> list[str]:
        return PARAM_NAMES + DERIVED_PARAM_NAMES

    def values(self, param: str, ids=None) -> np.ndarray:
        """Column of one parameter, optionally restricted to the given ids."""
        rows = self.rows if ids is None else [self._by_id[i] for i in ids]
        if param == "boundary_dist":
            return np.array([r.boundary_dist for r in rows])
        if param not in PARAM_NAMES:
            raise KeyError(f"unknown parameter {param!r}")
        return np.array([getattr(r.params, param) for r in rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "path", "label"] + self.param_names())
            for r in self.rows:
                writer.writerow(
                    [r.id, r.path, r.label]
                    + [repr(float(getattr(r.params, p))) for p in PARAM_NAMES]
                    + [repr(float(r.boundary_dist))]
                )

    @classmethod
    def read_csv(cls, path) -> "Manifest":
        rows = []
        with open(path, newline="") as fh:
            for record in csv.DictReader(fh):
                params = SimParams(**{p: float(record[p]) for p in PARAM_NAMES})
                rows.append(
                    ManifestRow(
                        record["id"],
                        record["path"],
                        int(record["label"]),
                        params,
                        float(record["boundary_dist"]),
                    )
                )
        return cls(rows)


def _sample_params(spec: GeneratorSpec, rng: np.random.Generator) -> SimParams:
    u = rng.random()
    boundary = u < spec.boundary_frac
    occluded = spec.boundary_frac <= u < spec.boundary_frac + spec.occlusion_frac
    dim = (
        spec.boundary_frac + spec.occlusion_frac
        <= u
        < spec.boundary_frac + spec.occlusion_frac + spec.dim_frac
    )
    if boundary:
        edge = BIN_WIDTH / 2.0 + BIN_WIDTH * rng.integers(N_CLASSES)
        angle = (edge + rng.uniform(-spec.boundary_width, spec.boundary_width)) % 360.0
    else:
        center = BIN_WIDTH * rng.integers(N_CLASSES)
        swing = BIN_WIDTH / 2.0 - spec.angle_margin
        angle = (center + rng.uniform(-swing, swing)) % 360.0
    occlusion = rng.uniform(*(spec.occlusion_hard if occluded else spec.occlusion_nominal))
    brightness = rng.uniform(*(spec.brightness_hard if dim else spec.brightness_nominal))
    return SimParams(
        angle=angle,
        length=rng.uniform(*spec.length_range),
        width=rng.uniform(*spec.width_range),
        occlusion=occlusion,
        brightness=brightness,
        offset_x=rng.uniform(*spec.offset_range),
        offset_y=rng.uniform(*spec.offset_range),
    )


_GRID_Y, _GRID_X = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE] + 0.5


def render(params: SimParams, noise: np.ndarray, noise_sigma: float) -> np.ndarray:
    """Render one image to uint8 grayscale given a pre-drawn noise field."""
    cx = IMAGE_SIDE / 2.0 + params.offset_x
    cy = IMAGE_SIDE / 2.0 + params.offset_y
    theta = np.deg2rad(params.angle)
    ux, uy = np.cos(theta), -np.sin(theta)  # image y axis points down

    dx = _GRID_X - cx
    dy = _GRID_Y - cy
    t = np.clip(dx * ux + dy * uy, 0.0, params.length)
    perp = np.hypot(dx - t * ux, dy - t * uy)
    ray = np.clip(params.width / 2.0 + 0.5 - perp, 0.0, 1.0)

    if params.occlusion > 0.0:
        anchor = 0.55 * params.length
        ox, oy = cx + anchor * ux, cy + anchor * uy
        radius = params.occlusion * anchor
        disk = np.hypot(_GRID_X - ox, _GRID_Y - oy)
        occ = np.clip(radius + 0.5 - disk, 0.0, 1.0)
        ray = ray * (1.0 - occ)

    scene = _BG_LEVEL + _RAY_AMPLITUDE * ray
    image = params.brightness * scene + noise_sigma * noise
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate(
    spec: GeneratorSpec,
    n: int,
    seed: int,
    directory=None,
    prefix: str = "img",
) -> tuple[np.ndarray, Manifest]:
    """Render ``n`` images deterministically from sampled parameters.

    Returns float images in [0, 1] of shape ``(n, 1, 32, 32)`` (exactly the
    values a PGM round trip reproduces) plus the manifest.  When
    ``directory`` is given the PGM files and ``manifest.csv`` are written
    there.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, IMAGE_SIDE, IMAGE_SIDE))
    rows = []
    if directory is not None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        params = _sample_params(spec, rng)
        noise = rng.standard_normal((IMAGE_SIDE, IMAGE_SIDE))
        pixels = render(params, noise, spec.noise_sigma)
        images[i, 0] = pixels / 255.0
        name = f"{prefix}_{i:05d}.pgm"
        if directory is not None:
            write_pgm(directory / name, pixels)
        rows.append(
            ManifestRow(
                id=f"{prefix}_{i:05d}",
                path=name,
                label=params.label(),
                params=params,
                boundary_dist=boundary_distance(params.angle),
            )
        )
    manifest = Manifest(rows)
    if directory is not None:
        manifest.write_csv(directory / "manifest.csv")
    return images, manifest


def dataset_from_memory(images: np.ndarray, manifest: Manifest) -> LabeledDataset:
    return LabeledDataset(manifest.ids(), images, manifest.labels())


# ---- PGM (P5, 8-bit) i/o and directory datasets ---------------------------


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields_found: list[int] = []
    pos = 2
    while len(fields_found) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields_found.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields_found
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).copy()


def write_dataset(directory, images: np.ndarray, manifest: Manifest) -> None:
    """Persist an in-memory generated set as PGM files plus manifest.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(manifest.rows):
        write_pgm(directory / row.path, np.round(images[i, 0] * 255.0).astype(np.uint8))
    manifest.write_csv(directory / "manifest.csv")


def load_dataset(directory) -> tuple[LabeledDataset, Manifest]:
    """Read a PGM-directory dataset back into memory."""
    directory = Path(directory)
    manifest = Manifest.read_csv(directory / "manifest.csv")
    images = np.stack(
        [read_pgm(directory / row.path)[None].astype(np.float64) / 255.0 for row in manifest.rows]
    )
    return LabeledDataset(manifest.ids(), images, manifest.labels()), manifest
