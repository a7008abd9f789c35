"""Hidden search scenes and measurement semantics.

A scene is a rows x cols grid of cell contents normalized to [0, 1] plus a
per-cell target ratio y in [0, 1]. Queries address either single cells or
aligned square blocks (``block`` cells per side); a measurement reveals the
block's contents, optionally corrupted by additive Gaussian noise, together
with the exact target ratio of the block. The ratio feedback is always
noiseless; only revealed pixel values carry noise.

Scene sources: sampling from a Gaussian-mixture prior (so the engine's
analytic prior is exactly right for the scene distribution), CSV grids with
an optional ``<name>.target.csv`` companion, and P2/P5 PGM images. Count
grids (e.g. species observations) use per-scene max normalization for both
contents and target ratios.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gridseek.diffusion import GaussianMixturePrior

__all__ = [
    "Scene",
    "Measurement",
    "RepeatMeasurementError",
    "measure",
    "gen_gmm_scene",
    "make_blob_prior",
    "load_scene",
    "save_scene",
    "load_grid_dir",
]


class RepeatMeasurementError(ValueError):
    """Raised when a location is queried twice within one episode."""


class SceneFormatError(ValueError):
    """Raised when a scene file cannot be parsed into a valid grid."""


@dataclass(frozen=True)
class Scene:
    """Immutable ground truth: contents, per-cell target ratios, query layout."""

    grid: np.ndarray
    y: np.ndarray
    shape: tuple[int, int]
    block: int = 1
    noise: tuple[float, float] | None = None

    def __post_init__(self):
        rows, cols = self.shape
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float).ravel())
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())
        if self.grid.shape != (rows * cols,) or self.y.shape != (rows * cols,):
            raise ValueError("grid and y must hold rows*cols cells")
        if np.any(self.y < 0.0) or np.any(self.y > 1.0):
            raise ValueError("target ratios must lie in [0, 1]")
        if self.block < 1 or rows % self.block or cols % self.block:
            raise ValueError(f"block {self.block} must evenly divide {self.shape}")

    @property
    def n_cells(self) -> int:
        return self.grid.size

    @property
    def n_locations(self) -> int:
        rows, cols = self.shape
        return (rows // self.block) * (cols // self.block)

    @property
    def location_shape(self) -> tuple[int, int]:
        rows, cols = self.shape
        return rows // self.block, cols // self.block

    def location_cells(self, location: int) -> np.ndarray:
        """Flat cell indices covered by a query location, row-major."""
        if not 0 <= location < self.n_locations:
            raise IndexError(f"location {location} outside 0..{self.n_locations - 1}")
        b = self.block
        _, cols = self.shape
        loc_cols = cols // b
        r0, c0 = (location // loc_cols) * b, (location % loc_cols) * b
        rr, cc = np.meshgrid(np.arange(r0, r0 + b), np.arange(c0, c0 + b), indexing="ij")
        return (rr * cols + cc).ravel()

    def all_location_cells(self) -> np.ndarray:
        """(n_locations, block^2) cell-index table for every query location."""
        return np.stack([self.location_cells(q) for q in range(self.n_locations)])

    def location_y(self, location: int) -> float:
        return float(self.y[self.location_cells(location)].mean())

    def all_location_y(self) -> np.ndarray:
        return self.y[self.all_location_cells()].mean(axis=1)

    @property
    def n_target_locations(self) -> int:
        """Number of query locations with any target content."""
        return int(np.count_nonzero(self.all_location_y() > 0.0))


@dataclass(frozen=True)
class Measurement:
    """Outcome of one query: revealed contents plus exact target ratio."""

    location: int
    content: np.ndarray
    y: float
    step: int = 0


def measure(scene: Scene, location: int, rng: np.random.Generator,
            step: int = 0, measured=None) -> Measurement:
    """Reveal a location's contents (noisy if configured) and its exact y."""
    if measured is not None and location in measured:
        raise RepeatMeasurementError(f"location {location} already measured")
    cells = scene.location_cells(location)
    content = scene.grid[cells].copy()
    if scene.noise is not None:
        mu, sigma = scene.noise
        content = content + rng.normal(mu, sigma, content.shape)
    return Measurement(location=location, content=content,
                       y=scene.location_y(location), step=step)


def gen_gmm_scene(
    prior: GaussianMixturePrior,
    target_rule,
    rng: np.random.Generator,
    shape: tuple[int, int],
    block: int = 1,
    noise: tuple[float, float] | None = None,
) -> Scene:
    """Draw a scene from the mixture prior and derive its target map.

    ``target_rule`` is either a threshold (cells whose sampled value exceeds
    it are targets) or one 0/1 label per mixture component (every cell of a
    scene drawn from a labeled component counts as target).
    """
    rows, cols = shape
    if prior.dimension != rows * cols:
        raise ValueError(
            f"prior dimension {prior.dimension} does not match shape {shape}"
        )
    k = int(rng.choice(prior.n_components, p=prior.weights))
    grid = prior.means[k].copy()
    if prior.variances[k] > 0.0:
        grid = grid + math.sqrt(prior.variances[k]) * rng.standard_normal(grid.size)
    grid = np.clip(grid, 0.0, 1.0)

    if np.isscalar(target_rule):
        y = (grid > float(target_rule)).astype(float)
    else:
        labels = np.asarray(target_rule, dtype=float)
        if labels.shape != (prior.n_components,):
            raise ValueError("need one component label per mixture component")
        y = np.full(grid.size, labels[k])
    return Scene(grid=grid, y=y, shape=shape, block=block, noise=noise)


def make_blob_prior(
    shape: tuple[int, int],
    n_components: int = 8,
    layout_seed: int = 0,
    blobs_per_component: int = 2,
    background: float = 0.1,
    amplitude: float = 0.8,
    radius: float = 2.0,
    variance: float = 0.0016,
) -> GaussianMixturePrior:
    """Mixture of smooth bump landscapes used by the synthetic benchmark.

    Each component is a low background plus a few Gaussian bumps at
    layout-seeded positions, so components disagree most exactly where their
    target regions sit. Means stay within [background, background+amplitude].
    """
    rows, cols = shape
    rng = np.random.default_rng(layout_seed)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    means = []
    for _ in range(n_components):
        field = np.full((rows, cols), background)
        for _ in range(blobs_per_component):
            cr = rng.uniform(radius, rows - 1 - radius)
            cx = rng.uniform(radius, cols - 1 - radius)
            bump = amplitude * np.exp(
                -((rr - cr) ** 2 + (cc - cx) ** 2) / (2.0 * radius**2)
            )
            field = np.maximum(field, background + bump)
        means.append(np.clip(field, 0.0, 1.0).ravel())
    k = len(means)
    return GaussianMixturePrior(
        np.full(k, 1.0 / k), np.stack(means), np.full(k, float(variance))
    )


def _parse_target_spec(spec: str):
    m = re.fullmatch(r"value>([0-9.eE+-]+)", spec)
    if m:
        return float(m.group(1))
    if spec in ("auto", "file", "counts"):
        return spec
    raise ValueError(f"unknown target spec {spec!r}")


def _target_path(path: Path) -> Path:
    return path.with_suffix(".target.csv")


def _read_csv_grid(path: Path) -> np.ndarray:
    try:
        rows = [
            [float(v) for v in line.split(",")]
            for line in path.read_text().strip().splitlines()
            if line.strip()
        ]
    except ValueError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise SceneFormatError(f"{path}: ragged or empty grid")
    return np.asarray(rows, dtype=float)


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if m is None:
            raise SceneFormatError(f"{path}: truncated header")
        pos += m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    magic, width, height, maxval = tokens[0], *(int(t) for t in tokens[1:])
    if maxval <= 0:
        raise SceneFormatError(f"{path}: bad maxval {maxval}")
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=float)
    elif magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        values = np.frombuffer(data[pos + 1:], dtype=dtype, count=width * height)
        values = values.astype(float)
    else:
        raise SceneFormatError(f"{path}: unsupported magic {magic!r}")
    if values.size != width * height:
        raise SceneFormatError(f"{path}: expected {width * height} pixels")
    return (values / maxval).reshape(height, width)


def load_scene(
    path,
    fmt: str | None = None,
    target: str = "auto",
    block: int = 1,
    noise: tuple[float, float] | None = None,
) -> Scene:
    """Load a grid file and derive its target map.

    ``target`` is ``auto`` (companion ``<name>.target.csv`` if present, else
    count normalization), ``file``, ``counts``, or ``value>THETA``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt == "csv":
        raw = _read_csv_grid(path)
    elif fmt == "pgm":
        raw = _read_pgm(path)
    else:
        raise SceneFormatError(f"unsupported scene format {fmt!r}")

    if raw.min() < 0.0:
        raise SceneFormatError(f"{path}: negative cell values cannot be normalized")
    grid = raw / raw.max() if raw.max() > 1.0 else raw

    rule = _parse_target_spec(target)
    target_file = _target_path(path)
    if rule == "auto":
        rule = "file" if target_file.exists() else "counts"
    if rule == "file":
        if not target_file.exists():
            raise FileNotFoundError(f"target file not found: {target_file}")
        y = _read_csv_grid(target_file)
        if y.shape != raw.shape:
            raise SceneFormatError(f"{target_file}: shape differs from grid")
    elif rule == "counts":
        top = grid.max()
        y = grid / top if top > 0.0 else np.zeros_like(grid)
    else:  # threshold
        y = (grid > rule).astype(float)

    return Scene(grid=grid.ravel(), y=np.asarray(y, dtype=float).ravel(),
                 shape=raw.shape, block=block, noise=noise)


def save_scene(scene: Scene, path) -> None:
    """Write contents and target map as CSV with full float precision."""
    path = Path(path)
    rows, cols = scene.shape

    def dump(values: np.ndarray, out: Path) -> None:
        grid2d = values.reshape(rows, cols)
        text = "\n".join(",".join(repr(float(v)) for v in row) for row in grid2d)
        out.write_text(text + "\n")

    dump(scene.grid, path)
    dump(scene.y, _target_path(path))


def load_grid_dir(directory, pattern: str = "*.csv") -> list[np.ndarray]:
    """Flattened grids from a directory, sorted by name; feeds empirical priors."""
    directory = Path(directory)
    paths = sorted(p for p in directory.glob(pattern)
                   if not p.name.endswith(".target.csv"))
    if not paths:
        raise FileNotFoundError(f"no grid files matching {pattern} in {directory}")
    grids = []
    for p in paths:
        raw = _read_csv_grid(p)
        grids.append((raw / raw.max() if raw.max() > 1.0 else raw).ravel())
    return grids
