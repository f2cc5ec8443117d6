"""Seeded synthetic scenes with ground-truth inlier labels.

Inliers follow a motion field (a global translation, similarity or affine
map, or a piecewise-affine field over Voronoi regions); outliers get
uniform random targets independent of their source point.

Random stream
-------------
Every draw comes from one PCG64 generator (128-bit LCG state, XSL-RR
output) seeded with ``numpy.random.SeedSequence(seed)``. Only its raw
64-bit words are used, converted here by fixed rules so another
implementation of PCG64 + SeedSequence reproduces scenes bit for bit:

* uniform double in [0, 1): ``(word >> 11) * 2**-53``
* uniform in [a, b): ``a + (b - a) * U``
* grid coordinate in [a, b): ``a + (b - a) * floor(U * 2**30) * 2**-30``; used
  for source points, outlier targets and translation offsets, so that
  ``(x + t) - x == t`` holds exactly
* Gaussian pair: ``r = sqrt(-2 ln(1 - U1))``, ``(r cos 2 pi U2, r sin 2 pi U2)``
* shuffle: Fisher-Yates from the top, ``j = floor(U * (i + 1))``

Draw order: field parameters, then the shuffle that picks outliers, then
for each point in index order up to 1000 attempts of four uniforms each:
``x, y`` on [-1, 1), then either the outlier target ``u, v`` on [-1, 1) or
the ``U1, U2`` of the inlier's Gaussian noise pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .core import CorrespondenceSet, LapMotionError

__all__ = [
    "FIELD_KINDS",
    "SceneSpec",
    "SceneRng",
    "AffineMap",
    "MotionModel",
    "SceneGenerationError",
    "generate_scene",
    "outlier_count",
]

FIELD_KINDS = ("translation", "rotation_scale", "affine", "piecewise_affine")
MAX_ATTEMPTS = 1000


class SceneGenerationError(LapMotionError, RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    n_points: int
    outlier_ratio: float = 0.5
    field_kind: str = "translation"
    noise_std: float = 0.0
    seed: int = 0
    regions: int = 4

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValueError(f"n_points must be a positive integer, got {self.n_points}")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ValueError(f"outlier_ratio must lie in [0, 1), got {self.outlier_ratio}")
        if self.field_kind not in FIELD_KINDS:
            raise ValueError(f"field_kind must be one of {FIELD_KINDS}, "
                             f"got {self.field_kind!r}")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ValueError(f"noise_std must be finite and >= 0, got {self.noise_std}")
        if self.field_kind == "piecewise_affine" and self.regions < 2:
            raise ValueError("piecewise_affine needs at least 2 regions")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def _on_grid(low: float, high: float, u: np.ndarray) -> np.ndarray:
    return low + (high - low) * (np.floor(u * 2.0**30) * 2.0**-30)


class SceneRng:
    """Portable random stream over raw PCG64 words (see module docs)."""

    def __init__(self, seed: int):
        self._bits = np.random.PCG64(np.random.SeedSequence(int(seed)))

    def words(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64)

    def random(self, n: int) -> np.ndarray:
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def grid(self, low: float, high: float, n: int) -> np.ndarray:
        return _on_grid(low, high, self.random(n))

    def shuffle_index(self, n: int) -> np.ndarray:
        perm = np.arange(n)
        if n > 1:
            draws = self.random(n - 1)
            for t, i in enumerate(range(n - 1, 0, -1)):
                j = int(draws[t] * (i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm


@dataclass(frozen=True)
class AffineMap:
    """``target = matrix @ source + offset``."""

    matrix: np.ndarray
    offset: np.ndarray
    name: str = "affine"

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        return xy @ self.matrix.T + self.offset

    def __str__(self) -> str:
        a = np.round(self.matrix, 4).tolist()
        t = np.round(self.offset, 4).tolist()
        return f"{self.name}(A={a}, t={t})"


@dataclass(frozen=True)
class MotionModel:
    """One affine map per Voronoi site; a single map has no sites."""

    maps: List[AffineMap]
    sites: np.ndarray

    def region(self, xy: np.ndarray) -> int:
        if len(self.maps) == 1:
            return 0
        d2 = np.sum((self.sites - xy) ** 2, axis=1)
        return int(np.argmin(d2))

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        return self.maps[self.region(xy)](xy)


def _draw_affine(rng: SceneRng, kind: str, name: str) -> AffineMap:
    if kind == "translation":
        return AffineMap(np.eye(2), rng.grid(-0.25, 0.25, 2), name)
    if kind == "rotation_scale":
        angle, scale = rng.uniform(-math.pi / 12, math.pi / 12, 1)[0], rng.uniform(0.85, 1.15, 1)[0]
        c, s = math.cos(angle), math.sin(angle)
        return AffineMap(scale * np.array([[c, -s], [s, c]]), rng.uniform(-0.15, 0.15, 2), name)
    linear = np.eye(2) + rng.uniform(-0.2, 0.2, 4).reshape(2, 2)
    span = 0.3 if kind == "piecewise" else 0.15
    return AffineMap(linear, rng.uniform(-span, span, 2), name)


def _draw_model(rng: SceneRng, spec: SceneSpec) -> MotionModel:
    if spec.field_kind != "piecewise_affine":
        return MotionModel([_draw_affine(rng, spec.field_kind, spec.field_kind)],
                           np.zeros((0, 2)))
    sites = rng.uniform(-1.0, 1.0, 2 * spec.regions).reshape(spec.regions, 2)
    maps = [_draw_affine(rng, "piecewise", f"region {r}") for r in range(spec.regions)]
    return MotionModel(maps, sites)


def outlier_count(n_points: int, outlier_ratio: float) -> int:
    """``round(n * ratio)`` with halves rounded up."""
    return int(math.floor(n_points * outlier_ratio + 0.5))


def generate_scene(spec: SceneSpec) -> CorrespondenceSet:
    """Sample a labeled correspondence set; fully determined by ``spec``.

    Raises
    ------
    SceneGenerationError
        An inlier could not be placed with its target inside [-1, 1] after
        1000 attempts.
    """
    rng = SceneRng(spec.seed)
    model = _draw_model(rng, spec)
    n = spec.n_points
    labels = np.ones(n, dtype=np.int64)
    labels[rng.shuffle_index(n)[:outlier_count(n, spec.outlier_ratio)]] = 0

    coords = np.empty((n, 4))
    for i in range(n):
        for _ in range(MAX_ATTEMPTS):
            draw = rng.random(4)
            src = _on_grid(-1.0, 1.0, draw[:2])
            if labels[i] == 0:
                coords[i] = (*src, *_on_grid(-1.0, 1.0, draw[2:]))
                break
            noise = np.sqrt(-2.0 * np.log1p(-draw[2])) * np.array(
                [math.cos(2.0 * math.pi * draw[3]), math.sin(2.0 * math.pi * draw[3])])
            tgt = model(src) + spec.noise_std * noise
            if np.all(np.abs(tgt) <= 1.0):
                coords[i] = (*src, *tgt)
                break
        else:
            region = model.maps[model.region(src)]
            raise SceneGenerationError(
                f"point {i}: target left [-1, 1] in {MAX_ATTEMPTS} attempts under {region}")
    return CorrespondenceSet(coords, labels)
