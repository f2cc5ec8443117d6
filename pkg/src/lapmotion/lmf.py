"""Laplacian motion fitting: prune correspondences by their deviation from
a graph-smoothed motion field."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import CorrespondenceSet, PruneResult
from .graph import build_graph, laplacian
from .spectral import apply_smoother, eigendecompose

__all__ = ["LmfConfig", "lmf_prune", "canonical_order", "residual_histogram"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LmfConfig:
    """Pruning parameters.

    ``epsilon`` is compared with the Euclidean norm of each 2D residual, in
    normalized coordinate units.
    """

    k: int = 8
    sigma: float = 0.1
    eta: float = 10.0
    epsilon: float = 0.025
    k_e: int = 128
    laplacian_kind: str = "plain"
    symmetrize: str = "union"
    eig_method: str = "auto"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.eta >= 0 and np.isfinite(self.eta)):
            raise ValueError(f"eta must be finite and non-negative, got {self.eta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.k_e < 1:
            raise ValueError(f"k_e must be at least 1, got {self.k_e}")
        if self.laplacian_kind not in ("plain", "normalized"):
            raise ValueError(f"unknown laplacian_kind {self.laplacian_kind!r}")
        if self.symmetrize not in ("union", "mutual"):
            raise ValueError(f"unknown symmetrize policy {self.symmetrize!r}")


def canonical_order(coords: np.ndarray) -> np.ndarray:
    """Row order sorted by (x, y, u, v); equal rows keep their input order."""
    coords = np.asarray(coords)
    return np.lexsort(coords.T[::-1])


def lmf_prune(cs: CorrespondenceSet, cfg: LmfConfig = LmfConfig()) -> PruneResult:
    """Label each correspondence inlier or outlier.

    Builds the k-NN graph, takes the ``k_e`` smallest Laplacian eigenpairs,
    smooths the motion field with ``R(eta)`` and marks a correspondence as
    an inlier when ``||s_i - m_i|| <= epsilon``.

    The computation runs on the rows sorted into a canonical order and is
    mapped back, so permuting the input permutes the output exactly.
    ``k_e`` larger than N is clamped to N, with a note in
    ``result.warnings``.
    """
    notes = []
    n = len(cs)
    k_e = cfg.k_e
    if k_e > n:
        notes.append(f"k_e={k_e} exceeds N={n}; clamped to {n}")
        log.warning(notes[-1])
        k_e = n

    order = canonical_order(cs.coords)
    coords = cs.coords[order]
    g = build_graph(coords, cfg.k, cfg.sigma, cfg.symmetrize)
    if cfg.symmetrize == "mutual" and g.isolated().size:
        notes.append(f"{g.isolated().size} isolated nodes under mutual symmetrization")
    basis = eigendecompose(laplacian(g, cfg.laplacian_kind), k_e, method=cfg.eig_method)

    m = coords[:, 2:] - coords[:, :2]
    s = apply_smoother(basis, cfg.eta, m)
    res = np.sqrt(np.sum((s - m) ** 2, axis=1))

    residual = np.empty(n)
    smoothed = np.empty((n, 2))
    residual[order] = res
    smoothed[order] = s
    return PruneResult(residual, residual <= cfg.epsilon, smoothed, cfg.epsilon,
                       tuple(notes))


def residual_histogram(result: PruneResult, bins: int = 20):
    """Histogram of residual norms over ``[0, max]`` as ``(left_edge, count)``.

    Bins are left-closed; the last one also includes the maximum. When every
    residual is zero the range is taken as ``[0, 1]``.
    """
    if bins < 1:
        raise ValueError(f"bins must be positive, got {bins}")
    r = np.asarray(result.residual_norms)
    hi = float(r.max()) if r.size else 0.0
    counts, edges = np.histogram(r, bins=bins, range=(0.0, hi if hi > 0 else 1.0))
    return [(float(e), int(c)) for e, c in zip(edges[:-1], counts)]

