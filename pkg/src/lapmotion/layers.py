"""Differentiable coherence operators with hand-written gradients.

* ``cr_residual``: ``f - R(eta) f``, the part of a feature signal that a
  smooth graph function cannot explain.
* ``lc``: channelwise max over graph neighbors of ``MLP(f_i - f_j)``.
* ``context_norm``: per-channel standardization across correspondences.

Each forward op has a backward counterpart returning gradients of a scalar
loss given its gradient with respect to the op's output. ``fit_eta`` runs
gradient descent on log(eta) through the spectral smoother.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import CorrespondenceSet, compute_motions
from .graph import CoherenceGraph, build_graph, laplacian
from .lmf import LmfConfig
from .spectral import SpectralBasis, apply_smoother, eigendecompose, smoother_grad_eta

__all__ = [
    "CN_EPS",
    "LAYER_K_E",
    "layer_basis",
    "LinearMap",
    "IsolatedNodeWarning",
    "mlp_forward",
    "mlp_backward",
    "context_norm",
    "context_norm_backward",
    "cr_residual_forward",
    "cr_residual_backward",
    "lc_forward",
    "lc_backward",
    "cr_layer_forward",
    "LcLayer",
    "EtaObjective",
    "fit_eta",
]

log = logging.getLogger(__name__)

CN_EPS = 1e-5
# eigenpairs kept by the coherence-residual layers
LAYER_K_E = 32


class IsolatedNodeWarning(RuntimeWarning):
    pass


@dataclass
class LinearMap:
    """Affine map ``x @ weight.T + bias`` applied row-wise."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"weight {self.weight.shape} and bias {self.bias.shape} "
                             f"are inconsistent")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearMap":
        bound = 1.0 / math.sqrt(in_dim)
        return cls(rng.uniform(-bound, bound, (out_dim, in_dim)),
                   rng.uniform(-bound, bound, out_dim))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias


def mlp_forward(mlp: Sequence[LinearMap], x: np.ndarray):
    """Apply maps with ReLU between them (none after the last).

    Returns the output and the per-layer inputs and pre-activations needed
    by :func:`mlp_backward`. An empty sequence is the identity.
    """
    inputs, pre = [], []
    h = x
    for t, lm in enumerate(mlp):
        inputs.append(h)
        z = lm(h)
        pre.append(z)
        h = np.maximum(z, 0.0) if t < len(mlp) - 1 else z
    return h, (inputs, pre)


def mlp_backward(mlp: Sequence[LinearMap], cache, upstream: np.ndarray):
    """Gradients w.r.t. the MLP input and each map's weight and bias."""
    inputs, pre = cache
    g = upstream
    grads: List[LinearMap] = [None] * len(mlp)
    for t in range(len(mlp) - 1, -1, -1):
        if t < len(mlp) - 1:
            g = g * (pre[t] > 0)
        grads[t] = LinearMap(g.T @ inputs[t], g.sum(axis=0))
        g = g @ mlp[t].weight
    return g, grads


def context_norm(f: np.ndarray, eps: float = CN_EPS) -> np.ndarray:
    """Standardize each channel over the N rows: ``(f - mean) / sqrt(var + eps)``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] < 2:
        raise ValueError("context_norm needs at least two rows")
    centered = f - f.mean(axis=0)
    return centered / np.sqrt(np.mean(centered**2, axis=0) + eps)


def context_norm_backward(upstream: np.ndarray, f: np.ndarray,
                          eps: float = CN_EPS) -> np.ndarray:
    n = f.shape[0]
    centered = f - f.mean(axis=0)
    inv_std = 1.0 / np.sqrt(np.mean(centered**2, axis=0) + eps)
    y = centered * inv_std
    g_mean = upstream.mean(axis=0)
    gy_mean = np.sum(upstream * y, axis=0) / n
    return inv_std * (upstream - g_mean - y * gy_mean)


def _check_features(f, basis: SpectralBasis) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != basis.n:
        raise ValueError(f"features have {f.shape[0]} rows but the basis has {basis.n}")
    return f


def layer_basis(points, k_e: int = LAYER_K_E, k: int = 8, sigma: float = 0.1,
                kind: str = "normalized") -> SpectralBasis:
    """Eigenbasis used by the coherence-residual layers (normalized Laplacian)."""
    g = build_graph(points, k, sigma)
    return eigendecompose(laplacian(g, kind), min(k_e, g.n))


def cr_residual_forward(f, basis: SpectralBasis, eta: float) -> np.ndarray:
    """Coherence residual ``f - R(eta) f``."""
    f = _check_features(f, basis)
    return f - apply_smoother(basis, eta, f)


def cr_residual_backward(upstream, f, basis: SpectralBasis, eta: float):
    """Gradients of the coherence residual.

    Returns
    -------
    grad_f : ndarray
        ``upstream - R(eta) upstream``.
    grad_eta : float
        ``-<upstream, dR/deta f>``.
    """
    f = _check_features(f, basis)
    upstream = _check_features(upstream, basis)
    grad_f = upstream - apply_smoother(basis, eta, upstream)
    return grad_f, -smoother_grad_eta(basis, eta, f, upstream)


def _edges(g: CoherenceGraph):
    a = g.adjacency
    deg = np.diff(a.indptr)
    src = np.repeat(np.arange(g.n), deg)
    return src, a.indices.astype(np.int64), deg


def _lc_pool(f, g: CoherenceGraph, mlp: Sequence[LinearMap]):
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != g.n:
        raise ValueError(f"features have {f.shape[0]} rows but the graph has {g.n} nodes")
    src, dst, deg = _edges(g)
    has = deg > 0
    if not np.all(has):
        warnings.warn(f"{np.count_nonzero(~has)} nodes have no neighbors; their "
                      f"local coherence output is zero", IsolatedNodeWarning, stacklevel=3)
    z, cache = mlp_forward(mlp, f[src] - f[dst])
    out = np.zeros((g.n, z.shape[1]))
    if z.shape[0] == 0:
        return out, cache, np.zeros((0, z.shape[1]), dtype=np.int64), has, src, dst
    starts = g.adjacency.indptr[:-1][has]
    out[has] = np.maximum.reduceat(z, starts, axis=0)
    # first edge attaining the max; neighbors are sorted, so lowest index wins
    pos = np.where(z == out[src], np.arange(z.shape[0])[:, None], z.shape[0])
    argmax = np.minimum.reduceat(pos, starts, axis=0)
    return out, cache, argmax, has, src, dst


def lc_forward(f, g: CoherenceGraph, mlp: Sequence[LinearMap] = ()) -> np.ndarray:
    """Local coherence: ``out_i = max_j MLP(f_i - f_j)`` over graph neighbors j.

    Nodes without neighbors produce a zero row and trigger an
    :class:`IsolatedNodeWarning`.
    """
    return _lc_pool(f, g, mlp)[0]


def lc_backward(upstream, f, g: CoherenceGraph, mlp: Sequence[LinearMap] = ()):
    """Gradients of :func:`lc_forward`.

    Each output channel routes its gradient to the single neighbor that
    attained the max (lowest neighbor index on ties).

    Returns
    -------
    grad_f : ndarray, shape (N, d)
    grad_mlp : list of LinearMap
        Weight and bias gradients, one per map.
    """
    _, cache, argmax, has, src, dst = _lc_pool(f, g, mlp)
    upstream = np.asarray(upstream, dtype=np.float64)
    d_out = upstream.shape[1]
    n_edges = src.shape[0]
    g_z = np.zeros((n_edges, d_out))
    if n_edges:
        g_z[argmax, np.arange(d_out)[None, :]] = upstream[has]
    g_diff, grads = mlp_backward(mlp, cache, g_z)
    f = np.asarray(f, dtype=np.float64)
    grad_f = np.zeros_like(f)
    np.add.at(grad_f, src, g_diff)
    np.add.at(grad_f, dst, -g_diff)
    return grad_f, grads


def cr_layer_forward(f, basis: SpectralBasis, eta: float,
                     mlp: Sequence[LinearMap] = ()) -> np.ndarray:
    """Full coherence-residual layer: context-normalized MLP of the residual."""
    h, _ = mlp_forward(mlp, cr_residual_forward(f, basis, eta))
    return context_norm(h)


@dataclass
class LcLayer:
    """Bottlenecked local coherence layer: encode d -> d_l, pool, lift d_l -> d."""

    encode: LinearMap
    mlp: List[LinearMap]
    lift: LinearMap

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, d_l: int = 8,
             hidden: Sequence[int] = (8,)) -> "LcLayer":
        dims = [d_l, *hidden, d_l]
        mlp = [LinearMap.init(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        return cls(LinearMap.init(d, d_l, rng), mlp, LinearMap.init(d_l, d, rng))

    def __call__(self, f, g: CoherenceGraph) -> np.ndarray:
        return self.lift(lc_forward(self.encode(f), g, self.mlp))


# -- learning eta ----------------------------------------------------------


@dataclass
class _Scene:
    basis: SpectralBasis
    motions: np.ndarray
    inlier: np.ndarray


class EtaObjective:
    """Surrogate loss for learning the smoothness strength.

    Per scene, with residual ``r = R(eta) m - m``: the mean of ``||r_i||^2``
    over labeled inliers plus the mean of ``max(0, margin - ||r_i||)^2``
    over labeled outliers; averaged over scenes. ``margin = 2 * epsilon``.
    """

    def __init__(self, scenes: Sequence[CorrespondenceSet], cfg: LmfConfig = LmfConfig()):
        if not scenes:
            raise ValueError("need at least one scene")
        self.margin = 2.0 * cfg.epsilon
        self.scenes = []
        for cs in scenes:
            if cs.labels is None:
                raise ValueError("every scene needs ground-truth labels")
            g = build_graph(cs, cfg.k, cfg.sigma, cfg.symmetrize)
            basis = eigendecompose(laplacian(g, cfg.laplacian_kind),
                                   min(cfg.k_e, len(cs)), method=cfg.eig_method)
            self.scenes.append(_Scene(basis, compute_motions(cs), cs.labels == 1))

    def loss_and_grad(self, eta: float):
        """Loss and its derivative with respect to eta."""
        total, grad = 0.0, 0.0
        for sc in self.scenes:
            m = sc.motions
            r = apply_smoother(sc.basis, eta, m) - m
            norms = np.sqrt(np.sum(r**2, axis=1))
            g_r = np.zeros_like(r)
            inl, out = sc.inlier, ~sc.inlier
            if inl.any():
                total += np.mean(norms[inl] ** 2)
                g_r[inl] = 2.0 * r[inl] / np.count_nonzero(inl)
            if out.any():
                hinge = np.maximum(0.0, self.margin - norms[out])
                total += np.mean(hinge**2)
                safe = np.where(norms[out] > 0, norms[out], 1.0)
                g_r[out] = (-2.0 * hinge / safe)[:, None] * r[out] / np.count_nonzero(out)
            grad += smoother_grad_eta(sc.basis, eta, m, g_r)
        s = len(self.scenes)
        return total / s, grad / s

    def loss(self, eta: float) -> float:
        return self.loss_and_grad(eta)[0]


def fit_eta(scenes: Sequence[CorrespondenceSet], init_eta: float = 10.0,
            steps: int = 50, lr: float = 1000.0, cfg: LmfConfig = LmfConfig(),
            callback: Optional[Callable[[int, float, float, float], None]] = None):
    """Gradient descent on ``log(eta)`` for :class:`EtaObjective`.

    Parameters
    ----------
    scenes : sequence of CorrespondenceSet
        Labeled scenes.
    init_eta : float
        Starting value, > 0.
    steps : int
        Number of updates.
    lr : float
        Step size in log(eta). The loss is on the scale of ``margin**2``
        (about 1e-3 at the default epsilon), hence the large default.
    cfg : LmfConfig
        Graph, spectral and margin settings (``margin = 2 * cfg.epsilon``).
    callback : callable, optional
        Called as ``callback(step, eta, loss, dloss_deta)`` before each update.

    Returns
    -------
    eta : float
        Final value.
    losses : list of float
        Loss evaluated at the start of every step.

    A non-finite loss stops the descent early and returns the last finite
    state.
    """
    if not init_eta > 0:
        raise ValueError(f"init_eta must be positive, got {init_eta}")
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    if steps == 0:
        return float(init_eta), []
    objective = scenes if isinstance(scenes, EtaObjective) else EtaObjective(scenes, cfg)
    log_eta = math.log(init_eta)
    losses: List[float] = []
    for step in range(steps):
        eta = math.exp(log_eta)
        loss, grad = objective.loss_and_grad(eta)
        if not (math.isfinite(loss) and math.isfinite(grad)):
            log.warning("fit_eta diverged at step %d; returning eta=%g", step, eta)
            break
        losses.append(loss)
        if callback is not None:
            callback(step, eta, loss, grad)
        next_log = log_eta - lr * eta * grad
        if not -700.0 < next_log < 700.0:
            log.warning("fit_eta diverged at step %d; returning eta=%g", step, eta)
            break
        log_eta = next_log
    return math.exp(log_eta), losses
