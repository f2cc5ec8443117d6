"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .graph import build_graph, laplacian
from .layers import (LinearMap, context_norm, context_norm_backward, cr_residual_backward,
                     cr_residual_forward, lc_backward, lc_forward, mlp_forward)
from .spectral import (apply_smoother, eigendecompose, smoother_grad_eta,
                       smoother_grad_signal)

__all__ = ["numeric_grad", "relative_error", "GradCheck", "run_gradchecks", "format_table"]

CR_TOL = 1e-4
LC_TOL = 1e-3


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = fn(x)
        x.flat[i] = orig - h
        fm = fn(x)
        x.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """Worst entrywise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor = 1e-6 * max(1, max|n|)`` keeps entries that are zero up to
    round-off from dominating.
    """
    a = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    n = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    floor = 1e-6 * max(1.0, float(np.abs(n).max()))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class GradCheck:
    op: str
    max_rel_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _random_basis(rng, n, kind):
    pts = rng.uniform(-1, 1, (n, 4)) * rng.uniform(0.1, 0.3)
    g = build_graph(pts, k=min(8, n - 1), sigma=0.1)
    return g, eigendecompose(laplacian(g, kind), n)


def _lc_margin(f, g, mlp):
    """Smallest gap between a pooled max and the runner-up, or a ReLU kink."""
    a = g.adjacency
    src = np.repeat(np.arange(g.n), np.diff(a.indptr))
    z, (_, pre) = mlp_forward(mlp, f[src] - f[a.indices])
    gap = np.inf
    for i in range(g.n):
        zi = np.sort(z[a.indptr[i]:a.indptr[i + 1]], axis=0)
        if zi.shape[0] > 1:
            gap = min(gap, float(np.min(zi[-1] - zi[-2])))
    for p in pre[:-1]:
        gap = min(gap, float(np.min(np.abs(p))))
    return gap


def run_gradchecks(instances: int = 20, seed: int = 0) -> List[GradCheck]:
    rng = np.random.default_rng(seed)
    worst = {}

    def record(op, err, tol):
        worst[op] = (max(worst.get(op, (0.0, tol))[0], err), tol)

    for t in range(instances):
        kind = "plain" if t % 2 == 0 else "normalized"
        n = int(rng.integers(15, 41))
        g, basis = _random_basis(rng, n, kind)
        eta = float(10.0 ** rng.uniform(-1, 2))
        c = int(rng.integers(1, 5))
        signal = rng.normal(size=(n, c))
        target = rng.normal(size=(n, c))

        # smoother: loss = 0.5 * ||R(eta) x - target||^2
        up = apply_smoother(basis, eta, signal) - target
        h_eta = 1e-4 * max(1.0, eta)
        num = (0.5 * np.sum((apply_smoother(basis, eta + h_eta, signal) - target) ** 2)
               - 0.5 * np.sum((apply_smoother(basis, eta - h_eta, signal) - target) ** 2)
               ) / (2 * h_eta)
        record("smoother_grad_eta", relative_error(smoother_grad_eta(basis, eta, signal, up), num), CR_TOL)
        num = numeric_grad(lambda x: 0.5 * np.sum((apply_smoother(basis, eta, x) - target) ** 2),
                           signal, 1e-5)
        record("smoother_grad_signal", relative_error(smoother_grad_signal(basis, eta, up), num), CR_TOL)

        # coherence residual: loss = 0.5 * ||f - R(eta) f||^2
        out = cr_residual_forward(signal, basis, eta)
        grad_f, grad_eta = cr_residual_backward(out, signal, basis, eta)
        num = numeric_grad(lambda x: 0.5 * np.sum(cr_residual_forward(x, basis, eta) ** 2), signal, 1e-5)
        record("cr_residual_backward[f]", relative_error(grad_f, num), CR_TOL)
        num = (0.5 * np.sum(cr_residual_forward(signal, basis, eta + h_eta) ** 2)
               - 0.5 * np.sum(cr_residual_forward(signal, basis, eta - h_eta) ** 2)) / (2 * h_eta)
        record("cr_residual_backward[eta]", relative_error(grad_eta, num), CR_TOL)

        # context norm: loss = <w, context_norm(f)>
        w = rng.normal(size=signal.shape)
        if n >= 2:
            num = numeric_grad(lambda x: np.sum(w * context_norm(x)), signal, 1e-6)
            record("context_norm_backward", relative_error(context_norm_backward(w, signal), num), CR_TOL)

        # local coherence with a 2-layer MLP; loss = <w, lc(f)>
        d, hid, d_out = 3, 6, 4
        f = rng.normal(size=(n, d))
        mlp = [LinearMap.init(d, hid, rng), LinearMap.init(hid, d_out, rng)]
        margin = _lc_margin(f, g, mlp)
        if margin < 1e-6:
            continue
        h = min(1e-6, margin / 100)
        w = rng.normal(size=(n, d_out))
        grad_f, grads = lc_backward(w, f, g, mlp)
        num = numeric_grad(lambda x: np.sum(w * lc_forward(x, g, mlp)), f, h)
        record("lc_backward[f]", relative_error(grad_f, num), LC_TOL)

        def loss_w(wt, layer=0):
            maps = list(mlp)
            maps[layer] = LinearMap(wt, mlp[layer].bias)
            return np.sum(w * lc_forward(f, g, maps))

        num = numeric_grad(loss_w, mlp[0].weight, h)
        record("lc_backward[weights]", relative_error(grads[0].weight, num), LC_TOL)

    return [GradCheck(op, err, tol, instances) for op, (err, tol) in worst.items()]


def format_table(checks: List[GradCheck]) -> str:
    width = max(len(c.op) for c in checks)
    lines = [f"{'op':<{width}}  {'max rel err':>12}  {'tol':>7}  result"]
    for c in checks:
        lines.append(f"{c.op:<{width}}  {c.max_rel_error:12.3e}  {c.tolerance:7.0e}  "
                     f"{'pass' if c.passed else 'FAIL'}")
    return "\n".join(lines)
