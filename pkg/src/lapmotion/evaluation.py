"""Precision / recall / F1 scoring and parameter sweeps over synthetic scenes."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .core import LapMotionError
from .lmf import LmfConfig, lmf_prune
from .synth import SceneSpec, generate_scene

__all__ = ["MetricsReport", "SweepRow", "SweepError", "VARY", "score", "sweep",
           "write_sweep_csv", "write_gnuplot"]

VARY = ("outlier_ratio", "eta", "epsilon", "k_e")


class SweepError(LapMotionError, RuntimeError):
    def __init__(self, value, seed, cause: Exception):
        self.value, self.seed = value, seed
        super().__init__(f"sweep cell value={value!r}, seed={seed}: "
                         f"{type(cause).__name__}: {cause}")


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts of predicted inliers against ground truth.

    Ratios with a zero denominator are reported as 0.
    """

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "n": self.n}


def score(predicted, truth) -> MetricsReport:
    predicted = np.asarray(predicted).astype(bool).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.size} predictions, "
                         f"{truth.size} labels")
    return MetricsReport(
        tp=int(np.count_nonzero(predicted & truth)),
        fp=int(np.count_nonzero(predicted & ~truth)),
        tn=int(np.count_nonzero(~predicted & ~truth)),
        fn=int(np.count_nonzero(~predicted & truth)),
    )


@dataclass(frozen=True)
class SweepRow:
    """Scene-averaged metrics for one swept value.

    ``precision``, ``recall`` and ``f1`` are unweighted means of per-scene
    values (so ``f1`` is not recomputed from the mean P and R).
    ``inlier_residual`` / ``outlier_residual`` are the means over scenes of
    the per-scene mean residual norm of true inliers / outliers.
    """

    value: float
    precision: float
    recall: float
    f1: float
    inlier_residual: float
    outlier_residual: float
    reports: tuple


def _mean_or_nan(x: np.ndarray) -> float:
    return float(x.mean()) if x.size else float("nan")


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else float("nan")


def sweep(specs: Sequence[SceneSpec], cfg: LmfConfig, vary: str,
          values: Sequence[float]) -> List[SweepRow]:
    """Run :func:`lmf_prune` over ``specs`` for every value of one parameter.

    ``vary`` names either a scene parameter (``outlier_ratio``) or a
    pruning parameter (``eta``, ``epsilon``, ``k_e``). Rows come back in the
    order of ``values``.
    """
    if vary not in VARY:
        raise ValueError(f"vary must be one of {VARY}, got {vary!r}")
    if not specs:
        raise ValueError("need at least one scene spec")
    if not len(values):
        raise ValueError("need at least one value to sweep")

    rows = []
    for value in values:
        run_cfg = cfg
        if vary == "k_e":
            run_cfg = dataclasses.replace(cfg, k_e=int(value))
        elif vary != "outlier_ratio":
            run_cfg = dataclasses.replace(cfg, **{vary: float(value)})
        reports, res_in, res_out = [], [], []
        for spec in specs:
            try:
                if vary == "outlier_ratio":
                    spec = dataclasses.replace(spec, outlier_ratio=float(value))
                cs = generate_scene(spec)
                result = lmf_prune(cs, run_cfg)
            except Exception as exc:
                raise SweepError(value, spec.seed, exc) from exc
            truth = cs.labels == 1
            reports.append(score(result.inlier, truth))
            res_in.append(_mean_or_nan(result.residual_norms[truth]))
            res_out.append(_mean_or_nan(result.residual_norms[~truth]))
        rows.append(SweepRow(
            value=float(value),
            precision=float(np.mean([r.precision for r in reports])),
            recall=float(np.mean([r.recall for r in reports])),
            f1=float(np.mean([r.f1 for r in reports])),
            inlier_residual=_nanmean(res_in),
            outlier_residual=_nanmean(res_out),
            reports=tuple(reports),
        ))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("value,precision,recall,f1\n")
        for r in rows:
            fh.write(f"{r.value!r},{r.precision!r},{r.recall!r},{r.f1!r}\n")


def write_gnuplot(rows: Sequence[SweepRow], path, vary: str = "value") -> None:
    """Whitespace-separated columns with a ``#`` header, for ``plot ... using 1:4``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {vary} precision recall f1 inlier_residual outlier_residual\n")
        for r in rows:
            fh.write(f"{r.value:.10g} {r.precision:.10g} {r.recall:.10g} {r.f1:.10g} "
                     f"{r.inlier_residual:.10g} {r.outlier_residual:.10g}\n")
